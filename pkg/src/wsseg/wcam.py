"""WCAM binary container: score stacks, pair sets, sparse matrices, checkpoints.

Little-endian throughout. Common header: magic ``WCAM`` (57 43 41 4D),
version u8 = 1, then a payload-kind byte:

* kind 3 - rank-3 float32 tensor: dims u32 (classes, height, width), a
  class-name table (u16 count, each name u16-length-prefixed UTF-8), then
  the float32 payload, class-major then row-major.
* kind 2 - pair set (rank-2 integer extension): grid u32 (height, width),
  gamma f32, then three sections (foreground, background, negative), each a
  u32 pair count followed by count x (u32 i, u32 j) row-major cell indices.
* kind 4 - sparse matrix extension (CSR): grid u32 (height, width), nnz u64,
  row offsets (cells+1) x u64, column indices nnz x u32, values nnz x f32.
* kind 5 - parameter checkpoint: manifest (u16 tensor count; per tensor a
  u16-length-prefixed UTF-8 name, rank u8, dims u32 x rank, payload byte
  offset u64), then one contiguous float32 blob holding every tensor.

The full layout is reproduced in README.md; this module is the only reader
and writer.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"WCAM"
VERSION = 1

KIND_PAIRS = 2
KIND_STACK = 3
KIND_SPARSE = 4
KIND_CHECKPOINT = 5

_MAX_CELLS = 1 << 32


class FormatError(ValueError):
    """Raised when a WCAM file is malformed; message names the byte offset."""


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(
                f"truncated payload: need {n} bytes for {what} at offset {self.off}, "
                f"file has {len(self.data) - self.off} left")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def name(self, what: str) -> str:
        ln = self.u16(f"{what} length")
        return self.take(ln, what).decode("utf-8")

    def array(self, count: int, dtype, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        raw = self.take(count * dt.itemsize, what)
        return np.frombuffer(raw, dtype=dt).copy()


def _open_kind(data: bytes, expected: int, path) -> _Reader:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0 in {path}")
    version = r.u8("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4 in {path}")
    kind = r.u8("payload kind")
    if kind != expected:
        raise FormatError(
            f"expected payload kind {expected}, found {kind} at offset 5 in {path}")
    return r


def _header(kind: int) -> bytearray:
    buf = bytearray(MAGIC)
    buf.append(VERSION)
    buf.append(kind)
    return buf


def _encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"name too long: {name[:32]}...")
    return struct.pack("<H", len(raw)) + raw


# ---------------------------------------------------------------------------
# kind 3: rank-3 float32 stacks
# ---------------------------------------------------------------------------


def write_stack_arrays(path, planes: np.ndarray, names) -> None:
    planes = np.ascontiguousarray(planes, dtype=np.float32)
    if planes.ndim != 3 or planes.shape[0] != len(names):
        raise ValueError(f"planes must be (classes, height, width) matching "
                         f"{len(names)} names, got {planes.shape}")
    c, h, w = planes.shape
    buf = _header(KIND_STACK)
    buf += struct.pack("<III", c, h, w)
    buf += struct.pack("<H", len(names))
    for name in names:
        buf += _encode_name(name)
    buf += planes.tobytes()
    with open(path, "wb") as f:
        f.write(buf)


def read_stack_arrays(path) -> tuple[np.ndarray, list[str]]:
    with open(path, "rb") as f:
        data = f.read()
    r = _open_kind(data, KIND_STACK, path)
    dim_off = r.off
    c = r.u32("class count")
    h = r.u32("height")
    w = r.u32("width")
    if h < 1 or w < 1 or c * h * w > _MAX_CELLS:
        raise FormatError(
            f"dimension overflow ({c}x{h}x{w}) at offset {dim_off} in {path}")
    count = r.u16("name-table count")
    if count != c:
        raise FormatError(
            f"name table holds {count} entries for {c} classes at offset {dim_off + 12} in {path}")
    names = [r.name("class name") for _ in range(count)]
    planes = r.array(c * h * w, "<f4", "float payload").reshape(c, h, w)
    return planes, names


# ---------------------------------------------------------------------------
# kind 2: pair sets
# ---------------------------------------------------------------------------


def write_pairs_arrays(path, height: int, width: int, gamma: float,
                       fg: np.ndarray, bg: np.ndarray, neg: np.ndarray) -> None:
    buf = _header(KIND_PAIRS)
    buf += struct.pack("<IIf", height, width, gamma)
    for arr in (fg, bg, neg):
        arr = np.ascontiguousarray(arr, dtype=np.uint32).reshape(-1, 2)
        buf += struct.pack("<I", arr.shape[0])
        buf += arr.tobytes()
    with open(path, "wb") as f:
        f.write(buf)


def read_pairs_arrays(path) -> tuple[int, int, float, np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    r = _open_kind(data, KIND_PAIRS, path)
    h = r.u32("grid height")
    w = r.u32("grid width")
    gamma = r.f32("gamma")
    sections = []
    for label in ("foreground", "background", "negative"):
        n = r.u32(f"{label} pair count")
        arr = r.array(2 * n, "<u4", f"{label} pairs").reshape(n, 2).astype(np.int64)
        sections.append(arr)
    return h, w, gamma, sections[0], sections[1], sections[2]


# ---------------------------------------------------------------------------
# kind 4: CSR sparse matrices
# ---------------------------------------------------------------------------


def write_sparse_arrays(path, height: int, width: int, indptr: np.ndarray,
                        cols: np.ndarray, vals: np.ndarray) -> None:
    n = height * width
    if indptr.shape[0] != n + 1:
        raise ValueError(f"indptr length {indptr.shape[0]} != cells+1 ({n + 1})")
    buf = _header(KIND_SPARSE)
    buf += struct.pack("<IIQ", height, width, int(indptr[-1]))
    buf += np.ascontiguousarray(indptr, dtype="<u8").tobytes()
    buf += np.ascontiguousarray(cols, dtype="<u4").tobytes()
    buf += np.ascontiguousarray(vals, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(buf)


def read_sparse_arrays(path) -> tuple[int, int, np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    r = _open_kind(data, KIND_SPARSE, path)
    dim_off = r.off
    h = r.u32("grid height")
    w = r.u32("grid width")
    if h < 1 or w < 1 or h * w > _MAX_CELLS:
        raise FormatError(f"dimension overflow ({h}x{w}) at offset {dim_off} in {path}")
    nnz = r.u64("nnz")
    indptr = r.array(h * w + 1, "<u8", "row offsets").astype(np.int64)
    if indptr[-1] != nnz:
        raise FormatError(
            f"row offsets end at {indptr[-1]}, header says nnz={nnz}, at offset {dim_off + 8} in {path}")
    cols = r.array(nnz, "<u4", "column indices").astype(np.int64)
    vals = r.array(nnz, "<f4", "values")
    return h, w, indptr, cols, vals


# ---------------------------------------------------------------------------
# kind 5: parameter checkpoints
# ---------------------------------------------------------------------------


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    buf = _header(KIND_CHECKPOINT)
    buf += struct.pack("<H", len(tensors))
    blob = bytearray()
    for name, arr in tensors.items():
        shape = np.asarray(arr).shape  # before ascontiguousarray, which promotes 0-d to 1-d
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        buf += _encode_name(name)
        buf.append(len(shape))
        for dim in shape:
            buf += struct.pack("<I", dim)
        buf += struct.pack("<Q", len(blob))
        blob += arr.tobytes()
    buf += blob
    with open(path, "wb") as f:
        f.write(buf)


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    r = _open_kind(data, KIND_CHECKPOINT, path)
    count = r.u16("tensor count")
    manifest = []
    for _ in range(count):
        name = r.name("tensor name")
        rank = r.u8("tensor rank")
        shape = tuple(r.u32("tensor dim") for _ in range(rank))
        offset = r.u64("tensor offset")
        manifest.append((name, shape, offset))
    blob_start = r.off
    out = {}
    for name, shape, offset in manifest:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = blob_start + offset
        end = start + 4 * size
        if end > len(data):
            raise FormatError(
                f"truncated payload: tensor {name!r} needs bytes up to {end}, "
                f"file ends at {len(data)} (offset {start})")
        arr = np.frombuffer(data[start:end], dtype="<f4").copy().reshape(shape)
        out[name] = arr
    return out
