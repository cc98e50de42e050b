"""Hot numeric kernels with two interchangeable implementations.

Every kernel exists twice: a loop version compiled with numba's @njit and a
vectorized pure-numpy version. The numba path is the default; set
``WSSEG_NO_NUMBA=1`` (or any truthy value) before import to select the numpy
path. The numpy path is also used automatically when numba cannot be
imported. ``benchmarks/bench_kernels.py`` times both paths against each
other on realistic sizes.

Both paths emit identical structure (CSR column indices sorted ascending per
row, pair lists sorted by (i, j)), so downstream code is path-agnostic.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("WSSEG_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag not in ("", "0", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def neighbor_offsets(gamma: float, include_center: bool = False,
                     forward_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Grid offsets (dr, dc) with Euclidean norm strictly below gamma.

    Sorted lexicographically by (dr, dc). ``forward_only`` keeps only offsets
    that point to a strictly larger row-major linear index (dr > 0, or dr == 0
    and dc > 0), which guarantees i < j when enumerating unordered pairs.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    reach = int(np.ceil(gamma))
    limit = float(gamma) * float(gamma)
    rows, cols = [], []
    for dr in range(-reach, reach + 1):
        for dc in range(-reach, reach + 1):
            if dr * dr + dc * dc >= limit:
                continue
            if dr == 0 and dc == 0 and not include_center:
                continue
            if forward_only and (dr < 0 or (dr == 0 and dc <= 0)):
                continue
            rows.append(dr)
            cols.append(dc)
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


# ---------------------------------------------------------------------------
# 2-D convolution, channel-last: x (H, W, Cin), w (KH, KW, Cin, Cout)
# ---------------------------------------------------------------------------


def _conv2d_loops(x, w, b, stride, pad):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.empty((ho, wo, cout), x.dtype)
    for oy in range(ho):
        for ox in range(wo):
            for oc in range(cout):
                y[oy, ox, oc] = b[oc]
            for u in range(kh):
                iy = oy * stride + u - pad
                if iy < 0 or iy >= h:
                    continue
                for v in range(kw):
                    ix = ox * stride + v - pad
                    if ix < 0 or ix >= wd:
                        continue
                    for ic in range(cin):
                        xv = x[iy, ix, ic]
                        for oc in range(cout):
                            y[oy, ox, oc] += xv * w[u, v, ic, oc]
    return y


def conv2d_numpy(x, w, b, stride, pad):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=x.dtype)
    xp[pad:pad + h, pad:pad + wd] = x
    y = np.empty((ho, wo, cout), dtype=x.dtype)
    y[:] = b
    for u in range(kh):
        for v in range(kw):
            part = xp[u:u + stride * (ho - 1) + 1:stride,
                      v:v + stride * (wo - 1) + 1:stride]
            y += (part.reshape(-1, cin) @ w[u, v]).reshape(ho, wo, cout)
    return y


def _conv2d_grads_loops(x, w, gy, stride, pad):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho, wo, _ = gy.shape
    gx = np.zeros(x.shape, x.dtype)
    gw = np.zeros(w.shape, w.dtype)
    gb = np.zeros(cout, w.dtype)
    for oy in range(ho):
        for ox in range(wo):
            for oc in range(cout):
                gb[oc] += gy[oy, ox, oc]
            for u in range(kh):
                iy = oy * stride + u - pad
                if iy < 0 or iy >= h:
                    continue
                for v in range(kw):
                    ix = ox * stride + v - pad
                    if ix < 0 or ix >= wd:
                        continue
                    for ic in range(cin):
                        xv = x[iy, ix, ic]
                        acc = 0.0
                        for oc in range(cout):
                            g = gy[oy, ox, oc]
                            gw[u, v, ic, oc] += xv * g
                            acc += w[u, v, ic, oc] * g
                        gx[iy, ix, ic] += acc
    return gx, gw, gb


def conv2d_grads_numpy(x, w, gy, stride, pad):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho, wo, _ = gy.shape
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=x.dtype)
    xp[pad:pad + h, pad:pad + wd] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = gy.sum(axis=(0, 1)).astype(w.dtype)
    gflat = gy.reshape(-1, cout)
    for u in range(kh):
        for v in range(kw):
            rows = slice(u, u + stride * (ho - 1) + 1, stride)
            cols = slice(v, v + stride * (wo - 1) + 1, stride)
            part = xp[rows, cols]
            gw[u, v] = part.reshape(-1, cin).T @ gflat
            gxp[rows, cols] += (gflat @ w[u, v].T).reshape(ho, wo, cin)
    gx = gxp[pad:pad + h, pad:pad + wd].copy()
    return gx, gw, gb


# ---------------------------------------------------------------------------
# CSR sparse matrix-vector product (64-bit accumulation)
# ---------------------------------------------------------------------------


def _csr_matvec_loops(indptr, cols, vals, x):
    n = indptr.shape[0] - 1
    y = np.empty(n, np.float64)
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += vals[k] * x[cols[k]]
        y[i] = acc
    return y


def csr_matvec_numpy(indptr, cols, vals, x):
    # Every row carries its diagonal, so no row is empty and reduceat
    # segment sums are well defined.
    prod = vals.astype(np.float64) * np.asarray(x, dtype=np.float64)[cols]
    return np.add.reduceat(prod, indptr[:-1])


# ---------------------------------------------------------------------------
# Sparse pairwise-affinity extraction over a grid neighborhood
# ---------------------------------------------------------------------------


def _affinity_csr_loops(feat, h, w, dr, dc):
    n = h * w
    k = dr.shape[0]
    d = feat.shape[1]
    indptr = np.zeros(n + 1, np.int64)
    for r in range(h):
        for c in range(w):
            m = 0
            for t in range(k):
                rr = r + dr[t]
                cc = c + dc[t]
                if 0 <= rr < h and 0 <= cc < w:
                    m += 1
            indptr[r * w + c + 1] = m
    for i in range(n):
        indptr[i + 1] += indptr[i]
    nnz = indptr[n]
    cols = np.empty(nnz, np.int64)
    vals = np.empty(nnz, feat.dtype)
    for r in range(h):
        for c in range(w):
            i = r * w + c
            p = indptr[i]
            for t in range(k):
                rr = r + dr[t]
                cc = c + dc[t]
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                j = rr * w + cc
                dist = 0.0
                for e in range(d):
                    diff = feat[i, e] - feat[j, e]
                    if diff < 0:
                        diff = -diff
                    dist += diff
                cols[p] = j
                vals[p] = np.exp(-dist)
                p += 1
    return indptr, cols, vals


def affinity_csr_numpy(feat, h, w, dr, dc):
    lin = np.arange(h * w, dtype=np.int64).reshape(h, w)
    grid = feat.reshape(h, w, feat.shape[1])
    ii, jj, vv = [], [], []
    for t in range(dr.shape[0]):
        d_r, d_c = int(dr[t]), int(dc[t])
        r0, r1 = max(0, -d_r), min(h, h - d_r)
        c0, c1 = max(0, -d_c), min(w, w - d_c)
        if r0 >= r1 or c0 >= c1:
            continue
        a = grid[r0:r1, c0:c1]
        bb = grid[r0 + d_r:r1 + d_r, c0 + d_c:c1 + d_c]
        dist = np.abs(a - bb).sum(axis=2)
        ii.append(lin[r0:r1, c0:c1].ravel())
        jj.append(lin[r0 + d_r:r1 + d_r, c0 + d_c:c1 + d_c].ravel())
        vv.append(np.exp(-dist).ravel())
    rows = np.concatenate(ii)
    cols = np.concatenate(jj)
    vals = np.concatenate(vv)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(h * w + 1, np.int64)
    np.cumsum(np.bincount(rows, minlength=h * w), out=indptr[1:])
    return indptr, cols, vals


# ---------------------------------------------------------------------------
# Radius-limited pair enumeration partitioned by label codes
# ---------------------------------------------------------------------------


def _partition_pairs_loops(codes, dr, dc, bg_code, neutral_code):
    h, w = codes.shape
    k = dr.shape[0]
    nfg = 0
    nbg = 0
    nneg = 0
    for r in range(h):
        for c in range(w):
            a = codes[r, c]
            if a == neutral_code:
                continue
            for t in range(k):
                rr = r + dr[t]
                cc = c + dc[t]
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                bcode = codes[rr, cc]
                if bcode == neutral_code:
                    continue
                if a == bcode:
                    if a == bg_code:
                        nbg += 1
                    else:
                        nfg += 1
                else:
                    nneg += 1
    fg_i = np.empty(nfg, np.int64)
    fg_j = np.empty(nfg, np.int64)
    bg_i = np.empty(nbg, np.int64)
    bg_j = np.empty(nbg, np.int64)
    ng_i = np.empty(nneg, np.int64)
    ng_j = np.empty(nneg, np.int64)
    pf = 0
    pb = 0
    pn = 0
    for r in range(h):
        for c in range(w):
            a = codes[r, c]
            if a == neutral_code:
                continue
            i = r * w + c
            for t in range(k):
                rr = r + dr[t]
                cc = c + dc[t]
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                bcode = codes[rr, cc]
                if bcode == neutral_code:
                    continue
                j = rr * w + cc
                if a == bcode:
                    if a == bg_code:
                        bg_i[pb] = i
                        bg_j[pb] = j
                        pb += 1
                    else:
                        fg_i[pf] = i
                        fg_j[pf] = j
                        pf += 1
                else:
                    ng_i[pn] = i
                    ng_j[pn] = j
                    pn += 1
    return fg_i, fg_j, bg_i, bg_j, ng_i, ng_j


def partition_pairs_numpy(codes, dr, dc, bg_code, neutral_code):
    h, w = codes.shape
    lin = np.arange(h * w, dtype=np.int64).reshape(h, w)
    acc = {"fg": ([], []), "bg": ([], []), "neg": ([], [])}
    for t in range(dr.shape[0]):
        d_r, d_c = int(dr[t]), int(dc[t])
        r0, r1 = max(0, -d_r), min(h, h - d_r)
        c0, c1 = max(0, -d_c), min(w, w - d_c)
        if r0 >= r1 or c0 >= c1:
            continue
        a = codes[r0:r1, c0:c1]
        bb = codes[r0 + d_r:r1 + d_r, c0 + d_c:c1 + d_c]
        ii = lin[r0:r1, c0:c1]
        jj = lin[r0 + d_r:r1 + d_r, c0 + d_c:c1 + d_c]
        ok = (a != neutral_code) & (bb != neutral_code)
        same = ok & (a == bb)
        for key, mask in (("fg", same & (a != bg_code)),
                          ("bg", same & (a == bg_code)),
                          ("neg", ok & (a != bb))):
            acc[key][0].append(ii[mask])
            acc[key][1].append(jj[mask])
    out = []
    for key in ("fg", "bg", "neg"):
        i_arr = np.concatenate(acc[key][0]) if acc[key][0] else np.empty(0, np.int64)
        j_arr = np.concatenate(acc[key][1]) if acc[key][1] else np.empty(0, np.int64)
        order = np.lexsort((j_arr, i_arr))
        out.append(i_arr[order])
        out.append(j_arr[order])
    return tuple(out)


# ---------------------------------------------------------------------------
# Scatter-accumulation of L1 subgradients for pair losses
# ---------------------------------------------------------------------------


def _pair_sign_grads_loops(gfeat, ii, jj, coef, feat):
    n = ii.shape[0]
    d = feat.shape[1]
    for k in range(n):
        a = ii[k]
        b = jj[k]
        cf = coef[k]
        for e in range(d):
            diff = feat[a, e] - feat[b, e]
            if diff > 0:
                gfeat[a, e] += cf
                gfeat[b, e] -= cf
            elif diff < 0:
                gfeat[a, e] -= cf
                gfeat[b, e] += cf
    return gfeat


def pair_sign_grads_numpy(gfeat, ii, jj, coef, feat):
    if ii.shape[0] == 0:
        return gfeat
    contrib = (coef[:, None] * np.sign(feat[ii] - feat[jj])).astype(gfeat.dtype)
    np.add.at(gfeat, ii, contrib)
    np.subtract.at(gfeat, jj, contrib)
    return gfeat


# ---------------------------------------------------------------------------
# Path selection
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    conv2d_numba = njit(cache=True)(_conv2d_loops)
    conv2d_grads_numba = njit(cache=True)(_conv2d_grads_loops)
    csr_matvec_numba = njit(cache=True)(_csr_matvec_loops)
    affinity_csr_numba = njit(cache=True)(_affinity_csr_loops)
    partition_pairs_numba = njit(cache=True)(_partition_pairs_loops)
    pair_sign_grads_numba = njit(cache=True)(_pair_sign_grads_loops)

if USING_NUMBA:
    conv2d = conv2d_numba
    conv2d_grads = conv2d_grads_numba
    csr_matvec = csr_matvec_numba
    affinity_csr = affinity_csr_numba
    partition_pairs = partition_pairs_numba
    pair_sign_grads = pair_sign_grads_numba
else:
    conv2d = conv2d_numpy
    conv2d_grads = conv2d_grads_numpy
    csr_matvec = csr_matvec_numpy
    affinity_csr = affinity_csr_numpy
    partition_pairs = partition_pairs_numpy
    pair_sign_grads = pair_sign_grads_numpy
