import numpy as np
import pytest

from wsseg.cams import assign_labels
from wsseg.data import (SynthSpec, plan_tiles, read_split, reduce_to_image_labels,
                        scan, split, stitch, synthesize, synthetic_confidences,
                        tile, write_split)
from wsseg.raster import LabelMap, Raster, deepglobe_palette


@pytest.fixture
def palette():
    return deepglobe_palette()


def touch(path, data=b"x"):
    path.write_bytes(data)


def write_png(path, shape=(4, 4, 3)):
    from PIL import Image
    Image.fromarray(np.zeros(shape, np.uint8)).save(path)


def test_scan_empty_directory(tmp_path):
    assert scan(tmp_path) == []


def test_scan_pairs_and_orphans(tmp_path, caplog):
    write_png(tmp_path / "a_sat.png")
    write_png(tmp_path / "a_mask.png")
    write_png(tmp_path / "b_sat.png")
    write_png(tmp_path / "zz_mask.png")
    with caplog.at_level("WARNING"):
        records = scan(tmp_path)
    assert [r.id for r in records] == ["a", "b"]
    assert records[0].mask_path is not None
    assert records[1].mask_path is None
    assert any("orphan" in msg for msg in caplog.messages)


def test_scan_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        scan(tmp_path / "nope")


def test_deepglobe_tiling_counts():
    grid = plan_tiles(2448, 2448, 306)
    assert (grid.rows, grid.cols) == (8, 8)
    assert len(grid) == 64
    assert not grid.clamped


def test_tile_stitch_roundtrip_random():
    rng = np.random.default_rng(0)
    raster = Raster(rng.integers(0, 256, size=(20, 14, 3)).astype(np.uint8))
    grid, tiles = tile(raster, 7)
    assert np.array_equal(stitch(grid, tiles).data, raster.data)


def test_clamped_edge_tiles_flagged():
    rng = np.random.default_rng(1)
    raster = Raster(rng.integers(0, 256, size=(10, 10, 1)).astype(np.uint8))
    grid, tiles = tile(raster, 3)
    assert (grid.rows, grid.cols) == (4, 4)
    assert grid.clamped
    assert tiles[3].data.shape == (3, 1, 1)    # right edge, 1 wide
    assert tiles[-1].data.shape == (1, 1, 1)   # bottom-right corner
    assert np.array_equal(stitch(grid, tiles).data, raster.data)


def test_stitch_rejects_wrong_tile_count():
    raster = Raster(np.zeros((6, 6, 1), np.uint8))
    grid, tiles = tile(raster, 3)
    with pytest.raises(ValueError, match="tiles"):
        stitch(grid, tiles[:-1])


def test_reduce_labels_cases(palette):
    forest = palette.index_of("Forest")
    water = palette.index_of("Water")
    all_forest = LabelMap(np.full((5, 5), forest, np.uint8))
    assert reduce_to_image_labels(all_forest, palette) == {"Forest"}

    half = np.full((306, 306), forest, np.uint8)
    half[:153] = water
    assert reduce_to_image_labels(LabelMap(half), palette, 0.0) == {"Forest", "Water"}

    sliver = np.full((306, 306), forest, np.uint8)
    sliver[0, 0] = water  # 1 / 93636 < 0.01
    assert reduce_to_image_labels(LabelMap(sliver), palette, 0.01) == {"Forest"}
    assert reduce_to_image_labels(LabelMap(sliver), palette, 0.0) == {"Forest", "Water"}


def test_reduce_labels_never_reports_unknown(palette):
    unknown = palette.unknown_index
    mask = LabelMap(np.full((4, 4), unknown, np.uint8))
    assert reduce_to_image_labels(mask, palette) == set()


def test_reduce_labels_monotone_in_threshold(palette):
    rng = np.random.default_rng(2)
    mask = LabelMap(rng.integers(0, 7, size=(30, 30)).astype(np.uint8))
    base = reduce_to_image_labels(mask, palette, 0.0)
    for frac in (0.01, 0.1, 0.3):
        assert reduce_to_image_labels(mask, palette, frac) <= base


def test_split_counts_and_determinism():
    records = [type("R", (), {"id": f"{i:03d}"})() for i in range(803)]
    train, val = split(records, 562, seed=4)
    assert len(train) == 562 and len(val) == 241
    train2, val2 = split(records, 562, seed=4)
    assert [r.id for r in train] == [r.id for r in train2]
    assert set(r.id for r in train).isdisjoint(r.id for r in val)
    assert len(set(r.id for r in train) | set(r.id for r in val)) == 803
    all_train, empty = split(records, 803, seed=0)
    assert len(empty) == 0
    with pytest.raises(ValueError, match="exceeds"):
        split(records, 804, seed=0)


def test_split_file_roundtrip(tmp_path):
    records = [type("R", (), {"id": name})() for name in ("a", "b", "c")]
    path = tmp_path / "train.txt"
    write_split(path, records)
    assert read_split(path) == ["a", "b", "c"]


def test_synthesize_deterministic(palette):
    spec = SynthSpec(seed=42, width=48, height=32, classes=3)
    first = synthesize(spec, palette)
    second = synthesize(spec, palette)
    assert np.array_equal(first[0].data, second[0].data)
    assert np.array_equal(first[1].codes, second[1].codes)
    assert np.array_equal(first[2].planes, second[2].planes)
    assert first[3] == second[3]


def test_synthesize_uncorrupted_cams_argmax_equals_ground_truth(palette):
    spec = SynthSpec(seed=3, width=40, height=40, classes=4, blur_radius=0, noise=0.0)
    _, gt, cams, _ = synthesize(spec, palette)
    labels = assign_labels(cams, np.zeros((40, 40), np.float32))
    assert np.array_equal(labels.codes, gt.codes)


def test_synthesize_declared_classes_only(palette):
    for model in ("voronoi", "rects"):
        spec = SynthSpec(seed=9, width=24, height=24, classes=3, region_model=model)
        _, gt, cams, labels = synthesize(spec, palette)
        assert set(np.unique(gt.codes)) <= {0, 1, 2}
        assert labels <= {"Urban", "Agriculture", "Rangeland"}
        assert cams.planes.shape == (3, 24, 24)
        assert cams.planes.max() <= 1.0


def test_corrupted_cams_are_imperfect(palette):
    spec = SynthSpec(seed=5, width=64, height=64, classes=2, blur_radius=4, noise=0.3)
    _, gt, cams, _ = synthesize(spec, palette)
    labels = assign_labels(cams, np.zeros((64, 64), np.float32))
    agreement = (labels.codes == gt.codes).mean()
    assert 0.5 < agreement < 1.0


def test_synthetic_confidences_separate_present_from_absent(palette):
    spec = SynthSpec(seed=1, classes=3)
    conf = synthetic_confidences(spec, {"Urban"}, ("Urban", "Agriculture", "Rangeland"))
    assert conf["Urban"] >= 0.85
    assert conf["Agriculture"] <= 0.15
    assert conf["Rangeland"] <= 0.15
