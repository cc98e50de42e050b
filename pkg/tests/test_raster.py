import numpy as np
import pytest

from wsseg.raster import (BACKGROUND, NEUTRAL, ClassPalette, LabelMap, Raster,
                          ScoreStack, deepglobe_palette, load_palette,
                          resample, resample_labels, rgb_decode, rgb_encode)


@pytest.fixture
def palette():
    return deepglobe_palette()


def test_deepglobe_palette_has_seven_distinct_entries(palette):
    assert len(palette) == 7
    assert palette.names[3] == "Forest"
    assert tuple(palette.colors[3]) == (0, 255, 0)
    assert palette.unknown_index == 6


def test_all_forest_pixels_decode_to_forest(palette):
    img = np.zeros((5, 4, 3), np.uint8)
    img[:] = (0, 255, 0)
    labels = rgb_decode(Raster(img), palette)
    assert (labels.codes == palette.index_of("Forest")).all()


def test_roundtrip_on_random_palette_exact_mask(palette):
    rng = np.random.default_rng(3)
    codes = rng.integers(0, len(palette), size=(16, 13)).astype(np.uint8)
    raster = rgb_encode(LabelMap(codes), palette)
    assert np.array_equal(rgb_decode(raster, palette).codes, codes)
    # and encode(decode(x)) = x for palette-exact rasters
    assert np.array_equal(rgb_encode(rgb_decode(raster, palette), palette).data, raster.data)


def test_sentinel_colors(palette):
    codes = np.array([[1, BACKGROUND, NEUTRAL]], np.uint8)
    raster = rgb_encode(LabelMap(codes), palette)
    assert tuple(raster.data[0, 1]) == (0, 0, 0)
    assert tuple(raster.data[0, 2]) == (128, 128, 128)
    back = rgb_decode(raster, palette)
    # (0,0,0) always decodes to Unknown; the NEUTRAL sentinel survives.
    assert back.codes[0, 1] == palette.unknown_index
    assert back.codes[0, 2] == NEUTRAL


def test_decode_roundtrip_identity_without_background(palette):
    rng = np.random.default_rng(4)
    codes = rng.integers(0, len(palette), size=(9, 9)).astype(np.uint8)
    codes[rng.random((9, 9)) < 0.2] = NEUTRAL
    raster = rgb_encode(LabelMap(codes), palette)
    assert np.array_equal(rgb_decode(raster, palette).codes, codes)


def test_unknown_color_rejected_without_nearest(palette):
    img = np.zeros((2, 2, 3), np.uint8)
    img[0, 1] = (1, 255, 0)
    with pytest.raises(ValueError, match=r"\(1, 255, 0\).*\(0, 1\)"):
        rgb_decode(Raster(img), palette)


def test_nearest_color_decode(palette):
    img = np.zeros((1, 2, 3), np.uint8)
    img[0, 0] = (1, 255, 0)    # one off Forest
    img[0, 1] = (250, 250, 4)  # near Agriculture
    labels = rgb_decode(Raster(img), palette, nearest=True)
    assert labels.codes[0, 0] == palette.index_of("Forest")
    assert labels.codes[0, 1] == palette.index_of("Agriculture")


def test_label_code_outside_palette_rejected(palette):
    with pytest.raises(ValueError, match="outside palette"):
        rgb_encode(LabelMap(np.array([[9]], np.uint8)), palette)


def test_palette_file_roundtrip(tmp_path, palette):
    path = tmp_path / "classes.txt"
    lines = ["# name r g b"]
    for name, color in zip(palette.names, palette.colors):
        lines.append(f"{name} {color[0]} {color[1]} {color[2]}")
    path.write_text("\n".join(lines) + "\n")
    loaded = load_palette(path)
    assert loaded.names == palette.names
    assert np.array_equal(loaded.colors, palette.colors)


def test_palette_rejects_duplicate_colors():
    with pytest.raises(ValueError, match="distinct"):
        ClassPalette(("a", "b"), np.array([[0, 0, 0], [0, 0, 0]], np.uint8))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def test_resample_identity_dims():
    rng = np.random.default_rng(0)
    plane = rng.random((7, 5)).astype(np.float32)
    for mode in ("nearest", "bilinear"):
        assert np.array_equal(resample(plane, 5, 7, mode), plane)


def test_bilinear_1x2_to_1x4_fixture():
    # center-aligned sampling: src = (i + 0.5) / 2 - 0.5, clamped
    plane = np.array([[0.0, 1.0]], np.float32)
    out = resample(plane, 4, 1, "bilinear")
    assert out == pytest.approx(np.array([[0.0, 0.25, 0.75, 1.0]]))


def test_constant_plane_stays_constant():
    plane = np.full((6, 9), 0.371, np.float32)
    for mode in ("nearest", "bilinear"):
        out = resample(plane, 23, 17, mode)
        assert (out == np.float32(0.371)).all()


def test_bilinear_values_stay_within_input_range():
    rng = np.random.default_rng(1)
    for _ in range(10):
        plane = rng.random((int(rng.integers(1, 20)), int(rng.integers(1, 20)))).astype(np.float32)
        out = resample(plane, int(rng.integers(1, 40)), int(rng.integers(1, 40)), "bilinear")
        assert out.min() >= plane.min()
        assert out.max() <= plane.max()


def test_nearest_introduces_no_new_values():
    rng = np.random.default_rng(2)
    plane = rng.random((8, 8)).astype(np.float32)
    out = resample(plane, 21, 13, "nearest")
    assert np.isin(out, plane).all()


def test_zero_target_dim_rejected():
    plane = np.zeros((2, 2), np.float32)
    with pytest.raises(ValueError, match=">= 1"):
        resample(plane, 0, 2)


def test_resample_labels_nearest_codes():
    codes = np.array([[0, 1], [2, 3]], np.uint8)
    out = resample_labels(LabelMap(codes), 4, 4)
    assert out.codes.shape == (4, 4)
    assert set(np.unique(out.codes)) <= {0, 1, 2, 3}
    assert np.array_equal(resample_labels(LabelMap(codes), 2, 2).codes, codes)


# ---------------------------------------------------------------------------
# Type invariants
# ---------------------------------------------------------------------------


def test_score_stack_rejects_bad_input():
    with pytest.raises(ValueError, match="negative"):
        ScoreStack(np.full((1, 2, 2), -1.0, np.float32), ("a",))
    with pytest.raises(ValueError, match="non-finite"):
        ScoreStack(np.full((1, 2, 2), np.nan, np.float32), ("a",))
    with pytest.raises(ValueError, match="planes for"):
        ScoreStack(np.zeros((2, 2, 2), np.float32), ("a",))


def test_raster_rejects_bad_shape():
    with pytest.raises(ValueError, match="3-d"):
        Raster(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError, match="dtype"):
        Raster(np.zeros((2, 2, 3), np.int32))
