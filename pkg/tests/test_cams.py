import math

import numpy as np
import pytest

from wsseg.cams import (assign_labels, background_map, normalize, parse_alpha,
                        select_cams, suppress_absent)
from wsseg.raster import BACKGROUND, ScoreStack


def stack_of(*planes, names=None):
    arr = np.asarray(planes, np.float32)
    names = names or tuple(chr(ord("A") + i) for i in range(arr.shape[0]))
    return ScoreStack(arr, names)


def test_normalize_scales_each_plane_by_its_max():
    s = stack_of([[0.0, 2.0, 4.0]])
    out = normalize(s)
    assert out.planes[0].ravel() == pytest.approx([0.0, 0.5, 1.0])


def test_normalize_keeps_zero_plane_zero():
    s = stack_of([[0.0, 0.0]], [[1.0, 3.0]])
    out = normalize(s)
    assert (out.planes[0] == 0).all()
    assert out.planes[1].max() == 1.0


def test_normalize_is_idempotent():
    rng = np.random.default_rng(0)
    s = stack_of(rng.random((4, 5)), rng.random((4, 5)) * 3)
    once = normalize(s)
    twice = normalize(once)
    assert np.array_equal(once.planes, twice.planes)


def test_background_zero_where_some_class_saturates():
    s = stack_of([[1.0]])
    for alpha in (0.5, 1.0, 4.0, 32.0, math.inf):
        assert background_map(s, alpha)[0, 0] == 0.0


def test_background_direct_evaluation():
    s = stack_of([[0.75]])
    assert background_map(s, 4.0)[0, 0] == pytest.approx(0.25 ** 4)
    assert background_map(s, 4.0)[0, 0] == pytest.approx(0.00390625)


def test_background_infinite_alpha_limit():
    s = stack_of([[0.5, 0.0]])
    bg = background_map(s, math.inf)
    assert bg[0, 0] == 0.0
    assert bg[0, 1] == 1.0


def test_background_rejects_unnormalized():
    s = stack_of([[1.5]])
    with pytest.raises(ValueError, match="not normalized"):
        background_map(s, 4.0)


def test_background_rejects_bad_alpha():
    s = stack_of([[0.5]])
    with pytest.raises(ValueError, match="alpha"):
        background_map(s, 0.0)


def test_background_antitone_in_alpha():
    rng = np.random.default_rng(7)
    values = rng.uniform(0.001, 0.999, size=(1, 40, 25)).astype(np.float32)
    s = ScoreStack(values, ("A",))
    ladder = [0.5, 1.0, 2.0, 4.0, 16.0, 32.0, 1e6, math.inf]
    maps = [background_map(s, a) for a in ladder]
    for lower, higher in zip(maps, maps[1:]):
        assert (lower >= higher).all()


def test_background_infinity_is_the_large_alpha_limit():
    rng = np.random.default_rng(8)
    best = rng.uniform(0.01, 1.0, size=(1, 20, 25)).astype(np.float32)
    best[0, 0, :] = 0.0
    s = ScoreStack(best, ("A",))
    finite = background_map(s, 1e6)
    limit = background_map(s, math.inf)
    assert np.abs(finite - limit).max() <= 1e-12


def test_suppress_absent_cases():
    s = stack_of([[0.2]], [[0.8]], names=("Forest", "Water"))
    unchanged = suppress_absent(s, {"Forest", "Water"})
    assert np.array_equal(unchanged.planes, s.planes)
    none = suppress_absent(s, set())
    assert (none.planes == 0).all()
    only = suppress_absent(s, {"Forest"})
    assert (only.planes[1] == 0).all()
    assert np.array_equal(only.planes[0], s.planes[0])


def test_suppress_absent_idempotent_and_validates():
    s = stack_of([[0.2]], [[0.8]], names=("Forest", "Water"))
    once = suppress_absent(s, {"Water"})
    assert np.array_equal(suppress_absent(once, {"Water"}).planes, once.planes)
    with pytest.raises(ValueError, match="not in stack"):
        suppress_absent(s, {"Lava"})


def test_select_cams_thresholds():
    s = stack_of([[0.3]], [[0.9]], names=("Urban", "Water"))
    kept_stack, kept = select_cams(s, {"Urban": 0.9, "Water": 0.2}, 0.5)
    assert kept == {"Urban"}
    assert (kept_stack.planes[1] == 0).all()
    assert np.array_equal(kept_stack.planes[0], s.planes[0])
    _, all_kept = select_cams(s, {"Urban": 0.9, "Water": 0.2}, 0.0)
    assert all_kept == {"Urban", "Water"}
    zeroed, none_kept = select_cams(s, {"Urban": 0.9, "Water": 0.2}, 1.0)
    assert none_kept == set()
    assert (zeroed.planes == 0).all()


def test_select_cams_matches_suppress_absent():
    rng = np.random.default_rng(3)
    s = stack_of(*rng.random((3, 4, 4)), names=("a", "b", "c"))
    conf = {"a": 0.7, "b": 0.4, "c": 0.55}
    selected, kept = select_cams(s, conf, 0.5)
    assert kept == {"a", "c"}
    assert np.array_equal(selected.planes, suppress_absent(s, kept).planes)


def test_select_cams_validates():
    s = stack_of([[0.1]], names=("a",))
    with pytest.raises(ValueError, match="threshold"):
        select_cams(s, {"a": 0.5}, 1.5)
    with pytest.raises(ValueError, match="missing"):
        select_cams(s, {}, 0.5)


def test_assign_labels_argmax_and_ties():
    s = stack_of([[0.9]], [[0.1]])
    assert assign_labels(s, np.float32([[0.2]])).codes[0, 0] == 0
    s = stack_of([[0.0]], [[0.0]])
    assert assign_labels(s, np.float32([[0.5]])).codes[0, 0] == BACKGROUND
    s = stack_of([[0.5]], [[0.5]])
    # class ties resolve to the lowest index; class beats background on a tie
    assert assign_labels(s, np.float32([[0.5]])).codes[0, 0] == 0


def test_assign_labels_scale_invariance():
    rng = np.random.default_rng(5)
    planes = rng.random((3, 6, 7)).astype(np.float32)
    bg = rng.random((6, 7)).astype(np.float32)
    base = assign_labels(ScoreStack(planes, ("a", "b", "c")), bg)
    scaled = assign_labels(ScoreStack(planes * 0.25, ("a", "b", "c")), bg * np.float32(0.25))
    assert np.array_equal(base.codes, scaled.codes)


def test_assign_labels_rejects_dim_mismatch():
    s = stack_of([[0.5, 0.5]])
    with pytest.raises(ValueError, match="does not match"):
        assign_labels(s, np.zeros((3, 3), np.float32))


def test_parse_alpha_tokens():
    assert parse_alpha("4") == 4.0
    assert math.isinf(parse_alpha("inf"))
    assert math.isinf(parse_alpha("Infinity"))
    with pytest.raises(ValueError):
        parse_alpha("-2")
