"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured values (run with ``pytest tests/test_acceptance.py -v -s``).

Empirical thresholds (criteria 6-8) were pinned from the first seeded oracle
run of this implementation and are reproduced exactly by these configs:

* 20-scene sweep (synth seed 7, ceilings U[0.05, 1], pipeline seed 3,
  40 epochs): recalls 0.571 / 0.811 / 0.929 / 0.978 for alpha 4/16/32/inf,
  precision spread 0.0115, walked-vs-raw mIoU wins 20/20 (min margin 0.024).
* two-region run (synth seed 0, blur 2, noise 0.1, 200 epochs, train seed 0):
  held-out within-region W 0.9176, cross-region W 0.0054.
"""

import math
import time

import numpy as np
import pytest

from wsseg.cams import assign_labels, background_map
from wsseg.cli import main
from wsseg.data import SynthSpec, synthesize, tile, stitch, plan_tiles
from wsseg.metrics import confusion, miou, precision_recall
from wsseg.model import (LossWeights, TrainConfig, forward, grid_shape,
                         loss_grad, train)
from wsseg.pairs import PairSet, enumerate_pairs
from wsseg.raster import (BACKGROUND, NEUTRAL, LabelMap, Raster, ScoreStack,
                          deepglobe_palette, image_to_unit_float, read_image,
                          read_plane, read_stack, resample_labels, rgb_decode)
from wsseg.walk import build_transition, propagate

from test_pairs import brute_force_pairs
from test_model import fd_gradient, rel_error, tiny_params
from test_walk import to_dense, random_affinity

PALETTE = deepglobe_palette()

SWEEP_ALPHAS = ("4", "16", "32", "inf")
SWEEP_SYNTH = ["--scenes", "20", "--size", "64", "--classes", "3", "--blur", "4",
               "--noise", "0.3", "--seed", "7", "--ceiling-lo", "0.05",
               "--ceiling-hi", "1.0"]
SWEEP_KNOBS = ["--epochs", "40", "--pair-cap", "2048", "--seed", "3"]


def report(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE {criterion:2d} PASS: {message}")


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    """Synthetic 20-scene suite + full pipeline at four alphas (jobs=4),
    plus two repeat runs of the alpha=4 pipeline for the determinism check."""
    base = tmp_path_factory.mktemp("sweep")
    data = base / "data"
    assert main(["synth", "--out", str(data), *SWEEP_SYNTH]) == 0
    started = time.perf_counter()
    for alpha in SWEEP_ALPHAS:
        rc = main(["pipeline", "--data", str(data), "--out", str(base / f"run_{alpha}"),
                   "--alpha", alpha, "--jobs", "4", *SWEEP_KNOBS])
        assert rc == 0
    elapsed = time.perf_counter() - started
    for tag, jobs in (("again", "4"), ("serial", "1")):
        rc = main(["pipeline", "--data", str(data), "--out", str(base / f"run_4_{tag}"),
                   "--alpha", "4", "--jobs", jobs, *SWEEP_KNOBS])
        assert rc == 0
    return {"base": base, "data": data, "elapsed": elapsed}


def sweep_totals(base, alpha):
    lines = (base / f"run_{alpha}" / "eval" / "metrics.csv").read_text().splitlines()
    total = lines[-1].split(",")
    assert total[0] == "TOTAL"
    return float(total[1]), float(total[2]), float(total[3])


def test_c01_loss_weight_reciprocal_gate():
    LossWeights(6, 2, 3)
    LossWeights(4, 4, 2)
    with pytest.raises(ValueError):
        LossWeights(2, 2, 2)
    report(1, "(6,2,3) and (4,4,2) accepted, (2,2,2) rejected")


def test_c02_gradient_matches_finite_differences():
    weights = LossWeights(6, 2, 3)
    rng = np.random.default_rng(2024)

    def instance(seed):
        local = np.random.default_rng(seed)
        h, w = int(local.integers(4, 9)), int(local.integers(4, 9))
        params = tiny_params(seed)  # depth 4 head, float64
        image = local.uniform(0, 1, size=(h, w, 3))
        gh, gw = grid_shape(h, w, params.stride)
        codes = local.integers(0, 2, size=(gh, gw)).astype(np.uint8)
        codes[local.random((gh, gw)) < 0.25] = BACKGROUND
        codes[local.random((gh, gw)) < 0.15] = NEUTRAL
        pair_set = enumerate_pairs(LabelMap(codes), 2.0)
        if pair_set.total == 0:
            return None
        return params, image, pair_set

    first = instance(0)  # warm any jit compilation outside the timed window
    loss_grad(first[0], first[1], first[2], weights, 1e-7)

    started = time.perf_counter()
    checked = 0
    worst = 0.0
    seed = 0
    while checked < 20:
        seed += 1
        inst = instance(int(rng.integers(0, 2 ** 31)) + seed)
        if inst is None:
            continue
        params, image, pair_set = inst
        analytic, _ = loss_grad(params, image, pair_set, weights, 1e-7)
        numeric = fd_gradient(params, image, pair_set, weights, 1e-7, step=1e-5)
        err = rel_error(analytic, numeric)
        worst = max(worst, err)
        assert err <= 1e-6, f"instance {seed}: relative error {err}"
        checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    report(2, f"{checked} instances, worst relative error {worst:.2e}, {elapsed:.1f}s")


def test_c03_random_walk_against_dense_power():
    rng = np.random.default_rng(31)
    # warm-up outside the timed window
    warm = random_affinity(rng)
    propagate(build_transition(warm, 2.0), np.zeros((warm.height, warm.width), np.float32), 1)

    started = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        aff = random_affinity(rng)
        beta = float(rng.uniform(1, 8))
        transition = build_transition(aff, beta)
        dense = to_dense(transition)
        sums = dense.sum(axis=1)
        assert np.abs(sums - 1.0).max() <= 1e-6
        steps = int(rng.integers(0, 9))
        plane = rng.uniform(0, 4, (aff.height, aff.width)).astype(np.float32)
        got = propagate(transition, plane, steps)
        expect = np.linalg.matrix_power(dense, steps) @ plane.ravel().astype(np.float64)
        worst = max(worst, float(np.abs(got.ravel() - expect).max()))
        assert worst <= 1e-5
        assert got.max() <= plane.max() and got.min() >= plane.min()
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    report(3, f"50 instances, worst abs deviation {worst:.2e}, {elapsed:.1f}s")


def test_c04_pair_enumeration_against_brute_force():
    rng = np.random.default_rng(4)
    fixture = enumerate_pairs(LabelMap(np.zeros((3, 3), np.uint8)), 2.0)
    assert fixture.fg.shape[0] == 20
    maps_checked = 0
    for _ in range(20):
        h, w = rng.integers(1, 13, size=2)
        codes = rng.integers(0, 3, size=(h, w)).astype(np.uint8)
        codes[rng.random((h, w)) < 0.2] = NEUTRAL
        codes[rng.random((h, w)) < 0.2] = BACKGROUND
        for gamma in (1.5, 2.0, 5.0):
            got = enumerate_pairs(LabelMap(codes), gamma)
            fg, bg, neg = brute_force_pairs(codes, gamma)
            assert [tuple(r) for r in got.fg] == fg
            assert [tuple(r) for r in got.bg] == bg
            assert [tuple(r) for r in got.neg] == neg
        maps_checked += 1
    report(4, f"3x3/gamma=2 fixture has 20 fg pairs; {maps_checked} random maps "
              f"x 3 gammas match brute force")


def test_c05_background_exponent_suite():
    rng = np.random.default_rng(5)
    best = rng.uniform(0.0005, 0.9995, size=1000).astype(np.float32)
    stack = ScoreStack(best.reshape(1, 40, 25), ("A",))
    ladder = [0.5, 1.0, 2.0, 4.0, 16.0, 32.0, 1e6, math.inf]
    maps = [background_map(stack, a) for a in ladder]
    for lower, higher in zip(maps, maps[1:]):
        assert (lower >= higher).all()

    eligible = rng.uniform(0.01, 1.0, size=1000).astype(np.float32)
    eligible[:100] = 0.0
    stack2 = ScoreStack(eligible.reshape(1, 40, 25), ("A",))
    gap = np.abs(background_map(stack2, 1e6) - background_map(stack2, math.inf)).max()
    assert gap <= 1e-12
    report(5, f"antitone on 1000 pixels across {len(ladder)} exponents; "
              f"inf vs 1e6 max gap {gap:.1e}")


def test_c06_background_strength_trend(sweep):
    recalls, precisions = [], []
    for alpha in SWEEP_ALPHAS:
        precision, recall, _ = sweep_totals(sweep["base"], alpha)
        precisions.append(precision)
        recalls.append(recall)
    assert all(b >= a for a, b in zip(recalls, recalls[1:])), recalls
    gap = recalls[-1] - recalls[0]
    spread = max(precisions) - min(precisions)
    assert gap >= 0.05, recalls
    assert spread < 0.10, precisions
    assert sweep["elapsed"] < 300.0
    report(6, f"recalls {['%.3f' % r for r in recalls]} (gap {gap:.3f}), "
              f"precision spread {spread:.4f}, sweep {sweep['elapsed']:.0f}s")


def test_c07_random_walk_improves_miou(sweep):
    base, data = sweep["base"], sweep["data"]
    run = base / "run_inf"
    ignore = {PALETTE.unknown_index}
    wins, margins = 0, []
    for i in range(20):
        sid = f"{i:04d}"
        gt = rgb_decode(read_image(data / f"{sid}_mask.png"), PALETTE)
        stack = read_stack(run / "cams" / f"{sid}_cams.wcam")
        bg = read_plane(run / "cams" / f"{sid}_bg.wcam")
        raw = assign_labels(stack, bg)
        lut = np.arange(256, dtype=np.uint8)
        for idx, name in enumerate(stack.classes):
            lut[idx] = PALETTE.index_of(name)
        raw = LabelMap(lut[raw.codes])
        pred = rgb_decode(read_image(run / "labels" / f"{sid}_pred.png"), PALETTE)
        codes = pred.codes.copy()
        codes[codes == PALETTE.unknown_index] = BACKGROUND
        _, raw_miou = miou(confusion(raw, gt, len(PALETTE), ignore))
        _, walk_miou = miou(confusion(LabelMap(codes), gt, len(PALETTE), ignore))
        margins.append(walk_miou - raw_miou)
        wins += walk_miou > raw_miou
    assert wins >= 18, margins
    report(7, f"walked labels beat raw argmax on {wins}/20 scenes "
              f"(median margin {sorted(margins)[10]:.3f})")


def test_c08_affinity_separation_after_training():
    spec = SynthSpec(seed=0, width=64, height=64, classes=2, region_model="voronoi",
                     blur_radius=2, noise=0.1, image_noise=0.05)
    image, gt, _, _ = synthesize(spec, PALETTE)
    img = image_to_unit_float(image)
    gh, gw = grid_shape(64, 64, 2)
    grid_gt = resample_labels(gt, gw, gh)
    full = enumerate_pairs(grid_gt, 5.0)

    holdout_rng = np.random.default_rng(123)

    def split_part(arr):
        perm = holdout_rng.permutation(arr.shape[0])
        cut = int(0.8 * arr.shape[0])
        return arr[np.sort(perm[:cut])], arr[np.sort(perm[cut:])]

    fg_train, fg_held = split_part(full.fg)
    bg_train, bg_held = split_part(full.bg)
    neg_train, neg_held = split_part(full.neg)
    train_pairs = PairSet(full.height, full.width, full.gamma,
                          fg_train, bg_train, neg_train)
    params, trace = train([(img, train_pairs)], TrainConfig(epochs=200, seed=0),
                          LossWeights(6, 2, 3))
    # smoke property: the seeded run's loss decreases over the first 10 epochs;
    # reference trace frozen from the oracle run (loose tolerance absorbs
    # platform-level float noise)
    reference = [0.14228056, 0.14062910, 0.13684873, 0.12674662, 0.12416243,
                 0.11994423, 0.11102132, 0.09995503, 0.09495886, 0.09385514]
    first10 = [row.total for row in trace[:10]]
    assert all(b <= a for a, b in zip(first10, first10[1:])), first10
    assert first10 == pytest.approx(reference, rel=1e-3)

    feat = forward(params, img).reshape(-1, params.depth).astype(np.float64)

    def mean_affinity(pairs_arr):
        d = np.abs(feat[pairs_arr[:, 0]] - feat[pairs_arr[:, 1]]).sum(axis=1)
        return float(np.exp(-d).mean())

    within = mean_affinity(fg_held)
    cross = mean_affinity(neg_held)
    assert within >= 0.8, within
    assert cross <= 0.2, cross
    report(8, f"held-out within-region W {within:.4f} >= 0.8, "
              f"cross-region W {cross:.4f} <= 0.2")


def test_c09_metric_hand_cases():
    pred = LabelMap(np.array([[0, 0], [1, 1]], np.uint8))
    gt = LabelMap(np.array([[0, 1], [1, 1]], np.uint8))
    ious, mean = miou(confusion(pred, gt, 2))
    assert ious[0] == pytest.approx(1 / 2)
    assert ious[1] == pytest.approx(2 / 3)
    assert mean == pytest.approx(7 / 12)

    pred = LabelMap(np.array([[0, BACKGROUND, 1, 1]], np.uint8))
    gt = LabelMap(np.array([[0, 1, 1, 1]], np.uint8))
    precision, recall = precision_recall(confusion(pred, gt, 2))
    assert precision == 1.0 and recall == 0.75

    rng = np.random.default_rng(9)
    pred_codes = rng.integers(0, 4, size=(24, 16)).astype(np.uint8)
    pred_codes[rng.random((24, 16)) < 0.2] = NEUTRAL
    gt_codes = rng.integers(0, 4, size=(24, 16)).astype(np.uint8)
    whole = confusion(LabelMap(pred_codes), LabelMap(gt_codes), 4)
    for cuts in ((6, 12, 20), (1, 23), (8,)):
        parts = []
        prev = 0
        for cut in list(cuts) + [24]:
            parts.append(confusion(LabelMap(pred_codes[prev:cut]),
                                   LabelMap(gt_codes[prev:cut]), 4))
            prev = cut
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        assert np.array_equal(total.matrix, whole.matrix)
        assert np.array_equal(total.unlabeled, whole.unlabeled)
    report(9, "mIoU 7/12 fixture, precision/recall 1.0/0.75 fixture, "
              "confusion additivity on random partitions")


def test_c10_pipeline_determinism(sweep):
    base = sweep["base"]

    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file()}

    first = tree(base / "run_4")
    again = tree(base / "run_4_again")
    serial = tree(base / "run_4_serial")
    assert first == again
    assert first == serial
    report(10, f"{len(first)} files byte-identical across two runs "
               f"and across --jobs 1 vs --jobs 4")


def test_c11_deepglobe_tiling():
    grid = plan_tiles(2448, 2448, 306)
    assert len(grid) == 64
    rng = np.random.default_rng(11)
    raster = Raster(rng.integers(0, 256, size=(2448, 2448, 3)).astype(np.uint8))
    grid, tiles = tile(raster, 306)
    assert len(tiles) == 64
    assert all(t.data.shape == (306, 306, 3) for t in tiles)
    assert not grid.clamped
    assert np.array_equal(stitch(grid, tiles).data, raster.data)
    report(11, "2448x2448 -> 64 tiles of 306x306, stitch roundtrip identity")
