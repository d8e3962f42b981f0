import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import forward_camera
from innergeo.depth import (
    CategoricalDepthMap,
    DepthBinSpec,
    GroundTruthDepthMap,
    TargetPixelSet,
    absolute_depth_bce,
    expected_depth,
    expected_depth_grad,
    inner_depth_loss,
    inner_depth_loss_grad,
    inner_depth_residuals,
    localize_foreground,
    rasterize_gt_depth,
    select_reference,
)
from innergeo.errors import DomainError
from innergeo.geometry import Box3D, CameraModel, PointCloud

CAM = CameraModel(100, 100, 50, 50, np.eye(3), np.zeros(3), 100, 100)
BINS = DepthBinSpec(8, 1.0, 17.0)  # centers 2, 4, ..., 16


def dirichlet(rng, shape, alpha=2.0):
    p = rng.gamma(alpha, size=shape)
    return p / p.sum(axis=-1, keepdims=True)


def probs_for_depth(depths, bins):
    """Two-bin mixtures whose expectation equals each depth exactly."""
    c = bins.centers()
    depths = np.asarray(depths, dtype=float)
    out = np.zeros(depths.shape + (bins.K,))
    for idx in np.ndindex(depths.shape):
        d = depths[idx]
        k = int(np.clip(np.searchsorted(c, d) - 1, 0, bins.K - 2))
        lam = (c[k + 1] - d) / (c[k + 1] - c[k])
        out[idx + (k,)] = lam
        out[idx + (k + 1,)] = 1 - lam
    return out


def test_bin_centers():
    assert BINS.centers().tolist() == [2, 4, 6, 8, 10, 12, 14, 16]
    assert BINS.bin_index([1.0, 2.9, 3.0, 17.0, 100.0, 0.1]).tolist() == [0, 0, 1, 7, 7, 0]
    with pytest.raises(DomainError):
        DepthBinSpec(1, 1, 2)
    with pytest.raises(DomainError):
        DepthBinSpec(4, 0, 2)


def test_depth_map_validation():
    with pytest.raises(DomainError):
        CategoricalDepthMap(np.full((2, 2, 3), 0.5))
    assert np.allclose(CategoricalDepthMap.uniform(2, 3, 4).probs, 0.25)
    with pytest.raises(DomainError):
        GroundTruthDepthMap(np.zeros((2, 2)), np.ones((2, 2), bool))


def test_rasterize_single_point():
    # camera-frame point chosen to land at (10.3, 20.7) with depth 8
    X, Y = (10.3 - 50) * 8 / 100, (20.7 - 50) * 8 / 100
    gt = rasterize_gt_depth(CAM, PointCloud([[X, Y, 8.0]]))
    assert gt.valid.sum() == 1 and gt.valid[20, 10]
    assert gt.depth[20, 10] == 8.0


def test_rasterize_keeps_nearest():
    gt = rasterize_gt_depth(CAM, PointCloud([[0, 0, 9.0], [0, 0, 5.0]]))
    assert gt.depth[50, 50] == 5.0 and gt.valid.sum() == 1


def test_rasterize_matches_loop(rng):
    cam = forward_camera()
    pts = np.column_stack([rng.uniform(2, 30, 800), rng.uniform(-15, 15, 800), rng.uniform(-1, 4, 800)])
    gt = rasterize_gt_depth(cam, pts)
    best = oracles.rasterize(cam, pts)
    assert gt.valid.sum() == len(best)
    for (x, y), d in best.items():
        assert gt.valid[y, x] and gt.depth[y, x] == d


def test_localize_skips_empty_box():
    cam = forward_camera()
    assert localize_foreground(cam, PointCloud([[10, 0, 1.5]]), [Box3D([-10, 0, 1], [1, 1, 1])]) == []


def test_localize_three_points():
    cam = forward_camera()
    box = Box3D([10, 0, 1.5], [2, 2, 2], 0)
    pts = np.array([[9.5, 0.0, 1.5], [10.0, 0.6, 1.0], [10.5, -0.6, 2.0], [20, 0, 1.5]])
    (t,) = localize_foreground(cam, pts, [box])
    assert t.target_id == 0 and len(t) == 3
    expected = {}
    for p in pts[:3]:
        u, v, d = oracles.project_point(cam, p)
        expected[(int(np.floor(u)), int(np.floor(v)))] = d
    got = {tuple(px): d for px, d in zip(t.pixels.tolist(), t.gt_depth)}
    assert got.keys() == expected.keys()
    for k in got:
        assert abs(got[k] - expected[k]) < 1e-12
    # row-major order
    keys = [(y, x) for x, y in t.pixels.tolist()]
    assert keys == sorted(keys)


def test_overlapping_boxes_share_points():
    cam = forward_camera()
    a = Box3D([10, 0, 1.5], [2, 2, 2], 0)
    b = Box3D([10.5, 0, 1.5], [2, 2, 2], 0)
    targets = localize_foreground(cam, [[10.2, 0, 1.5]], [a, b])
    assert [t.target_id for t in targets] == [0, 1]
    assert np.array_equal(targets[0].pixels, targets[1].pixels)


def test_expected_depth_examples():
    probs = np.zeros((1, 1, 8))
    probs[0, 0, 3] = 1
    assert expected_depth(probs, BINS, [(0, 0)])[0] == 8.0
    two = DepthBinSpec(2, 1.0, 5.0)  # centers {2, 4}
    assert expected_depth(np.full((1, 1, 2), 0.5), two, [(0, 0)])[0] == 3.0
    with pytest.raises(DomainError):
        expected_depth(probs, BINS, [(1, 0)])
    with pytest.raises(DomainError):
        expected_depth(np.zeros((1, 1, 4)), BINS, [(0, 0)])


def test_expected_depth_matches_dot_product(rng):
    probs = dirichlet(rng, (5, 6, 8))
    pixels = [(x, y) for y in range(5) for x in range(6)]
    got = expected_depth(CategoricalDepthMap(probs), BINS, pixels)
    cs = oracles.centers(8, 1.0, 17.0)
    for (x, y), g in zip(pixels, got):
        assert abs(g - oracles.expected(probs[y, x], cs)) < 1e-12


def test_expected_depth_is_linear_in_mixtures(rng):
    for _ in range(20):
        p, q = dirichlet(rng, (3, 4, 8)), dirichlet(rng, (3, 4, 8))
        a = rng.random()
        px = [(x, y) for y in range(3) for x in range(4)]
        mix = expected_depth(a * p + (1 - a) * q, BINS, px)
        sep = a * expected_depth(p, BINS, px) + (1 - a) * expected_depth(q, BINS, px)
        assert np.max(np.abs(mix - sep)) < 1e-12


def test_expected_depth_grad(rng):
    probs = dirichlet(rng, (2, 3, 8))
    g = expected_depth_grad(probs, BINS, [(0, 0), (2, 1)])
    assert np.array_equal(g, np.tile(BINS.centers(), (2, 1)))
    two = DepthBinSpec(2, 1.0, 5.0)
    assert expected_depth_grad(np.full((1, 1, 2), 0.5), two, [(0, 0)]).tolist() == [[2.0, 4.0]]
    for k in range(8):
        fd = oracles.central_diff(lambda p: expected_depth(p, BINS, [(2, 1)])[0], probs, np.ravel_multi_index((1, 2, k), probs.shape))
        assert abs(fd - g[1, k]) / abs(g[1, k]) < 1e-5


def test_select_reference():
    gt = np.array([5.0, 6.0, 7.0, 8.0])
    assert select_reference([5.2, 6.1, 7.0, 8.3], gt) == 2
    assert select_reference(gt + 0.5, gt) == 0
    with pytest.raises(DomainError):
        select_reference([], [])


def test_select_reference_matches_scan(rng):
    for _ in range(100):
        pred, gt = rng.uniform(1, 50, 50), rng.uniform(1, 50, 50)
        assert select_reference(pred, gt) == oracles.argmin_abs_error(pred.tolist(), gt.tolist())


def test_residuals():
    pr, gr = inner_depth_residuals([5.0, 7.0, 6.0], [1.0, 2.0, 4.0], 0)
    assert pr.tolist() == [0, 2, 1] and gr.tolist() == [0, 1, 3]
    shifted, _ = inner_depth_residuals([8.5, 10.5, 9.5], [1.0, 2.0, 4.0], 0)
    assert shifted.tolist() == pr.tolist()
    with pytest.raises(DomainError):
        inner_depth_residuals([1.0], [1.0], 3)


def test_residuals_match_elementwise(rng):
    for _ in range(20):
        pred, gt = rng.normal(size=30), rng.normal(size=30)
        r = int(rng.integers(30))
        pr, gr = inner_depth_residuals(pred, gt, r)
        assert pr[r] == 0.0 and gr[r] == 0.0
        for i in range(30):
            assert abs(pr[i] - (pred[i] - pred[r])) < 1e-12 and abs(gr[i] - (gt[i] - gt[r])) < 1e-12


def random_targets(rng, h, w, sizes, lo=3.0, hi=15.0):
    order = rng.permutation(h * w)
    out, start = [], 0
    for j, n in enumerate(sizes):
        flat = np.sort(order[start:start + n])
        start += n
        out.append(TargetPixelSet(j, np.stack([flat % w, flat // w], axis=1), rng.uniform(lo, hi, n)))
    return out


def test_inner_loss_zero_when_exact(rng):
    targets = random_targets(rng, 6, 7, [4, 5])
    depth = np.full((6, 7), 9.0)
    for t in targets:
        depth[t.pixels[:, 1], t.pixels[:, 0]] = t.gt_depth
    probs = probs_for_depth(depth, BINS)
    loss, per = inner_depth_loss(targets, probs, BINS)
    assert loss < 1e-24 and len(per) == 2
    # gt + c per target also gives zero
    for c, t in zip([1.3, -0.7], targets):
        depth[t.pixels[:, 1], t.pixels[:, 0]] = t.gt_depth + c
    assert inner_depth_loss(targets, probs_for_depth(depth, BINS), BINS)[0] < 1e-20


def test_inner_loss_no_targets():
    assert inner_depth_loss([], np.full((2, 2, 8), 1 / 8), BINS) == (0.0, [])


def test_inner_loss_matches_composed_oracle(rng):
    cs = oracles.centers(8, 1.0, 17.0)
    for _ in range(20):
        probs = dirichlet(rng, (6, 7, 8))
        targets = random_targets(rng, 6, 7, [3, 3])
        loss, per = inner_depth_loss(targets, probs, BINS)
        assert abs(loss - oracles.inner_loss(targets, probs, cs)) < 1e-12
        for r in per:
            i = [tuple(p) for p in targets[r.target_id].pixels.tolist()].index(r.reference_pixel)
            assert r.pred_residuals[i] == 0.0 and r.gt_residuals[i] == 0.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shifts=st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_inner_loss_translation_invariance(seed, shifts):
    rng = np.random.default_rng(seed)
    targets = random_targets(rng, 5, 6, [4, 6], lo=5.0, hi=11.0)
    pred = rng.uniform(5.0, 11.0, size=(5, 6))
    base = inner_depth_loss(targets, probs_for_depth(pred, BINS), BINS)[0]
    moved_pred = pred.copy()
    moved_targets = []
    for t, c in zip(targets, shifts):
        moved_pred[t.pixels[:, 1], t.pixels[:, 0]] += c
        moved_targets.append(TargetPixelSet(t.target_id, t.pixels, t.gt_depth + c))
    moved = inner_depth_loss(moved_targets, probs_for_depth(moved_pred, BINS), BINS)[0]
    assert abs(base - moved) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_inner_loss_nonnegative_and_zero_iff_matching(seed):
    rng = np.random.default_rng(seed)
    targets = random_targets(rng, 5, 6, [5])
    probs = dirichlet(rng, (5, 6, 8))
    loss, (res,) = inner_depth_loss(targets, probs, BINS)
    assert loss >= 0
    assert (loss == 0) == bool(np.all(res.pred_residuals == res.gt_residuals))


def test_inner_grad_matches_finite_differences(rng):
    for _ in range(5):
        probs = dirichlet(rng, (6, 7, 8))
        targets = random_targets(rng, 6, 7, [5, 4])
        grad = inner_depth_loss_grad(targets, probs, BINS)
        mask = np.zeros((6, 7), bool)
        for t in targets:
            mask[t.pixels[:, 1], t.pixels[:, 0]] = True
        active = np.flatnonzero(np.repeat(mask[..., None], 8, axis=2).ravel())
        for i in rng.choice(active, 30, replace=False):
            fd = oracles.central_diff(lambda p: inner_depth_loss(targets, p, BINS)[0], probs, i)
            assert abs(fd - grad.flat[i]) / max(abs(fd), abs(grad.flat[i]), 1e-12) < 1e-5
        assert np.all(grad[~mask] == 0)


def test_inner_grad_vanishes_at_optimum(rng):
    targets = random_targets(rng, 4, 4, [5])
    depth = np.full((4, 4), 9.0)
    t = targets[0]
    depth[t.pixels[:, 1], t.pixels[:, 0]] = t.gt_depth + 0.4
    grad = inner_depth_loss_grad(targets, probs_for_depth(depth, BINS), BINS)
    assert np.max(np.abs(grad)) < 1e-10


def test_bce_one_hot_is_near_zero():
    gt = GroundTruthDepthMap(np.array([[4.5, 9.0]]), np.array([[True, True]]))
    probs = np.zeros((1, 2, 8))
    probs[0, 0, 1] = 1
    probs[0, 1, 4] = 1
    loss, grad = absolute_depth_bce(probs, gt, BINS)
    assert 0 < loss < 1e-5
    assert np.all(grad == 0)


def test_bce_uniform_two_bins():
    two = DepthBinSpec(2, 1.0, 5.0)
    gt = GroundTruthDepthMap(np.array([[2.0, 4.0, 0.0]]), np.array([[True, True, False]]))
    loss, grad = absolute_depth_bce(np.full((1, 3, 2), 0.5), gt, two)
    # every (pixel, bin) term is -ln(0.5), target or not
    assert abs(loss - np.log(2)) < 1e-15
    # d/dp: -1/p on the target bin, +1/(1-p) elsewhere, over 2 pixels * 2 bins
    assert np.allclose(grad[0, 0], [-2 / 4, 2 / 4]) and np.allclose(grad[0, 1], [2 / 4, -2 / 4])
    assert np.all(grad[0, 2] == 0)


def test_bce_matches_loop_and_fd(rng):
    for _ in range(5):
        probs = dirichlet(rng, (4, 5, 8))
        valid = rng.random((4, 5)) < 0.7
        gt = GroundTruthDepthMap(np.where(valid, rng.uniform(0.5, 20, (4, 5)), 0), valid)
        loss, grad = absolute_depth_bce(probs, gt, BINS)
        assert abs(loss - oracles.bce(probs, gt.depth, gt.valid, 8, 1.0, 17.0)) < 1e-12
        for i in rng.choice(probs.size, 30, replace=False):
            fd = oracles.central_diff(lambda p: absolute_depth_bce(p, gt, BINS)[0], probs, i)
            assert abs(fd - grad.flat[i]) / max(abs(fd), abs(grad.flat[i]), 1e-12) < 1e-5


def test_bce_without_valid_pixels():
    gt = GroundTruthDepthMap(np.zeros((2, 2)), np.zeros((2, 2), bool))
    loss, grad = absolute_depth_bce(np.full((2, 2, 8), 1 / 8), gt, BINS)
    assert loss == 0.0 and not grad.any()
    with pytest.raises(DomainError):
        absolute_depth_bce(np.full((3, 2, 8), 1 / 8), gt, BINS)


def test_target_pixel_set_validation():
    with pytest.raises(DomainError):
        TargetPixelSet(0, np.zeros((0, 2)), [])
    with pytest.raises(DomainError):
        TargetPixelSet(0, [[1, 1], [1, 1]], [2.0, 3.0])
    with pytest.raises(DomainError):
        TargetPixelSet(0, [[1, 1]], [0.0])
