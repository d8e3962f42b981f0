"""Central finite-difference checks of the analytical loss gradients."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import bev, depth
from .depth import DepthBinSpec, GroundTruthDepthMap, TargetPixelSet
from .errors import DomainError
from .losses import LossWeights, evaluate, total_grad

LOSS_KINDS = ("abs_depth", "inner_depth", "inter_channel", "inter_keypoint", "bev_distill", "total")


@dataclass(frozen=True, eq=False)
class DepthInstance:
    probs: np.ndarray
    bins: DepthBinSpec
    gt: Optional[GroundTruthDepthMap] = None
    targets: Sequence[TargetPixelSet] = ()


@dataclass(frozen=True, eq=False)
class FeatureInstance:
    student: Sequence[np.ndarray]
    teacher: Sequence[np.ndarray]
    normalize: bool = False


@dataclass(frozen=True, eq=False)
class TotalInstance:
    problem: object
    probs: Sequence[np.ndarray]
    grid: np.ndarray
    weights: LossWeights = LossWeights()
    # linear stand-in for an external detection loss: det = <det_direction, grid>
    det_direction: Optional[np.ndarray] = None


@dataclass(frozen=True)
class _Flat:
    x0: np.ndarray
    loss: Callable
    grad: Callable
    active: np.ndarray


def _depth_active(inst: DepthInstance, kind):
    h, w, k = inst.probs.shape
    mask = np.zeros((h, w), dtype=bool)
    if kind == "abs_depth":
        mask |= inst.gt.valid
    for t in inst.targets:
        mask[t.pixels[:, 1], t.pixels[:, 0]] = True
    return np.flatnonzero(np.repeat(mask[:, :, None], k, axis=2).ravel())


def _flatten(kind, instance) -> _Flat:
    if kind in ("abs_depth", "inner_depth"):
        if not isinstance(instance, DepthInstance):
            raise DomainError(f"{kind} needs a DepthInstance")
        shape = instance.probs.shape
        if kind == "abs_depth":
            def f(x):
                return depth.absolute_depth_bce(x.reshape(shape), instance.gt, instance.bins)[0]

            def g(x):
                return depth.absolute_depth_bce(x.reshape(shape), instance.gt, instance.bins)[1].ravel()
        else:
            def f(x):
                return depth.inner_depth_loss(instance.targets, x.reshape(shape), instance.bins)[0]

            def g(x):
                return depth.inner_depth_loss_grad(instance.targets, x.reshape(shape), instance.bins).ravel()
        return _Flat(instance.probs.ravel().copy(), f, g, _depth_active(instance, kind))

    if kind in ("inter_channel", "inter_keypoint", "bev_distill"):
        if not isinstance(instance, FeatureInstance):
            raise DomainError(f"{kind} needs a FeatureInstance")
        shapes = [np.shape(s) for s in instance.student]
        splits = np.cumsum([int(np.prod(s)) for s in shapes])[:-1]
        w_ic = 0.0 if kind == "inter_keypoint" else 1.0
        w_ik = 0.0 if kind == "inter_channel" else 1.0

        def unpack(x):
            return [p.reshape(s) for p, s in zip(np.split(x, splits), shapes)]

        def f(x):
            s = unpack(x)
            ic = bev.inter_channel_loss(s, instance.teacher, instance.normalize) if w_ic else 0.0
            ik = bev.inter_keypoint_loss(s, instance.teacher, instance.normalize) if w_ik else 0.0
            return ic + ik

        def g(x):
            grads = bev.bev_distill_loss_grad(unpack(x), instance.teacher, instance.normalize, w_ic, w_ik)
            return np.concatenate([q.ravel() for q in grads])

        x0 = np.concatenate([np.ravel(s) for s in instance.student])
        return _Flat(x0, f, g, np.arange(x0.size))

    if kind == "total":
        if not isinstance(instance, TotalInstance):
            raise DomainError("total needs a TotalInstance")
        shapes = [p.shape for p in instance.probs] + [instance.grid.shape]
        splits = np.cumsum([int(np.prod(s)) for s in shapes])[:-1]
        det_dir = instance.det_direction

        def unpack(x):
            parts = [p.reshape(s) for p, s in zip(np.split(x, splits), shapes)]
            return parts[:-1], parts[-1]

        def report(x):
            probs, grid = unpack(x)
            det = float(np.sum(det_dir * grid)) if det_dir is not None else 0.0
            return evaluate(instance.problem, probs, grid, instance.weights, det, det_dir)

        def f(x):
            return report(x).total

        def g(x):
            probs_g, grid_g = total_grad(report(x))
            return np.concatenate([q.ravel() for q in probs_g] + [grid_g.ravel()])

        x0 = np.concatenate([np.ravel(p) for p in instance.probs] + [instance.grid.ravel()])
        return _Flat(x0, f, g, np.arange(x0.size))

    raise DomainError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def finite_diff_check(loss_kind: str, instance, epsilon: float = 1e-6, coordinate_sample=30, seed: int = 0) -> float:
    """Worst relative error between analytical and central-difference partials.

    ``coordinate_sample`` is either a count of coordinates drawn (without
    replacement, seeded) from those the loss depends on, or an explicit array
    of flat indices. The relative error uses ``max(|a|, |n|, 1e-12)`` as
    denominator.
    """
    if not 0 < epsilon <= 1e-3:
        raise DomainError("epsilon must lie in (0, 1e-3]")
    flat = _flatten(loss_kind, instance)
    if np.ndim(coordinate_sample) == 0:
        rng = np.random.default_rng(seed)
        n = min(int(coordinate_sample), flat.active.size)
        coords = rng.choice(flat.active, size=n, replace=False)
    else:
        coords = np.asarray(coordinate_sample, dtype=np.int64)
    analytic = flat.grad(flat.x0)[coords]
    worst = 0.0
    for i, a in zip(coords, analytic):
        x = flat.x0.copy()
        x[i] += epsilon
        up = flat.loss(x)
        x[i] = flat.x0[i] - epsilon
        down = flat.loss(x)
        num = (up - down) / (2 * epsilon)
        err = abs(a - num) / max(abs(a), abs(num), 1e-12)
        worst = max(worst, err)
    return float(worst)


# -- random instances ------------------------------------------------------


def _dirichlet(rng, shape, alpha=2.0):
    p = rng.gamma(alpha, size=shape)
    return p / p.sum(axis=-1, keepdims=True)


def _reference_margin(targets, probs, bins):
    """Smallest gap between the best and runner-up reference candidates."""
    gaps = [np.inf]
    for t in targets:
        err = np.sort(np.abs(t.gt_depth - depth.expected_depth(probs, bins, t.pixels)))
        if len(err) > 1:
            gaps.append(err[1] - err[0])
    return min(gaps)


def random_depth_instance(seed: int, height=6, width=7, K=8, num_targets=2, pixels_per_target=5) -> DepthInstance:
    bins = DepthBinSpec(K, 1.0, 20.0)
    rng = np.random.default_rng(seed)
    while True:
        probs = _dirichlet(rng, (height, width, K))
        valid = rng.random((height, width)) < 0.6
        gt = GroundTruthDepthMap(np.where(valid, rng.uniform(1.5, 19.5, (height, width)), 0.0), valid)
        order = rng.permutation(height * width)
        targets = []
        for j in range(num_targets):
            flat = np.sort(order[j * pixels_per_target:(j + 1) * pixels_per_target])
            px = np.stack([flat % width, flat // width], axis=1)
            targets.append(TargetPixelSet(j, px, rng.uniform(5.0, 15.0, len(px))))
        if _reference_margin(targets, probs, bins) > 1e-3:
            return DepthInstance(probs, bins, gt, targets)


def random_feature_instance(seed: int, num_targets=3, N=9, C=5, normalize=False) -> FeatureInstance:
    rng = np.random.default_rng(seed)
    student = [rng.normal(size=(N, C)) for _ in range(num_targets)]
    teacher = [rng.normal(size=(N, C)) for _ in range(num_targets)]
    return FeatureInstance(student, teacher, normalize)


def small_scene_spec(seed: int):
    from .geometry import BevSpec
    from .synthetic import SceneSpec

    return SceneSpec(seed=seed, num_targets=2, points_per_target=120, background_points=300,
                     image_width=24, image_height=16, focal=18.0, bins=DepthBinSpec(8, 1.0, 30.0),
                     bev=BevSpec(-20.0, 20.0, -20.0, 20.0, 16, 16), C=4, grid_side=3,
                     target_amplitude=1.0, background_amplitude=0.3)


def random_total_instance(seed: int, weights: LossWeights = LossWeights(), with_det: bool = True) -> TotalInstance:
    from .synthetic import gen_scene, init_student_state

    scene = gen_scene(small_scene_spec(seed))
    problem = scene.problem()
    rng = np.random.default_rng([seed, 1])
    for attempt in range(50):
        state = init_student_state(scene, scene.spec, "random", amplitude=0.5, seed=seed + 1000 * attempt)
        probs = [_dirichlet(rng, p.shape) for p in state.probs]
        if all(_reference_margin(t, p, problem.bins) > 1e-3 for t, p in zip(problem.targets, probs)):
            break
    det = rng.normal(size=state.bev.values.shape) if with_det else None
    return TotalInstance(problem, probs, state.bev.values, weights, det)


def random_instance(kind: str, seed: int):
    if kind in ("abs_depth", "inner_depth"):
        return random_depth_instance(seed)
    if kind in ("inter_channel", "inter_keypoint", "bev_distill"):
        return random_feature_instance(seed)
    if kind == "total":
        return random_total_instance(seed)
    raise DomainError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def gradcheck_table(seeds=range(5), epsilon=1e-6, coordinate_sample=30):
    """Worst relative error per loss kind over several random instances."""
    rows = []
    for kind in LOSS_KINDS:
        errs = [finite_diff_check(kind, random_instance(kind, s), epsilon, coordinate_sample, seed=s) for s in seeds]
        rows.append({"loss": kind, "instances": len(errs), "coordinates": int(coordinate_sample),
                     "max_rel_error": max(errs)})
    return rows
