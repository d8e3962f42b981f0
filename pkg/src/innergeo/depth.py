"""Categorical depth, dense absolute-depth BCE and inner-depth supervision.

Pixel coordinates are ``(x, y)`` = (column, row); map arrays are indexed
``[y, x]``. Functions that take a depth map accept either a
:class:`CategoricalDepthMap` or a raw ``(H, W, K)`` array so gradients can be
checked off the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .geometry import Box3D, CameraModel, points_in_box, project_points

PROB_CLAMP = 1e-7
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class DepthBinSpec:
    K: int = 64
    d_min: float = 1.0
    d_max: float = 60.0

    def __post_init__(self):
        if self.K < 2:
            raise DomainError("need at least two depth bins")
        if not 0 < self.d_min < self.d_max:
            raise DomainError("depth range must satisfy 0 < d_min < d_max")

    @property
    def bin_width(self) -> float:
        return (self.d_max - self.d_min) / self.K

    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(self.K) + 0.5) * self.bin_width

    def bin_index(self, depth) -> np.ndarray:
        """Bin containing each depth, after clamping to [d_min, d_max]."""
        d = np.clip(np.asarray(depth, dtype=np.float64), self.d_min, self.d_max)
        idx = np.floor((d - self.d_min) / self.bin_width).astype(np.int64)
        return np.clip(idx, 0, self.K - 1)


@dataclass(frozen=True, eq=False)
class CategoricalDepthMap:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise DomainError(f"probs must be (H, W, K), got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise DomainError("probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=-1) - 1.0), initial=0.0) > SIMPLEX_TOL:
            raise DomainError("per-pixel probabilities must sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def shape(self):
        return self.probs.shape[:2]

    @classmethod
    def uniform(cls, height, width, K):
        return cls(np.full((height, width, K), 1.0 / K))


@dataclass(frozen=True, eq=False)
class GroundTruthDepthMap:
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.shape != valid.shape or depth.ndim != 2:
            raise DomainError("depth and valid must be matching 2-D arrays")
        if np.any(~(depth[valid] > 0)) or not np.all(np.isfinite(depth[valid])):
            raise DomainError("valid pixels need finite positive depth")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True, eq=False)
class TargetPixelSet:
    target_id: int
    pixels: np.ndarray  # (n, 2) integer (x, y), row-major order
    gt_depth: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        gt = np.asarray(self.gt_depth, dtype=np.float64).reshape(-1)
        if len(px) == 0:
            raise DomainError("target pixel set is empty")
        if len(px) != len(gt):
            raise DomainError("pixels and gt_depth must align")
        if len(np.unique(px, axis=0)) != len(px):
            raise DomainError("target pixels must be unique")
        if np.any(~(gt > 0)):
            raise DomainError("target gt depths must be positive")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "gt_depth", gt)

    def __len__(self):
        return len(self.pixels)


class InnerDepthResult(NamedTuple):
    target_id: int
    reference_pixel: tuple
    pred_residuals: np.ndarray
    gt_residuals: np.ndarray
    loss: float


def _probs(depth_map) -> np.ndarray:
    return depth_map.probs if isinstance(depth_map, CategoricalDepthMap) else np.asarray(depth_map, dtype=np.float64)


def _min_depth_per_pixel(cols, rows, depth, width):
    """Unique pixels with their minimum depth, ordered row-major."""
    flat = rows * width + cols
    order = np.lexsort((depth, flat))
    flat, depth = flat[order], depth[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    flat, depth = flat[first], depth[first]
    return flat % width, flat // width, depth


def rasterize_gt_depth(camera: CameraModel, cloud) -> GroundTruthDepthMap:
    """Sparse depth map: nearest projected point per pixel."""
    proj = project_points(camera, cloud)
    depth = np.zeros((camera.height, camera.width))
    valid = np.zeros((camera.height, camera.width), dtype=bool)
    cols = np.floor(proj.u).astype(np.int64)
    rows = np.floor(proj.v).astype(np.int64)
    xs, ys, d = _min_depth_per_pixel(cols, rows, proj.depth, camera.width)
    depth[ys, xs] = d
    valid[ys, xs] = True
    return GroundTruthDepthMap(depth, valid)


def localize_foreground(camera: CameraModel, cloud, boxes: Sequence[Box3D]) -> list[TargetPixelSet]:
    """Per-box foreground pixels from in-box points projected into ``camera``.

    ``target_id`` is the box's index in ``boxes``; boxes with no on-image
    points are skipped. A point inside several boxes counts for each.
    """
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, float).reshape(-1, 3)
    targets = []
    for j, box in enumerate(boxes):
        inside = points_in_box(pts, box)
        proj = project_points(camera, pts[inside])
        if len(proj.index) == 0:
            continue
        xs, ys, d = _min_depth_per_pixel(
            np.floor(proj.u).astype(np.int64), np.floor(proj.v).astype(np.int64), proj.depth, camera.width
        )
        targets.append(TargetPixelSet(j, np.stack([xs, ys], axis=1), d))
    return targets


def _check_pixels(probs, pixels, spec):
    if probs.shape[-1] != spec.K:
        raise DomainError(f"depth map has {probs.shape[-1]} bins, spec has {spec.K}")
    px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    h, w = probs.shape[:2]
    if np.any(px < 0) or np.any(px[:, 0] >= w) or np.any(px[:, 1] >= h):
        raise DomainError("pixel outside the depth map")
    return px


def expected_depth(depth_map, spec: DepthBinSpec, pixels) -> np.ndarray:
    """Continuous depth as the bin-center expectation at each pixel."""
    probs = _probs(depth_map)
    px = _check_pixels(probs, pixels, spec)
    return probs[px[:, 1], px[:, 0]] @ spec.centers()


def expected_depth_grad(depth_map, spec: DepthBinSpec, pixels) -> np.ndarray:
    """d(expected depth at p)/d(probs[p]) -- the bin centers, one row per pixel."""
    probs = _probs(depth_map)
    px = _check_pixels(probs, pixels, spec)
    return np.tile(spec.centers(), (len(px), 1))


def select_reference(pred, gt) -> int:
    """Index of the pixel with the smallest absolute depth error.

    ``np.argmin`` returns the first minimum, so ties go to the lowest index.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size == 0 or pred.shape != gt.shape:
        raise DomainError("pred and gt must be nonempty and of equal length")
    return int(np.argmin(np.abs(gt - pred)))


def inner_depth_residuals(pred, gt, ref_index: int):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if not 0 <= ref_index < len(pred) or len(gt) != len(pred):
        raise DomainError(f"reference index {ref_index} invalid for {len(pred)} pixels")
    pr = pred - pred[ref_index]
    gr = gt - gt[ref_index]
    pr[ref_index] = 0.0
    gr[ref_index] = 0.0
    return pr, gr


def _inner_target(probs, spec, target):
    pred = expected_depth(probs, spec, target.pixels)
    ref = select_reference(pred, target.gt_depth)
    pr, gr = inner_depth_residuals(pred, target.gt_depth, ref)
    loss = float(np.mean((pr - gr) ** 2))
    return InnerDepthResult(target.target_id, tuple(int(c) for c in target.pixels[ref]), pr, gr, loss), ref


def inner_depth_loss(targets: Sequence[TargetPixelSet], depth_map, spec: DepthBinSpec):
    """Mean-over-targets of the per-target mean squared inner-depth mismatch.

    Returns ``(loss, per_target)`` with one :class:`InnerDepthResult` per target.
    """
    probs = _probs(depth_map)
    results = [_inner_target(probs, spec, t)[0] for t in targets]
    if not results:
        return 0.0, []
    return sum(r.loss for r in results) / len(results), results


def inner_depth_loss_grad(targets: Sequence[TargetPixelSet], depth_map, spec: DepthBinSpec) -> np.ndarray:
    """Gradient of :func:`inner_depth_loss` with respect to the probabilities.

    The reference pixel is held fixed, but both the ``pred[p]`` and
    ``pred[ref]`` dependencies are differentiated.
    """
    probs = _probs(depth_map)
    grad = np.zeros_like(probs)
    if not targets:
        return grad
    centers = spec.centers()
    m = len(targets)
    for target in targets:
        result, ref = _inner_target(probs, spec, target)
        diff = result.pred_residuals - result.gt_residuals
        g = diff * (2.0 / (len(diff) * m))
        g[ref] -= g.sum()
        px = target.pixels
        np.add.at(grad, (px[:, 1], px[:, 0]), g[:, None] * centers)
    return grad


def absolute_depth_bce(depth_map, gt: GroundTruthDepthMap, spec: DepthBinSpec):
    """One-hot binary cross-entropy over valid pixels, averaged over pixels
    and bins. Returns ``(loss, grad)``; clamped probabilities get zero
    gradient."""
    probs = _probs(depth_map)
    if probs.shape[:2] != gt.shape or probs.shape[-1] != spec.K:
        raise DomainError(f"depth map {probs.shape} does not match gt {gt.shape} / K={spec.K}")
    grad = np.zeros_like(probs)
    n = int(gt.valid.sum())
    if n == 0:
        return 0.0, grad
    p_raw = probs[gt.valid]
    target = np.zeros_like(p_raw)
    target[np.arange(n), spec.bin_index(gt.depth[gt.valid])] = 1.0
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    scale = 1.0 / (n * spec.K)
    loss = -np.sum(target * np.log(p) + (1.0 - target) * np.log1p(-p)) * scale
    inside = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
    g = np.where(inside, (-target / p + (1.0 - target) / (1.0 - p)) * scale, 0.0)
    grad[gt.valid] = g
    return float(loss), grad
