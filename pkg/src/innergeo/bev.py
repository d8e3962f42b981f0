"""Target keypoint extraction and Gram-matrix BEV distillation losses.

Keypoint features are ``(N, C)`` arrays. The channel Gram is ``f.T @ f``
(C x C) and the keypoint Gram is ``f @ f.T`` (N x N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .geometry import BevSpec, Box3D, bev_world_to_grid, enlarge_box_bev

DEFAULT_GRID_SIDE = 4
DEFAULT_ENLARGE = 1.25


@dataclass(frozen=True, eq=False)
class BevFeatureGrid:
    spec: BevSpec
    values: np.ndarray  # (C, H_bev, W_bev)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3 or vals.shape[1:] != (self.spec.H_bev, self.spec.W_bev):
            raise DomainError(
                f"grid values {vals.shape} do not match BEV spec ({self.spec.H_bev}, {self.spec.W_bev})"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("BEV features must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def C(self) -> int:
        return self.values.shape[0]


class GramPair(NamedTuple):
    channel_gram: np.ndarray
    keypoint_gram: np.ndarray


class BevLosses(NamedTuple):
    total: float
    ic: float
    ik: float


def sample_keypoint_coords(box: Box3D, enlarge: float = DEFAULT_ENLARGE, grid_side: int = DEFAULT_GRID_SIDE) -> np.ndarray:
    """Lattice of ``grid_side**2`` world (x, y) points at the cell centers of
    the enlarged box footprint, row-major in the box frame (local x outer)."""
    if grid_side < 1:
        raise DomainError("grid_side must be >= 1")
    big = enlarge_box_bev(box, enlarge)
    steps = (np.arange(grid_side) + 0.5) / grid_side - 0.5
    lx, ly = np.meshgrid(steps * big.size[0], steps * big.size[1], indexing="ij")
    local = np.stack([lx.ravel(), ly.ravel()], axis=1)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return local @ np.array([[c, s], [-s, c]]) + box.center[:2]


def _bilinear_stencil(spec: BevSpec, coords):
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    row, col = bev_world_to_grid(spec, coords[:, 0], coords[:, 1])
    row = np.clip(row, 0, spec.H_bev - 1)
    col = np.clip(col, 0, spec.W_bev - 1)
    r0 = np.minimum(np.floor(row).astype(np.int64), spec.H_bev - 2)
    c0 = np.minimum(np.floor(col).astype(np.int64), spec.W_bev - 2)
    fr, fc = row - r0, col - c0
    rows = np.stack([r0, r0, r0 + 1, r0 + 1], axis=1)
    cols = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1)
    weights = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=1)
    return rows, cols, weights


def bilinear_sample(grid: BevFeatureGrid, coords) -> np.ndarray:
    """Clamp-to-edge bilinear features at world (x, y) points, shape (N, C)."""
    rows, cols, w = _bilinear_stencil(grid.spec, coords)
    # values[:, rows, cols] is (C, N, 4)
    return np.einsum("cnk,nk->nc", grid.values[:, rows, cols], w)


def bilinear_sample_grad(grid: BevFeatureGrid, coords, upstream) -> np.ndarray:
    """Adjoint of :func:`bilinear_sample` with respect to the grid values."""
    rows, cols, w = _bilinear_stencil(grid.spec, coords)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (len(rows), grid.C):
        raise DomainError(f"upstream must be ({len(rows)}, {grid.C}), got {upstream.shape}")
    grad = np.zeros_like(grid.values)
    contrib = upstream[:, None, :] * w[:, :, None]  # (N, 4, C)
    for c in range(grid.C):
        np.add.at(grad[c], (rows, cols), contrib[:, :, c])
    return grad


def normalize_rows(f: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    return f / np.maximum(norms, 1e-12)


def _normalize_rows_vjp(f, upstream):
    norms = np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)
    unit = f / norms
    return (upstream - unit * np.sum(unit * upstream, axis=1, keepdims=True)) / norms


def gram_inter_channel(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    return f.T @ f


def gram_inter_keypoint(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    return f @ f.T


def gram_pair(f) -> GramPair:
    return GramPair(gram_inter_channel(f), gram_inter_keypoint(f))


def _check_pairs(student, teacher):
    if len(student) != len(teacher):
        raise DomainError(f"{len(student)} student targets vs {len(teacher)} teacher targets")
    pairs = []
    for j, (s, t) in enumerate(zip(student, teacher)):
        s = np.asarray(s, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if s.ndim != 2 or s.shape != t.shape:
            raise DomainError(f"target {j}: student {s.shape} vs teacher {t.shape}")
        pairs.append((s, t))
    return pairs


def _prepare(student, teacher, normalize):
    pairs = _check_pairs(student, teacher)
    if normalize:
        pairs = [(normalize_rows(s), normalize_rows(t)) for s, t in pairs]
    return pairs


def inter_channel_loss(student: Sequence, teacher: Sequence, normalize: bool = False) -> float:
    pairs = _prepare(student, teacher, normalize)
    if not pairs:
        return 0.0
    total = 0.0
    for s, t in pairs:
        d = gram_inter_channel(s) - gram_inter_channel(t)
        total += np.sum(d * d) / s.shape[1] ** 2
    return float(total / len(pairs))


def inter_keypoint_loss(student: Sequence, teacher: Sequence, normalize: bool = False) -> float:
    pairs = _prepare(student, teacher, normalize)
    if not pairs:
        return 0.0
    total = 0.0
    for s, t in pairs:
        d = gram_inter_keypoint(s) - gram_inter_keypoint(t)
        total += np.sum(d * d) / s.shape[0] ** 2
    return float(total / len(pairs))


def bev_distill_loss(student: Sequence, teacher: Sequence, normalize: bool = False) -> BevLosses:
    ic = inter_channel_loss(student, teacher, normalize)
    ik = inter_keypoint_loss(student, teacher, normalize)
    return BevLosses(ic + ik, ic, ik)


def bev_distill_loss_grad(student: Sequence, teacher: Sequence, normalize: bool = False,
                          w_ic: float = 1.0, w_ik: float = 1.0) -> list[np.ndarray]:
    """Per-target gradients of ``w_ic * ic + w_ik * ik`` w.r.t. the student
    keypoint features; the teacher is constant."""
    raw = _check_pairs(student, teacher)
    pairs = _prepare(student, teacher, normalize)
    m = len(pairs)
    grads = []
    for (s_raw, _), (s, t) in zip(raw, pairs):
        n, c = s.shape
        g = np.zeros_like(s)
        if w_ic:
            g += (4.0 * w_ic / (m * c * c)) * s @ (s.T @ s - t.T @ t)
        if w_ik:
            g += (4.0 * w_ik / (m * n * n)) * (s @ s.T - t @ t.T) @ s
        grads.append(_normalize_rows_vjp(s_raw, g) if normalize else g)
    return grads


def extract_keypoints(grid: BevFeatureGrid, boxes: Sequence[Box3D], enlarge: float = DEFAULT_ENLARGE,
                      grid_side: int = DEFAULT_GRID_SIDE):
    """Keypoint world coordinates and sampled features for each box."""
    coords = [sample_keypoint_coords(b, enlarge, grid_side) for b in boxes]
    return coords, [bilinear_sample(grid, xy) for xy in coords]
