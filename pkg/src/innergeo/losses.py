"""Weighted composition of the distillation objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .bev import BevFeatureGrid, bev_distill_loss, bev_distill_loss_grad, bilinear_sample, bilinear_sample_grad
from .depth import DepthBinSpec, absolute_depth_bce, inner_depth_loss, inner_depth_loss_grad
from .errors import DomainError
from .geometry import BevSpec

TERMS = ("det", "abs_depth", "inner_depth", "ic", "ik")


@dataclass(frozen=True)
class LossWeights:
    w_det: float = 1.0
    w_abs_depth: float = 1.0
    w_inner_depth: float = 1.0
    w_ic: float = 1.0
    w_ik: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"{name} must be finite and non-negative, got {value}")

    @classmethod
    def from_sequence(cls, values):
        values = [float(v) for v in values]
        if len(values) != len(TERMS):
            raise DomainError(f"expected {len(TERMS)} weights (det,abs,inner,ic,ik), got {len(values)}")
        return cls(*values)

    def as_tuple(self):
        return (self.w_det, self.w_abs_depth, self.w_inner_depth, self.w_ic, self.w_ik)

    def scaled(self, factor):
        return LossWeights(*(factor * w for w in self.as_tuple()))


class DepthTerms(NamedTuple):
    """Depth loss values with gradients w.r.t. each view's probabilities."""

    abs_depth: float
    inner_depth: float
    abs_grad: Optional[list] = None
    inner_grad: Optional[list] = None


class BevTerms(NamedTuple):
    """BEV distillation values with gradients w.r.t. the student grid values."""

    ic: float
    ik: float
    ic_grad: Optional[np.ndarray] = None
    ik_grad: Optional[np.ndarray] = None


@dataclass
class LossReport:
    total: float
    terms: dict
    weights: LossWeights
    depth: DepthTerms = field(repr=False, default=None)
    bev: BevTerms = field(repr=False, default=None)
    det_grad: Optional[np.ndarray] = field(repr=False, default=None)

    def to_dict(self):
        return {"total": self.total, "terms": dict(self.terms), "weights": asdict(self.weights)}


def total_loss(depth_terms: DepthTerms, bev_terms: BevTerms, det_value: float = 0.0,
               weights: LossWeights = LossWeights(), det_grad=None) -> LossReport:
    terms = {
        "det": float(det_value),
        "abs_depth": float(depth_terms.abs_depth),
        "inner_depth": float(depth_terms.inner_depth),
        "ic": float(bev_terms.ic),
        "ik": float(bev_terms.ik),
    }
    for name, value in terms.items():
        if not math.isfinite(value):
            raise DomainError(f"loss term {name} is not finite ({value})")
    total = sum(w * v for w, v in zip(weights.as_tuple(), terms.values()))
    return LossReport(total, terms, weights, depth_terms, bev_terms, det_grad)


def _weighted(pairs, shape_ref_name):
    out = None
    for w, g in pairs:
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if out is None:
            out = w * g
        elif g.shape != out.shape:
            raise DomainError(f"{shape_ref_name} gradient shapes disagree: {g.shape} vs {out.shape}")
        else:
            out = out + w * g
    return out


def total_grad(report: LossReport):
    """Weighted gradients ``(probs_grads, grid_grad)`` of ``report.total``.

    ``probs_grads`` holds one array per view.
    """
    w = report.weights
    d, b = report.depth, report.bev
    abs_g = d.abs_grad or []
    inner_g = d.inner_grad or []
    n_views = max(len(abs_g), len(inner_g))
    if abs_g and inner_g and len(abs_g) != len(inner_g):
        raise DomainError("depth gradient lists cover different view counts")
    probs = []
    for v in range(n_views):
        g = _weighted([(w.w_abs_depth, abs_g[v] if abs_g else None),
                       (w.w_inner_depth, inner_g[v] if inner_g else None)], "depth")
        probs.append(g)
    grid = _weighted([(w.w_ic, b.ic_grad), (w.w_ik, b.ik_grad), (w.w_det, report.det_grad)], "BEV")
    return probs, grid


@dataclass(frozen=True, eq=False)
class DistillProblem:
    """Everything the student is scored against, with the teacher fixed.

    ``targets[v]`` are the foreground pixel sets of view ``v``;
    ``teacher_keypoints[j]`` are the teacher features sampled at
    ``keypoint_coords[j]``.
    """

    bins: DepthBinSpec
    gt_maps: Sequence
    targets: Sequence
    bev_spec: BevSpec
    keypoint_coords: Sequence
    teacher_keypoints: Sequence
    normalize: bool = False


def depth_terms(problem: DistillProblem, probs: Sequence) -> DepthTerms:
    """Absolute BCE pooled over every valid pixel of every view, and the
    inner-depth loss pooled over every (view, target) pair."""

    if len(probs) != len(problem.gt_maps):
        raise DomainError(f"{len(probs)} depth maps for {len(problem.gt_maps)} views")
    n_valid = [int(gt.valid.sum()) for gt in problem.gt_maps]
    n_targets = [len(t) for t in problem.targets]
    tot_valid, tot_targets = sum(n_valid), sum(n_targets)
    abs_val, inner_val = 0.0, 0.0
    abs_grad, inner_grad = [], []
    for p, gt, tg, nv, nt in zip(probs, problem.gt_maps, problem.targets, n_valid, n_targets):
        loss, grad = absolute_depth_bce(p, gt, problem.bins)
        share = nv / tot_valid if tot_valid else 0.0
        abs_val += share * loss
        abs_grad.append(share * grad)
        share = nt / tot_targets if tot_targets else 0.0
        loss, _ = inner_depth_loss(tg, p, problem.bins)
        inner_val += share * loss
        inner_grad.append(share * inner_depth_loss_grad(tg, p, problem.bins))
    return DepthTerms(abs_val, inner_val, abs_grad, inner_grad)


def bev_terms(problem: DistillProblem, student_values: np.ndarray) -> BevTerms:

    grid = BevFeatureGrid(problem.bev_spec, student_values)
    student = [bilinear_sample(grid, xy) for xy in problem.keypoint_coords]
    losses = bev_distill_loss(student, problem.teacher_keypoints, problem.normalize)
    grads = []
    for w_ic, w_ik in ((1.0, 0.0), (0.0, 1.0)):
        per_target = bev_distill_loss_grad(student, problem.teacher_keypoints, problem.normalize, w_ic, w_ik)
        g = np.zeros_like(grid.values)
        for xy, up in zip(problem.keypoint_coords, per_target):
            g += bilinear_sample_grad(grid, xy, up)
        grads.append(g)
    return BevTerms(losses.ic, losses.ik, grads[0], grads[1])


def evaluate(problem: DistillProblem, probs: Sequence, student_values, weights: LossWeights = LossWeights(),
             det_value: float = 0.0, det_grad=None) -> LossReport:
    """Score a student state: each term, their weighted total, and gradients."""
    if det_grad is not None and np.shape(det_grad) != np.shape(student_values):
        raise DomainError("detection gradient must match the student BEV grid shape")
    return total_loss(depth_terms(problem, probs), bev_terms(problem, student_values), det_value, weights, det_grad)
