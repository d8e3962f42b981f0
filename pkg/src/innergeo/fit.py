"""Plain projected gradient descent on the student state."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bev import BevFeatureGrid, bilinear_sample, gram_inter_channel, gram_inter_keypoint
from .depth import CategoricalDepthMap, expected_depth, inner_depth_loss
from .errors import DomainError
from .losses import LossWeights, evaluate, total_grad
from .metrics import depth_metrics
from .synthetic import INIT_MODES, Scene, StudentState, init_student_state

SIMPLEX_FLOOR = 1e-9
PROJECTION_MODES = ("renormalize", "euclidean")
_JITTER_STREAM = 101


@dataclass(frozen=True)
class FitConfig:
    steps: int = 500
    learning_rate: float = 0.02
    weights: LossWeights = LossWeights()
    seed: int = 7
    record_every: int = 25
    simplex_projection_mode: str = "renormalize"
    init_mode: str = "uniform"
    init_amplitude: float = 0.1
    # zero BEV features are a stationary point of both Gram losses
    bev_jitter: float = 0.05

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.record_every < 1:
            raise DomainError("record_every must be >= 1")
        if self.simplex_projection_mode not in PROJECTION_MODES:
            raise DomainError(f"simplex_projection_mode must be one of {PROJECTION_MODES}")
        if self.init_mode not in INIT_MODES:
            raise DomainError(f"init_mode must be one of {INIT_MODES}")
        if self.bev_jitter < 0:
            raise DomainError("bev_jitter must be >= 0")


@dataclass
class FitTrace:
    steps: list = field(default_factory=list)
    records: list = field(default_factory=list)
    initial_metrics: Optional[dict] = None
    final_metrics: Optional[dict] = None
    gram_mismatch: list = field(default_factory=list)
    initial_inner_residual_rms: float = float("nan")
    inner_residual_rms: float = float("nan")
    status: str = "ok"
    failed_step: Optional[int] = None

    @property
    def totals(self):
        return [r["total"] for r in self.records]

    @property
    def failed(self):
        return self.status != "ok"

    def to_dict(self):
        return asdict(self)


def renormalize_simplex(probs: np.ndarray, floor: float = SIMPLEX_FLOOR) -> np.ndarray:
    """Keep the positive part (floored) and rescale each pixel to sum to 1."""
    p = np.maximum(probs, floor)
    return p / p.sum(axis=-1, keepdims=True)


def euclidean_simplex(probs: np.ndarray) -> np.ndarray:
    """Euclidean projection of each last-axis vector onto the unit simplex."""
    k = probs.shape[-1]
    flat = probs.reshape(-1, k)
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, k + 1)
    rho = np.count_nonzero(u - css / ind > 0, axis=1)
    theta = css[np.arange(len(flat)), rho - 1] / rho
    return np.maximum(flat - theta[:, None], 0.0).reshape(probs.shape)


def project_simplex(probs, mode="renormalize"):
    if mode == "renormalize":
        return renormalize_simplex(probs)
    if mode == "euclidean":
        return euclidean_simplex(probs)
    raise DomainError(f"unknown simplex projection mode {mode!r}")


def target_depths(problem, probs):
    """Predicted and gt depths over every foreground pixel of every view."""
    pred, gt = [], []
    for p, targets in zip(probs, problem.targets):
        for t in targets:
            pred.append(expected_depth(p, problem.bins, t.pixels))
            gt.append(t.gt_depth)
    if not pred:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(pred), np.concatenate(gt)


def inner_residual_rms(problem, probs) -> float:
    """RMS inner-depth mismatch over all foreground pixels."""
    sq, n = 0.0, 0
    for p, targets in zip(probs, problem.targets):
        _, results = inner_depth_loss(targets, p, problem.bins)
        for r in results:
            sq += float(np.sum((r.pred_residuals - r.gt_residuals) ** 2))
            n += len(r.pred_residuals)
    return math.sqrt(sq / n) if n else 0.0


def gram_mismatch(problem, student_values):
    """Per-target squared Frobenius Gram differences, normalized like the losses."""
    grid = BevFeatureGrid(problem.bev_spec, student_values)
    out = []
    for j, (xy, t) in enumerate(zip(problem.keypoint_coords, problem.teacher_keypoints)):
        s = bilinear_sample(grid, xy)
        n, c = s.shape
        dc = gram_inter_channel(s) - gram_inter_channel(t)
        dk = gram_inter_keypoint(s) - gram_inter_keypoint(t)
        out.append({"target": j, "channel": float(np.sum(dc * dc) / c**2), "keypoint": float(np.sum(dk * dk) / n**2)})
    return out


def initial_state(scene: Scene, config: FitConfig) -> StudentState:
    state = init_student_state(scene, scene.spec, config.init_mode, config.init_amplitude, config.seed)
    if config.bev_jitter > 0:
        rng = np.random.default_rng([config.seed, _JITTER_STREAM])
        values = state.bev.values + config.bev_jitter * rng.normal(size=state.bev.values.shape)
        state = StudentState(state.depth_maps, BevFeatureGrid(state.bev.spec, values))
    return state


def _record(step, report):
    return {"step": step, "total": float(report.total), **{k: float(v) for k, v in report.terms.items()}}


def _metrics(problem, probs):
    pred, gt = target_depths(problem, probs)
    return depth_metrics(pred, gt).to_dict() if len(gt) else None


def distill_fit(scene: Scene, config: FitConfig = FitConfig(), state: Optional[StudentState] = None,
                problem=None):
    """Run gradient descent from ``state`` (or the config's init) with the
    detection term fixed at 0. Returns ``(trace, final_state)``.

    Depth probabilities are projected back onto the simplex after every step.
    A non-finite loss stops the run and marks the trace as diverged.
    """
    problem = scene.problem() if problem is None else problem
    state = initial_state(scene, config) if state is None else state
    probs = [m.probs.copy() for m in state.depth_maps]
    grid = state.bev.values.copy()
    trace = FitTrace()
    trace.initial_metrics = _metrics(problem, probs)
    trace.initial_inner_residual_rms = inner_residual_rms(problem, probs)
    lr = config.learning_rate

    for step in range(config.steps + 1):
        with np.errstate(all="ignore"):
            try:
                report = evaluate(problem, probs, grid, config.weights)
            except DomainError:
                report = None
        if report is None or not math.isfinite(report.total):
            trace.status, trace.failed_step = "diverged", step
            break
        if step % config.record_every == 0 or step == config.steps:
            trace.steps.append(step)
            trace.records.append(_record(step, report))
        if step == config.steps:
            break
        probs_grads, grid_grad = total_grad(report)
        probs = [project_simplex(p - lr * g, config.simplex_projection_mode) for p, g in zip(probs, probs_grads)]
        if grid_grad is not None:
            grid = grid - lr * grid_grad

    if not trace.failed:
        trace.final_metrics = _metrics(problem, probs)
        trace.gram_mismatch = gram_mismatch(problem, grid)
        trace.inner_residual_rms = inner_residual_rms(problem, probs)
    final = StudentState(tuple(CategoricalDepthMap(p) for p in probs), BevFeatureGrid(problem.bev_spec, grid)) \
        if not trace.failed else None
    return trace, final
