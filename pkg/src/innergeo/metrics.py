"""Standard depth-estimation error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError

PRED_FLOOR = 1e-6


@dataclass(frozen=True)
class DepthMetricReport:
    rmse: float
    rmse_log: float
    abs_rel: float
    sq_rel: float
    log10: float
    silog: float
    delta1: float
    delta2: float
    delta3: float
    n: int

    def to_dict(self):
        return asdict(self)


def depth_metrics(pred, gt) -> DepthMetricReport:
    """Error metrics of ``pred`` against positive ``gt`` depths.

    Log-based metrics and the delta ratios use ``pred`` floored at 1e-6.
    SILog is ``100 * sqrt(mean(g^2) - mean(g)^2)`` with ``g = ln pred - ln gt``.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.size == 0 or pred.shape != gt.shape:
        raise DomainError("pred and gt must be nonempty and of equal length")
    if np.any(~(gt > 0)):
        raise DomainError("ground-truth depths must be positive")
    diff = pred - gt
    safe = np.maximum(pred, PRED_FLOOR)
    g = np.log(safe) - np.log(gt)
    ratio = np.maximum(safe / gt, gt / safe)
    # mean(g^2) - mean(g)^2 can dip a hair below zero by rounding
    silog_var = max(float(np.mean(g * g) - np.mean(g) ** 2), 0.0)
    return DepthMetricReport(
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean(g * g))),
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sq_rel=float(np.mean(diff * diff / gt)),
        log10=float(np.mean(np.abs(np.log10(safe) - np.log10(gt)))),
        silog=100.0 * float(np.sqrt(silog_var)),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        n=int(pred.size),
    )
