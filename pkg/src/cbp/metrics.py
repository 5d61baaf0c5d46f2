"""Displacement-error metrics over the most likely modes, and summary statistics.

Percentiles use linear interpolation between order statistics: for sorted
values ``x_0 <= ... <= x_{n-1}`` the ``p``-th percentile is read at fractional
index ``(n - 1) * p / 100`` and interpolated between its neighbors (numpy's
default ``"linear"`` method). For 1..100 the 10th percentile is 10.9.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .trajectory import TrajectoryGMM, as_states, most_likely_modes

TOP_MODES = 6
PERCENTILES = (10, 20, 30, 40, 60, 70, 80, 90)


def _top(dist: TrajectoryGMM, gt, renormalize: bool):
    gt = as_states(gt)
    if gt.shape[0] != dist.horizon:
        raise DimensionError(f"ground truth has {gt.shape[0]} steps, prediction {dist.horizon}")
    top = most_likely_modes(dist, min(TOP_MODES, dist.mode_count))
    idx = np.array([i for _, i in top])
    w = np.array([p for p, _ in top])
    if renormalize:
        w = w / w.sum()
    # (k,) mean per-step L2 error of each selected mode
    ade = np.linalg.norm(dist.means[idx] - gt[None], axis=-1).mean(axis=-1)
    return w, ade


def wade6(dist: TrajectoryGMM, gt, renormalize: bool = True) -> float:
    """Probability-weighted average displacement error over the top-6 modes.

    Parameters
    ----------
    dist : TrajectoryGMM
    gt : Trajectory or (T, 2) array
    renormalize : bool
        Rescale the selected mode probabilities to sum to one (default). With
        ``False`` the raw probabilities are used, so the value is a lower
        bound of the full weighted error when more than six modes exist.
    """
    w, ade = _top(dist, gt, renormalize)
    return float(np.dot(w, ade))


def min_ade6(dist: TrajectoryGMM, gt) -> float:
    """Smallest average displacement error among the top-6 modes."""
    _, ade = _top(dist, gt, True)
    return float(ade.min())


def delta_wade(marg: TrajectoryGMM, cond: TrajectoryGMM, gt, renormalize: bool = True) -> float:
    """Marginal minus conditional wADE; positive when conditioning helps."""
    return wade6(marg, gt, renormalize) - wade6(cond, gt, renormalize)


@dataclass(frozen=True)
class MetricSummary:
    metric_name: str
    mean: float
    stderr: float
    count: int
    percentiles: dict = field(default_factory=dict)


def aggregate(values, name: str = "") -> MetricSummary:
    """Mean, standard error (sample std with ``ddof=1`` over sqrt(n)) and deciles.

    A single value has standard error 0.
    """
    x = np.asarray(list(values), dtype=float).ravel()
    if x.size == 0:
        raise ValueError(f"cannot aggregate an empty sample ({name or 'unnamed'})")
    mean = math.fsum(x) / x.size
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    pct = np.percentile(x, PERCENTILES, method="linear")
    return MetricSummary(name, float(mean), se, int(x.size), {p: float(v) for p, v in zip(PERCENTILES, pct)})
