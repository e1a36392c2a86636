"""Point estimators of the offspring mean and the ancestor mean.

Ratio averages use generations ``l = tau+1 .. n`` (``n - tau`` ratios per
replicate); ancestor-mean sums use ``l = tau .. n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EstimationError, ParameterError
from .panel import Panel

SCHEMES = ("case_i", "case_ii", "case_iii")
SUBCRITICAL_MSG = "subcritical sample mean, scaling factor undefined"


@dataclass(frozen=True)
class Window:
    tau: int
    n: int
    scheme: Optional[str] = None

    def __post_init__(self):
        if int(self.tau) != self.tau or int(self.n) != self.n:
            raise ParameterError("window bounds must be integers")
        if not 0 <= self.tau <= self.n:
            raise ParameterError(f"need 0 <= tau <= n, got tau={self.tau}, n={self.n}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {self.scheme!r}")

    @property
    def length(self) -> int:
        return self.n - self.tau


@dataclass(frozen=True)
class SplitWindow:
    tau1: int
    tau2: int
    n: int
    mode: str = "late_m"

    def __post_init__(self):
        if not 0 <= self.tau1 < self.tau2 < self.n:
            raise ParameterError(f"need 0 <= tau1 < tau2 < n, got {self.tau1}, {self.tau2}, {self.n}")
        if self.mode not in ("early_m", "late_m"):
            raise ParameterError(f"mode must be early_m or late_m, got {self.mode!r}")


@dataclass(frozen=True)
class EstimateSet:
    m_hat: float
    m2_hat: float
    r_hat: float
    scaling_N_hat: float
    mA_hat: float
    sigma2_star_hat: float
    J: int
    jensen_violation: bool = False
    per_replicate: np.ndarray = field(default=None, repr=False, compare=False)
    """Per-replicate scaled sums whose mean is ``mA_hat``."""

    def to_dict(self) -> dict:
        return {
            "m_hat": self.m_hat,
            "m2_hat": self.m2_hat,
            "r_hat": self.r_hat,
            "scaling_N_hat": self.scaling_N_hat,
            "mA_hat": self.mA_hat,
            "sigma2_star_hat": self.sigma2_star_hat,
            "J": self.J,
            "jensen_violation": self.jensen_violation,
        }


def log_scaling(m: float, tau: int, n: int) -> float:
    """log of sum_{k=tau..n} m**k for m > 1."""
    if not m > 1:
        raise EstimationError(SUBCRITICAL_MSG)
    lm = math.log(m)
    x = (n - tau + 1) * lm
    # log(expm1(x)) without overflow for large x
    return tau * lm + x + math.log(-math.expm1(-x)) - math.log(m - 1)


# beyond this log-size the direct power sum could overflow
DIRECT_SUM_LOG_LIMIT = 700.0


def scaling_factor(m: float, tau: int, n: int) -> float:
    """sum_{k=tau..n} m**k, summed term by term when it cannot overflow."""
    if not m > 1:
        raise EstimationError(SUBCRITICAL_MSG)
    if (n + 1) * math.log(m) < DIRECT_SUM_LOG_LIMIT:
        return math.fsum(m**k for k in range(tau, n + 1))
    return math.exp(log_scaling(m, tau, n))


def scale_sums(sums, m, tau: int, n: int) -> np.ndarray:
    """``sums / scaling_factor(m, tau, n)`` elementwise over arrays of sums and means m > 1.

    Uses the direct power sum when it is finite, which keeps integer growth
    rates exact, and the log form otherwise.
    """
    sums, m = np.broadcast_arrays(np.asarray(sums, dtype=float), np.asarray(m, dtype=float))
    out = np.empty(sums.shape)
    lm = np.log(m)
    direct = (n + 1) * lm < DIRECT_SUM_LOG_LIMIT
    k = np.arange(tau, n + 1)
    out[direct] = sums[direct] / (m[direct][:, None] ** k).sum(axis=1)
    far = ~direct
    if np.any(far):
        x = (n - tau + 1) * lm[far]
        log_n = tau * lm[far] + x + np.log(-np.expm1(-x)) - np.log(m[far] - 1)
        out[far] = np.exp(np.log(sums[far]) - log_n)
    return out


def _window_columns(panel: Panel, tau: int, n: int) -> np.ndarray:
    return panel.columns(tau, n)


def row_statistics(panel: Panel, w: Window) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-replicate mean ratio, mean squared ratio and window sum."""
    if w.n <= w.tau:
        raise ParameterError("ratio estimators need n > tau")
    z = _window_columns(panel, w.tau, w.n)
    ratios = z[:, 1:] / z[:, :-1]
    return ratios.mean(axis=1), (ratios * ratios).mean(axis=1), z.sum(axis=1)


def _bundle(a, b, sums, taus, ns) -> EstimateSet:
    m = float(np.mean(a))
    m2 = float(np.mean(b))
    if not m > 1:
        raise EstimationError(SUBCRITICAL_MSG)
    taus = np.broadcast_to(np.asarray(taus), a.shape)
    ns = np.broadcast_to(np.asarray(ns), a.shape)
    N = np.empty(len(a))
    scaled = np.empty(len(a))
    for t, k in set(zip(taus.tolist(), ns.tolist())):
        rows = (taus == t) & (ns == k)
        N[rows] = scaling_factor(m, t, k)
        scaled[rows] = scale_sums(sums[rows], m, t, k)
    common = bool(np.all(taus == taus[0]) and np.all(ns == ns[0]))
    return EstimateSet(
        m_hat=m,
        m2_hat=m2,
        r_hat=math.sqrt(m2) / m,
        scaling_N_hat=float(N[0]) if common else float(N.mean()),
        mA_hat=float(np.mean(scaled)),
        sigma2_star_hat=m2 - m * m,
        J=len(a),
        jensen_violation=m2 < m * m,
        per_replicate=scaled,
    )


def estimate_window(panel: Panel, w: Window) -> EstimateSet:
    """Windowed moment estimators over generations ``tau..n``."""
    a, b, s = row_statistics(panel, w)
    return _bundle(a, b, s, w.tau, w.n)


def estimate_replicate_windows(z, windows: Sequence[Window], generation0: int = 0) -> EstimateSet:
    """Estimators when each replicate has its own window.

    ``z`` is a :class:`Panel` or a 2-D array whose first column is generation
    ``generation0``; values only need to be positive inside each replicate's
    window.  Ratio averages of each replicate are taken over its own window
    and then averaged with equal replicate weights; each replicate's sum is
    scaled by the scaling factor of its own window.  With identical windows
    this is exactly :func:`estimate_window`.
    """
    if isinstance(z, Panel):
        z, generation0 = z.z, z.generation0
    z = np.asarray(z, dtype=float)
    if len(windows) != z.shape[0]:
        raise ParameterError("need exactly one window per replicate")
    a, b, s = np.empty(len(windows)), np.empty(len(windows)), np.empty(len(windows))
    last = generation0 + z.shape[1] - 1
    for j, w in enumerate(windows):
        if w.n <= w.tau:
            raise ParameterError("ratio estimators need n > tau")
        if w.tau < generation0 or w.n > last:
            raise ParameterError(f"window {w.tau}..{w.n} outside generations {generation0}..{last}")
        seg = z[j, w.tau - generation0 : w.n - generation0 + 1]
        if not np.all(seg > 0):
            raise EstimationError(f"replicate {j} has nonpositive values inside its window")
        r = seg[1:] / seg[:-1]
        a[j], b[j], s[j] = r.mean(), (r * r).mean(), seg.sum()
    return _bundle(a, b, s, [w.tau for w in windows], [w.n for w in windows])


def estimate_last_two(panel: Panel, n: int) -> EstimateSet:
    """Estimators using only generations ``n - 1`` and ``n``."""
    if n < 1 or n - 1 < panel.generation0:
        raise ParameterError("last-two estimators need generations n-1 and n")
    z = panel.columns(n - 1, n)
    ratio = z[:, 1] / z[:, 0]
    m = float(ratio.mean())
    m2 = float((ratio * ratio).mean())
    if not m > 1:
        raise EstimationError(SUBCRITICAL_MSG)
    log_scale = n * math.log(m)
    scaled = np.exp(np.log(z[:, 1]) - log_scale)
    return EstimateSet(
        m_hat=m,
        m2_hat=m2,
        r_hat=math.sqrt(m2) / m,
        scaling_N_hat=math.exp(log_scale),
        mA_hat=float(scaled.mean()),
        sigma2_star_hat=m2 - m * m,
        J=panel.J,
        jensen_violation=m2 < m * m,
        per_replicate=scaled,
    )


def estimate_weighted_m(panel: Panel, w: Window) -> float:
    """Total children over total parents in the window."""
    if w.n <= w.tau:
        raise ParameterError("ratio estimators need n > tau")
    z = _window_columns(panel, w.tau, w.n)
    return float(z[:, 1:].sum() / z[:, :-1].sum())


def ratio_weights(panel: Panel, w: Window) -> tuple[np.ndarray, np.ndarray]:
    """Between-replicate and within-replicate weights of the weighted estimator.

    The weighted estimator equals ``sum_j between[j] * sum_l within[j, l] * ratio[j, l]``.
    Both weight sets sum to one (within each replicate for ``within``).
    """
    if w.n <= w.tau:
        raise ParameterError("ratio estimators need n > tau")
    parents = _window_columns(panel, w.tau, w.n)[:, :-1]
    per_row = parents.sum(axis=1)
    return per_row / per_row.sum(), parents / per_row[:, None]


def estimate_split(panel: Panel, sw: SplitWindow) -> tuple[float, float]:
    """Offspring mean from one block of generations, ancestor mean from the other."""
    if sw.mode == "early_m":
        ratio_w, sum_w = Window(sw.tau1, sw.tau2), Window(sw.tau2, sw.n)
    else:
        ratio_w, sum_w = Window(sw.tau2, sw.n), Window(sw.tau1, sw.tau2)
    a, _, _ = row_statistics(panel, ratio_w)
    m = float(np.mean(a))
    if not m > 1:
        raise EstimationError(SUBCRITICAL_MSG)
    sums = _window_columns(panel, sum_w.tau, sum_w.n).sum(axis=1)
    return m, float(scale_sums(sums.mean(), m, sum_w.tau, sum_w.n))


def estimate_ratio(target: EstimateSet, calibrator: EstimateSet) -> float:
    """Relative ancestor mean of target to calibrator."""
    if not calibrator.mA_hat > 0:
        raise EstimationError("calibrator ancestor estimate must be positive")
    return target.mA_hat / calibrator.mA_hat
