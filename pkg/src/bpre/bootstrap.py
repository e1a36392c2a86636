"""Replicate-level bootstrap for the ancestor-mean estimator.

Whole trajectories are resampled with replacement.  Resamples whose offspring
mean estimate is not above one have no scaling factor; they are skipped and
counted, and the interval is refused when more than ``MAX_SKIPPED_FRACTION``
of the resamples are skipped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EstimationError, ParameterError
from .estimators import Window, row_statistics, scale_sums
from .panel import Panel
from .variance import CI

log = logging.getLogger(__name__)

MAX_SKIPPED_FRACTION = 0.2


@dataclass(frozen=True)
class BootstrapResult:
    estimates: np.ndarray  # (B_used, 2): columns m_b, mA_b
    mean_mA: float
    var_B: float
    ci: CI
    skipped: int

    @property
    def B(self) -> int:
        return len(self.estimates) + self.skipped

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "skipped": self.skipped,
            "mean_mA": self.mean_mA,
            "var_B": self.var_B,
            "ci": self.ci.to_dict(),
        }


def resample_panel(panel: Panel, rng: np.random.Generator) -> Panel:
    """J whole rows drawn uniformly with replacement."""
    return panel.take(rng.integers(0, panel.J, size=panel.J))


def centered_quantile(centered: np.ndarray, alpha: float) -> float:
    """Smallest centered value t with #{c <= t} / B >= alpha."""
    c = np.sort(np.asarray(centered, dtype=float))
    cdf = np.searchsorted(c, c, side="right") / len(c)
    ok = np.nonzero(cdf >= alpha)[0]
    return float(c[ok[0]] if len(ok) else c[-1])


def interval_from_draws(draws: np.ndarray, level: float, paper_literal: bool = False) -> tuple[float, float, CI]:
    """Mean, variance (1/B) and centered-percentile interval of bootstrap draws."""
    # identical draws give an exact zero spread rather than rounding noise
    mean = float(draws[0]) if np.all(draws == draws[0]) else float(draws.mean())
    centered = draws - mean
    var = float(np.mean(centered * centered))
    alpha = 1 - level
    t_hi = centered_quantile(centered, 1 - alpha / 2)
    t_lo = centered_quantile(centered, alpha / 2)
    if paper_literal:
        lower, upper = mean - t_hi, mean + t_lo
        if lower > upper:
            raise EstimationError("the literal bootstrap interval is empty for these draws")
        return mean, var, CI(lower, upper, level, "bootstrap_literal")
    return mean, var, CI(mean - t_hi, mean - t_lo, level, "bootstrap")


def _check(B: int, level: float):
    if int(B) != B or B < 2:
        raise ParameterError("B must be an integer >= 2")
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")


def _draw_estimates(panel: Panel, w: Window, B: int, rng: np.random.Generator):
    a, _, s = row_statistics(panel, w)
    idx = rng.integers(0, panel.J, size=(B, panel.J))
    m_b = a[idx].mean(axis=1)
    sums_b = s[idx].mean(axis=1)
    ok = m_b > 1
    mA_b = np.full(B, np.nan)
    mA_b[ok] = scale_sums(sums_b[ok], m_b[ok], w.tau, w.n)
    return m_b, mA_b, ok


def _refuse_if_needed(skipped: int, B: int):
    if skipped:
        log.debug("skipped %d of %d bootstrap resamples with offspring mean <= 1", skipped, B)
    if skipped > MAX_SKIPPED_FRACTION * B:
        raise EstimationError(
            f"{skipped} of {B} bootstrap resamples had offspring mean <= 1; interval refused"
        )


def bootstrap_ci(
    panel: Panel,
    w: Window,
    B: int,
    level: float,
    rng: np.random.Generator,
    paper_literal: bool = False,
) -> BootstrapResult:
    """Bootstrap variance and interval for the windowed ancestor-mean estimate.

    The default interval is ``(mean - t(1 - a/2), mean - t(a/2))`` with ``t``
    the quantiles of the centered bootstrap estimates.  ``paper_literal``
    instead returns ``(mean - t(1 - a/2), mean + t(a/2))``.
    """
    _check(B, level)
    m_b, mA_b, ok = _draw_estimates(panel, w, B, rng)
    skipped = int(B - ok.sum())
    _refuse_if_needed(skipped, B)
    mean, var, ci = interval_from_draws(mA_b[ok], level, paper_literal)
    return BootstrapResult(np.column_stack([m_b[ok], mA_b[ok]]), mean, var, ci, skipped)


def bootstrap_ratio(
    target: Panel,
    calibrator: Panel,
    w: Window,
    B: int,
    level: float,
    rng: np.random.Generator,
    w_calibrator: Optional[Window] = None,
) -> BootstrapResult:
    """Bootstrap of the relative ancestor mean; each group is resampled on its own.

    ``estimates`` holds the target and calibrator ancestor estimates per draw.
    """
    _check(B, level)
    _, t_b, t_ok = _draw_estimates(target, w, B, rng)
    _, c_b, c_ok = _draw_estimates(calibrator, w_calibrator or w, B, rng)
    ok = t_ok & c_ok
    skipped = int(B - ok.sum())
    _refuse_if_needed(skipped, B)
    mean, var, ci = interval_from_draws(t_b[ok] / c_b[ok], level)
    return BootstrapResult(np.column_stack([t_b[ok], c_b[ok]]), mean, var, ci, skipped)
