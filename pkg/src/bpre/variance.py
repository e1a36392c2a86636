"""Variances of the ancestor-mean estimator and confidence intervals.

Four kinds of variance live here: limiting constants for the three sampling
schemes, exact finite-sample variances, replicate-scatter estimates and the
variance of the relative ancestor mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import EstimationError, ParameterError
from .estimators import EstimateSet, Window, estimate_last_two, log_scaling
from .laws import AncestorMoments, TheoreticalMoments
from .panel import Panel

GW_TOL = 1e-12


# --------------------------------------------------------------------------
# limiting constants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticConstants:
    frak_D: float
    sigma_I2: float
    sigma_tau2: float
    m_star: float
    m2_star: float
    galton_watson: bool
    lam: Optional[float] = None
    lam_tau: Optional[float] = None

    def sigma_F2(self, delta: int) -> float:
        """Limiting variance for a moving window of ``delta + 1`` generations."""
        return sigma_F2(self.frak_D, self.m_star, self.m2_star, delta, self.galton_watson)

    def sigma_F2_decreasing(self, upto: int = 40) -> bool:
        """Whether sigma_F2(0..upto) is nonincreasing (a per-law diagnostic)."""
        vals = [self.sigma_F2(d) for d in range(upto + 1)]
        return all(b <= a * (1 + 1e-15) for a, b in zip(vals, vals[1:]))


def _is_gw(tm: TheoreticalMoments) -> bool:
    if abs(tm.r_star - 1.0) < GW_TOL:
        if tm.sigma2_star > GW_TOL:
            raise ParameterError("r* = 1 is inconsistent with a positive environment variance")
        return True
    return False


def frak_D(tm: TheoreticalMoments, am: AncestorMoments) -> float:
    m, g2 = tm.m_star, tm.gamma2_star
    if _is_gw(tm):
        return am.m_A * g2 * m / (m - 1)
    r2 = tm.r_star**2
    return am.m_A * g2 / (1 - 1 / (r2 * m)) + (am.m_A**2 + am.sigma_A2) * tm.sigma2_star / (1 - 1 / r2)


def sigma_F2(D: float, m: float, m2: float, delta: int, galton_watson: bool = False) -> float:
    if delta < 0 or int(delta) != delta:
        raise ParameterError("delta must be a nonnegative integer")
    if galton_watson:
        return D / (m * m)
    x_inv = m ** -(delta + 1)          # 1 / m^(delta+1)
    y_inv = m2 ** -(delta + 1)         # 1 / m2^(delta+1)
    x_over_y = (m / m2) ** (delta + 1)
    bracket = 2 * m * (1 - x_over_y) / (m2 - m) - (m + 1) * (1 - y_inv) / (m2 - 1)
    return D * (m - 1) / (m * m * (1 - x_inv) ** 2) * bracket


def asymptotic_constants(
    tm: TheoreticalMoments,
    am: AncestorMoments,
    scheme: str = "case_iii",
    tau: int = 0,
    delta_m: Optional[int] = None,
    harmonic: Optional[tuple[float, float]] = None,
) -> AsymptoticConstants:
    """Limiting variance constants of the scaled ancestor-mean estimator.

    ``harmonic`` is ``(lam, lam_tau)``: the full and partial sums of
    ``E[1/Z_l]`` (see :mod:`bpre.oracle`), needed only for ``case_i``.
    """
    m, m2 = tm.m_star, tm.m2_star
    if not m > 1:
        raise ParameterError("limiting constants need m* > 1")
    gw = _is_gw(tm)
    D = frak_D(tm, am)
    if gw:
        sI2 = D / (m * m)
    else:
        sI2 = D * (m - 1) ** 2 * (m2 + m) / (m * m * (m2 - m) * (m2 - 1))
    lam = lam_tau = None
    if scheme == "case_i":
        if harmonic is None:
            raise ParameterError("case_i needs the harmonic sums (lam, lam_tau)")
        lam, lam_tau = map(float, harmonic)
        if lam_tau > lam:
            raise ParameterError("lam_tau cannot exceed lam")
        s_tau = math.exp((lam - lam_tau) * tm.gamma2_star / m2) * sI2
    elif scheme == "case_ii":
        if delta_m is None:
            raise ParameterError("case_ii needs the window length delta_m")
        s_tau = sigma_F2(D, m, m2, delta_m, gw)
    elif scheme == "case_iii":
        s_tau = sI2
    else:
        raise ParameterError(f"unknown scheme {scheme!r}")
    return AsymptoticConstants(D, sI2, s_tau, m, m2, gw, lam, lam_tau)


# --------------------------------------------------------------------------
# exact finite-sample variances
# --------------------------------------------------------------------------


def frak_D_n(tm: TheoreticalMoments, am: AncestorMoments, n: int) -> float:
    """Finite-generation analogue of the D constant; increases to it with n."""
    m = tm.m_star
    r2 = tm.r_star**2
    a = math.fsum((r2 * m) ** -k for k in range(n))
    b = 0.0 if tm.sigma2_star == 0 else math.fsum(r2**-k for k in range(n))
    return am.m_A * tm.gamma2_star * a + (am.m_A**2 + am.sigma_A2) * tm.sigma2_star * b


def var_Z(tm: TheoreticalMoments, am: AncestorMoments, n: int) -> float:
    """Exact Var(Z_n)."""
    if n == 0:
        return am.sigma_A2
    return tm.m2_star ** (n - 1) * frak_D_n(tm, am, n) + tm.m_star ** (2 * n) * am.sigma_A2


def exact_finite_variances(
    tm: TheoreticalMoments, am: AncestorMoments, w: Window, J: int
) -> tuple[np.ndarray, float]:
    """Var(Z_l) for l = 0..n and the exact variance of the windowed ancestor estimator
    computed with the true offspring mean."""
    if not tm.m_star > 1:
        raise ParameterError("need m* > 1")
    if J < 1:
        raise ParameterError("J must be >= 1")
    m = tm.m_star
    vz = np.array([var_Z(tm, am, l) for l in range(w.n + 1)])
    total = math.fsum(
        (1 + 2 * math.fsum(m**k for k in range(1, w.n - l + 1))) * vz[l]
        for l in range(w.tau, w.n + 1)
    )
    N_star2 = math.exp(2 * log_scaling(m, w.tau, w.n))
    return vz, total / (J * N_star2)


# --------------------------------------------------------------------------
# estimates from data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceReport:
    lambda_hat: float
    per_replicate_var: float
    kappa_tilde: Optional[float] = None
    frak_D_tilde: Optional[float] = None
    sigmaA2_hat: Optional[float] = None
    lambda_exact: Optional[float] = None
    methods: tuple = ()

    def to_dict(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "per_replicate_var": self.per_replicate_var,
            "kappa_tilde": self.kappa_tilde,
            "frak_D_tilde": self.frak_D_tilde,
            "sigmaA2_hat": self.sigmaA2_hat,
            "lambda_exact": self.lambda_exact,
            "methods": list(self.methods),
        }


def kappa_tilde(last_two: EstimateSet, n: int) -> float:
    dev = last_two.per_replicate - last_two.mA_hat
    return float(last_two.r_hat ** (-2 * n) * np.mean(dev * dev))


def empirical_variance(panel: Panel, w: Window, est: EstimateSet) -> VarianceReport:
    """Replicate-scatter variance of the ancestor-mean estimate.

    ``lambda_hat`` is the sample variance of the per-replicate scaled sums
    divided by ``J``, i.e. an estimate of the variance of ``est.mA_hat``.
    The last-two-generation quantities are added when they are defined.
    """
    if panel.J < 2:
        raise EstimationError("replicate-scatter variance needs J >= 2")
    v = float(np.var(est.per_replicate, ddof=1))
    kappa = D_t = None
    methods = ["replicate_scatter"]
    try:
        lt = estimate_last_two(panel, w.n)
    except EstimationError:
        lt = None
    if lt is not None:
        kappa = kappa_tilde(lt, w.n)
        D_t = lt.m2_hat * kappa
        methods.append("last_two")
    return VarianceReport(v / panel.J, v, kappa, D_t, methods=tuple(methods))


def invert_sigmaA2(m: float, m2: float, mA: float, D: float, model_kind: str) -> float:
    """Ancestor variance implied by offspring moments, ancestor mean and the D constant.

    The conditional offspring variance is not identifiable without a model,
    so ``model_kind`` fixes how it is derived from the offspring moments.
    """
    if model_kind == "beta_bernoulli":
        g2 = 3 * m - m2 - 2
    elif model_kind == "gamma_poisson":
        g2 = m - 1
    else:
        raise ParameterError(f"model_kind must be beta_bernoulli or gamma_poisson, got {model_kind!r}")
    if m2 <= m * m:
        raise EstimationError(
            "degenerate denominator: m2 <= m^2 (jensen_violation) in the ancestor-variance inversion"
        )
    r2 = m2 / (m * m)
    if abs(m * r2 - 1) < GW_TOL:
        raise EstimationError("m r^2 = 1 makes the ancestor-variance inversion unstable")
    return (1 - 1 / r2) / (m2 - m * m) * (D - mA * g2 / (1 - 1 / (m * r2))) - mA * mA


def estimate_sigmaA2(last_two: EstimateSet, n: int, model_kind: str) -> float:
    """Ancestor variance from the last-two-generation estimators."""
    D_t = last_two.m2_hat * kappa_tilde(last_two, n)
    return invert_sigmaA2(last_two.m_hat, last_two.m2_hat, last_two.mA_hat, D_t, model_kind)


def ratio_variance(
    R_hat: float, est_T: EstimateSet, est_C: EstimateSet, v_T: float, v_C: float, J
) -> float:
    """Delta-method variance of the relative ancestor mean.

    ``v_T`` and ``v_C`` are per-replicate variances.  ``J`` may be a pair
    ``(J_T, J_C)`` when the groups differ in size.
    """
    if not (est_T.mA_hat > 0 and est_C.mA_hat > 0):
        raise EstimationError("ancestor estimates must be positive")
    J_T, J_C = (J, J) if np.isscalar(J) else J
    if J_T < 1 or J_C < 1:
        raise ParameterError("group sizes must be positive")
    return R_hat**2 * (v_T / (J_T * est_T.mA_hat**2) + v_C / (J_C * est_C.mA_hat**2))


# --------------------------------------------------------------------------
# confidence intervals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CI:
    lower: float
    upper: float
    level: float
    method: str

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ParameterError("CI lower bound exceeds upper bound")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "level": self.level, "method": self.method}


def critical_value(method: str, level: float, J: Optional[int] = None) -> float:
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    q = (1 + level) / 2
    if method == "gaussian":
        return float(stats.norm.ppf(q))
    if method == "student_t":
        if J is None or J < 2:
            raise ParameterError("student_t intervals need J >= 2")
        return float(stats.t.ppf(q, J - 1))
    raise ParameterError(f"unknown CI method {method!r}")


def build_ci(point: float, variance: float, J: Optional[int], method: str, level: float = 0.95) -> CI:
    if variance < 0 or not math.isfinite(variance):
        raise ParameterError(f"variance must be a nonnegative finite number, got {variance!r}")
    half = critical_value(method, level, J) * math.sqrt(variance)
    return CI(point - half, point + half, level, method)


def harmonic_sums(inverse_means: Sequence[float], tau: int, tail: float = 0.0) -> tuple[float, float]:
    """(lam, lam_tau) from E[1/Z_0], E[1/Z_1], ... plus the extrapolated tail."""
    inv = np.asarray(inverse_means, dtype=float)
    if tau > len(inv):
        raise ParameterError("not enough harmonic moments for this tau")
    return float(inv.sum() + tail), float(inv[:tau].sum())
