"""Offspring-environment laws, ancestor laws and their exact moments.

Offspring laws describe the per-generation random environment and the
conditional offspring distribution given it.  Every built-in law puts no mass
on zero offspring, so simulated processes never go extinct.

The marginal moments follow the usual BPRE notation:

* ``m_star``       E[m], the mean of the conditional offspring mean
* ``m2_star``      E[m^2]
* ``sigma2_star``  Var(m)
* ``gamma2_star``  E[conditional offspring variance]
* ``r_star``       sqrt(m2_star) / m_star
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import optimize, stats

from .errors import ParameterError

_PMF_TOL = 1e-12


def _upper_cut(dist, tail: float) -> int:
    """Smallest k with P(X > k) < tail for a frozen scipy distribution."""
    k = int(dist.mean() + 10 * dist.std()) + 1
    while dist.logsf(k) >= math.log(tail):
        k *= 2
    ks = np.arange(k + 1)
    return int(ks[np.argmax(dist.logsf(ks) < math.log(tail))])


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ParameterError(f"{name} must be a positive finite number, got {value!r}")
    return value


def _nonneg_int(name: str, value) -> int:
    if int(value) != value or value < 0:
        raise ParameterError(f"{name} must be a nonnegative integer, got {value!r}")
    return int(value)


# --------------------------------------------------------------------------
# offspring laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaBernoulli:
    """Offspring = 1 + Bernoulli(p) with p ~ Beta(alpha, beta)."""

    alpha: float
    beta: float

    kind = "beta_bernoulli"

    def __post_init__(self):
        object.__setattr__(self, "alpha", _positive("alpha", self.alpha))
        object.__setattr__(self, "beta", _positive("beta", self.beta))

    def sample_environment(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.beta(self.alpha, self.beta, size=size)

    def conditional_moments(self, env: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Conditional offspring mean and variance for environments ``env``."""
        return 1.0 + env, env * (1.0 - env)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class GammaPoisson:
    """Offspring = 1 + Poisson(lam) with lam ~ Gamma(shape, scale)."""

    shape: float
    scale: float

    kind = "gamma_poisson"

    def __post_init__(self):
        object.__setattr__(self, "shape", _positive("shape", self.shape))
        object.__setattr__(self, "scale", _positive("scale", self.scale))

    def sample_environment(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.gamma(self.shape, self.scale, size=size)

    def conditional_moments(self, env: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return 1.0 + env, np.asarray(env, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class DegenerateGW:
    """Fixed offspring pmf with no environment randomness (Galton-Watson).

    ``pmf[i]`` is the probability of ``i + 1`` offspring.  A pmf that puts all
    its mass on a single offspring makes the process deterministic; a mass of
    one on exactly one offspring (no growth) is rejected unless
    ``allow_degenerate`` is set.
    """

    pmf: tuple
    allow_degenerate: bool = False

    kind = "degenerate_gw"

    def __post_init__(self):
        p = tuple(float(x) for x in self.pmf)
        if not p:
            raise ParameterError("pmf must not be empty")
        if any(x < 0 or not math.isfinite(x) for x in p):
            raise ParameterError("pmf entries must be nonnegative")
        if abs(math.fsum(p) - 1.0) > _PMF_TOL:
            raise ParameterError(f"pmf must sum to 1 within {_PMF_TOL}, got {math.fsum(p)!r}")
        if p[0] >= 1.0 and not self.allow_degenerate:
            raise ParameterError("P(offspring = 1) = 1 gives no growth; pass allow_degenerate=True")
        object.__setattr__(self, "pmf", p)

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, len(self.pmf) + 1)

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in zip(self.support, self.pmf))

    @property
    def variance(self) -> float:
        mu = self.mean
        return math.fsum(p * (k - mu) ** 2 for k, p in zip(self.support, self.pmf))

    def sample_environment(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.zeros(size)

    def conditional_moments(self, env: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        env = np.asarray(env, dtype=float)
        return np.full(env.shape, self.mean), np.full(env.shape, self.variance)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pmf": list(self.pmf)}


OffspringLaw = Union[BetaBernoulli, GammaPoisson, DegenerateGW]


@dataclass(frozen=True)
class TheoreticalMoments:
    m_star: float
    m2_star: float
    sigma2_star: float
    gamma2_star: float
    r_star: float
    m4_star: Optional[float] = None

    @classmethod
    def from_mean_var(cls, m, sigma2, gamma2, m4=None) -> "TheoreticalMoments":
        m2 = m * m + sigma2
        return cls(m, m2, sigma2, gamma2, math.sqrt(m2) / m, m4)


def _beta_raw_moment(a: float, b: float, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= (a + i) / (a + b + i)
    return out


def offspring_moments(law: OffspringLaw) -> TheoreticalMoments:
    """Exact marginal moments of the conditional offspring mean."""
    if isinstance(law, BetaBernoulli):
        a, b = law.alpha, law.beta
        s = a + b
        m = (2 * a + b) / s
        sigma2 = a * b / (s * s * (s + 1))
        m2 = m * m + sigma2
        gamma2 = a * b / (s * (s + 1))  # E[p] - E[p^2]
        ep = [_beta_raw_moment(a, b, k) for k in range(5)]
        m4 = math.fsum(math.comb(4, k) * ep[k] for k in range(5))
        return TheoreticalMoments(m, m2, sigma2, gamma2, math.sqrt(m2) / m, m4)
    if isinstance(law, GammaPoisson):
        a, th = law.shape, law.scale
        m = 1 + a * th
        sigma2 = a * th * th
        # E[lam^k] = th^k * a (a+1) ... (a+k-1)
        el = [th**k * math.prod(a + i for i in range(k)) for k in range(5)]
        m4 = math.fsum(math.comb(4, k) * el[k] for k in range(5))
        return TheoreticalMoments.from_mean_var(m, sigma2, a * th, m4)
    if isinstance(law, DegenerateGW):
        m = law.mean
        return TheoreticalMoments(m, m * m, 0.0, law.variance, 1.0, m**4)
    raise ParameterError(f"unknown offspring law {law!r}")


# --------------------------------------------------------------------------
# ancestor laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AncestorMoments:
    m_A: float
    sigma_A2: float


@dataclass(frozen=True)
class ZeroTruncPoisson:
    """Poisson conditioned on being positive, parameterized by its truncated mean."""

    mean: float

    kind = "zero_trunc_poisson"

    def __post_init__(self):
        target = _positive("mean", self.mean)
        if target <= 1:
            raise ParameterError("a zero-truncated Poisson mean must exceed 1")
        object.__setattr__(self, "mean", target)

    @property
    def rate(self) -> float:
        return _ztp_rate(self.mean)

    def moments(self) -> AncestorMoments:
        lam = self.rate
        second = (lam + lam * lam) / -math.expm1(-lam)
        return AncestorMoments(self.mean, second - self.mean**2)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lam = self.rate
        out = rng.poisson(lam, size=size).astype(np.int64)
        zero = out == 0
        while zero.any():
            out[zero] = rng.poisson(lam, size=int(zero.sum()))
            zero = out == 0
        return out

    def pmf(self, tail: float = 1e-17) -> dict[int, float]:
        lam = self.rate
        hi = _upper_cut(stats.poisson(lam), tail)
        k = np.arange(1, hi + 1)
        p = stats.poisson.pmf(k, lam)
        return dict(zip(k.tolist(), (p / p.sum()).tolist()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean}


def _ztp_rate(target: float) -> float:
    def resid(lam):
        return lam / -math.expm1(-lam) - target

    lam = optimize.brentq(resid, 1e-12, target + 1.0, xtol=1e-14, maxiter=500)
    if abs(resid(lam)) >= 1e-10:
        raise ParameterError(f"could not solve the zero-truncated Poisson rate for mean {target}")
    return lam


@dataclass(frozen=True)
class ShiftedPoisson:
    """shift + Poisson(rate).  ``shift`` must be at least 1 so no replicate starts empty."""

    shift: int
    rate: float

    kind = "shifted_poisson"

    def __post_init__(self):
        shift = _nonneg_int("shift", self.shift)
        if shift < 1:
            raise ParameterError("shift must be >= 1 so every replicate has an ancestor")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def moments(self) -> AncestorMoments:
        return AncestorMoments(self.shift + self.rate, self.rate)

    def sample(self, rng, size):
        return self.shift + rng.poisson(self.rate, size=size).astype(np.int64)

    def pmf(self, tail: float = 1e-17) -> dict[int, float]:
        hi = _upper_cut(stats.poisson(self.rate), tail)
        k = np.arange(0, hi + 1)
        p = stats.poisson.pmf(k, self.rate)
        return dict(zip((k + self.shift).tolist(), (p / p.sum()).tolist()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shift": self.shift, "rate": self.rate}


@dataclass(frozen=True)
class ShiftedNegBinomial:
    """shift + (failures before ``r`` successes with success probability ``p``)."""

    shift: int
    r: int
    p: float

    kind = "shifted_neg_binomial"

    def __post_init__(self):
        shift = _nonneg_int("shift", self.shift)
        if shift < 1:
            raise ParameterError("shift must be >= 1 so every replicate has an ancestor")
        r = _nonneg_int("r", self.r)
        if r < 1:
            raise ParameterError("r must be a positive integer")
        if not 0 < self.p < 1:
            raise ParameterError(f"p must lie in (0, 1), got {self.p!r}")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", float(self.p))

    def moments(self) -> AncestorMoments:
        q = 1 - self.p
        return AncestorMoments(self.shift + self.r * q / self.p, self.r * q / self.p**2)

    def sample(self, rng, size):
        return self.shift + rng.negative_binomial(self.r, self.p, size=size).astype(np.int64)

    def pmf(self, tail: float = 1e-17) -> dict[int, float]:
        hi = _upper_cut(stats.nbinom(self.r, self.p), tail)
        k = np.arange(0, hi + 1)
        p = stats.nbinom.pmf(k, self.r, self.p)
        return dict(zip((k + self.shift).tolist(), (p / p.sum()).tolist()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shift": self.shift, "r": self.r, "p": self.p}


@dataclass(frozen=True)
class Constant:
    k: int

    kind = "constant"

    def __post_init__(self):
        k = _nonneg_int("k", self.k)
        if k < 1:
            raise ParameterError("a constant ancestor count must be >= 1")
        object.__setattr__(self, "k", k)

    def moments(self) -> AncestorMoments:
        return AncestorMoments(float(self.k), 0.0)

    def sample(self, rng, size):
        return np.full(size, self.k, dtype=np.int64)

    def pmf(self, tail: float = 0.0) -> dict[int, float]:
        return {self.k: 1.0}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k}


AncestorLaw = Union[ZeroTruncPoisson, ShiftedPoisson, ShiftedNegBinomial, Constant]


def ancestor_moments(law: AncestorLaw) -> AncestorMoments:
    return law.moments()


def one_plus_poisson(mean: float) -> ShiftedPoisson:
    """Ancestors distributed as 1 + Poisson(mean - 1)."""
    return ShiftedPoisson(1, float(mean) - 1.0)


# --------------------------------------------------------------------------
# JSON round trip
# --------------------------------------------------------------------------


def _gw_pmf(raw) -> tuple:
    if isinstance(raw, dict):
        top = max(int(k) for k in raw)
        out = [0.0] * top
        for k, v in raw.items():
            if int(k) < 1:
                raise ParameterError("degenerate_gw support must be counts >= 1")
            out[int(k) - 1] = float(v)
        return tuple(out)
    return tuple(raw)


def offspring_from_dict(d: dict) -> OffspringLaw:
    kind = d.get("kind")
    try:
        if kind == "beta_bernoulli":
            return BetaBernoulli(d["alpha"], d["beta"])
        if kind == "gamma_poisson":
            return GammaPoisson(d["shape"], d["scale"])
        if kind == "degenerate_gw":
            return DegenerateGW(_gw_pmf(d["pmf"]), bool(d.get("allow_degenerate", False)))
    except KeyError as exc:
        raise ParameterError(f"offspring law {kind!r} is missing field {exc}") from None
    raise ParameterError(f"unknown offspring kind {kind!r}")


def ancestor_from_dict(d: dict) -> AncestorLaw:
    kind = d.get("kind")
    try:
        if kind == "zero_trunc_poisson":
            return ZeroTruncPoisson(d["mean"])
        if kind == "shifted_poisson":
            return ShiftedPoisson(d["shift"], d["rate"])
        if kind == "one_plus_poisson":
            return one_plus_poisson(d["mean"])
        if kind == "shifted_neg_binomial":
            return ShiftedNegBinomial(d["shift"], d["r"], d["p"])
        if kind == "constant":
            return Constant(d["k"])
    except KeyError as exc:
        raise ParameterError(f"ancestor law {kind!r} is missing field {exc}") from None
    raise ParameterError(f"unknown ancestor kind {kind!r}")
