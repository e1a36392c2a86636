"""Ground-truth engines for generation-size distributions.

For finite-support offspring laws the pmf of every generation is computed by
dynamic programming with the environment integrated out exactly.  Given
``Z = k`` parents under a Beta(a, b) environment, the number of extra
offspring is Beta-Binomial(k, a, b).  Probabilities are carried in
``np.longdouble``.

Laws with unbounded support (GammaPoisson) get a Monte Carlo oracle instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .errors import OracleSizeError, ParameterError
from .laws import BetaBernoulli, Constant, DegenerateGW, GammaPoisson, OffspringLaw
from .simulate import SimConfig, simulate_panel

MAX_SUPPORT = 10**6
PMF_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ExactChain:
    """pmf of Z_l for l = 0..n_max; ``pmfs[l][i]`` is P(Z_l = i)."""

    law: OffspringLaw
    ancestor_pmf: Mapping[int, float]
    pmfs: tuple

    @property
    def n_max(self) -> int:
        return len(self.pmfs) - 1

    def pmf(self, l: int) -> dict[int, float]:
        p = self.pmfs[l]
        nz = np.nonzero(p)[0]
        return {int(k): float(p[k]) for k in nz}


def betabinom_pmf(k: int, a: float, b: float) -> np.ndarray:
    """Beta-Binomial(k, a, b) pmf on 0..k in long double, by the term-ratio recurrence."""
    a, b = np.longdouble(a), np.longdouble(b)
    t = np.arange(k, dtype=np.longdouble)
    p0 = np.prod((b + t) / (a + b + t)) if k else np.longdouble(1)
    i = np.arange(k, dtype=np.longdouble)
    ratios = (k - i) / (i + 1) * (i + a) / (k - i - 1 + b)
    out = np.empty(k + 1, dtype=np.longdouble)
    out[0] = p0
    out[1:] = p0 * np.cumprod(ratios)
    return out


def _ancestor_array(ancestor_pmf) -> np.ndarray:
    if hasattr(ancestor_pmf, "pmf"):
        ancestor_pmf = ancestor_pmf.pmf()
    if not ancestor_pmf or min(ancestor_pmf) < 1:
        raise ParameterError("ancestor pmf must have support in {1, 2, ...}")
    p = np.zeros(max(ancestor_pmf) + 1, dtype=np.longdouble)
    for k, v in ancestor_pmf.items():
        p[int(k)] = v
    if abs(float(p.sum()) - 1) > PMF_SUM_TOL:
        raise ParameterError("ancestor pmf must sum to 1")
    return p


def _step(p: np.ndarray, law, prune: float) -> np.ndarray:
    top = len(p) - 1
    if isinstance(law, BetaBernoulli):
        out = np.zeros(2 * top + 1, dtype=np.longdouble)
        for k in np.nonzero(p > prune)[0]:
            out[k : 2 * k + 1] += p[k] * betabinom_pmf(int(k), law.alpha, law.beta)
        return out
    off = np.concatenate([[0], np.asarray(law.pmf, dtype=np.longdouble)])  # P(offspring = i)
    K = len(off) - 1
    out = np.zeros(K * top + 1, dtype=np.longdouble)
    conv = np.ones(1, dtype=np.longdouble)
    for k in range(1, top + 1):
        conv = np.convolve(conv, off)
        if p[k] > prune:
            out[: len(conv)] += p[k] * conv
    return out


def exact_pmf_chain(
    ancestor_pmf: Union[Mapping[int, float], object],
    law: OffspringLaw,
    n_max: int,
    max_support: int = MAX_SUPPORT,
    prune: float = 0.0,
) -> ExactChain:
    """pmfs of Z_0..Z_{n_max}.

    ``ancestor_pmf`` is a ``{count: prob}`` mapping or an ancestor law with a
    finite-support ``pmf()``.  ``prune`` skips parent counts whose probability
    is at or below it (0 keeps the computation exact).
    """
    if not isinstance(law, (BetaBernoulli, DegenerateGW)):
        raise ParameterError("exact chains need BetaBernoulli or DegenerateGW offspring")
    p = _ancestor_array(ancestor_pmf)
    growth = 2 if isinstance(law, BetaBernoulli) else len(law.pmf)
    if (len(p) - 1) * growth**n_max > max_support:
        raise OracleSizeError(
            f"support would reach {(len(p) - 1) * growth ** n_max} > {max_support}; lower n_max"
        )
    pmfs = [p]
    for _ in range(n_max):
        p = _step(p, law, prune)
        if prune == 0 and abs(float(p.sum()) - 1) > PMF_SUM_TOL:
            raise ArithmeticError("pmf lost normalization")
        pmfs.append(p)
    anc = {int(k): float(v) for k, v in enumerate(pmfs[0]) if v > 0}
    return ExactChain(law, anc, tuple(pmfs))


@dataclass(frozen=True)
class Functionals:
    """Per-generation mean, variance and harmonic moment E[1/Z_l].

    ``lam_partial[n]`` is sum_{l<n} E[1/Z_l].  ``lam`` adds a geometric tail
    fitted to the last three generations; ``lam_bound`` uses the largest of
    the last two ratios and is reported with every ``lam``.
    """

    mean: np.ndarray
    variance: np.ndarray
    inv_mean: np.ndarray
    lam_partial: np.ndarray
    lam: Optional[float]
    lam_bound: Optional[float]
    tail_ratio: Optional[float]
    se: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "inv_mean": self.inv_mean.tolist(),
            "lam_partial": self.lam_partial.tolist(),
            "lam": self.lam,
            "lam_bound": self.lam_bound,
            "tail_ratio": self.tail_ratio,
        }
        if self.se is not None:
            out["se"] = {k: v.tolist() for k, v in self.se.items()}
        return out


def _geometric_tail(inv: np.ndarray):
    if len(inv) < 3 or inv[-1] == 0:
        return None, None, None
    ratios = inv[-2:] / inv[-3:-1]
    if np.any(ratios >= 1) or np.any(ratios <= 0):
        return None, None, None
    rho = float(np.sqrt(ratios[0] * ratios[1]))
    hi = float(ratios.max())
    total = float(inv.sum())
    return total + inv[-1] * rho / (1 - rho), total + inv[-1] * hi / (1 - hi), rho


def _functionals(mean, var, inv, se=None) -> Functionals:
    lam_partial = np.concatenate([[0.0], np.cumsum(inv)])
    lam, bound, rho = _geometric_tail(inv)
    return Functionals(mean, var, inv, lam_partial, lam, bound, rho, se)


def exact_functionals(chain: ExactChain) -> Functionals:
    mean, var, inv = [], [], []
    for p in chain.pmfs:
        k = np.arange(len(p), dtype=np.longdouble)
        mu = (k * p).sum()
        mean.append(float(mu))
        var.append(float(((k - mu) ** 2 * p).sum()))
        inv.append(float((p[1:] / k[1:]).sum()))
    return _functionals(np.array(mean), np.array(var), np.array(inv))


def mc_functionals(law: OffspringLaw, ancestor, n: int, paths: int = 10**7, seed: int = 0, chunk: int = 10**6) -> Functionals:
    """Monte Carlo functionals with standard errors in ``se``.

    Paths are simulated in chunks of ``chunk`` replicates, chunk ``i`` using
    seed stream ``(seed, i)``; results are reproducible for a fixed chunk size.
    """
    if paths < 2:
        raise ParameterError("need at least two paths")
    s1 = np.zeros(n + 1)
    s2 = np.zeros(n + 1)
    h1 = np.zeros(n + 1)
    h2 = np.zeros(n + 1)
    done = 0
    i = 0
    while done < paths:
        size = min(chunk, paths - done)
        sub = int(np.random.SeedSequence([int(seed), i]).generate_state(2, np.uint64).view(np.int64)[0])
        z = simulate_panel(SimConfig(size, n, sub), law, ancestor).z.astype(float)
        s1 += z.sum(0)
        s2 += (z * z).sum(0)
        h1 += (1 / z).sum(0)
        h2 += (1 / z**2).sum(0)
        done += size
        i += 1
    mean = s1 / paths
    var = (s2 - paths * mean**2) / (paths - 1)
    inv = h1 / paths
    inv_var = (h2 - paths * inv**2) / (paths - 1)
    se = {"mean": np.sqrt(var / paths), "inv_mean": np.sqrt(inv_var / paths)}
    return _functionals(mean, var, inv, se)


def harmonic_sums_for(
    law: OffspringLaw,
    ancestor,
    tau: int,
    source: str = "ancestor",
    budget: int = 1 << 13,
    mc_paths: int = 10**6,
    seed: int = 0,
) -> tuple[float, float, float]:
    """(lam, lam_tau, lam_bound) for the case-i variance correction.

    ``source="ancestor"`` starts the chain from the ancestor law;
    ``source="single"`` starts it from one ancestor.
    """
    if source not in ("ancestor", "single"):
        raise ParameterError("source must be 'ancestor' or 'single'")
    start = ancestor if source == "ancestor" else Constant(1)
    if isinstance(law, GammaPoisson):
        f = mc_functionals(law, start, max(tau, 8), paths=mc_paths, seed=seed)
    else:
        top = len(_ancestor_array(start)) - 1
        growth = 2 if isinstance(law, BetaBernoulli) else len(law.pmf)
        n_max = 2
        while top * growth ** (n_max + 1) <= budget:
            n_max += 1
        f = exact_functionals(exact_pmf_chain(start, law, n_max, max_support=max(budget, top * growth**n_max)))
    if f.lam is None:
        # deterministic growth to a constant or a flat chain: no tail to extrapolate
        lam = bound = float(f.inv_mean.sum())
    else:
        lam, bound = f.lam, f.lam_bound
    if tau < len(f.lam_partial):
        lam_tau = float(f.lam_partial[tau])
    else:
        extra = tau - (len(f.inv_mean) - 1)
        rho = f.tail_ratio or 0.0
        tail_from_tau = f.inv_mean[-1] * rho**extra / (1 - rho)
        lam_tau = lam - tail_from_tau
    return lam, lam_tau, bound
