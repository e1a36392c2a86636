"""Simulation of replicated branching processes in i.i.d. random environments.

Random streams
--------------
Every random draw comes from a ``numpy`` PCG64 generator seeded by
``SeedSequence(seed, spawn_key=key)``.  The key identifies what the stream is
used for: ``(0, block)`` for the ancestors of a block of replicates and
``(1, block, generation)`` for one generation of that block.  Blocks hold
``REPLICATE_BLOCK`` consecutive replicates, so the result depends only on
``(seed, J, n, laws)`` and never on how many workers process the blocks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CountOverflowError, ParameterError
from .laws import AncestorLaw, BetaBernoulli, DegenerateGW, GammaPoisson, OffspringLaw
from .panel import Panel

REPLICATE_BLOCK = 1024
INT64_MAX = np.iinfo(np.int64).max
_SEED_MASK = (1 << 64) - 1

ANCESTOR_STREAM = 0
GENERATION_STREAM = 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed) & _SEED_MASK, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimConfig:
    J: int
    n: int
    seed: int

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise ParameterError(f"J must be a positive integer, got {self.J!r}")
        if int(self.n) != self.n or self.n < 0:
            raise ParameterError(f"n must be a nonnegative integer, got {self.n!r}")


def _checked_add(sizes: np.ndarray, inc: np.ndarray) -> np.ndarray:
    if np.any(inc > INT64_MAX - sizes):
        raise CountOverflowError(
            "population count exceeds the 64-bit range; simulate fewer generations"
        )
    return sizes + inc


def step_generation(sizes, law: OffspringLaw, rng: np.random.Generator) -> np.ndarray:
    """Advance each replicate by one generation.

    One environment is drawn per replicate, then the total offspring of all
    ``sizes[j]`` parents is drawn given that environment.  Because every law
    is ``1 + X``, the total is ``Z + (sum of Z draws of X)`` which is exactly
    Binomial(Z, p) or Poisson(Z * lam).
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if np.any(sizes < 1):
        raise ParameterError("all current sizes must be >= 1")
    if isinstance(law, BetaBernoulli):
        p = law.sample_environment(rng, sizes.shape)
        inc = rng.binomial(sizes, p)
    elif isinstance(law, GammaPoisson):
        lam = law.sample_environment(rng, sizes.shape)
        rate = sizes * lam
        # numpy's Poisson sampler rejects rates near the int64 limit
        if np.any(rate > 1e18):
            raise CountOverflowError(
                "population count exceeds the 64-bit range; simulate fewer generations"
            )
        inc = rng.poisson(rate)
    elif isinstance(law, DegenerateGW):
        counts = rng.multinomial(sizes, law.pmf)
        # counts[..., k] parents had k + 1 offspring, i.e. k extra each
        inc = np.zeros_like(sizes)
        for k in range(1, len(law.pmf)):
            part = counts[..., k].astype(np.int64)
            if np.any(part > (INT64_MAX - inc) // k):
                raise CountOverflowError(
                    "population count exceeds the 64-bit range; simulate fewer generations"
                )
            inc = inc + part * k
    else:
        raise ParameterError(f"unknown offspring law {law!r}")
    return _checked_add(sizes, np.asarray(inc, dtype=np.int64))


def _simulate_block(cfg: SimConfig, offspring, ancestor, block: int) -> np.ndarray:
    start = block * REPLICATE_BLOCK
    rows = min(REPLICATE_BLOCK, cfg.J - start)
    out = np.empty((rows, cfg.n + 1), dtype=np.int64)
    out[:, 0] = ancestor.sample(substream(cfg.seed, ANCESTOR_STREAM, block), rows)
    for gen in range(1, cfg.n + 1):
        rng = substream(cfg.seed, GENERATION_STREAM, block, gen)
        out[:, gen] = step_generation(out[:, gen - 1], offspring, rng)
    return out


def simulate_panel(
    cfg: SimConfig, offspring: OffspringLaw, ancestor: AncestorLaw, workers: int = 1
) -> Panel:
    """Simulate ``cfg.J`` replicates over generations ``0..cfg.n``."""
    blocks = range((cfg.J + REPLICATE_BLOCK - 1) // REPLICATE_BLOCK)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _simulate_block(cfg, offspring, ancestor, b), blocks))
    else:
        parts = [_simulate_block(cfg, offspring, ancestor, b) for b in blocks]
    z = np.concatenate(parts, axis=0)
    assert np.all(np.diff(z, axis=1) >= 0), "offspring >= 1 forces nondecreasing rows"
    return Panel(z, 0, offspring, ancestor, int(cfg.seed))
