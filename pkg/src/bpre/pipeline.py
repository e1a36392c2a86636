"""qPCR and epidemic-series ingestion, window detection and relative quantitation.

Series CSVs have the header ``replicate,index,value``.  For qPCR the index is
the cycle and the value the fluorescence ``F = c Z``; for epidemic data the
index is the week (generation number) and the value the cumulative count.
Windows are detected on the raw values, so the conversion constant ``c``
changes only the ancestor-mean scale, never the windows or ratios.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataValidationError, EstimationError, ParameterError
from .estimators import (
    Window,
    estimate_replicate_windows,
    estimate_window,
)
from .panel import Panel
from .variance import build_ci, ratio_variance

SCHEMA_VERSION = "1.0"
SERIES_HEADER = ("replicate", "index", "value")
KINDS = ("pcr_fluorescence", "covid_cumulative")


@dataclass(frozen=True, eq=False)
class SeriesTable:
    """Replicate series on a common index grid; ``values[j, i]`` is replicate j at ``index[i]``."""

    kind: str
    labels: tuple
    index: np.ndarray
    values: np.ndarray
    group: str = ""
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        if not self.c > 0:
            raise ParameterError("the conversion constant c must be positive")

    @property
    def counts(self) -> np.ndarray:
        return self.values / self.c

    def series(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.index, self.values[j]

    def __len__(self) -> int:
        return len(self.labels)


def load_series_csv(path, kind: str, c: float = 1.0, group: Optional[str] = None) -> SeriesTable:
    """Parse and validate a ``replicate,index,value`` CSV."""
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}")
    path = Path(path)
    rows: dict[str, list[tuple[int, float, int]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and tuple(h.strip() for h in header) != SERIES_HEADER:
            raise DataValidationError(f"{path}: expected header {','.join(SERIES_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not s.strip() for s in rec):
                continue
            if len(rec) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            rep = rec[0].strip()
            try:
                idx = int(rec[1])
                val = float(rec[2])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: index must be an integer and value a number") from None
            if not math.isfinite(val) or val < 0:
                raise DataValidationError(f"{path}:{lineno}: negative or non-finite value {rec[2].strip()!r}")
            seq = rows.setdefault(rep, [])
            if seq and idx <= seq[-1][0]:
                raise DataValidationError(
                    f"{path}:{lineno}: index {idx} for replicate {rep!r} is not increasing"
                )
            if kind == "covid_cumulative" and seq and val < seq[-1][1]:
                raise DataValidationError(
                    f"{path}:{lineno}: cumulative count for replicate {rep!r} decreases at week {idx}"
                )
            seq.append((idx, val, lineno))
    if not rows:
        raise DataValidationError(f"{path}: no rows")
    labels = tuple(rows)
    index = np.array([i for i, _, _ in rows[labels[0]]], dtype=np.int64)
    for rep in labels[1:]:
        other = [i for i, _, _ in rows[rep]]
        if other != index.tolist():
            raise DataValidationError(
                f"{path}:{rows[rep][0][2]}: replicate {rep!r} has a different index set than {labels[0]!r} (ragged replicates)"
            )
    values = np.array([[v for _, v, _ in rows[r]] for r in labels], dtype=float)
    return SeriesTable(kind, labels, index, values, group or path.stem, float(c))


@dataclass(frozen=True)
class ReplicateWindow:
    replicate: str
    tau1: int
    tau2: int

    def __post_init__(self):
        if not self.tau1 < self.tau2:
            raise ParameterError("window start must precede its end")

    def to_dict(self) -> dict:
        return {"replicate": self.replicate, "start": self.tau1, "end": self.tau2}


def _growth_run_end(index, values, start: int, threshold: float) -> Optional[int]:
    """Last position p > start with values[k]/values[k-1] >= threshold for all k in start+1..p."""
    end = None
    for k in range(start + 1, len(values)):
        if values[k - 1] <= 0 or values[k] / values[k - 1] < threshold:
            break
        end = k
    return end


def detect_window_pcr(index, values, F_star: float, m_c: float, replicate: str = "") -> ReplicateWindow:
    """Exponential phase of one amplification curve.

    Starts at the first cycle whose fluorescence reaches ``F_star`` and ends
    at the last cycle of the unbroken run of cycle-to-cycle ratios ``>= m_c``.
    """
    if not F_star > 0:
        raise ParameterError("F_star must be positive")
    if not m_c > 1:
        raise ParameterError("m_c must exceed 1")
    index, values = np.asarray(index), np.asarray(values, dtype=float)
    hits = np.nonzero(values >= F_star)[0]
    if len(hits) == 0:
        raise EstimationError(f"replicate {replicate!r}: no exponential phase (never reaches F*={F_star})")
    start = int(hits[0])
    end = _growth_run_end(index, values, start, m_c)
    if end is None:
        raise EstimationError(f"replicate {replicate!r}: no exponential phase (no growth step >= {m_c})")
    return ReplicateWindow(replicate, int(index[start]), int(index[end]))


def detect_window_covid(index, values, T1: float, r1: float, r2: float, replicate: str = "") -> ReplicateWindow:
    """Stable-growth window of one cumulative case series.

    Starts at the first week with at least ``T1`` cases whose next-week ratio
    is at most ``r1``; ends at the last week of the unbroken run of weekly
    ratios ``>= r2``.
    """
    if not T1 > 0:
        raise ParameterError("T1 must be positive")
    if not r1 > r2 > 1:
        raise ParameterError("need r1 > r2 > 1")
    index, values = np.asarray(index), np.asarray(values, dtype=float)
    start = None
    for l in range(len(values) - 1):
        if values[l] >= T1 and values[l + 1] / values[l] <= r1:
            start = l
            break
    if start is None:
        raise EstimationError(f"replicate {replicate!r}: no stable growth window")
    end = _growth_run_end(index, values, start, r2)
    if end is None:
        raise EstimationError(f"replicate {replicate!r}: no stable growth window")
    return ReplicateWindow(replicate, int(index[start]), int(index[end]))


@dataclass
class GroupResult:
    name: str
    windows: list
    excluded: list
    estimate: Optional[object] = None
    raw_mA: float = float("nan")
    m_se: float = float("nan")
    per_replicate_var: float = float("nan")
    lambda_hat: float = float("nan")
    J: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "J": self.J,
            "windows": [w.to_dict() for w in self.windows],
            "excluded": [{"replicate": r, "reason": why} for r, why in self.excluded],
            "estimates": self.estimate.to_dict() if self.estimate is not None else None,
            "m_se": self.m_se,
            "mA_var": self.lambda_hat,
            "per_replicate_var": self.per_replicate_var,
        }


@dataclass
class QuantReport:
    kind: str
    mode: str
    params: dict
    target: GroupResult
    calibrator: GroupResult
    R_hat: float
    lambda_R_hat: float
    ci: object
    external_methods: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "mode": self.mode,
            "params": self.params,
            "groups": {"target": self.target.to_dict(), "calibrator": self.calibrator.to_dict()},
            "R_hat": self.R_hat,
            "lambda_R_hat": self.lambda_R_hat,
            "ci": self.ci.to_dict(),
            "external_methods": self.external_methods,
        }

    def to_text(self) -> str:
        lines = [f"Relative quantitation ({self.kind}, {self.mode} windows)", ""]
        for g in (self.target, self.calibrator):
            lines.append(f"{g.name}: J={g.J}")
            lines.append(f"  {'replicate':<16}{'start':>8}{'end':>8}")
            for w in g.windows:
                lines.append(f"  {w.replicate:<16}{w.tau1:>8}{w.tau2:>8}")
            for rep, why in g.excluded:
                lines.append(f"  excluded {rep}: {why}")
            e = g.estimate
            lines.append(f"  m_hat={e.m_hat:.4f} (se {g.m_se:.4f})  mA_hat={e.mA_hat:.6g} (var {g.lambda_hat:.6g})")
            lines.append("")
        lines.append(f"R_hat={self.R_hat:.4f}  var={self.lambda_R_hat:.6g}")
        lines.append(f"{self.ci.level:.0%} {self.ci.method} CI: ({self.ci.lower:.4f}, {self.ci.upper:.4f})")
        return "\n".join(lines) + "\n"


def _detect(table: SeriesTable, detector) -> tuple[list, list]:
    windows, excluded = [], []
    for j, label in enumerate(table.labels):
        try:
            windows.append((j, detector(table.index, table.values[j], label)))
        except EstimationError as exc:
            excluded.append((label, str(exc).split(": ", 1)[-1]))
    return windows, excluded


def _estimate_group(table: SeriesTable, detector, mode: str) -> GroupResult:
    found, excluded = _detect(table, detector)
    res = GroupResult(table.group, [w for _, w in found], excluded, J=len(found))
    if len(found) < 2:
        names = ", ".join(r for r, _ in excluded) or "none"
        raise EstimationError(
            f"group {table.group!r}: only {len(found)} usable replicate(s); excluded: {names}"
        )
    if np.any(np.diff(table.index) != 1):
        raise DataValidationError(f"group {table.group!r}: indices must be consecutive integers")
    rows = [j for j, _ in found]
    # ratios are scale-free, so estimate on raw values and rescale the ancestor mean by 1/c
    raw = table.values[rows]
    g0 = int(table.index[0])
    if mode == "per_replicate":
        wins = [Window(w.tau1, w.tau2) for _, w in found]
        est = estimate_replicate_windows(raw, wins, g0)
        mean_len = float(np.mean([w.length for w in wins]))
    elif mode == "common":
        tau = max(w.tau1 for _, w in found)
        n = min(w.tau2 for _, w in found)
        if n <= tau:
            raise EstimationError(f"group {table.group!r}: detected windows share no common range")
        panel = Panel(raw[:, tau - g0 : n - g0 + 1], tau)
        est = estimate_window(panel, Window(tau, n))
        mean_len = float(n - tau)
    else:
        raise ParameterError(f"mode must be per_replicate or common, got {mode!r}")
    res.raw_mA = est.mA_hat
    est = replace(est, mA_hat=est.mA_hat / table.c, per_replicate=est.per_replicate / table.c)
    res.estimate = est
    res.m_se = math.sqrt(max(est.sigma2_star_hat, 0.0) / (est.J * mean_len))
    res.per_replicate_var = float(np.var(est.per_replicate, ddof=1))
    res.lambda_hat = res.per_replicate_var / est.J
    return res


def relative_quantify(
    target: SeriesTable,
    calibrator: SeriesTable,
    detector,
    mode: str = "per_replicate",
    level: float = 0.95,
    params: Optional[dict] = None,
) -> QuantReport:
    """Ratio of target to calibrator ancestor means with a Gaussian interval.

    ``detector(index, values, label)`` returns a :class:`ReplicateWindow` or
    raises :class:`EstimationError` to exclude the replicate.
    """
    gT = _estimate_group(target, detector, mode)
    gC = _estimate_group(calibrator, detector, mode)
    R = gT.raw_mA / gC.raw_mA * (calibrator.c / target.c)
    lam_R = ratio_variance(R, gT.estimate, gC.estimate, gT.per_replicate_var, gC.per_replicate_var, (gT.J, gC.J))
    ci = build_ci(R, lam_R, None, "gaussian", level)
    return QuantReport(target.kind, mode, dict(params or {}, level=level), gT, gC, R, lam_R, ci)


def pcr_detector(F_star: float, m_c: float):
    def detect(index, values, label):
        return detect_window_pcr(index, values, F_star, m_c, label)

    return detect


def covid_detector(T1: float, r1: float, r2: float):
    def detect(index, values, label):
        return detect_window_covid(index, values, T1, r1, r2, label)

    return detect
