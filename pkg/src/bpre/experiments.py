"""Monte Carlo studies of estimator accuracy and interval coverage.

Four study kinds are supported:

``replication``
    Point estimate, replicate-scatter variance, Gaussian/t intervals,
    optional bootstrap and the observed-ancestor benchmark for one window.
``relative``
    Ratio of a target and a calibrator group's ancestor means.
``schemes``
    Bootstrap variance and coverage for the windows of the three sampling
    schemes, all evaluated on the same simulated panels.
``learning``
    Monte Carlo variance of the whole-window, early-split and late-split
    ancestor estimates for each scheme window.

Simulation ``i`` at replicate count ``J`` draws its panel seed from
``SeedSequence(seed, spawn_key=(J, i))``, so aggregates do not depend on the
number of worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bootstrap import bootstrap_ci, bootstrap_ratio
from .errors import EstimationError, ParameterError
from .estimators import SplitWindow, Window, estimate_ratio, estimate_split, estimate_window
from .laws import (
    ancestor_from_dict,
    ancestor_moments,
    offspring_from_dict,
    offspring_moments,
)
from .simulate import SimConfig, simulate_panel, substream
from .variance import build_ci, empirical_variance, exact_finite_variances, ratio_variance

STUDIES = ("replication", "relative", "schemes", "learning")
DEFAULT_J_GRID = (5, 10, 20, 30, 40, 50)
DEFAULT_SCHEMES = {"case_i": {"tau": 1}, "case_ii": {"delta": 2}, "case_iii": {"fraction": 0.5}}
DESK_SIMS = 2000
PAPER_SIMS = 5000
BOOTSTRAP_STREAM = 2


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    study: str
    offspring: dict
    ancestor: dict
    n: int
    tau: int = 0
    J_grid: tuple = DEFAULT_J_GRID
    n_sims: int = DESK_SIMS
    B: int = 0
    level: float = 0.95
    seed: int = 0
    schemes: Optional[dict] = None
    calibrator_ancestor: Optional[dict] = None
    calibrator_offspring: Optional[dict] = None
    paper_literal_bootstrap: bool = False

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ParameterError(f"study must be one of {STUDIES}, got {self.study!r}")
        if self.n_sims < 1:
            raise ParameterError("n_sims must be >= 1")
        if not self.J_grid or any(int(J) != J or J < 2 for J in self.J_grid):
            raise ParameterError("J_grid needs integers >= 2")
        if not 0 < self.level < 1:
            raise ParameterError("level must lie in (0, 1)")
        if self.B and self.B < 2:
            raise ParameterError("B must be 0 (no bootstrap) or >= 2")
        if self.study in ("schemes", "learning"):
            object.__setattr__(self, "schemes", dict(self.schemes or DEFAULT_SCHEMES))
            for case in self.schemes:
                w = scheme_window(case, self.n, self.schemes[case])
                if w.n <= w.tau:
                    raise ParameterError(f"{case} window is empty")
                if self.study == "learning" and split_for(w).tau2 >= w.n:
                    raise ParameterError(f"{case} window is too short to split")
            if self.study == "schemes" and self.B < 2:
                raise ParameterError("the schemes study compares bootstrap variances; set B >= 2")
        else:
            Window(self.tau, self.n)
            if self.n <= self.tau:
                raise ParameterError("need n > tau")
        if self.study == "relative" and self.calibrator_ancestor is None:
            raise ParameterError("the relative study needs calibrator_ancestor")
        offspring_from_dict(self.offspring)
        ancestor_from_dict(self.ancestor)
        object.__setattr__(self, "J_grid", tuple(int(J) for J in self.J_grid))

    @classmethod
    def from_dict(cls, d: dict, exact_paper: bool = False) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known - {"J"}
        if unknown:
            raise ParameterError(f"unknown spec fields: {sorted(unknown)}")
        d = dict(d)
        if "J" in d:
            d["J_grid"] = d.pop("J")
        if exact_paper:
            d["n_sims"] = PAPER_SIMS
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(str(exc)) from None

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["J_grid"] = list(self.J_grid)
        return out


def scheme_window(case: str, n: int, params: dict) -> Window:
    """Window for a sampling scheme at last generation ``n``.

    ``case_i`` fixes ``tau``; ``case_ii`` fixes the length ``delta = n - tau``;
    ``case_iii`` puts ``tau`` at ``floor(fraction * n)``.
    """
    if case == "case_i":
        tau = int(params["tau"])
    elif case == "case_ii":
        tau = n - int(params["delta"])
    elif case == "case_iii":
        tau = int(math.floor(float(params.get("fraction", 0.5)) * n))
    else:
        raise ParameterError(f"unknown scheme {case!r}")
    return Window(tau, n, case)


def split_for(w: Window) -> SplitWindow:
    """Split point halfway through the window."""
    return SplitWindow(w.tau, (w.tau + w.n) // 2, w.n)


def sim_seed(master: int, J: int, i: int, stream: int = 0) -> int:
    ss = np.random.SeedSequence(int(master) & ((1 << 64) - 1), spawn_key=(J, i, stream))
    return int(ss.generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# per-simulation work
# --------------------------------------------------------------------------


def _intervals(prefix: str, point: float, var: float, J: int, level: float, truth: float, out: dict):
    for tag, method in (("G", "gaussian"), ("t", "student_t")):
        ci = build_ci(point, var, J, method, level)
        out[f"{prefix}{tag}_cover"] = float(ci.covers(truth))
        out[f"{prefix}{tag}_len"] = ci.length


def _replication_sim(spec: ExperimentSpec, J: int, i: int, truth: float) -> dict:
    off, anc = offspring_from_dict(spec.offspring), ancestor_from_dict(spec.ancestor)
    seed = sim_seed(spec.seed, J, i)
    panel = simulate_panel(SimConfig(J, spec.n, seed), off, anc)
    out: dict = {}
    z0 = panel.z[:, 0].astype(float)
    out["z0_mean"] = float(z0.mean())
    out["z0_var"] = float(z0.var(ddof=1) / J)
    _intervals("z0_", out["z0_mean"], out["z0_var"], J, spec.level, truth, out)
    w = Window(spec.tau, spec.n)
    try:
        est = estimate_window(panel, w)
    except EstimationError:
        out["failed"] = 1.0
        return out
    out["failed"] = 0.0
    rep = empirical_variance(panel, w, est)
    out["m_hat"] = est.m_hat
    out["mA_hat"] = est.mA_hat
    out["lambda_hat"] = rep.lambda_hat
    _intervals("", est.mA_hat, rep.lambda_hat, J, spec.level, truth, out)
    if spec.B:
        try:
            b = bootstrap_ci(panel, w, spec.B, spec.level, substream(seed, BOOTSTRAP_STREAM), spec.paper_literal_bootstrap)
        except EstimationError:
            out["boot_failed"] = 1.0
        else:
            out["boot_failed"] = 0.0
            out["boot_mean"] = b.mean_mA
            out["boot_var"] = b.var_B
            out["boot_cover"] = float(b.ci.covers(truth))
            out["boot_len"] = b.ci.length
    return out


def _relative_sim(spec: ExperimentSpec, J: int, i: int, truth: float) -> dict:
    off_T = offspring_from_dict(spec.offspring)
    off_C = offspring_from_dict(spec.calibrator_offspring or spec.offspring)
    anc_T, anc_C = ancestor_from_dict(spec.ancestor), ancestor_from_dict(spec.calibrator_ancestor)
    seed_T, seed_C = sim_seed(spec.seed, J, i, 0), sim_seed(spec.seed, J, i, 1)
    pT = simulate_panel(SimConfig(J, spec.n, seed_T), off_T, anc_T)
    pC = simulate_panel(SimConfig(J, spec.n, seed_C), off_C, anc_C)
    w = Window(spec.tau, spec.n)
    out: dict = {}
    try:
        eT, eC = estimate_window(pT, w), estimate_window(pC, w)
    except EstimationError:
        out["failed"] = 1.0
        return out
    out["failed"] = 0.0
    R = estimate_ratio(eT, eC)
    vT = empirical_variance(pT, w, eT).per_replicate_var
    vC = empirical_variance(pC, w, eC).per_replicate_var
    lam_R = ratio_variance(R, eT, eC, vT, vC, J)
    out["R_hat"] = R
    out["lambda_R_hat"] = lam_R
    _intervals("", R, lam_R, J, spec.level, truth, out)
    if spec.B:
        try:
            b = bootstrap_ratio(pT, pC, w, spec.B, spec.level, substream(seed_T, BOOTSTRAP_STREAM))
        except EstimationError:
            out["boot_failed"] = 1.0
        else:
            out["boot_failed"] = 0.0
            out["boot_mean"] = b.mean_mA
            out["boot_var"] = b.var_B
            out["boot_cover"] = float(b.ci.covers(truth))
            out["boot_len"] = b.ci.length
    return out


def _multi_window_sim(spec: ExperimentSpec, J: int, i: int, truth: float) -> dict:
    off, anc = offspring_from_dict(spec.offspring), ancestor_from_dict(spec.ancestor)
    seed = sim_seed(spec.seed, J, i)
    panel = simulate_panel(SimConfig(J, spec.n, seed), off, anc)
    out: dict = {}
    failed = 0.0
    for case, params in spec.schemes.items():
        w = scheme_window(case, spec.n, params)
        try:
            est = estimate_window(panel, w)
        except EstimationError:
            failed = 1.0
            continue
        out[f"{case}:mA_hat"] = est.mA_hat
        if spec.study == "schemes":
            rep = empirical_variance(panel, w, est)
            out[f"{case}:lambda_hat"] = rep.lambda_hat
            ci = build_ci(est.mA_hat, rep.lambda_hat, J, "gaussian", spec.level)
            out[f"{case}:G_cover"] = float(ci.covers(truth))
            try:
                rng = substream(seed, BOOTSTRAP_STREAM, sorted(spec.schemes).index(case))
                b = bootstrap_ci(panel, w, spec.B, spec.level, rng, spec.paper_literal_bootstrap)
            except EstimationError:
                out[f"{case}:boot_failed"] = 1.0
            else:
                out[f"{case}:boot_failed"] = 0.0
                out[f"{case}:boot_var"] = b.var_B
                out[f"{case}:boot_cover"] = float(b.ci.covers(truth))
                out[f"{case}:boot_len"] = b.ci.length
        else:
            sw = split_for(w)
            for mode in ("early_m", "late_m"):
                try:
                    _, mA = estimate_split(panel, SplitWindow(sw.tau1, sw.tau2, sw.n, mode))
                except EstimationError:
                    failed = 1.0
                    continue
                out[f"{case}:{mode}"] = mA
    out["failed"] = failed
    return out


_SIM_FUNCS = {
    "replication": _replication_sim,
    "relative": _relative_sim,
    "schemes": _multi_window_sim,
    "learning": _multi_window_sim,
}


def _truth(spec: ExperimentSpec) -> float:
    mA = ancestor_moments(ancestor_from_dict(spec.ancestor)).m_A
    if spec.study == "relative":
        return mA / ancestor_moments(ancestor_from_dict(spec.calibrator_ancestor)).m_A
    return mA


def _run_chunk(args) -> list[dict]:
    spec_dict, J, lo, hi = args
    spec = ExperimentSpec.from_dict(spec_dict)
    f = _SIM_FUNCS[spec.study]
    truth = _truth(spec)
    return [f(spec, J, i, truth) for i in range(lo, hi)]


def run_sims(spec: ExperimentSpec, J: int, workers: int = 1) -> list[dict]:
    """Per-simulation records, in simulation order."""
    chunk = max(1, math.ceil(spec.n_sims / max(1, 4 * workers)))
    tasks = [(spec.to_dict(), J, lo, min(lo + chunk, spec.n_sims)) for lo in range(0, spec.n_sims, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    return [rec for part in parts for rec in part]


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def _mean(records, key) -> float:
    vals = [r[key] for r in records if key in r]
    return math.fsum(vals) / len(vals) if vals else float("nan")


def _mc_var(records, key) -> float:
    vals = np.array([r[key] for r in records if key in r])
    return float(vals.var(ddof=1)) if len(vals) > 1 else float("nan")


def _count(records, key) -> int:
    return int(sum(r.get(key, 0.0) for r in records))


def _theory_lambda(spec: ExperimentSpec, w: Window, J: int) -> float:
    tm = offspring_moments(offspring_from_dict(spec.offspring))
    am = ancestor_moments(ancestor_from_dict(spec.ancestor))
    return exact_finite_variances(tm, am, w, J)[1]


def _theory_lambda_R(spec: ExperimentSpec, J: int) -> float:
    w = Window(spec.tau, spec.n)
    out = 0.0
    for off_d, anc_d in (
        (spec.offspring, spec.ancestor),
        (spec.calibrator_offspring or spec.offspring, spec.calibrator_ancestor),
    ):
        tm = offspring_moments(offspring_from_dict(off_d))
        am = ancestor_moments(ancestor_from_dict(anc_d))
        out += exact_finite_variances(tm, am, w, J)[1] / am.m_A**2
    return _truth(spec) ** 2 * out


def _interval_cols(records, prefix: str, label: str) -> dict:
    return {
        f"{label}G_CR": _mean(records, f"{prefix}G_cover"),
        f"{label}G_ML": _mean(records, f"{prefix}G_len"),
        f"{label}t_CR": _mean(records, f"{prefix}t_cover"),
        f"{label}t_ML": _mean(records, f"{prefix}t_len"),
    }


def _boot_cols(records, prefix: str = "") -> dict:
    return {
        "B_mean": _mean(records, f"{prefix}boot_mean"),
        "B_var": _mean(records, f"{prefix}boot_var"),
        "B_CR": _mean(records, f"{prefix}boot_cover"),
        "B_ML": _mean(records, f"{prefix}boot_len"),
        "B_failed": _count(records, f"{prefix}boot_failed"),
    }


def aggregate(spec: ExperimentSpec, J: int, records: list[dict]) -> list[dict]:
    """Summary rows for one J.  Coverage and lengths average over non-failed sims."""
    base = {"study": spec.study, "J": J, "sims": len(records), "failed": _count(records, "failed")}
    if spec.study == "replication":
        row = dict(base, series="window")
        row.update(
            mA_mean=_mean(records, "mA_hat"),
            m_mean=_mean(records, "m_hat"),
            lambda_hat=_mean(records, "lambda_hat"),
            lambda_exact=_theory_lambda(spec, Window(spec.tau, spec.n), J),
            mA_mc_var=_mc_var(records, "mA_hat"),
        )
        row.update(_interval_cols(records, "", ""))
        if spec.B:
            row.update(_boot_cols(records))
        row.update(z0_mean=_mean(records, "z0_mean"), z0_var=_mean(records, "z0_var"))
        row.update(_interval_cols(records, "z0_", "z0_"))
        return [row]
    if spec.study == "relative":
        row = dict(base, series="ratio")
        row.update(
            R_mean=_mean(records, "R_hat"),
            lambda_R_hat=_mean(records, "lambda_R_hat"),
            lambda_R=_theory_lambda_R(spec, J),
            R_mc_var=_mc_var(records, "R_hat"),
        )
        row.update(_interval_cols(records, "", ""))
        if spec.B:
            row.update(_boot_cols(records))
        return [row]
    rows = []
    for case, params in spec.schemes.items():
        w = scheme_window(case, spec.n, params)
        row = dict(base, series=case, tau=w.tau, n=w.n)
        row.update(mA_mean=_mean(records, f"{case}:mA_hat"))
        if spec.study == "schemes":
            row.update(
                lambda_hat=_mean(records, f"{case}:lambda_hat"),
                lambda_exact=_theory_lambda(spec, w, J),
                G_CR=_mean(records, f"{case}:G_cover"),
            )
            row.update(_boot_cols(records, f"{case}:"))
            del row["B_mean"]
        else:
            sw = split_for(w)
            row.update(
                tau2=sw.tau2,
                var_whole=_mc_var(records, f"{case}:mA_hat"),
                var_early=_mc_var(records, f"{case}:early_m"),
                var_late=_mc_var(records, f"{case}:late_m"),
                mean_early=_mean(records, f"{case}:early_m"),
                mean_late=_mean(records, f"{case}:late_m"),
            )
        rows.append(row)
    return rows


@dataclass
class StudyReport:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)

    def row(self, J: int, series: Optional[str] = None) -> dict:
        for r in self.rows:
            if r["J"] == J and (series is None or r["series"] == series):
                return r
        raise KeyError((J, series))

    @property
    def columns(self) -> list:
        cols: list = []
        for r in self.rows:
            cols.extend(c for c in r if c not in cols)
        return cols


def run_replication_study(spec: ExperimentSpec, workers: int = 1) -> StudyReport:
    """Run every J of the grid and aggregate (works for all study kinds)."""
    report = StudyReport(spec)
    for J in spec.J_grid:
        report.rows.extend(aggregate(spec, J, run_sims(spec, J, workers)))
    return report


run_study = run_replication_study


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _fmt_short(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.4g}"
    return str(x)


def rows_to_csv(rows: list[dict], columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def rows_to_text(rows: list[dict], columns: list) -> str:
    """Markdown pipe table with padded columns."""
    cells = [[str(c) for c in columns]] + [[_fmt_short(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["| " + " | ".join(v.rjust(wd) for v, wd in zip(row, widths)) + " |" for row in cells]
    lines.insert(1, "|" + "|".join("-" * (wd + 2) for wd in widths) + "|")
    return "\n".join(lines) + "\n"


def plot_tables(rows: list[dict], metrics: list) -> dict:
    """TSV per metric: first column J, one column per series."""
    series = []
    for r in rows:
        if r["series"] not in series:
            series.append(r["series"])
    Js = sorted({r["J"] for r in rows})
    out = {}
    for metric in metrics:
        if not any(metric in r for r in rows):
            continue
        lines = ["\t".join(["J"] + series)]
        for J in Js:
            vals = []
            for s in series:
                hit = [r for r in rows if r["J"] == J and r["series"] == s]
                vals.append(_fmt(hit[0].get(metric, float("nan"))) if hit else "nan")
            lines.append("\t".join([str(J)] + vals))
        out[metric] = "\n".join(lines) + "\n"
    return out


_COMPARISON_COLUMNS = {
    "schemes": ["B_var", "B_CR", "B_ML", "G_CR", "lambda_exact"],
    "learning": ["var_whole", "var_early", "var_late"],
    "relative": [
        "R_mean", "lambda_R_hat", "lambda_R", "G_CR", "G_ML", "t_CR", "t_ML",
        "B_mean", "B_var", "B_CR", "B_ML",
    ],
    "replication": [
        "mA_mean", "lambda_hat", "lambda_exact", "G_CR", "G_ML", "t_CR", "t_ML",
        "B_mean", "B_var", "B_CR", "B_ML", "z0_mean", "z0_var",
        "z0_G_CR", "z0_G_ML", "z0_t_CR", "z0_t_ML",
    ],
}


@dataclass
class Summary:
    csv: str
    text: str
    tsv: dict

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        (outdir / "plots").mkdir(parents=True, exist_ok=True)
        (outdir / "report.csv").write_text(self.csv)
        (outdir / "report.md").write_text(self.text)
        for name, body in self.tsv.items():
            (outdir / "plots" / f"{name}.tsv").write_text(body)


def summarize_study(reports: list[StudyReport], comparison: str) -> Summary:
    """Side-by-side tables for several reports over a common J grid."""
    if comparison not in _COMPARISON_COLUMNS:
        raise ParameterError(f"unknown comparison {comparison!r}")
    if not reports:
        raise ParameterError("no reports to summarize")
    grid = reports[0].spec.J_grid
    laws = (reports[0].spec.offspring, reports[0].spec.ancestor)
    for r in reports[1:]:
        if r.spec.J_grid != grid:
            raise ParameterError("reports have mismatched J grids")
        if (r.spec.offspring, r.spec.ancestor) != laws:
            raise ParameterError("reports have mismatched laws")
    rows = []
    for rep in reports:
        prefix = f"{rep.spec.name}:" if len(reports) > 1 else ""
        for r in rep.rows:
            rows.append(dict(r, series=prefix + str(r["series"])))
    metrics = _COMPARISON_COLUMNS[comparison]
    cols = ["J", "series", "sims", "failed"] + [c for c in metrics if any(c in r for r in rows)]
    extra = [c for c in reports[0].columns if c not in cols and c != "study"]
    all_cols = cols + extra
    title = f"# {', '.join(r.spec.name for r in reports)} ({comparison})\n\n"
    return Summary(rows_to_csv(rows, all_cols), title + rows_to_text(rows, cols), plot_tables(rows, metrics))


def spec_lock(spec: ExperimentSpec) -> str:
    from . import __version__

    body = {"spec": spec.to_dict(), "seed": spec.seed, "version": __version__}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def write_study(report: StudyReport, outdir) -> Summary:
    summary = summarize_study([report], report.spec.study)
    summary.write(outdir)
    (Path(outdir) / "spec.lock.json").write_text(spec_lock(report.spec))
    return summary
