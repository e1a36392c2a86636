"""Command-line interface: ``bpre <command> ...``.

Exit codes: 0 on success, 2 for invalid input or parameters, 3 when a
statistic is undefined for the data.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bootstrap import bootstrap_ci
from .errors import (
    CountOverflowError,
    DataValidationError,
    EstimationError,
    OracleSizeError,
    ParameterError,
)
from .estimators import SplitWindow, Window, estimate_last_two, estimate_split, estimate_window
from .experiments import ExperimentSpec, run_study, write_study
from .laws import (
    Constant,
    ancestor_from_dict,
    ancestor_moments,
    offspring_from_dict,
    offspring_moments,
)
from .oracle import exact_functionals, exact_pmf_chain, harmonic_sums_for, mc_functionals
from .panel import read_panel_csv, write_panel_csv
from .pipeline import (
    SCHEMA_VERSION,
    covid_detector,
    load_series_csv,
    pcr_detector,
    relative_quantify,
)
from .simulate import SimConfig, simulate_panel, substream
from .variance import asymptotic_constants, empirical_variance, estimate_sigmaA2, exact_finite_variances

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ESTIMATION = 3


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _emit(payload: dict, out=None) -> None:
    body = dict(_clean(payload), schema_version=SCHEMA_VERSION)
    (out or sys.stdout).write(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _emit_text(pairs: dict, out=None) -> None:
    out = out or sys.stdout
    width = max(len(k) for k in pairs)
    for k, v in pairs.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        out.write(f"{k:<{width}}  {v}\n")


def _load_json(arg: str) -> dict:
    """Inline JSON or a path to a JSON file."""
    text = arg
    if not arg.lstrip().startswith("{"):
        try:
            text = Path(arg).read_text()
        except OSError as exc:
            raise DataValidationError(f"cannot read {arg}: {exc.strerror}") from None
    try:
        out = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"invalid JSON in {arg[:40]!r}: {exc.msg}") from None
    if not isinstance(out, dict):
        raise DataValidationError("expected a JSON object")
    return out


def _laws(cfg: dict):
    if "offspring" not in cfg:
        raise ParameterError("config needs an 'offspring' law")
    off = offspring_from_dict(cfg["offspring"])
    anc = ancestor_from_dict(cfg.get("ancestor", {"kind": "constant", "k": 1}))
    return off, anc


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    off, anc = _laws(cfg)
    for key in ("J", "n"):
        if key not in cfg:
            raise ParameterError(f"config needs {key!r}")
    sim = SimConfig(int(cfg["J"]), int(cfg["n"]), int(cfg.get("seed", 0)))
    panel = simulate_panel(sim, off, anc, workers=args.workers)
    write_panel_csv(panel, args.out)
    return EXIT_OK


def _split_arg(text: str) -> tuple[int, int]:
    try:
        t1, t2 = (int(s) for s in text.split(","))
    except ValueError:
        raise ParameterError("--split expects tau1,tau2") from None
    return t1, t2


def cmd_estimate(args) -> int:
    panel = read_panel_csv(args.panel)
    if args.split:
        t1, t2 = _split_arg(args.split)
        sw = SplitWindow(t1, t2, args.n, "early_m" if args.mode == "early" else "late_m")
        m, mA = estimate_split(panel, sw)
        payload = {"mode": sw.mode, "tau1": t1, "tau2": t2, "n": args.n, "m_hat": m, "mA_hat": mA, "J": panel.J}
    else:
        w = Window(args.tau, args.n)
        payload = dict(estimate_window(panel, w).to_dict(), tau=w.tau, n=w.n)
    if args.json:
        _emit(payload)
    else:
        _emit_text(payload)
    return EXIT_OK


def cmd_variance(args) -> int:
    panel = read_panel_csv(args.panel)
    w = Window(args.tau, args.n)
    est = estimate_window(panel, w)
    rep = empirical_variance(panel, w, est)
    payload = dict(rep.to_dict(), mA_hat=est.mA_hat, J=panel.J, tau=w.tau, n=w.n, model=args.model)
    try:
        payload["sigmaA2_hat"] = estimate_sigmaA2(estimate_last_two(panel, w.n), w.n, args.model)
    except EstimationError as exc:
        payload["sigmaA2_note"] = str(exc)
    if panel.offspring is not None and panel.ancestor is not None:
        tm, am = offspring_moments(panel.offspring), ancestor_moments(panel.ancestor)
        payload["lambda_exact"] = exact_finite_variances(tm, am, w, panel.J)[1]
    if args.json:
        _emit(payload)
    else:
        _emit_text({k: v for k, v in payload.items() if not isinstance(v, (list, dict))})
    return EXIT_OK


def cmd_constants(args) -> int:
    cfg = _load_json(args.config)
    off, anc = _laws(cfg)
    tm, am = offspring_moments(off), ancestor_moments(anc)
    scheme = cfg.get("scheme", "case_iii")
    tau = int(cfg.get("tau", 0))
    harmonic = None
    bound = None
    if scheme == "case_i":
        lam, lam_tau, bound = harmonic_sums_for(off, anc, tau, cfg.get("harmonic_source", "ancestor"), seed=int(cfg.get("seed", 0)))
        harmonic = (lam, lam_tau)
    delta = cfg.get("delta")
    const = asymptotic_constants(tm, am, scheme, tau, None if delta is None else int(delta), harmonic)
    payload = {
        "offspring": off.to_dict(),
        "ancestor": anc.to_dict(),
        "m_star": tm.m_star,
        "m2_star": tm.m2_star,
        "sigma2_star": tm.sigma2_star,
        "gamma2_star": tm.gamma2_star,
        "r_star": tm.r_star,
        "m4_star": tm.m4_star,
        "m_A": am.m_A,
        "sigma_A2": am.sigma_A2,
        "scheme": scheme,
        "frak_D": const.frak_D,
        "sigma_I2": const.sigma_I2,
        "sigma_tau2": const.sigma_tau2,
        "galton_watson": const.galton_watson,
        "sigma_F2": [const.sigma_F2(d) for d in range(int(cfg.get("delta_max", 10)) + 1)],
        "sigma_F2_decreasing": const.sigma_F2_decreasing(),
        "lam": const.lam,
        "lam_tau": const.lam_tau,
        "lam_bound": bound,
    }
    if "n" in cfg:
        w = Window(tau, int(cfg["n"]))
        vz, lam_exact = exact_finite_variances(tm, am, w, int(cfg.get("J", 1)))
        payload.update(var_Z=vz, lambda_exact=lam_exact, n=w.n, tau=w.tau, J=int(cfg.get("J", 1)))
    _emit(payload)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    panel = read_panel_csv(args.panel)
    w = Window(args.tau, args.n)
    res = bootstrap_ci(panel, w, args.B, args.level, substream(args.seed, 2), paper_literal=args.paper_literal)
    payload = dict(res.to_dict(), mA_hat=estimate_window(panel, w).mA_hat, tau=w.tau, n=w.n, seed=args.seed, J=panel.J)
    if args.json:
        _emit(payload)
    else:
        flat = {k: v for k, v in payload.items() if k != "ci"}
        flat.update(ci_lower=res.ci.lower, ci_upper=res.ci.upper, level=res.ci.level)
        _emit_text(flat)
    return EXIT_OK


def cmd_oracle(args) -> int:
    law = offspring_from_dict(_load_json(args.law))
    anc = ancestor_from_dict(_load_json(args.ancestor)) if args.ancestor else Constant(1)
    try:
        chain = exact_pmf_chain(anc, law, args.n)
        f = exact_functionals(chain)
        payload = {"method": "exact", "functionals": f.to_dict()}
        if args.pmf:
            payload["pmf"] = [{str(k): v for k, v in chain.pmf(l).items()} for l in range(args.n + 1)]
    except ParameterError:
        # unbounded offspring support: Monte Carlo instead
        f = mc_functionals(law, anc, args.n, paths=args.paths, seed=args.seed)
        payload = {"method": "monte_carlo", "paths": args.paths, "seed": args.seed, "functionals": f.to_dict()}
    payload.update(law=law.to_dict(), ancestor=anc.to_dict(), n=args.n)
    if args.json:
        _emit(payload)
    else:
        fd = f.to_dict()
        sys.stdout.write(f"{'l':>3}  {'mean':>14}  {'variance':>14}  {'E[1/Z]':>12}\n")
        for l in range(args.n + 1):
            sys.stdout.write(f"{l:>3}  {fd['mean'][l]:>14.8g}  {fd['variance'][l]:>14.8g}  {fd['inv_mean'][l]:>12.8g}\n")
        if f.lam is not None:
            sys.stdout.write(f"lam ~ {f.lam:.8g} (bound {f.lam_bound:.8g})\n")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_dict(_load_json(args.spec), exact_paper=args.exact_paper)
    report = run_study(spec, workers=args.workers)
    summary = write_study(report, args.out)
    sys.stdout.write(summary.text)
    return EXIT_OK


def _quant_output(report, args) -> int:
    if args.out:
        Path(args.out).write_text(json.dumps(dict(_clean(report.to_dict())), indent=2, sort_keys=True) + "\n")
    if args.json:
        _emit(report.to_dict())
    else:
        sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_pcr_quantify(args) -> int:
    target = load_series_csv(args.target, "pcr_fluorescence", c=args.c, group="target")
    calib = load_series_csv(args.calibrator, "pcr_fluorescence", c=args.c, group="calibrator")
    params = {"F_star": args.fstar, "m_c": args.mc, "c": args.c}
    rep = relative_quantify(target, calib, pcr_detector(args.fstar, args.mc), args.window_mode, args.level, params)
    return _quant_output(rep, args)


def cmd_covid_analyze(args) -> int:
    g1 = load_series_csv(args.group1, "covid_cumulative", group="group1")
    g2 = load_series_csv(args.group2, "covid_cumulative", group="group2")
    params = {"T1": args.t1, "r1": args.r1, "r2": args.r2}
    rep = relative_quantify(g1, g2, covid_detector(args.t1, args.r1, args.r2), args.window_mode, args.level, params)
    return _quant_output(rep, args)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _window_args(p, need_tau: bool = True):
    p.add_argument("--panel", required=True, help="panel CSV (replicate,generation,z)")
    if need_tau:
        p.add_argument("--tau", type=int, required=True)
    p.add_argument("--n", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bpre", description="Ancestral inference for branching processes in random environments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a panel from a JSON config")
    p.add_argument("--config", required=True, help="JSON file or inline object with offspring, ancestor, J, n, seed")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="windowed or split point estimates")
    p.add_argument("--panel", required=True)
    p.add_argument("--tau", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--split", help="tau1,tau2 for the generation-split estimators")
    p.add_argument("--mode", choices=("early", "late"), default="late")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("variance", help="replicate-scatter variance and ancestor-variance inversion")
    _window_args(p)
    p.add_argument("--model", choices=("beta_bernoulli", "gamma_poisson"), required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("constants", help="theoretical moments and limiting variance constants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("bootstrap", help="replicate bootstrap interval for the ancestor mean")
    _window_args(p)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-literal", action="store_true", help="emit the uncorrected interval orientation")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("oracle", help="exact (or Monte Carlo) per-generation functionals")
    p.add_argument("--law", required=True, help="offspring law JSON")
    p.add_argument("--ancestor", help="ancestor law JSON (default: one ancestor)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--pmf", action="store_true", help="include the exact pmfs")
    p.add_argument("--paths", type=int, default=10**6, help="Monte Carlo paths for unbounded laws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("experiment", help="run a replication study")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--exact-paper", action="store_true", help="use 5000 simulations per J")
    p.set_defaults(func=cmd_experiment)

    def quant_common(q):
        q.add_argument("--window-mode", choices=("per_replicate", "common"), default="per_replicate")
        q.add_argument("--level", type=float, default=0.95)
        q.add_argument("--json", action="store_true")
        q.add_argument("--out", help="also write the JSON report here")

    pcr = sub.add_parser("pcr", help="qPCR relative quantitation").add_subparsers(dest="pcr_command", required=True)
    q = pcr.add_parser("quantify")
    q.add_argument("--target", required=True)
    q.add_argument("--calibrator", required=True)
    q.add_argument("--fstar", type=float, default=0.2)
    q.add_argument("--mc", type=float, default=1.55)
    q.add_argument("--c", type=float, default=1.0, help="fluorescence per molecule")
    quant_common(q)
    q.set_defaults(func=cmd_pcr_quantify)

    cov = sub.add_parser("covid", help="epidemic group comparison").add_subparsers(dest="covid_command", required=True)
    q = cov.add_parser("analyze")
    q.add_argument("--group1", required=True)
    q.add_argument("--group2", required=True)
    q.add_argument("--t1", type=float, default=100.0)
    q.add_argument("--r1", type=float, default=2.0)
    q.add_argument("--r2", type=float, default=1.05)
    quant_common(q)
    q.set_defaults(func=cmd_covid_analyze)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataValidationError, ParameterError, OracleSizeError, CountOverflowError) as exc:
        sys.stderr.write(f"bpre: error: {exc}\n")
        return EXIT_INVALID
    except OSError as exc:
        sys.stderr.write(f"bpre: error: {exc}\n")
        return EXIT_INVALID
    except EstimationError as exc:
        sys.stderr.write(f"bpre: estimation error: {exc}\n")
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
