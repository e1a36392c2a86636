import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre.errors import DataValidationError, EstimationError, ParameterError
from bpre.laws import BetaBernoulli, one_plus_poisson
from bpre.pipeline import (
    SeriesTable,
    covid_detector,
    detect_window_covid,
    detect_window_pcr,
    load_series_csv,
    pcr_detector,
    relative_quantify,
)
from bpre.simulate import SimConfig, simulate_panel

TOL = 1e-12

DILUTION = 2.9505


def write_series(path, table: dict, start: int = 1):
    """``table`` maps replicate label to a value list indexed from ``start``."""
    lines = ["replicate,index,value"]
    for rep, vals in table.items():
        lines += [f"{rep},{start + i},{float(v)!r}" for i, v in enumerate(vals)]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def make_table(rows, kind="pcr_fluorescence", c=1.0, start=1, group="g"):
    rows = np.asarray(rows, dtype=float)
    labels = tuple(f"r{j}" for j in range(len(rows)))
    return SeriesTable(kind, labels, np.arange(start, start + rows.shape[1]), rows, group, c)


class TestLoad:
    @pytest.mark.parametrize("body", ["", "replicate,index,value\n"])
    def test_no_rows(self, tmp_path, body):
        p = tmp_path / "e.csv"
        p.write_text(body)
        with pytest.raises(DataValidationError, match="no rows"):
            load_series_csv(p, "pcr_fluorescence")

    def test_two_wells_forty_cycles(self, tmp_path):
        vals = {w: list(0.01 * 1.8 ** np.arange(40)) for w in ("A1", "A2")}
        t = load_series_csv(write_series(tmp_path / "w.csv", vals), "pcr_fluorescence")
        assert len(t) == 2
        assert t.values.shape == (2, 40)
        assert t.labels == ("A1", "A2")
        assert t.index[0] == 1 and t.index[-1] == 40
        assert t.group == "w"

    def test_decreasing_cumulative_names_week(self, tmp_path):
        p = write_series(tmp_path / "c.csv", {"cty": [10, 20, 15, 30]})
        with pytest.raises(DataValidationError, match="week 3"):
            load_series_csv(p, "covid_cumulative")
        # fluorescence may dip
        assert load_series_csv(p, "pcr_fluorescence").values.shape == (1, 4)

    @pytest.mark.parametrize(
        "body, msg",
        [
            ("rep,idx,val\na,1,1\n", "header"),
            ("replicate,index,value\na,1,1\na,1,2\n", "not increasing"),
            ("replicate,index,value\na,2,1\na,1,2\n", ":3:"),
            ("replicate,index,value\na,1,-1\n", "negative"),
            ("replicate,index,value\na,1,nan\n", "non-finite"),
            ("replicate,index,value\na,1,x\n", "number"),
            ("replicate,index,value\na,1\n", "3 fields"),
            ("replicate,index,value\na,1,1\na,2,2\nb,1,1\n", "ragged"),
        ],
    )
    def test_validation(self, tmp_path, body, msg):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(DataValidationError, match=msg):
            load_series_csv(p, "covid_cumulative")

    def test_bad_kind_and_c(self, tmp_path):
        p = write_series(tmp_path / "a.csv", {"a": [1, 2]})
        with pytest.raises(ParameterError):
            load_series_csv(p, "elisa")
        with pytest.raises(ParameterError):
            load_series_csv(p, "pcr_fluorescence", c=0)

    def test_counts_divide_by_c(self, tmp_path):
        p = write_series(tmp_path / "a.csv", {"a": [1.0, 2.0, 4.0]})
        t = load_series_csv(p, "pcr_fluorescence", c=0.5)
        np.testing.assert_array_equal(t.counts, [[2, 4, 8]])


class TestDetectPCR:
    def test_example(self):
        F = [0.01, 0.05, 0.25, 0.6, 1.3, 2.0, 2.4]
        w = detect_window_pcr(np.arange(1, 8), F, 0.2, 1.5)
        assert (w.tau1, w.tau2) == (3, 6)

    def test_never_reaches_threshold(self):
        with pytest.raises(EstimationError, match="no exponential phase"):
            detect_window_pcr(np.arange(1, 5), [0.01, 0.02, 0.04, 0.08], 0.2, 1.5)

    def test_no_growth_step(self):
        with pytest.raises(EstimationError, match="no exponential phase"):
            detect_window_pcr(np.arange(1, 5), [0.01, 0.3, 0.31, 0.32], 0.2, 1.5)

    def test_doubling_runs_to_end(self):
        F = 0.01 * 2.0 ** np.arange(12)
        w = detect_window_pcr(np.arange(1, 13), F, 0.2, 1.55)
        assert w.tau2 == 12
        assert F[w.tau1 - 1] >= 0.2 > F[w.tau1 - 2]

    @pytest.mark.parametrize("F_star, m_c", [(0, 1.5), (0.2, 1.0)])
    def test_parameters(self, F_star, m_c):
        with pytest.raises(ParameterError):
            detect_window_pcr([1, 2], [1, 2], F_star, m_c)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.001, 50), min_size=3, max_size=30))
    def test_rule_holds_when_detected(self, F):
        idx = np.arange(1, len(F) + 1)
        try:
            w = detect_window_pcr(idx, F, 0.2, 1.5)
        except EstimationError:
            return
        F = np.array(F)
        s, e = w.tau1 - 1, w.tau2 - 1
        assert F[s] >= 0.2 and np.all(F[:s] < 0.2)
        assert np.all(F[s + 1 : e + 1] / F[s:e] >= 1.5)
        assert e == len(F) - 1 or F[e + 1] / F[e] < 1.5
        # idempotent
        assert detect_window_pcr(idx, F, 0.2, 1.5) == w


class TestDetectCovid:
    def test_example(self):
        C = [10, 50, 120, 300, 620, 900, 950, 960]
        w = detect_window_covid(np.arange(1, 9), C, 100, 2, 1.05)
        assert (w.tau1, w.tau2) == (5, 7)

    def test_flat_after_threshold(self):
        with pytest.raises(EstimationError, match="no stable growth window"):
            detect_window_covid(np.arange(1, 6), [10, 150, 150, 150, 150], 100, 2, 1.05)

    def test_threshold_never_reached(self):
        with pytest.raises(EstimationError, match="no stable growth window"):
            detect_window_covid(np.arange(1, 4), [1, 2, 3], 100, 2, 1.05)

    def test_doubling_runs_to_end(self):
        C = 100 * 2.0 ** np.arange(10)
        w = detect_window_covid(np.arange(1, 11), C, 100, 2, 1.05)
        assert (w.tau1, w.tau2) == (1, 10)

    @pytest.mark.parametrize("args", [(0, 2, 1.05), (100, 1.05, 1.05), (100, 2, 1.0)])
    def test_parameters(self, args):
        with pytest.raises(ParameterError):
            detect_window_covid([1, 2], [1, 2], *args)


def noiseless(start, m, length, rows=3):
    return np.array([[start * m**l for l in range(length)]] * rows, dtype=float)


class TestRelativeQuantify:
    def test_dilution_recovers_ratio(self):
        target = make_table(noiseless(0.05, 2.0, 14), group="target")
        calib = make_table(noiseless(0.05, 2.0, 14) / DILUTION, group="calibrator")
        rep = relative_quantify(target, calib, pcr_detector(0.2, 1.55))
        assert rep.R_hat == pytest.approx(DILUTION, rel=TOL)
        assert rep.lambda_R_hat == pytest.approx(0, abs=1e-20)
        assert rep.target.estimate.m_hat == pytest.approx(2, rel=TOL)
        # the diluted curve crosses the threshold later
        assert rep.calibrator.windows[0].tau1 > rep.target.windows[0].tau1

    def test_identical_groups(self):
        z = simulate_panel(SimConfig(6, 10, 4), BetaBernoulli(90, 10), one_plus_poisson(20)).z * 0.01
        a, b = make_table(z, group="a"), make_table(z, group="b")
        rep = relative_quantify(a, b, pcr_detector(0.2, 1.55))
        assert rep.R_hat == 1
        e, v, J = rep.target.estimate, rep.target.per_replicate_var, rep.target.J
        assert rep.lambda_R_hat == pytest.approx(2 * v / (J * e.mA_hat**2), rel=TOL)
        assert rep.ci.lower < 1 < rep.ci.upper

    def test_exclusions_are_listed(self):
        rows = np.vstack([noiseless(0.05, 2.0, 12, 3), np.full((1, 12), 0.01)])
        rep = relative_quantify(make_table(rows, group="t"), make_table(noiseless(0.02, 2.0, 12), group="c"), pcr_detector(0.2, 1.55))
        assert rep.target.J == 3
        assert [r for r, _ in rep.target.excluded] == ["r3"]
        d = rep.to_dict()
        assert d["groups"]["target"]["excluded"][0]["replicate"] == "r3"
        assert "excluded r3" in rep.to_text()

    def test_too_few_replicates(self):
        rows = np.vstack([noiseless(0.05, 2.0, 12, 1), np.full((2, 12), 0.01)])
        with pytest.raises(EstimationError, match="r1, r2"):
            relative_quantify(make_table(rows), make_table(noiseless(0.05, 2.0, 12)), pcr_detector(0.2, 1.55))

    def test_zero_before_window_is_allowed(self):
        rows = noiseless(0.05, 2.0, 10)
        rows[:, 0] = 0
        rep = relative_quantify(make_table(rows), make_table(noiseless(0.05, 2.0, 10)), pcr_detector(0.2, 1.55))
        assert rep.R_hat == pytest.approx(1)

    def test_common_mode(self):
        rows = noiseless(0.05, 2.0, 12)
        rows[0] *= 2
        t, c = make_table(rows), make_table(noiseless(0.05, 2.0, 12))
        per = relative_quantify(t, c, pcr_detector(0.2, 1.55))
        com = relative_quantify(t, c, pcr_detector(0.2, 1.55), mode="common")
        assert com.mode == "common"
        assert com.R_hat == pytest.approx(per.R_hat, rel=1e-12)
        assert com.R_hat == pytest.approx(4 / 3, rel=1e-12)
        with pytest.raises(ParameterError):
            relative_quantify(t, c, pcr_detector(0.2, 1.55), mode="aligned")

    def test_common_mode_needs_overlap(self):
        early = np.array([[1, 2, 4, 8, 8, 8, 8], [0.1, 0.1, 0.1, 0.1, 1, 2, 4]])
        with pytest.raises(EstimationError, match="common range"):
            relative_quantify(make_table(early), make_table(early), pcr_detector(0.5, 1.5), mode="common")

    def test_covid_windows_refer_to_week_one(self):
        g = np.array([[10, 50, 120, 300, 620, 900, 950, 960], [5, 40, 110, 240, 500, 800, 860, 880]], dtype=float)
        t = make_table(g, kind="covid_cumulative", group="g1")
        rep = relative_quantify(t, t, covid_detector(100, 2, 1.05))
        assert [(w.tau1, w.tau2) for w in rep.target.windows] == [(5, 7), (5, 7)]
        assert rep.R_hat == 1

    @settings(max_examples=25, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 10**6))
    def test_c_invariance(self, c, seed):
        law, anc = BetaBernoulli(90, 10), one_plus_poisson(20)
        F_t = simulate_panel(SimConfig(4, 10, seed), law, anc).z * 0.01
        F_c = simulate_panel(SimConfig(4, 10, seed + 1), law, anc).z * 0.004
        det = pcr_detector(0.2, 1.55)
        base = relative_quantify(make_table(F_t), make_table(F_c), det)
        scaled = relative_quantify(make_table(F_t, c=c), make_table(F_c, c=c), det)
        assert scaled.target.windows == base.target.windows
        assert scaled.calibrator.windows == base.calibrator.windows
        assert scaled.target.estimate.m_hat == base.target.estimate.m_hat
        assert scaled.target.estimate.r_hat == base.target.estimate.r_hat
        assert scaled.R_hat == pytest.approx(base.R_hat, rel=1e-12)
        assert scaled.target.estimate.mA_hat == pytest.approx(base.target.estimate.mA_hat / c, rel=1e-12)

    def test_report_schema(self):
        rep = relative_quantify(make_table(noiseless(0.05, 2.0, 10)), make_table(noiseless(0.05, 2.0, 10)), pcr_detector(0.2, 1.55))
        d = rep.to_dict()
        assert d["schema_version"] == "1.0"
        assert set(d) >= {"groups", "R_hat", "lambda_R_hat", "ci", "external_methods"}
        assert d["groups"]["target"]["windows"][0] == {"replicate": "r0", "start": 3, "end": 10}
        json.dumps(d)


class TestSyntheticDilution:
    def test_interval_covers_ratio(self):
        law = BetaBernoulli(90, 10)
        det = pcr_detector(0.2, 1.55)
        c = 1e-3
        hits = 0
        for s in range(500):
            zt = simulate_panel(SimConfig(15, 12, 2 * s), law, one_plus_poisson(100 * DILUTION)).z
            zc = simulate_panel(SimConfig(15, 12, 2 * s + 1), law, one_plus_poisson(100)).z
            rep = relative_quantify(make_table(zt * c, c=c), make_table(zc * c, c=c), det)
            hits += rep.ci.lower <= DILUTION <= rep.ci.upper
        assert hits / 500 >= 0.90


APPENDIX_DIR = os.environ.get("BPRE_APPENDIX_A_DIR")


@pytest.mark.skipif(not APPENDIX_DIR, reason="set BPRE_APPENDIX_A_DIR to a directory holding manifest.json and the series CSVs")
class TestAppendixGolden:
    """Window tables for the real datasets.

    ``manifest.json`` lists entries ``{"csv", "kind", "params", "windows"}``
    where ``windows`` maps replicate labels to ``[start, end]`` and
    ``params`` holds the detector thresholds.
    """

    def test_windows_match(self):
        root = Path(APPENDIX_DIR)
        entries = json.loads((root / "manifest.json").read_text())
        for e in entries:
            t = load_series_csv(root / e["csv"], e["kind"])
            p = e["params"]
            if e["kind"] == "pcr_fluorescence":
                det = pcr_detector(p.get("fstar", 0.2), p.get("mc", 1.55))
            else:
                det = covid_detector(p.get("t1", 100), p.get("r1", 2), p.get("r2", 1.05))
            for j, label in enumerate(t.labels):
                want = e["windows"].get(label)
                if want is None:
                    with pytest.raises(EstimationError):
                        det(t.index, t.values[j], label)
                    continue
                w = det(t.index, t.values[j], label)
                assert [w.tau1, w.tau2] == want, label
