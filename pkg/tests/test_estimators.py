import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bpre.errors import EstimationError, ParameterError
from bpre.estimators import (
    SUBCRITICAL_MSG,
    SplitWindow,
    Window,
    estimate_last_two,
    estimate_ratio,
    estimate_replicate_windows,
    estimate_split,
    estimate_weighted_m,
    estimate_window,
    log_scaling,
    ratio_weights,
    scaling_factor,
)
from bpre.laws import BetaBernoulli, ZeroTruncPoisson, offspring_moments
from bpre.panel import Panel
from bpre.simulate import SimConfig, simulate_panel

TOL = 1e-12


def brute_window(rows, tau, n):
    """Exact rational evaluation of the windowed estimators."""
    J = len(rows)
    ratios = [[Fraction(r[l], r[l - 1]) for l in range(tau + 1, n + 1)] for r in rows]
    m = sum(sum(x) / len(x) for x in ratios) / J
    m2 = sum(sum(y * y for y in x) / len(x) for x in ratios) / J
    N = sum(m**k for k in range(tau, n + 1))
    mA = sum(sum(Fraction(r[l]) for l in range(tau, n + 1)) for r in rows) / (J * N)
    return float(m), float(m2), float(N), float(mA)


growing_rows = st.integers(1, 4).flatmap(
    lambda J: st.lists(
        st.lists(st.integers(1, 3), min_size=4, max_size=4).map(lambda steps: list(np.cumprod([1] + steps))),
        min_size=J,
        max_size=J,
    )
)


class TestEstimateWindow:
    def test_two_row_example(self, two_row_panel):
        e = estimate_window(two_row_panel, Window(0, 2))
        assert e.m_hat == pytest.approx(1.75, rel=TOL)
        assert e.m2_hat == pytest.approx(3.25, rel=TOL)
        assert e.r_hat == pytest.approx(1.0301575, rel=1e-6)
        assert e.scaling_N_hat == pytest.approx(5.8125, rel=TOL)
        assert e.mA_hat == pytest.approx(1.0322580645, rel=1e-9)
        assert e.sigma2_star_hat == pytest.approx(0.1875, rel=TOL)
        assert e.J == 2
        assert not e.jensen_violation

    def test_doubling(self, doubling_panel):
        e = estimate_window(doubling_panel, Window(0, 3))
        assert e.m_hat == 2
        assert e.r_hat == 1
        assert e.scaling_N_hat == pytest.approx(15, rel=TOL)
        assert e.mA_hat == pytest.approx(1, rel=TOL)

    def test_subcritical_error(self):
        with pytest.raises(EstimationError, match=SUBCRITICAL_MSG):
            estimate_window(Panel(np.array([[3, 3, 3]])), Window(0, 2))

    def test_window_bounds(self, two_row_panel):
        with pytest.raises(ParameterError):
            estimate_window(two_row_panel, Window(2, 2))
        with pytest.raises(ParameterError):
            estimate_window(two_row_panel, Window(0, 5))
        with pytest.raises(ParameterError):
            Window(3, 1)

    def test_jensen_flag_never_clamps(self):
        # one row cannot violate Jensen, but the flag mirrors m2 < m^2
        e = estimate_window(Panel(np.array([[1, 2, 5]])), Window(0, 2))
        assert e.jensen_violation == (e.m2_hat < e.m_hat**2)
        assert e.r_hat == pytest.approx(math.sqrt(e.m2_hat) / e.m_hat)

    @settings(max_examples=60, deadline=None)
    @given(growing_rows, st.integers(0, 3))
    def test_matches_exact_arithmetic(self, rows, tau):
        n = 4
        panel = Panel(np.array(rows))
        m, m2, N, mA = brute_window(rows, tau, n)
        if m <= 1:
            with pytest.raises(EstimationError):
                estimate_window(panel, Window(tau, n))
            return
        e = estimate_window(panel, Window(tau, n))
        assert e.m_hat == pytest.approx(m, rel=1e-12)
        assert e.m2_hat == pytest.approx(m2, rel=1e-12)
        assert e.scaling_N_hat == pytest.approx(N, rel=1e-10)
        assert e.mA_hat == pytest.approx(mA, rel=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(growing_rows, st.randoms(use_true_random=False))
    def test_permutation_invariance(self, rows, rnd):
        panel = Panel(np.array(rows))
        if brute_window(rows, 0, 4)[0] <= 1:
            return
        perm = list(range(len(rows)))
        rnd.shuffle(perm)
        a = estimate_window(panel, Window(0, 4))
        b = estimate_window(panel.take(perm), Window(0, 4))
        assert a.m_hat == pytest.approx(b.m_hat, rel=1e-14)
        assert a.mA_hat == pytest.approx(b.mA_hat, rel=1e-14)

    @pytest.mark.parametrize("Z0, m", [(1, 2), (7, 2), (3, 3)])
    def test_noiseless_recovery(self, Z0, m):
        z = np.array([[Z0 * m**l for l in range(9)]] * 4)
        e = estimate_window(Panel(z), Window(3, 8))
        assert e.m_hat == m
        assert e.r_hat == 1
        assert e.mA_hat == pytest.approx(Z0, rel=1e-13)
        w = estimate_last_two(Panel(z), 8)
        assert w.mA_hat == pytest.approx(Z0, rel=1e-13)

    def test_scaling_factor_stable_for_long_windows(self):
        # direct geometric sum overflows; the log form stays finite
        assert math.isfinite(log_scaling(1.9, 0, 2000))
        assert scaling_factor(2.0, 0, 3) == pytest.approx(15)
        assert scaling_factor(1.5, 1, 1) == pytest.approx(1.5)


class TestConsistency:
    def test_rate_of_offspring_mean(self):
        law = BetaBernoulli(90, 10)
        tm = offspring_moments(law)
        J, tau, n = 200, 12, 20
        bound = 5 * math.sqrt(tm.sigma2_star / (J * (n - tau)))
        hits = 0
        for s in range(500):
            p = simulate_panel(SimConfig(J, n, 1000 + s), law, ZeroTruncPoisson(10))
            hits += abs(estimate_window(p, Window(tau, n)).m_hat - tm.m_star) < bound
        assert hits / 500 >= 0.99

    def test_offspring_mean_is_normal(self):
        law = BetaBernoulli(90, 10)
        J, tau, n = 50, 12, 20
        m = np.array(
            [estimate_window(simulate_panel(SimConfig(J, n, 5000 + s), law, ZeroTruncPoisson(10)), Window(tau, n)).m_hat for s in range(2000)]
        )
        res = stats.anderson((m - m.mean()) / m.std(ddof=1), "norm")
        crit_1pct = res.critical_values[list(res.significance_level).index(1.0)]
        assert res.statistic < crit_1pct


class TestLastTwo:
    def test_two_row_example(self, two_row_panel):
        e = estimate_last_two(two_row_panel, 2)
        assert e.m_hat == pytest.approx(1.5, rel=TOL)
        assert e.m2_hat == pytest.approx(2.5, rel=TOL)
        assert e.r_hat == pytest.approx(1.0540925534, rel=1e-9)
        assert e.mA_hat == pytest.approx(4 / 3, rel=TOL)
        assert e.scaling_N_hat == pytest.approx(1.5**2, rel=TOL)

    def test_doubling(self, doubling_panel):
        e = estimate_last_two(doubling_panel, 3)
        assert e.m_hat == 2
        assert e.mA_hat == pytest.approx(1)

    def test_single_row(self):
        e = estimate_last_two(Panel(np.array([[1, 3]])), 1)
        assert e.m_hat == 3
        assert e.mA_hat == pytest.approx(1)

    def test_needs_two_generations(self, two_row_panel):
        with pytest.raises(ParameterError):
            estimate_last_two(two_row_panel, 0)


class TestWeighted:
    def test_two_row_example(self, two_row_panel):
        assert estimate_weighted_m(two_row_panel, Window(0, 2)) == pytest.approx(10 / 6, rel=TOL)

    def test_doubling(self, doubling_panel):
        assert estimate_weighted_m(doubling_panel, Window(0, 3)) == 2

    def test_single_row(self):
        assert estimate_weighted_m(Panel(np.array([[1, 3]])), Window(0, 1)) == 3

    def test_equal_parents_give_equal_weights(self):
        # every parent count in the window is 4
        z = np.array([[4, 4, 4, 8], [4, 4, 4, 9], [4, 4, 4, 5]])
        p = Panel(z)
        w = Window(0, 3)
        assert estimate_weighted_m(p, w) == pytest.approx(estimate_window(p, w).m_hat, rel=TOL)

    @settings(max_examples=40, deadline=None)
    @given(growing_rows)
    def test_weights_reconstruct_estimator(self, rows):
        p = Panel(np.array(rows))
        w = Window(0, 4)
        between, within = ratio_weights(p, w)
        z = p.columns(0, 4)
        ratios = z[:, 1:] / z[:, :-1]
        assert between.sum() == pytest.approx(1)
        np.testing.assert_allclose(within.sum(axis=1), 1)
        assert (between * (within * ratios).sum(axis=1)).sum() == pytest.approx(estimate_weighted_m(p, w), rel=1e-12)


class TestSplit:
    def test_doubling_either_mode(self):
        p = Panel(np.array([[1, 2, 4, 8]]))
        for mode in ("early_m", "late_m"):
            m, mA = estimate_split(p, SplitWindow(0, 1, 3, mode))
            assert m == 2
            assert mA == pytest.approx(1)

    def test_early(self, two_row_panel):
        m, mA = estimate_split(two_row_panel, SplitWindow(0, 1, 2, "early_m"))
        assert m == pytest.approx(2)
        assert mA == pytest.approx(5 / 6, rel=TOL)

    def test_late(self, two_row_panel):
        m, mA = estimate_split(two_row_panel, SplitWindow(0, 1, 2, "late_m"))
        assert m == pytest.approx(1.5)
        assert mA == pytest.approx(1.2, rel=TOL)

    @pytest.mark.parametrize("args", [(1, 1, 3), (0, 3, 3), (2, 1, 3)])
    def test_invalid_split(self, args):
        with pytest.raises(ParameterError):
            SplitWindow(*args)

    def test_invalid_mode(self):
        with pytest.raises(ParameterError):
            SplitWindow(0, 1, 2, "middle")


class TestRatio:
    def test_identical(self, two_row_panel):
        e = estimate_window(two_row_panel, Window(0, 2))
        assert estimate_ratio(e, e) == 1

    def test_value(self, two_row_panel, doubling_panel):
        t = estimate_window(two_row_panel, Window(0, 2))
        c = estimate_window(doubling_panel, Window(0, 2))
        assert c.mA_hat == pytest.approx(1)
        assert estimate_ratio(t, c) == pytest.approx(1.032258, rel=1e-6)


class TestReplicateWindows:
    def test_common_windows_match(self):
        p = simulate_panel(SimConfig(20, 12, 4), BetaBernoulli(90, 10), ZeroTruncPoisson(10))
        a = estimate_window(p, Window(4, 12))
        b = estimate_replicate_windows(p, [Window(4, 12)] * p.J)
        assert b.m_hat == pytest.approx(a.m_hat, rel=1e-14)
        assert b.mA_hat == pytest.approx(a.mA_hat, rel=1e-14)
        np.testing.assert_allclose(a.per_replicate, b.per_replicate, rtol=1e-14)

    def test_own_windows_ignore_outside_values(self):
        z = np.array([[0, 0, 3, 6, 12, 24], [0, 5, 10, 20, 40, 0]], dtype=float)
        e = estimate_replicate_windows(z, [Window(3, 6), Window(2, 5)], generation0=1)
        assert e.m_hat == 2
        # scaled sums refer back to generation 0
        np.testing.assert_allclose(e.per_replicate, [3 / 8, 5 / 4])

    def test_nonpositive_inside_window(self):
        z = np.array([[1, 0, 4], [1, 2, 4]], dtype=float)
        with pytest.raises(EstimationError):
            estimate_replicate_windows(z, [Window(0, 2)] * 2)
