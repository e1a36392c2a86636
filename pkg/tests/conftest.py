"""Shared fixtures and the per-criterion summary printed after the acceptance run."""
from __future__ import annotations

import numpy as np
import pytest

from bpre.experiments import ExperimentSpec, run_study
from bpre.panel import Panel

ACCEPTANCE_SEED = 20240611

BB_90_10 = {"kind": "beta_bernoulli", "alpha": 90, "beta": 10}
GP_10_003 = {"kind": "gamma_poisson", "shape": 10, "scale": 0.03}
ZTP_10 = {"kind": "zero_trunc_poisson", "mean": 10}
NB_4_4_04 = {"kind": "shifted_neg_binomial", "shift": 4, "r": 4, "p": 0.4}

_criteria: dict[str, tuple[str, str]] = {}
_RANK = {"SKIP": 0, "PASS": 1, "FAIL": 2}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, text): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, text = marker.args
    if rep.when == "setup" and rep.outcome != "passed":
        status = "FAIL" if rep.failed else "SKIP"
    elif rep.when == "call":
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
    else:
        return
    # a failure outranks a pass, and a pass outranks a data-gated skip
    prev = _criteria.get(cid)
    if prev is None or _RANK[status] > _RANK[prev[0]]:
        _criteria[cid] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: int(c[1:])):
        status, text = _criteria[cid]
        terminalreporter.write_line(f"{status} {cid}: {text}")


# --------------------------------------------------------------------------
# small panels used across modules
# --------------------------------------------------------------------------


@pytest.fixture
def two_row_panel():
    return Panel(np.array([[1, 2, 4], [1, 2, 2]]))


@pytest.fixture
def doubling_panel():
    return Panel(np.array([[1, 2, 4, 8]] * 3))


# --------------------------------------------------------------------------
# desk-scale studies, run once per session
# --------------------------------------------------------------------------


def _study(**kw):
    return run_study(ExperimentSpec.from_dict(dict(seed=ACCEPTANCE_SEED, **kw)))


@pytest.fixture(scope="session")
def table4_grid():
    """Beta(90,10) with a truncated-Poisson ancestor, tau=12, n=20, R=2000, full J grid."""
    return _study(name="table4", study="replication", offspring=BB_90_10, ancestor=ZTP_10, n=20, tau=12, n_sims=2000)


@pytest.fixture(scope="session")
def table4_bootstrap():
    return _study(
        name="table4_boot", study="replication", offspring=BB_90_10, ancestor=ZTP_10,
        n=20, tau=12, J=[50], n_sims=1000, B=200,
    )


@pytest.fixture(scope="session")
def table5_study():
    return _study(name="table5", study="replication", offspring=GP_10_003, ancestor=NB_4_4_04, n=20, tau=12, J=[50], n_sims=2000)


@pytest.fixture(scope="session")
def stress_study():
    return _study(
        name="stress", study="replication", offspring={"kind": "gamma_poisson", "shape": 0.4, "scale": 3},
        ancestor=ZTP_10, n=20, tau=12, J=[50], n_sims=1000,
    )


@pytest.fixture(scope="session")
def relative_study():
    return _study(
        name="relative", study="relative", offspring=BB_90_10,
        ancestor={"kind": "one_plus_poisson", "mean": 1000}, calibrator_ancestor={"kind": "one_plus_poisson", "mean": 100},
        n=20, tau=10, J=[50], n_sims=2000,
    )


@pytest.fixture(scope="session")
def schemes_study():
    return _study(name="schemes", study="schemes", offspring=BB_90_10, ancestor=ZTP_10, n=20, n_sims=2000, B=200)


@pytest.fixture(scope="session")
def learning_study():
    return _study(name="learning", study="learning", offspring=GP_10_003, ancestor=NB_4_4_04, n=20, n_sims=2000)
