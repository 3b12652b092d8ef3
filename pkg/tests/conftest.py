import numpy as np
import pytest

from mlkl import build_grid_domain, build_multilevel, make_tree
from mlkl.app.simulate import SyntheticField


def synthetic(rows, cols, q, lambdas, seed=0, mean=None, distribution="gaussian"):
    """Grid domain plus a random-orthonormal synthetic field."""
    dom = build_grid_domain(rows, cols, 1.0, q)
    gen = SyntheticField.random(dom, lambdas, np.random.default_rng(seed), mean=mean, distribution=distribution)
    return dom, gen


def exact_filter(rows, cols, q, lambdas, M, n0=2, seed=0, mean=None, distribution="gaussian"):
    """Synthetic field, its exact rank-M KL basis and the multilevel basis."""
    dom, gen = synthetic(rows, cols, q, lambdas, seed, mean, distribution)
    kl = gen.kl_basis(M)
    basis = build_multilevel(make_tree(dom, n0), dom, kl)
    return dom, gen, kl, basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria: one pass/fail line per criterion at the end of the run
_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed or report.skipped):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "seen": False})
    entry["seen"] = True
    if report.failed or report.skipped:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] and entry["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} - {entry['title']}")
