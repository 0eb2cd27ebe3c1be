import numpy as np
import pytest

from egcn import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    """Run a test once per available kernel backend."""
    previous = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def random_graph_edges(rng, n, p):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    failed_setup = report.when == "setup" and not report.passed
    if report.when == "call" or failed_setup:
        detail = dict(item.user_properties).get("detail", "")
        _ACCEPTANCE.append((marker.args[0], report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
