import numpy as np
import pytest

from qfilter.hamiltonian import GridSpec, Hamiltonian, PotentialSpec

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    number, title = marks
    prev = _CRITERIA.get(number, (title, True, 0.0))
    _CRITERIA[number] = (title, prev[1] and report.passed, prev[2] + report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, secs = _CRITERIA[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"AC{number:02d} {status}  {title}  ({secs:.1f} s)")


@pytest.fixture(scope="session")
def harmonic():
    return Hamiltonian(GridSpec(-10.0, 10.0, 200), PotentialSpec.harmonic(1.0))


@pytest.fixture(scope="session")
def harmonic_1000():
    return Hamiltonian(GridSpec(-12.0, 12.0, 1000), PotentialSpec.harmonic(1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = 0.5 * (a + a.conj().T)
    return scale * h / np.linalg.norm(h, 2)
