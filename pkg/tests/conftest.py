import numpy as np
import pytest

from viana.core import default_params, make_params


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def params_a15():
    return make_params(1.5, 1e-3, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ---------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" and rep.passed and not hasattr(rep, "wasxfail"):
        _CRITERIA[n] = ("PASS", detail)
    elif rep.skipped and not hasattr(rep, "wasxfail"):
        _CRITERIA.setdefault(n, ("SKIP", detail))
    else:
        _CRITERIA[n] = ("FAIL", detail + (" (expected failure)" if hasattr(rep, "wasxfail") else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}".rstrip())
