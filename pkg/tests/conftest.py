import numpy as np
import pytest

from gmnet.net_model import MoneyTensor, Registry, synth_generate

# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def registry(nc, ns):
    return Registry.from_codes([f"C{i}" for i in range(1, nc + 1)], [f"S{i}" for i in range(1, ns + 1)])


def tensor_from_cells(nc, ns, cells):
    """``cells`` maps 1-based (c, c_src, s, s_src) to a value."""
    v = np.zeros((nc, nc, ns, ns))
    for (c, c2, s, s2), x in cells.items():
        v[c - 1, c2 - 1, s - 1, s2 - 1] = x
    return MoneyTensor(registry(nc, ns), v)


def random_tensor(nc, ns, seed, density=0.6):
    return synth_generate(nc, ns, density=density, seed=seed)


@pytest.fixture
def small_tensor():
    return synth_generate(4, 3, density=0.7, seed=11)


@pytest.fixture
def mid_tensor():
    return synth_generate(8, 5, density=0.5, seed=7)


# ---------------------------------------------------------------------------
# Acceptance-criterion reporting
# ---------------------------------------------------------------------------

_criteria = {}      # number -> text
_owner = {}         # nodeid -> number
_outcomes = {}      # number -> list of outcomes


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, text = mark.args
            _criteria[number] = text
            _owner[item.nodeid] = number


def pytest_runtest_logreport(report):
    number = _owner.get(report.nodeid)
    if number is None:
        return
    if report.when == "call" or report.outcome != "passed":
        # setup/teardown only matter when they fail or skip
        _outcomes.setdefault(number, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        seen = _outcomes.get(number, [])
        if "failed" in seen:
            status = "FAIL"
        elif "passed" in seen:
            status = "PASS"
        elif seen:
            status = "SKIP"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {number:>2} {status:<7} {_criteria[number]}")
