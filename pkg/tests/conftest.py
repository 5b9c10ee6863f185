import numpy as np
import pytest

from qnnfault.core import QuantSpec
from qnnfault.synthetic import make_dataset, synthetic_network

PRECISIONS = [(1, 1), (1, 2), (2, 2), (4, 4)]


@pytest.fixture(scope="session")
def tiny_nets():
    return {wa: synthetic_network("tiny", QuantSpec(*wa), seed=11) for wa in PRECISIONS}


@pytest.fixture(scope="session")
def tiny_data(tiny_nets):
    return {wa: make_dataset(net, 120, seed=5) for wa, net in tiny_nets.items()}


@pytest.fixture(scope="session")
def desk_w2a2():
    net = synthetic_network("desk", QuantSpec(2, 2), seed=0)
    return net, make_dataset(net, 200, seed=1, pool=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion, collected from marked tests
_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _criteria.setdefault(n, {"title": title, "passed": 0, "failed": 0, "nodes": [], "notes": []})
            _criteria[n]["nodes"].append(item.nodeid)


def pytest_deselected(items):
    for item in items:
        for n, entry in list(_criteria.items()):
            if item.nodeid in entry["nodes"]:
                entry["nodes"].remove(item.nodeid)
                if not entry["nodes"]:
                    del _criteria[n]


def pytest_runtest_logreport(report):
    for entry in _criteria.values():
        if report.nodeid not in entry["nodes"]:
            continue
        if report.failed:
            entry["failed"] += 1
        elif report.passed and report.when == "call":
            entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        ok = e["failed"] == 0 and e["passed"] == len(e["nodes"])
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(
            f"criterion {n}: {status}  {e['title']}  ({e['passed']}/{len(e['nodes'])} tests passed)")
        for text in e["notes"]:
            terminalreporter.write_line(f"    {text}")


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion line of the running test."""
    m = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        if m is not None:
            _criteria[m.args[0]]["notes"].append(text)
    return add
