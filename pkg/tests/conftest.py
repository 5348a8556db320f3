import pytest

from barrier_oss import InstrumentSpec, ModelParams

_ACCEPTANCE: dict[int, list[str]] = {}
_MEASURED: dict[int, list[str]] = {}


@pytest.fixture
def measured(request):
    """Record a measured quantity next to its bound in the acceptance summary."""
    marker = [m.name for m in request.node.iter_markers() if m.name.startswith("criterion_")]
    number = int(marker[0].split("_")[1]) if marker else 0

    def record(label, value, bound):
        _MEASURED.setdefault(number, []).append(f"{label}: {value:.6g} (bound {bound:.6g})")

    return record


@pytest.fixture
def table1():
    return ModelParams.table1()


@pytest.fixture
def up_out():
    return InstrumentSpec("up", "out", "vanilla_call")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = [k for k in report.keywords if k.startswith("criterion_")]
    if marker:
        _ACCEPTANCE.setdefault(int(marker[0].split("_")[1]), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        outcomes = _ACCEPTANCE[number]
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} ({len(outcomes)} checks)")
        for line in _MEASURED.get(number, []):
            terminalreporter.write_line(f"    {line}")


@pytest.fixture(scope="session")
def benchmark_targets():
    """CoCo target prices at the true (barrier, sigma) with 1e7 paths (about a minute)."""
    from barrier_oss.coco import BENCHMARK_SEED, TRUTH, CoCoSpec
    from barrier_oss.coco import benchmark_targets as make

    return make(CoCoSpec.table2(), TRUTH, 10_000_000, BENCHMARK_SEED)
