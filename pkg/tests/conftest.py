import pytest

from fujitalab.grid import WeightSpec, build_grid
from fujitalab.semigroup import assemble_operator


@pytest.fixture(scope="session")
def heat_op():
    return assemble_operator(build_grid(1, 10, 801), WeightSpec("A", 0.0))


@pytest.fixture(scope="session")
def degenerate_op():
    return assemble_operator(build_grid(1, 10, 801), WeightSpec("A", 0.5))


@pytest.fixture(scope="session")
def ops_2d():
    g = build_grid(2, 4, 41)
    return {case: assemble_operator(g, WeightSpec(case, 0.5)) for case in ("A", "B")}


_ACCEPTANCE = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        _ACCEPTANCE.append((number, title, bool(ok), detail))
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
