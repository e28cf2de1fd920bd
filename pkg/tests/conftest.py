import pytest

from stokes_hvi.fespace import build_system
from stokes_hvi.mesh import BoundarySpec, build_rect_mesh

LEFT_CLAMPED = BoundarySpec(left="D", right="S", bottom="S", top="S")


@pytest.fixture(scope="session")
def sys4():
    return build_system(build_rect_mesh(4, 4), 1.0)


@pytest.fixture(scope="session")
def sys2():
    return build_system(build_rect_mesh(2, 2), 1.0)


@pytest.fixture(scope="session")
def sys2_open():
    """2x2 mesh clamped on the left only, so slip acts on three sides."""
    return build_system(build_rect_mesh(2, 2, spec=LEFT_CLAMPED), 1.0)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(n, passed, detail=""):
    prev = ACCEPTANCE.get(n)
    if prev is not None:
        passed = passed and prev[0]
        detail = f"{prev[1]}; {detail}" if prev[1] else detail
    ACCEPTANCE[n] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
