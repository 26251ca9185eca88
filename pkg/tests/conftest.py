import pytest

from ncl.kernel import build_kernel
from ncl.measure import LambdaMeasure
from ncl.rde import fix_from_delta1

BETA = LambdaMeasure.beta(0.5)
ATOMIC = LambdaMeasure.atomic([(1.0, 0.3), (0.5, 0.7)])
STAR = LambdaMeasure.atomic([(1.0, 1.0)])


@pytest.fixture(scope="session")
def beta_kernel():
    return build_kernel(BETA, 1.0, 512)


@pytest.fixture(scope="session")
def beta_star(beta_kernel):
    return fix_from_delta1(beta_kernel)


_REPORT = []


@pytest.fixture
def report():
    """Record one 'PASS/FAIL criterion N: ...' line; fails the test on FAIL."""
    def emit(num, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
        _REPORT.append(line)
        print(line)
        assert ok, line
    return emit


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
