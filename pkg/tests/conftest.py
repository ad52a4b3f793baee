import numpy as np
import pytest

from safelearn.model import ControlAffineModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_model(n, m, A=None, B=None):
    A = np.eye(n) if A is None else np.asarray(A, dtype=float)
    B = np.zeros((n, m)) if B is None else np.asarray(B, dtype=float)
    return ControlAffineModel(n, m, lambda x: A @ x, lambda x: B)


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    F = rng.standard_normal((n, rank))
    return F @ F.T


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
