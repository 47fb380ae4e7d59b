import numpy as np
import pytest

from polycf.interactions import InteractionMatrix
from polycf.synthetic import random_interactions

FAMILIES = ["monomial", "chebyshev", "bernstein", "jacobi", "hermite"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny():
    """The 2x2 hand-worked example: R = [[1, 1], [0, 1]]."""
    return InteractionMatrix(np.array([[1.0, 1.0], [0.0, 1.0]]))


def random_matrix(rng, m_range=(5, 30), n_range=(5, 30), density=(0.2, 0.6)):
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    D = random_interactions(rng, m, n, rng.uniform(*density))
    return D, InteractionMatrix(D)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


# one summary line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def emit(criterion: int, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {criterion:2d}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
