import numpy as np
import pytest

from feec_sl.femspace import DofMap
from feec_sl.mesh import generate_structured

UNIT_BOX = (-0.5, 0.5, -0.5, 0.5)


def field(fn):
    """Wrap a pointwise ``(x, y) -> (u, v)`` formula as a vectorised field."""

    def f(x):
        x = np.asarray(x, dtype=float)
        u, v = fn(x[:, 0], x[:, 1])
        return np.stack([np.broadcast_to(u, x[:, 0].shape), np.broadcast_to(v, x[:, 0].shape)], axis=1)

    return f


@pytest.fixture(scope="session")
def square2():
    return generate_structured(1, 1)


@pytest.fixture(scope="session")
def mesh8():
    return generate_structured(8, 8, UNIT_BOX)


@pytest.fixture(scope="session", params=[1, 2], ids=["p1", "p2"])
def dm8(request, mesh8):
    return DofMap(mesh8, request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion and return the flag."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
