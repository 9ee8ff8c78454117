import numpy as np
import pytest
from hypothesis import settings

from ecacl import tensor as T

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def fresh_tape():
    """Run every test on its own tape so stray nodes never leak between tests."""
    with T.Tape() as tape:
        yield tape


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grad_of(build, *leaves):
    """Autodiff gradients of the scalar ``build()`` w.r.t. ``leaves``."""
    with T.Tape() as tape:
        for leaf in leaves:
            leaf.grad = None
        loss = build()
        T.backward(loss, tape)
    return [leaf.grad for leaf in leaves]


def fd_grad(build, leaf, h=1e-6):
    """Central finite differences of ``build()`` w.r.t. one leaf."""
    base = leaf.data.copy()
    g = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        vals = []
        for sgn in (1.0, -1.0):
            x = base.copy()
            x[idx] += sgn * h
            x.flags.writeable = False
            leaf.data = x
            with T.no_grad():
                vals.append(build().item())
        g[idx] = (vals[0] - vals[1]) / (2 * h)
    base.flags.writeable = False
    leaf.data = base
    return g


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
