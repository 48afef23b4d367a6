import numpy as np
import pytest

from deeplinear.network import loss


def finite_difference_grads(net, ds, rel_step=1e-5):
    """Central differences of the loss, one weight entry at a time."""
    grads = []
    weights = [np.array(w) for w in net.weights]
    for i, w in enumerate(weights):
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            h = rel_step * (1.0 + abs(w[idx]))
            orig = w[idx]
            w[idx] = orig + h
            up = loss(net.replace_weights([x.copy() for x in weights]), ds)
            w[idx] = orig - h
            down = loss(net.replace_weights([x.copy() for x in weights]), ds)
            w[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion verdict lines from test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
