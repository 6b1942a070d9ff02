import numpy as np
import pytest

from sdfit.model import ArchSpec, init_network

ACCEPTANCE_LINES = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} - {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    return init_network(ArchSpec(depth=3, width=12, skip_layer=2), seed=5)


def fd_param_gradient(net, loss_fn, h=1e-5):
    """Central finite differences of a scalar loss over every parameter."""
    grads = []
    for p in net.parameters():
        flat = p.value.reshape(-1)
        g = np.empty_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn()
            flat[j] = orig - h
            lm = loss_fn()
            flat[j] = orig
            g[j] = (lp - lm) / (2.0 * h)
        grads.append(g.reshape(p.value.shape))
    return grads


def rel_vec_err(a, b, floor=1e-10) -> float:
    """Relative error between two gradient stacks (inf-norm based)."""
    num = max(np.abs(np.asarray(x) - np.asarray(y)).max() for x, y in zip(a, b))
    den = max(max(np.abs(np.asarray(y)).max() for y in b), floor)
    return num / den
