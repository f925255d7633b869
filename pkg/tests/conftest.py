import numpy as np
import pytest

from tcgan.tensor import Tensor


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build, arrays, rtol=1e-4, atol=1e-7, h=1e-6, seed=0):
    """Compare autodiff and finite differences of ``sum(build(*tensors) * r)``.

    ``r`` is a fixed random projection so every output element matters.
    """
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    probe = build(*[Tensor(a) for a in arrays]).data
    r = np.random.default_rng(seed).normal(size=probe.shape)

    def scalar(*arrs):
        return float((build(*[Tensor(a) for a in arrs]).data * r).sum())

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    (out * Tensor(r)).sum().backward()
    expected = numeric_grad(scalar, arrays, h)
    for t, e in zip(tensors, expected):
        got = t.grad if t.grad is not None else np.zeros_like(e)
        scale = max(np.abs(e).max(), np.abs(got).max(), 1.0)
        assert np.abs(got - e).max() <= rtol * scale + atol, (got, e)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def record_skip(number: int, reason: str) -> None:
    line = f"criterion {number:>2}: SKIP  {reason}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
