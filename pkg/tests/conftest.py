import numpy as np
import pytest

from telepit import kernels


def naive_dft_power(row):
    """O(W^2) DFT power for k = 1..W//2; independent of numpy.fft."""
    row = np.asarray(row, dtype=np.float64)
    W = row.shape[-1]
    j = np.arange(W)
    out = []
    for k in range(1, W // 2 + 1):
        re = sum(row[n] * np.cos(2 * np.pi * k * n / W) for n in j)
        im = -sum(row[n] * np.sin(2 * np.pi * k * n / W) for n in j)
        out.append(re * re + im * im)
    return np.array(out)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.BACKEND
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grad_check(loss_fn, tensors, eps=1e-4, rtol=1e-2, floor=1e-6):
    """Compare backprop against central differences for each Tensor in ``tensors``.

    Returns the worst relative error per tensor index.
    """
    from telepit.numerics import finite_diff_grad

    for t in tensors:
        t.grad = None
    loss_fn().backward()
    worst = []
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        orig = t.data.copy()

        def f(p, t=t):
            t.data = p
            return float(loss_fn().data)

        numeric = finite_diff_grad(f, orig, eps)
        t.data = orig
        err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), floor)
        worst.append(float(err.max()) if err.size else 0.0)
    return worst


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
