"""Pure numpy implementations of the hot kernels.

Must stay numerically interchangeable with ``_ckernels.pyx``; the test suite
runs both against the same oracles.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _neighbors(x):
    # zero virtual rows beyond both poles
    up = np.zeros_like(x)
    dn = np.zeros_like(x)
    up[:, :-1] = x[:, 1:]
    dn[:, 1:] = x[:, :-1]
    return up, dn


def ode_rate_forward(x, nu, mu, f, alpha, corr, gamma):
    """Clamped rate for a (B, H, D) state. Returns ``(rate, tanh_arg)``."""
    up, dn = _neighbors(x)
    arg = nu * (up - 2.0 * x + dn) + mu * ((up - dn) * 0.5) + f + alpha * corr
    th = np.tanh(arg)
    # tanh rounds to exactly 1 for |arg| > ~19; keep the rate strictly inside gamma
    cap = np.nextafter(gamma, 0.0)
    return np.clip(gamma * th, -cap, cap), th


def ode_rate_backward(g, th, x, nu, mu, alpha, corr, gamma):
    """Adjoint of ``ode_rate_forward``.

    Returns ``(gx, gnu, gmu, gf, galpha, gcorr)``; ``gx`` holds only the
    stencil contribution (the correction MLP path flows through ``gcorr``).
    """
    ga = g * (gamma * (1.0 - th * th))
    up, dn = _neighbors(x)
    lap = up - 2.0 * x + dn
    cd = (up - dn) * 0.5
    gnu = (ga * lap).sum(axis=(0, 1))
    gmu = (ga * cd).sum(axis=(0, 1))
    gf = ga.sum(axis=(0, 1))
    galpha = float((ga * corr).sum())
    gcorr = alpha * ga
    gx = -2.0 * nu * ga
    gx[:, 1:] += (nu + 0.5 * mu) * ga[:, :-1]
    gx[:, :-1] += (nu - 0.5 * mu) * ga[:, 1:]
    return gx, gnu, gmu, gf, galpha, gcorr


def filter_valid(img, win):
    """Separable 'valid' correlation of a 2-D array with a 1-D window."""
    k = win.shape[0]
    rows = sliding_window_view(img, k, axis=1) @ win
    return sliding_window_view(rows, k, axis=0) @ win
