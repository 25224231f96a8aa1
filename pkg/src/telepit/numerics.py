"""Dense numeric primitives shared by every module.

Everything here works on float64 numpy arrays. Non-finite inputs are treated
as errors rather than propagated.
"""
from __future__ import annotations

import zlib
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import NumericalError

LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent, reproducible generator for a named stream.

    Philox is counter based, so the draws are identical across platforms for
    a given (seed, stream) pair. Streams used by the package: ``"data"``,
    ``"init"``, ``"shuffle"``.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    key = zlib.crc32(stream.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def softmax_stable(logits, axis: int = -1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    _check_finite(x, "softmax logits")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x, "layer_norm input")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


def gelu(x) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the Gaussian CDF."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x, "gelu input")
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def power_spectrum_1d(row) -> np.ndarray:
    """``|DFT(row)[k]|**2`` for k = 1..W//2 (the mean term is dropped).

    Works along the last axis, so a stack of rows gives a stack of spectra.
    """
    x = np.asarray(row, dtype=np.float64)
    W = x.shape[-1]
    if W < 4:
        raise ValueError(f"power spectrum needs at least 4 samples, got {W}")
    _check_finite(x, "power spectrum input")
    X = np.fft.rfft(x, axis=-1)[..., 1 : W // 2 + 1]
    return X.real**2 + X.imag**2


def finite_diff_grad(
    f: Callable[[np.ndarray], float], p, epsilon: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter array."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = np.array(p, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + epsilon
        fp = float(f(p))
        flat[i] = old - epsilon
        fm = float(f(p))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"objective is non-finite at probe {i}")
        grad[i] = (fp - fm) / (2.0 * epsilon)
    return grad.reshape(p.shape)
