"""Learnable multi-level split of the token sequence into frequency bands."""
from __future__ import annotations

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError
from .layers import MLP


def init_decomposition(rng, D: int, L: int) -> list:
    """One ``MLP`` (D -> 2D -> 2D) per level."""
    if L < 0:
        raise ValueError("L must be >= 0")
    return [MLP.init(rng, D, 2 * D, 2 * D) for _ in range(L)]


def decompose(Z, levels: list) -> list:
    """Bands ordered low to high frequency: ``[A_L, D_L, D_{L-1}, ..., D_1]``.

    At each level the first half of the MLP output is the approximation and
    the second half the detail.
    """
    Z = ag.as_tensor(Z)
    D = Z.shape[-1]
    approx, details = Z, []
    for mlp in levels:
        if mlp.W1.shape[1] != D:
            raise DataError(f"decomposition expects width {mlp.W1.shape[1]}, got {D}")
        out = mlp(approx)
        approx = out[..., :D]
        details.append(out[..., D:])
    return [approx] + details[::-1]
