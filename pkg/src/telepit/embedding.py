"""Spherical positional embedding of a field into one token per latitude."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError
from .griddata import Field, Grid
from .layers import ParamGroup, param, uniform_fan_in


@dataclass
class EmbeddingParams(ParamGroup):
    E_lat: Tensor  # (H, d_lat)
    E_lon: Tensor  # (W, d_lon)
    W_in: Tensor  # (D, C)
    b_in: Tensor  # (D,)
    W_proj: Tensor  # (D, D)
    b_proj: Tensor  # (D,)

    @property
    def D(self) -> int:
        return self.W_in.shape[0]


def _sinusoid_table(angles: np.ndarray, dim: int) -> np.ndarray:
    if dim <= 0 or dim % 2:
        raise ValueError(f"table width must be positive and even, got {dim}")
    freqs = np.arange(1, dim // 2 + 1, dtype=np.float64)
    arg = angles[:, None] * freqs[None, :]
    table = np.empty((angles.shape[0], dim))
    table[:, 0::2] = np.sin(arg)
    table[:, 1::2] = np.cos(arg)
    return table


def init_positional_tables(grid: Grid, d_lat: int, d_lon: int, rng=None):
    """Initial ``(E_lat, E_lon)``: sin/cos at integer frequencies 1, 2, ...

    Column ``2k`` holds ``sin((k+1) angle)`` and ``2k+1`` holds
    ``cos((k+1) angle)``. The tables are deterministic; ``rng`` is accepted
    for call-site symmetry with the other initializers and unused.
    """
    return _sinusoid_table(grid.latitudes, d_lat), _sinusoid_table(grid.longitudes, d_lon)


def init_embedding(grid: Grid, C: int, D: int, rng: np.random.Generator, d_lat=None) -> EmbeddingParams:
    if d_lat is None:
        if D % 4:
            raise ValueError(f"D must be divisible by 4 for an even split, got {D}")
        d_lat = D // 2
    d_lon = D - d_lat
    E_lat, E_lon = init_positional_tables(grid, d_lat, d_lon)
    return EmbeddingParams(
        param(E_lat),
        param(E_lon),
        uniform_fan_in(rng, (D, C), C),
        uniform_fan_in(rng, (D,), C),
        uniform_fan_in(rng, (D, D), D),
        uniform_fan_in(rng, (D,), D),
    )


def zonal_average(values) -> np.ndarray:
    """Unweighted longitude mean: (..., C, H, W) -> (..., H, C)."""
    if isinstance(values, Field):
        values = values.values
    # Sorting makes the sum order-independent, and the residual step makes a
    # constant row average to exactly its value. Together they give bitwise
    # invariance under longitude permutation and row symmetrization.
    v = np.sort(np.asarray(values, dtype=np.float64), axis=-1)
    m = v.mean(axis=-1, keepdims=True)
    m = m + (v - m).mean(axis=-1, keepdims=True)
    return np.swapaxes(m[..., 0], -1, -2)


def embed(x, params: EmbeddingParams) -> Tensor:
    """Token sequence (B, H, D) for a batch (B, C, H, W); a Field gives (H, D)."""
    single = isinstance(x, Field) or np.ndim(x) == 3
    values = x.values if isinstance(x, Field) else np.asarray(x, dtype=np.float64)
    if single:
        values = values[None]
    _, C, H, W = values.shape
    if params.W_in.shape[1] != C or params.E_lat.shape[0] != H or params.E_lon.shape[0] != W:
        raise DataError(
            f"field {C}x{H}x{W} does not match embedding "
            f"(C={params.W_in.shape[1]}, H={params.E_lat.shape[0]}, W={params.E_lon.shape[0]})"
        )
    u = Tensor(zonal_average(values))
    h = ag.linear(u, params.W_in, params.b_in)
    p_lon = ag.mean(params.E_lon, axis=0, keepdims=True)  # (1, d_lon)
    ones = Tensor(np.ones((H, 1)))
    p = ag.concat([params.E_lat, ag.matmul(ones, p_lon)], axis=-1)  # (H, D)
    z = ag.linear(h + p, params.W_proj, params.b_proj)
    return ag.reshape(z, z.shape[1:]) if single else z
