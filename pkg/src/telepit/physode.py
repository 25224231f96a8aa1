"""Physics-informed latent ODE along latitude, integrated with explicit Euler.

The rate for row i and feature d is

    gamma * tanh(nu_d * (x[i+1] - 2 x[i] + x[i-1])
                 + mu_d * (x[i+1] - x[i-1]) / 2
                 + f_d + alpha * MLP(x[i])_d)

with zero virtual rows beyond both poles. The stencil/tanh part runs in the
compiled kernel when available.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import MLP, ParamGroup, param


@dataclass
class OdeParams(ParamGroup):
    nu: Tensor  # (D,) diffusion
    mu: Tensor  # (D,) advection
    f: Tensor  # (D,) forcing
    alpha: Tensor  # () correction weight
    correction: MLP  # D -> D -> D
    gamma: float = 0.1
    dt: float = 1.0
    steps: int = 2

    def __post_init__(self):
        if self.gamma <= 0 or self.dt <= 0 or self.steps < 0:
            raise ValueError("need gamma > 0, dt > 0, steps >= 0")


def init_ode(rng, D: int, gamma: float = 0.1, dt: float = 1.0, steps: int = 2) -> OdeParams:
    # near-identity flow at start: weak diffusion, no advection or forcing
    return OdeParams(
        nu=param(np.full(D, 0.1)),
        mu=param(np.zeros(D)),
        f=param(np.zeros(D)),
        alpha=param(0.1),
        correction=MLP.init(rng, D, D, D),
        gamma=gamma,
        dt=dt,
        steps=steps,
    )


def ode_rhs(X, p: OdeParams) -> Tensor:
    """Rate of change for an (H, D) or (B, H, D) band state."""
    X = ag.as_tensor(X)
    single = X.data.ndim == 2
    if single:
        X = ag.reshape(X, (1,) + X.shape)
    rate = ag.ode_rate(X, p.nu, p.mu, p.f, p.alpha, p.correction(X), p.gamma)
    return ag.reshape(rate, rate.shape[1:]) if single else rate


def evolve(X, p: OdeParams) -> Tensor:
    """``steps`` explicit Euler steps of size ``dt``."""
    X = ag.as_tensor(X)
    for _ in range(p.steps):
        X = X + p.dt * ode_rhs(X, p)
    return X
