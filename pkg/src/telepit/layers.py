"""Parameter containers shared by the model blocks."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


class ParamGroup:
    """Mixin for dataclasses whose Tensor fields are learnable parameters."""

    def named_parameters(self, prefix: str = ""):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Tensor):
                yield prefix + f.name, v
            elif isinstance(v, ParamGroup):
                yield from v.named_parameters(f"{prefix}{f.name}.")


@dataclass
class MLP(ParamGroup):
    """linear -> GELU -> linear, weights stored (out, in)."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_hidden: int, d_out: int) -> "MLP":
        return cls(
            uniform_fan_in(rng, (d_hidden, d_in), d_in),
            uniform_fan_in(rng, (d_hidden,), d_in),
            uniform_fan_in(rng, (d_out, d_hidden), d_hidden),
            uniform_fan_in(rng, (d_out,), d_hidden),
        )

    def __call__(self, x) -> Tensor:
        return ag.linear(ag.gelu(ag.linear(x, self.W1, self.b1)), self.W2, self.b2)
