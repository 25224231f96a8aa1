"""Teleconnection-aware attention over latitude tokens and cross-scale fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError
from .layers import MLP, ParamGroup, param, uniform_fan_in


@dataclass
class AttnParams(ParamGroup):
    Wq: Tensor  # (N_h, D, d_k)
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor  # (D, D), applied as heads @ Wo
    P: Tensor  # (n_p, D) teleconnection patterns
    Wp: Tensor  # (D, n_p)
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: MLP  # D -> 2D -> D
    lam: float = 0.2

    @property
    def n_heads(self) -> int:
        return self.Wq.shape[0]


@dataclass
class FusionPair(ParamGroup):
    mlp: MLP  # 2D -> 2D -> D
    ln_g: Tensor
    ln_b: Tensor


def init_attention(rng, D: int, n_heads: int, n_patterns: int, lam: float = 0.2) -> AttnParams:
    if D % n_heads:
        raise ValueError(f"D={D} not divisible by {n_heads} heads")
    if n_patterns < 1 or lam < 0:
        raise ValueError("need n_patterns >= 1 and lam >= 0")
    dk = D // n_heads
    return AttnParams(
        Wq=uniform_fan_in(rng, (n_heads, D, dk), D),
        Wk=uniform_fan_in(rng, (n_heads, D, dk), D),
        Wv=uniform_fan_in(rng, (n_heads, D, dk), D),
        Wo=uniform_fan_in(rng, (D, D), D),
        P=param(rng.normal(0.0, 0.02, size=(n_patterns, D))),
        Wp=uniform_fan_in(rng, (D, n_patterns), D),
        ln1_g=param(np.ones(D)),
        ln1_b=param(np.zeros(D)),
        ln2_g=param(np.ones(D)),
        ln2_b=param(np.zeros(D)),
        ffn=MLP.init(rng, D, 2 * D, D),
        lam=lam,
    )


def init_fusion(rng, D: int, L: int) -> list:
    return [
        FusionPair(MLP.init(rng, 2 * D, 2 * D, D), param(np.ones(D)), param(np.zeros(D)))
        for _ in range(L)
    ]


def _batched(X):
    X = ag.as_tensor(X)
    if X.data.ndim == 2:
        return ag.reshape(X, (1,) + X.shape), True
    return X, False


def teleconnection_state(X, p: AttnParams):
    """Global mode mixture: returns ``(c, omega)`` with shapes (B, D), (B, n_p)."""
    X, _ = _batched(X)
    xbar = ag.mean(X, axis=-2)
    omega = ag.softmax(ag.matmul(xbar, p.Wp), axis=-1)
    return ag.matmul(omega, p.P), omega


def ta_attention(X, p: AttnParams, use_tele: bool = True, return_weights: bool = False):
    """Multi-head self-attention whose logits carry the additive bias
    ``lam * (q_tel . K_j) / sqrt(d_k)`` with ``q_tel = c @ W^Q``.

    ``use_tele=False`` removes the teleconnection pathway entirely.
    """
    X, single = _batched(X)
    B, H, D = X.shape
    if p.Wq.shape[1] != D:
        raise DataError(f"attention expects width {p.Wq.shape[1]}, got {D}")
    n_heads, _, dk = p.Wq.shape
    scale = 1.0 / np.sqrt(dk)
    Xh = ag.reshape(X, (B, 1, H, D))
    Q = ag.matmul(Xh, p.Wq)  # (B, N_h, H, d_k)
    K = ag.matmul(Xh, p.Wk)
    V = ag.matmul(Xh, p.Wv)
    Kt = ag.transpose(K, (0, 1, 3, 2))
    logits = ag.matmul(Q, Kt) * scale
    if use_tele:
        c, _ = teleconnection_state(X, p)
        q_tel = ag.matmul(ag.reshape(c, (B, 1, 1, D)), p.Wq)  # (B, N_h, 1, d_k)
        bias = ag.matmul(q_tel, Kt) * scale  # (B, N_h, 1, H), same for every query row
        logits = logits + p.lam * bias
    A = ag.softmax(logits, axis=-1)
    heads = ag.transpose(ag.matmul(A, V), (0, 2, 1, 3))
    out = ag.matmul(ag.reshape(heads, (B, H, D)), p.Wo)
    if single:
        out = ag.reshape(out, (H, D))
    if return_weights:
        return out, A.data
    return out


def ta_block(X, p: AttnParams, use_tele: bool = True) -> Tensor:
    """Pre-norm residual block: attention then feed-forward."""
    X = ag.as_tensor(X)
    X1 = X + ta_attention(ag.layer_norm(X, p.ln1_g, p.ln1_b), p, use_tele=use_tele)
    return X1 + p.ffn(ag.layer_norm(X1, p.ln2_g, p.ln2_b))


def cross_scale_fuse(bands: list, fusion: list) -> Tensor:
    """Cascade low -> high frequency, then average all bands."""
    if len(bands) != len(fusion) + 1:
        raise DataError(f"{len(bands)} bands need {len(bands) - 1} fusion pairs, got {len(fusion)}")
    hats = list(bands)
    for ell, pair in enumerate(fusion):
        mixed = pair.mlp(ag.concat([hats[ell], hats[ell + 1]], axis=-1))
        hats[ell + 1] = ag.layer_norm(mixed, pair.ln_g, pair.ln_b)
    total = hats[0]
    for h in hats[1:]:
        total = total + h
    return total * (1.0 / len(hats))
