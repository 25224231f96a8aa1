"""End-to-end forecaster: embed -> decompose -> evolve -> attend -> fuse -> head.

Also holds the training loss, the Adam training loop and TPCK checkpoints.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .embedding import EmbeddingParams, embed, init_embedding
from .errors import CheckpointError, DataError, NumericalError
from .griddata import Dataset, Field, Grid, NormStats, compute_norm_stats, denormalize, normalize
from .layers import MLP
from .metrics import rmse_weighted
from .multiscale import decompose, init_decomposition
from .numerics import make_rng
from .physode import OdeParams, evolve, init_ode
from .teleattention import AttnParams, cross_scale_fuse, init_attention, init_fusion, ta_block

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    C: int
    H: int
    W: int
    D: int = 256
    L: int = 2
    n_heads: int = 4
    n_patterns: int = 8
    lam: float = 0.2
    gamma: float = 0.1
    ode_steps: int = 2
    ode_dt: float = 1.0

    def validate(self):
        if min(self.C, self.H, self.W, self.D, self.n_heads, self.n_patterns) < 1:
            raise ValueError("model dimensions must be positive")
        if self.D % 4 or self.D % self.n_heads:
            raise ValueError(f"D={self.D} must be divisible by 4 and by n_heads={self.n_heads}")
        if self.L < 0 or self.lam < 0 or self.gamma <= 0 or self.ode_dt <= 0 or self.ode_steps < 0:
            raise ValueError("need L >= 0, lam >= 0, gamma > 0, ode_dt > 0, ode_steps >= 0")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: EmbeddingParams
    decomp: list  # [MLP] * L
    ode: list  # [OdeParams] * (L + 1)
    attn: list  # [AttnParams] * (L + 1)
    fusion: list  # [FusionPair] * L
    head: MLP  # D -> 2D -> 2CW
    norm: Optional[NormStats] = None

    def named_parameters(self):
        yield from self.embedding.named_parameters("embedding.")
        for i, m in enumerate(self.decomp):
            yield from m.named_parameters(f"decomp.{i}.")
        for i, o in enumerate(self.ode):
            yield from o.named_parameters(f"ode.{i}.")
        for i, a in enumerate(self.attn):
            yield from a.named_parameters(f"attn.{i}.")
        for i, fp in enumerate(self.fusion):
            yield from fp.named_parameters(f"fusion.{i}.")
        yield from self.head.named_parameters("head.")

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state(self, state: dict) -> None:
        for k, v in self.named_parameters():
            v.data = np.array(state[k], dtype=np.float64).reshape(v.shape)

    def zero_grad(self):
        for _, v in self.named_parameters():
            v.grad = None


@dataclass
class ForecastPair:
    week34: Field
    week56: Field


def init_model(config: ModelConfig, grid: Grid, rng: np.random.Generator) -> ModelParams:
    config.validate()
    if (grid.H, grid.W) != (config.H, config.W):
        raise DataError("grid does not match model config")
    D, L = config.D, config.L
    return ModelParams(
        config=config,
        embedding=init_embedding(grid, config.C, D, rng),
        decomp=init_decomposition(rng, D, L),
        ode=[init_ode(rng, D, config.gamma, config.ode_dt, config.ode_steps) for _ in range(L + 1)],
        attn=[init_attention(rng, D, config.n_heads, config.n_patterns, config.lam) for _ in range(L + 1)],
        fusion=init_fusion(rng, D, L),
        head=MLP.init(rng, D, 2 * D, 2 * config.C * config.W),
    )


def forward(x, params: ModelParams, use_tele: bool = True):
    """Normalized input (B, C, H, W) -> ``(Y1, Y2)`` Tensors of the same shape.

    A single (C, H, W) input gives (C, H, W) outputs. ``use_tele=False``
    deletes the teleconnection pathway from every attention block.
    """
    values = x.values if isinstance(x, Field) else np.asarray(x, dtype=np.float64)
    single = values.ndim == 3
    if single:
        values = values[None]
    cfg = params.config
    if values.shape[1:] != (cfg.C, cfg.H, cfg.W):
        raise DataError(f"input {values.shape[1:]} does not match model ({cfg.C}, {cfg.H}, {cfg.W})")
    B = values.shape[0]
    Z = embed(values, params.embedding)
    bands = decompose(Z, params.decomp)
    bands = [evolve(b, p) for b, p in zip(bands, params.ode)]
    bands = [ta_block(b, p, use_tele=use_tele) for b, p in zip(bands, params.attn)]
    z = cross_scale_fuse(bands, params.fusion)
    y = params.head(z)  # (B, H, 2CW): horizon-major, then variable, then longitude
    y = ag.transpose(ag.reshape(y, (B, cfg.H, 2, cfg.C, cfg.W)), (0, 2, 3, 1, 4))
    Y1, Y2 = y[:, 0], y[:, 1]
    if single:
        Y1, Y2 = Y1[0], Y2[0]
    return Y1, Y2


def loss(pred, target1, target2) -> Tensor:
    """Mean squared error over both horizons, averaged over the batch."""
    Y1, Y2 = pred
    t1 = target1.values if isinstance(target1, Field) else np.asarray(target1, dtype=np.float64)
    t2 = target2.values if isinstance(target2, Field) else np.asarray(target2, dtype=np.float64)
    if Y1.shape != t1.shape or Y2.shape != t2.shape:
        raise DataError(f"prediction {Y1.shape} vs target {t1.shape} shape mismatch")
    d1 = Y1 - Tensor(t1)
    d2 = Y2 - Tensor(t2)
    return (ag.sum(d1 * d1) + ag.sum(d2 * d2)) * (1.0 / (2.0 * t1.size))


def predict(field: Field, params: ModelParams) -> ForecastPair:
    """Physical-units forecast from a physical-units input field."""
    x = normalize(field.values, params.norm) if params.norm is not None else field.values
    with ag.no_grad():
        Y1, Y2 = forward(x, params)
    y1, y2 = Y1.data, Y2.data
    if params.norm is not None:
        y1, y2 = denormalize(y1, params.norm), denormalize(y2, params.norm)
    return ForecastPair(Field(y1, field.grid, field.var_names), Field(y2, field.grid, field.var_names))


def predict_batch(params: ModelParams, inputs: np.ndarray, batch_size: int = 64, use_tele: bool = True):
    """Normalized (N, C, H, W) -> normalized predictions ``(y1, y2)``."""
    outs1, outs2 = [], []
    with ag.no_grad():
        for s in range(0, inputs.shape[0], batch_size):
            Y1, Y2 = forward(inputs[s : s + batch_size], params, use_tele=use_tele)
            outs1.append(Y1.data)
            outs2.append(Y2.data)
    return np.concatenate(outs1), np.concatenate(outs2)


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.01
    epochs: int = 20
    seed: int = 0
    L: int = 2
    D: int = 256
    n_heads: int = 4
    n_patterns: int = 8
    lam: float = 0.2
    gamma: float = 0.1
    ode_steps: int = 2
    ode_dt: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    def model_config(self, C: int, H: int, W: int) -> ModelConfig:
        return ModelConfig(
            C=C, H=H, W=W, D=self.D, L=self.L, n_heads=self.n_heads, n_patterns=self.n_patterns,
            lam=self.lam, gamma=self.gamma, ode_steps=self.ode_steps, ode_dt=self.ode_dt,
        )


class Adam:
    def __init__(self, params: ModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.named_parameters()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.named_parameters()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.named_parameters():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mean_loss(params: ModelParams, x, t1, t2, batch_size: int = 64, use_tele: bool = True) -> float:
    y1, y2 = predict_batch(params, x, batch_size, use_tele)
    return float(((y1 - t1) ** 2).mean() + ((y2 - t2) ** 2).mean()) / 2.0


def train(dataset: Dataset, config: TrainConfig, rng: Optional[np.random.Generator] = None,
          use_tele: bool = True):
    """Fit a model on the train split; returns ``(best_params, history)``.

    ``history`` is a list of dicts (epoch, train_loss, val_loss,
    val_rmse_weighted); epoch 0 is the untrained model. The returned
    parameters are those with the lowest validation loss.
    """
    config.validate()
    tr, va = dataset.subset("train"), dataset.subset("val")
    if len(tr) == 0 or len(va) == 0:
        raise DataError("train and val splits must be non-empty")
    norm = compute_norm_stats(tr)
    xs, t1s, t2s = (normalize(a, norm) for a in (tr.inputs, tr.target1, tr.target2))
    xv, t1v, t2v = (normalize(a, norm) for a in (va.inputs, va.target1, va.target2))
    C, H, W = dataset.inputs.shape[1:]
    params = init_model(config.model_config(C, H, W), dataset.grid, make_rng(config.seed, "init"))
    params.norm = norm
    shuffle = rng if rng is not None else make_rng(config.seed, "shuffle")
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    def record(epoch, train_loss):
        entry = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": mean_loss(params, xv, t1v, t2v, use_tele=use_tele),
            "val_rmse_weighted": _val_rmse(params, xv, va, use_tele),
        }
        history.append(entry)
        return entry

    history: list = []
    entry = record(0, mean_loss(params, xs, t1s, t2s, use_tele=use_tele))
    best = (entry["val_loss"], params.state())
    n = xs.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        for bi, s in enumerate(range(0, n, config.batch_size)):
            idx = order[s : s + config.batch_size]
            params.zero_grad()
            lv = loss(forward(xs[idx], params, use_tele=use_tele), t1s[idx], t2s[idx])
            value = float(lv.data)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi} (samples {idx.tolist()})")
            lv.backward()
            opt.step()
            total += value * idx.size
        entry = record(epoch, total / n)
        log.info("epoch %d train %.5f val %.5f rmse %.4f", epoch, entry["train_loss"],
                 entry["val_loss"], entry["val_rmse_weighted"])
        if entry["val_loss"] < best[0]:
            best = (entry["val_loss"], params.state())
    params.load_state(best[1])
    return params, history


def _val_rmse(params, xv, va: Dataset, use_tele: bool) -> float:
    y1, y2 = predict_batch(params, xv, use_tele=use_tele)
    y1, y2 = denormalize(y1, params.norm), denormalize(y2, params.norm)
    r1 = rmse_weighted(y1, va.target1, va.grid).mean()
    r2 = rmse_weighted(y2, va.target2, va.grid).mean()
    return float((r1 + r2) / 2.0)


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"TPCK"
CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(params: ModelParams, path, extra: Optional[dict] = None) -> None:
    """TPCK: magic, u32 version, u64 header length, JSON header, f64 LE blocks."""
    groups = [(k, v.data) for k, v in params.named_parameters()]
    header = {
        "config": asdict(params.config),
        "fingerprint": params.config.fingerprint(),
        "groups": [{"name": k, "shape": list(a.shape)} for k, a in groups],
        "norm": params.norm.to_json() if params.norm is not None else None,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(os.fspath(path), "wb") as fh:
        fh.write(_CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(hb)))
        fh.write(hb)
        for _, a in groups:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(os.fspath(path), "rb") as fh:
        blob = fh.read(_CKPT_PREFIX.size)
        if len(blob) < 4 or blob[:4] != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a TPCK checkpoint")
        if len(blob) < _CKPT_PREFIX.size:
            raise CheckpointError(f"{path}: truncated checkpoint")
        _, version, hlen = _CKPT_PREFIX.unpack(blob)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        hb = fh.read(hlen)
        if len(hb) < hlen:
            raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        return json.loads(hb.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> ModelParams:
    """Rebuild parameters; raises ``CheckpointError`` on any mismatch."""
    with open(os.fspath(path), "rb") as fh:
        blob = fh.read()
    header = read_checkpoint_header(path)
    config = ModelConfig(**header["config"])
    if header["fingerprint"] != config.fingerprint():
        raise CheckpointError(f"{path}: fingerprint does not match stored config")
    if expected is not None and expected.fingerprint() != config.fingerprint():
        raise CheckpointError(
            f"{path}: checkpoint config {header['config']} does not match expected {asdict(expected)}"
        )
    _, _, hlen = _CKPT_PREFIX.unpack_from(blob)
    offset = _CKPT_PREFIX.size + hlen
    from .griddata import make_grid

    params = init_model(config, make_grid(config.H, config.W), make_rng(0, "init"))
    shapes = {k: v.shape for k, v in params.named_parameters()}
    listed = [(g["name"], tuple(g["shape"])) for g in header["groups"]]
    if [k for k, _ in listed] != list(shapes) or any(shapes[k] != s for k, s in listed):
        raise CheckpointError(f"{path}: parameter groups do not match the model layout")
    need = offset + 8 * sum(int(np.prod(s)) for _, s in listed)
    if len(blob) < need:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if len(blob) > need:
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    state = {}
    for k, s in listed:
        n = int(np.prod(s))
        state[k] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(s).astype(np.float64)
        offset += 8 * n
    params.load_state(state)
    if header.get("norm") is not None:
        params.norm = NormStats.from_json(header["norm"])
    return params


def clone(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)


# -- gradient check -----------------------------------------------------------


def gradient_check(params: ModelParams, x, t1, t2, epsilon: float = 1e-4, rtol: float = 1e-2,
                   floor: float = 1e-6, fault: Optional[str] = None) -> list:
    """Backprop vs central differences of the training loss, per parameter group.

    Returns ``[(name, worst_relative_error, passed)]`` in ``named_parameters``
    order. ``fault`` names a group whose analytic gradient is deliberately
    corrupted, to exercise the failure path.
    """
    from .numerics import finite_diff_grad

    named = list(params.named_parameters())
    if fault is not None and fault not in dict(named):
        raise ValueError(f"unknown parameter group {fault!r}")
    params.zero_grad()
    loss(forward(x, params), t1, t2).backward()
    report = []
    for name, t in named:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if name == fault:
            analytic = analytic * 1.5 + 1e-3
        orig = t.data.copy()

        def f(v, t=t):
            t.data = v
            with ag.no_grad():
                return float(loss(forward(x, params), t1, t2).data)

        numeric = finite_diff_grad(f, orig, epsilon)
        t.data = orig
        scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), floor)
        worst = float((np.abs(analytic - numeric) / scale).max())
        report.append((name, worst, worst <= rtol))
    params.zero_grad()
    return report
