"""Forecast verification metrics: weighted RMSE, ACC, SpecDiv, SpecRes, MS-SSIM.

Array arguments are (..., H, W); leading dimensions are treated as a batch
and give an array of scores.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, DegenerateMetricError
from .numerics import power_spectrum_1d

SPEC_FLOOR = 1e-12
MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
METRICS = ("rmse", "acc", "spec_div", "spec_res", "ms_ssim")
CSV_COLUMNS = ("source", "variable", "horizon", "metric", "value")
DEGENERATE = "degenerate"


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def rmse_weighted(pred, truth, grid):
    """sqrt(mean over cells of w(lat) * err**2) with weights averaging to 1."""
    pred, truth = _pair(pred, truth)
    w = grid.weights[:, None]
    return np.sqrt((w * (pred - truth) ** 2).mean(axis=(-2, -1)))


def box_rmse(pred, truth, grid, mask):
    """Weighted RMSE restricted to the cells where ``mask`` (H, W) is True."""
    pred, truth = _pair(pred, truth)
    w = np.broadcast_to(grid.weights[:, None], mask.shape)[mask]
    err = (pred - truth)[..., mask]
    return np.sqrt((err * err) @ w / w.sum())


def acc(pred, truth, clim, grid):
    """Latitude-weighted anomaly correlation relative to ``clim``."""
    pred, truth = _pair(pred, truth)
    clim = np.asarray(clim, dtype=np.float64)
    w = grid.weights[:, None]
    a_p = pred - clim
    a_t = truth - clim
    num = (w * a_p * a_t).sum(axis=(-2, -1))
    den2 = (w * a_p * a_p).sum(axis=(-2, -1)) * (w * a_t * a_t).sum(axis=(-2, -1))
    if np.any(den2 <= 0):
        raise DegenerateMetricError("ACC undefined: zero anomaly in prediction or truth")
    return np.clip(num / np.sqrt(den2), -1.0, 1.0)


def normalized_spectrum(x) -> np.ndarray:
    """Zonal power spectrum averaged over latitude rows, floored and scaled to sum 1."""
    x = np.asarray(x, dtype=np.float64)
    W = x.shape[-1]
    P = power_spectrum_1d(x).mean(axis=-2)
    total = P.sum(axis=-1, keepdims=True)
    energy = W * (x * x).sum(axis=-1).mean(axis=-1)[..., None]
    if np.any(~(total > 1e-20 * energy)) or np.any(total <= 0):
        raise DegenerateMetricError("degenerate spectrum: field has no zonal variation")
    S = np.maximum(P / total, SPEC_FLOOR)
    return S / S.sum(axis=-1, keepdims=True)


def spec_div(pred, truth):
    """KL(truth spectrum || predicted spectrum)."""
    pred, truth = _pair(pred, truth)
    S = normalized_spectrum(truth)
    S_hat = normalized_spectrum(pred)
    return (S * np.log(S / S_hat)).sum(axis=-1)


def high_wavenumbers(W: int) -> np.ndarray:
    """Wavenumbers k with W//4 < k <= W//2."""
    return np.arange(W // 4 + 1, W // 2 + 1)


def spec_res(pred, truth):
    """RMS difference of normalized spectra over the high wavenumbers."""
    pred, truth = _pair(pred, truth)
    W = pred.shape[-1]
    if W < 8:
        raise ValueError(f"spec_res needs W >= 8, got {W}")
    k = high_wavenumbers(W) - 1  # spectra start at k = 1
    diff = normalized_spectrum(pred)[..., k] - normalized_spectrum(truth)[..., k]
    return np.sqrt((diff * diff).mean(axis=-1))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def ms_ssim_scales(H: int, W: int) -> int:
    return min(5, int(math.floor(math.log2(min(H, W) / 11.0))) + 1)


def _filter(img, win):
    # periodic in longitude, valid in latitude
    k = win.shape[0]
    wrapped = np.concatenate([img, img[:, : k - 1]], axis=1)
    return kernels.filter_valid(np.ascontiguousarray(wrapped), win)


def _ssim_maps(x, y, win, c1, c2):
    mx, my = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mx * mx
    syy = _filter(y * y, win) - my * my
    sxy = _filter(x * y, win) - mx * my
    cs = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    return lum * cs, cs


def ms_ssim(pred, truth, k1: float = 0.01, k2: float = 0.03, win_size: int = 11, sigma: float = 1.5) -> float:
    """Multi-scale SSIM of two (H, W) fields.

    Both fields are mapped to [0, 255] with the truth's min/max. The number
    of scales adapts to the grid; contrast-structure terms are clipped at 0.
    """
    pred, truth = _pair(pred, truth)
    if pred.ndim != 2:
        raise ValueError("ms_ssim takes 2-D fields")
    H, W = truth.shape
    if min(H, W) < win_size:
        raise ValueError(f"field {H}x{W} smaller than the {win_size}-point window")
    lo, hi = truth.min(), truth.max()
    if hi == lo:
        raise DegenerateMetricError("ms_ssim undefined for a constant truth field")
    scale = 255.0 / (hi - lo)
    x = (truth - lo) * scale
    y = (pred - lo) * scale
    c1, c2 = (k1 * 255.0) ** 2, (k2 * 255.0) ** 2
    M = ms_ssim_scales(H, W)
    weights = MS_SSIM_WEIGHTS[:M] / MS_SSIM_WEIGHTS[:M].sum()
    win = gaussian_window(win_size, sigma)
    result = 1.0
    for j in range(M):
        ssim_map, cs_map = _ssim_maps(x, y, win, c1, c2)
        term = ssim_map.mean() if j == M - 1 else cs_map.mean()
        result *= max(term, 0.0) ** weights[j]
        if j < M - 1:
            h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
            x = x[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
            y = y[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return float(result)


# -- reports ------------------------------------------------------------------


def _safe_mean(fn, n):
    vals = []
    for i in range(n):
        try:
            vals.append(float(fn(i)))
        except DegenerateMetricError:
            continue
    return float(np.mean(vals)) if vals else None


def score_sample_set(pred, truth, clim, grid) -> dict:
    """All five metrics for stacked (N, H, W) fields, averaged over samples.

    Samples where a metric is undefined are skipped; ``None`` marks a metric
    undefined for every sample.
    """
    n = pred.shape[0]
    return {
        "rmse": float(rmse_weighted(pred, truth, grid).mean()),
        "acc": _safe_mean(lambda i: acc(pred[i], truth[i], clim, grid), n),
        "spec_div": _safe_mean(lambda i: spec_div(pred[i], truth[i]), n),
        "spec_res": _safe_mean(lambda i: spec_res(pred[i], truth[i]), n),
        "ms_ssim": _safe_mean(lambda i: ms_ssim(pred[i], truth[i]), n),
    }


@dataclass
class MetricReport:
    """Rows of (source, variable, horizon, metric, value); value None = degenerate."""

    rows: list = field(default_factory=list)

    def add(self, source: str, preds: tuple, truths: tuple, clims: tuple, grid, var_names) -> None:
        """Score one forecast source; each tuple holds (N, C, H, W) arrays per horizon."""
        for h, (p, t, c) in enumerate(zip(preds, truths, clims), start=1):
            for v, name in enumerate(var_names):
                scores = score_sample_set(p[:, v], t[:, v], c[v], grid)
                for metric in METRICS:
                    self.rows.append(
                        {"source": source, "variable": name, "horizon": h, "metric": metric, "value": scores[metric]}
                    )

    def get(self, source, variable, horizon, metric):
        for r in self.rows:
            if (r["source"], r["variable"], r["horizon"], r["metric"]) == (source, variable, horizon, metric):
                return r["value"]
        raise KeyError((source, variable, horizon, metric))

    def aggregate(self) -> dict:
        out: dict = {}
        for r in self.rows:
            if r["value"] is not None:
                out.setdefault(r["source"], {}).setdefault(r["metric"], []).append(r["value"])
        return {s: {m: float(np.mean(v)) for m, v in d.items()} for s, d in out.items()}

    def to_csv(self, path) -> None:
        with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                val = DEGENERATE if r["value"] is None else repr(float(r["value"]))
                w.writerow([r["source"], r["variable"], r["horizon"], r["metric"], val])

    def to_json(self, path) -> None:
        with open(os.fspath(path), "w", encoding="utf-8") as fh:
            json.dump({"columns": list(CSV_COLUMNS), "rows": self.rows, "aggregate": self.aggregate()}, fh, indent=1)
