"""Lat-lon grids, gridded fields, TPIT file I/O, normalization and the
synthetic spherical-atmosphere dataset."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, FormatError

MAGIC = b"TPIT"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class Grid:
    latitudes: np.ndarray  # radians, south to north
    longitudes: np.ndarray  # radians, west to east, in [-pi, pi)
    weights: np.ndarray

    @property
    def H(self) -> int:
        return self.latitudes.shape[0]

    @property
    def W(self) -> int:
        return self.longitudes.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and np.array_equal(self.latitudes, other.latitudes)
            and np.array_equal(self.longitudes, other.longitudes)
        )

    def __hash__(self):
        return hash((self.H, self.W))


def latitude_weights(latitudes) -> np.ndarray:
    c = np.cos(np.asarray(latitudes, dtype=np.float64))
    return c / c.mean()


def make_grid(H: int, W: int, lat_span_deg: float = 90.0) -> Grid:
    """Equally spaced grid with latitudes in [-span, +span] degrees.

    The default span of 90 puts rows on both poles, as in the 1.5 degree
    121 x 240 reanalysis grid.
    """
    if H < 3 or W < 4:
        raise ValueError(f"grid needs H >= 3 and W >= 4, got {H}x{W}")
    if not 0 < lat_span_deg <= 90:
        raise ValueError("lat_span_deg must lie in (0, 90]")
    lat = np.deg2rad(np.linspace(-lat_span_deg, lat_span_deg, H))
    lon = -np.pi + 2.0 * np.pi * np.arange(W) / W
    return Grid(lat, lon, latitude_weights(lat))


def grid_from_degrees(lat_deg, lon_deg) -> Grid:
    lat = np.deg2rad(np.asarray(lat_deg, dtype=np.float64))
    lon = np.deg2rad(np.asarray(lon_deg, dtype=np.float64))
    return Grid(lat, lon, latitude_weights(lat))


@dataclass
class Field:
    values: np.ndarray  # (C, H, W)
    grid: Grid
    var_names: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(f"field values must be 3-D, got shape {self.values.shape}")
        C, H, W = self.values.shape
        if (H, W) != (self.grid.H, self.grid.W):
            raise DataError(f"field {H}x{W} does not match grid {self.grid.H}x{self.grid.W}")
        if len(self.var_names) != C:
            raise DataError(f"{C} variables but {len(self.var_names)} names")
        if not np.all(np.isfinite(self.values)):
            raise DataError("field contains non-finite values")

    @property
    def C(self) -> int:
        return self.values.shape[0]


# -- TPIT files ---------------------------------------------------------------


def write_field(field: Field, path, timestamp: Optional[str] = None) -> None:
    """Write ``path`` (binary, authoritative) and ``path.meta.json``."""
    path = os.fspath(path)
    C, H, W = field.values.shape
    payload = np.ascontiguousarray(field.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, C, H, W))
        fh.write(payload.tobytes())
    meta = {
        "var_names": list(field.var_names),
        "latitudes_deg": np.rad2deg(field.grid.latitudes).tolist(),
        "longitudes_deg": np.rad2deg(field.grid.longitudes).tolist(),
    }
    if timestamp is not None:
        meta["timestamp"] = timestamp
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)


def read_field_values(path) -> np.ndarray:
    """Read and validate the binary payload only; returns float64 (C, H, W)."""
    with open(os.fspath(path), "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a TPIT file")
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    _, version, C, H, W = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported TPIT version {version}")
    n = C * H * W
    if C == 0 or H == 0 or W == 0 or n >= 2**31:
        raise FormatError(f"{path}: implausible dimensions {C}x{H}x{W}")
    if len(blob) - _HEADER.size < 4 * n:
        raise FormatError(f"{path}: truncated payload ({C}x{H}x{W} declared)")
    if len(blob) - _HEADER.size > 4 * n:
        raise FormatError(f"{path}: trailing bytes after payload")
    vals = np.frombuffer(blob, dtype="<f4", count=n, offset=_HEADER.size)
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}: non-finite values")
    return vals.astype(np.float64).reshape(C, H, W)


def read_field(path) -> Field:
    path = os.fspath(path)
    values = read_field_values(path)
    C, H, W = values.shape
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        grid = grid_from_degrees(meta["latitudes_deg"], meta["longitudes_deg"])
        names = list(meta["var_names"])
        if grid.H != H or grid.W != W or len(names) != C:
            raise FormatError(f"{meta_path}: sidecar disagrees with binary dimensions")
    else:
        grid = make_grid(H, W)
        names = [f"var{c}" for c in range(C)]
    return Field(values, grid, names)


# -- datasets -----------------------------------------------------------------


@dataclass
class Dataset:
    """Stacked samples; ``inputs``/``target1``/``target2`` are (N, C, H, W)."""

    inputs: np.ndarray
    target1: np.ndarray
    target2: np.ndarray
    split: np.ndarray  # (N,) of "train" / "val" / "test"
    grid: Grid
    var_names: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, name: str) -> "Dataset":
        idx = np.flatnonzero(self.split == name)
        return Dataset(
            self.inputs[idx],
            self.target1[idx],
            self.target2[idx],
            self.split[idx],
            self.grid,
            self.var_names,
            self.meta,
        )

    def sample(self, i: int):
        """``(input, target1, target2)`` as Fields."""
        mk = lambda a: Field(a[i], self.grid, self.var_names)  # noqa: E731
        return mk(self.inputs), mk(self.target1), mk(self.target2)


@dataclass
class NormStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def compute_norm_stats(train: Dataset) -> NormStats:
    """Per-variable mean/std (population) over all cells of the train inputs."""
    if len(train) == 0:
        raise DataError("cannot compute normalization on an empty split")
    x = np.moveaxis(train.inputs, 1, 0).reshape(train.inputs.shape[1], -1)
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    bad = [train.var_names[c] for c in np.flatnonzero(~(std > 0))]
    if bad:
        raise DataError(f"zero-variance variables: {bad}")
    return NormStats(mean, std)


def normalize(values, stats: NormStats):
    if isinstance(values, Field):
        return Field(normalize(values.values, stats), values.grid, values.var_names)
    return (values - stats.mean[:, None, None]) / stats.std[:, None, None]


def denormalize(values, stats: NormStats):
    if isinstance(values, Field):
        return Field(denormalize(values.values, stats), values.grid, values.var_names)
    return values * stats.std[:, None, None] + stats.mean[:, None, None]


def climatology(train: Dataset) -> tuple:
    """Per-cell mean of each horizon's targets over the split: ``(clim1, clim2)``."""
    if len(train) == 0:
        raise DataError("cannot compute climatology on an empty split")
    return (
        Field(train.target1.mean(axis=0), train.grid, train.var_names),
        Field(train.target2.mean(axis=0), train.grid, train.var_names),
    )


# -- synthetic generator ------------------------------------------------------

_DEFAULT_NAMES = ["z500", "t850", "t2m", "u10", "v10", "q700"]
_SCALES = np.array([60.0, 4.0, 5.0, 3.0, 3.0, 1.5])
_OFFSETS = np.array([5500.0, 270.0, 285.0, 0.0, 0.0, 4.0])


@dataclass
class SynthConfig:
    C: int = 3
    H: int = 16
    W: int = 32
    n_samples: int = 640
    train_frac: float = 0.8
    val_frac: float = 0.1
    rho: float = 0.8
    noise_std: float = 0.15
    anomaly_std: float = 1.0
    wave_std: float = 0.5
    tele_std: float = 1.0
    decay_days: float = 40.0
    lat_span_deg: float = 90.0
    tropical_box: tuple = (-20.0, 20.0, -180.0, 180.0)  # lat0, lat1, lon0, lon1 (deg)
    extratropical_box: tuple = (40.0, 70.0, 0.0, 90.0)
    var_names: Optional[list] = None

    def names(self) -> list:
        if self.var_names is not None:
            return list(self.var_names)
        return [_DEFAULT_NAMES[c] if c < len(_DEFAULT_NAMES) else f"var{c}" for c in range(self.C)]

    def validate(self):
        if self.C < 1:
            raise ValueError("C must be >= 1")
        if self.H < 3 or self.W < 4:
            raise ValueError(f"grid needs H >= 3 and W >= 4, got {self.H}x{self.W}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not (0 <= self.train_frac <= 1 and 0 <= self.val_frac <= 1):
            raise ValueError("split fractions must lie in [0, 1]")
        if self.train_frac + self.val_frac > 1 + 1e-12:
            raise ValueError("train_frac + val_frac exceeds 1")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        if len(self.names()) != self.C:
            raise ValueError("var_names length must equal C")


def box_mask(grid: Grid, box) -> np.ndarray:
    """Boolean (H, W) mask of a (lat0, lat1, lon0, lon1) degree box."""
    lat0, lat1, lon0, lon1 = box
    lat = np.rad2deg(grid.latitudes)
    lon = np.rad2deg(grid.longitudes)
    rows = (lat >= lat0) & (lat <= lat1)
    cols = (lon >= lon0) & (lon < lon1)
    return rows[:, None] & cols[None, :]


def _box_pattern(grid: Grid, box) -> np.ndarray:
    """Smooth positive bump filling the box, zero outside."""
    lat0, lat1, lon0, lon1 = box
    lat = np.rad2deg(grid.latitudes)
    lon = np.rad2deg(grid.longitudes)
    # half-cell margins keep edge rows/columns of the box nonzero
    dlat = (lat1 - lat0) + (lat[1] - lat[0])
    dlon = (lon1 - lon0) + (lon[1] - lon[0])
    u = np.clip((lat - lat0 + 0.5 * (lat[1] - lat[0])) / dlat, 0.0, 1.0)
    v = np.clip((lon - lon0 + 0.5 * (lon[1] - lon[0])) / dlon, 0.0, 1.0)
    pat = np.sin(np.pi * u)[:, None] ** 2 * np.sin(np.pi * v)[None, :] ** 2
    return pat * box_mask(grid, box)


def split_counts(n: int, train_frac: float, val_frac: float) -> tuple:
    n_train = int(round(n * train_frac))
    n_val = int(round(n * val_frac))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def synth_dataset(config: SynthConfig, rng: np.random.Generator) -> Dataset:
    """Sample a dataset from a daily latent process.

    Each variable is a climatological zonal profile plus
      * a zonal-mean anomaly built from latitude-localized bumps, damped with
        e-folding time ``decay_days``;
      * traveling waves (zonal wavenumbers 1-3) with bump-localized
        amplitudes and random phase speeds;
      * a planted teleconnection: ``m * pattern`` in the tropical box of the
        input and ``rho * m * pattern`` in the extratropical box of both
        targets;
      * i.i.d. noise on every emitted field.
    Day 0 is the input; targets are means over days 15-28 and 29-42.
    """
    config.validate()
    C, H, W, N = config.C, config.H, config.W, config.n_samples
    grid = make_grid(H, W, config.lat_span_deg)
    lat_deg = np.rad2deg(grid.latitudes)
    lon = grid.longitudes
    scale = np.resize(_SCALES, C)
    offset = np.resize(_OFFSETS, C)

    # climatological profiles, smooth in latitude
    parity = (np.arange(C) % 2)[:, None]
    base = offset[:, None] + scale[:, None] * (
        2.0 * np.cos(grid.latitudes)[None, :] ** 2 + 0.5 * parity * np.sin(grid.latitudes)[None, :]
    )
    centers = np.arange(-80.0, 81.0, 20.0)
    bumps = np.exp(-0.5 * ((lat_deg[None, :] - centers[:, None]) / 8.0) ** 2)  # (K, H)
    K = centers.shape[0]
    n_waves = 3

    s = rng.standard_normal((N, C, K))
    amp = rng.standard_normal((N, C, K, n_waves))
    phase = rng.uniform(0.0, 2.0 * np.pi, (N, C, K, n_waves))
    speed = rng.uniform(0.05, 0.3, (N, C, K, n_waves))  # rad/day
    m = rng.standard_normal(N)
    noise = rng.standard_normal((3, N, C, H, W))

    anom_profile = np.einsum("nck,kh->nch", s, bumps) * config.anomaly_std  # (N, C, H)
    k_wave = np.arange(1, n_waves + 1)

    def wave_window(days):
        # mean over `days` of sum_k,b bump_b(lat) amp cos(k lon - speed t + phase)
        acc = np.zeros((N, C, H, W))
        for t in days:
            arg = k_wave[None, None, None, :, None] * lon + (phase - speed * t)[..., None]
            w = (amp[..., None] * np.cos(arg)).sum(axis=3)  # (N, C, K, W)
            acc += np.einsum("nckw,kh->nchw", w, bumps)
        return acc * (config.wave_std / len(days))

    def decay_window(days):
        return float(np.mean(np.exp(-np.asarray(days, dtype=np.float64) / config.decay_days)))

    win1 = list(range(15, 29))
    win2 = list(range(29, 43))
    trop = _box_pattern(grid, config.tropical_box)
    extra = _box_pattern(grid, config.extratropical_box)
    tele = config.tele_std * m[:, None, None, None]

    x0 = anom_profile[..., None] + wave_window([0]) + tele * trop
    y1 = anom_profile[..., None] * decay_window(win1) + wave_window(win1) + config.rho * tele * extra
    y2 = anom_profile[..., None] * decay_window(win2) + wave_window(win2) + config.rho * tele * extra

    def emit(anomaly, eps):
        a = anomaly + config.noise_std * eps
        return base[None, :, :, None] + scale[None, :, None, None] * a

    inputs = emit(x0, noise[0])
    target1 = emit(y1, noise[1])
    target2 = emit(y2, noise[2])

    n_train, n_val, _ = split_counts(N, config.train_frac, config.val_frac)
    split = np.array(["train"] * n_train + ["val"] * n_val + ["test"] * (N - n_train - n_val))
    meta = {
        "tele_mode": m,
        "tropical_box": tuple(config.tropical_box),
        "extratropical_box": tuple(config.extratropical_box),
    }
    return Dataset(inputs, target1, target2, split, grid, config.names(), meta)
