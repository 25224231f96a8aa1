"""Command-line interface: ``telepit <command> [options]``.

Every command reads one JSON config (all keys optional, unknown keys are an
error) and accepts ``--set key=value`` overrides. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure, 4 gradient-check failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, GradCheckError, TelepitError
from .griddata import (
    Dataset,
    Field,
    SynthConfig,
    box_mask,
    climatology,
    grid_from_degrees,
    normalize,
    read_field,
    read_field_values,
    synth_dataset,
    write_field,
)
from .metrics import MetricReport, box_rmse
from .model import (
    ModelConfig,
    TrainConfig,
    gradient_check,
    init_model,
    load_checkpoint,
    predict,
    predict_batch,
    save_checkpoint,
    train,
)
from .numerics import make_rng

log = logging.getLogger("telepit")

MANIFEST = "manifest.json"
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_rmse_weighted")
SWEEP_COLUMNS = ("lambda", "seed", "best_epoch", "val_loss", "val_rmse_weighted", "box_rmse")

_EXTRA_KEYS = {
    "data_seed": (7, "seed for the synthetic generator"),
    "grad_eps": (1e-4, "finite-difference step for grad-check"),
    "grad_rtol": (1e-2, "relative tolerance for grad-check"),
    "grad_floor": (1e-6, "absolute floor in the grad-check denominator"),
}
_SYNTH_KEYS = [f.name for f in dataclasses.fields(SynthConfig)]
_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig)]


def default_config() -> dict:
    cfg = dataclasses.asdict(SynthConfig())
    cfg.update(dataclasses.asdict(TrainConfig()))
    cfg.update({k: v for k, (v, _) in _EXTRA_KEYS.items()})
    return cfg


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise TypeError
            return tuple(float(v) for v in value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}") from None
    return value


def resolve_config(path: Optional[str] = None, overrides=()) -> dict:
    """Defaults <- JSON file <- ``key=value`` overrides, with type checks."""
    cfg = default_config()
    updates = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        updates.update(loaded)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            updates[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            updates[key.strip()] = raw
    unknown = sorted(set(updates) - set(cfg))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for k, v in updates.items():
        cfg[k] = _coerce(k, v, cfg[k])
    try:
        synth_config(cfg).validate()
        train_config(cfg).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(**{k: cfg[k] for k in _SYNTH_KEYS})


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k: cfg[k] for k in _TRAIN_KEYS})


def _config_help() -> str:
    lines = ["config keys (JSON file or --set key=value):"]
    for k, v in default_config().items():
        note = _EXTRA_KEYS[k][1] if k in _EXTRA_KEYS else ""
        lines.append(f"  {k} = {json.dumps(v)}" + (f"  ({note})" if note else ""))
    return "\n".join(lines)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _makedirs(path) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {path}: {exc}") from exc


# -- dataset directories ------------------------------------------------------


def write_dataset(ds: Dataset, out_dir, cfg: dict) -> dict:
    """TPIT files for every sample plus ``manifest.json``; returns the manifest."""
    sample_dir = os.path.join(out_dir, "samples")
    _makedirs(sample_dir)
    samples = []
    for i in range(len(ds)):
        entry = {"id": i, "split": str(ds.split[i])}
        for kind, arr in (("input", ds.inputs), ("target1", ds.target1), ("target2", ds.target2)):
            rel = f"samples/{i:05d}_{kind}.tpit"
            write_field(Field(arr[i], ds.grid, ds.var_names), os.path.join(out_dir, rel))
            entry[kind] = rel
        samples.append(entry)
    manifest = {
        "format": "telepit-dataset",
        "version": 1,
        "seed": cfg["data_seed"],
        "generator": dataclasses.asdict(synth_config(cfg)),
        "var_names": list(ds.var_names),
        "latitudes_deg": np.rad2deg(ds.grid.latitudes).tolist(),
        "longitudes_deg": np.rad2deg(ds.grid.longitudes).tolist(),
        "counts": {s: int((ds.split == s).sum()) for s in ("train", "val", "test")},
        "splits": {s: [int(i) for i in np.flatnonzero(ds.split == s)] for s in ("train", "val", "test")},
        "tropical_box": list(ds.meta.get("tropical_box", ())),
        "extratropical_box": list(ds.meta.get("extratropical_box", ())),
        "samples": samples,
    }
    _write_json(os.path.join(out_dir, MANIFEST), manifest)
    return manifest


def read_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, MANIFEST)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"no dataset manifest at {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from exc


def load_dataset(data_dir) -> Dataset:
    man = read_manifest(data_dir)
    grid = grid_from_degrees(man["latitudes_deg"], man["longitudes_deg"])
    arrays = {k: [] for k in ("input", "target1", "target2")}
    for s in man["samples"]:
        for k in arrays:
            arrays[k].append(read_field_values(os.path.join(data_dir, s[k])))
    if not man["samples"]:
        raise DataError(f"{data_dir}: manifest lists no samples")
    stacked = {k: np.stack(v) for k, v in arrays.items()}
    if stacked["input"].shape[1:] != (len(man["var_names"]), grid.H, grid.W):
        raise DataError(f"{data_dir}: sample shapes disagree with the manifest grid")
    meta = {k: tuple(man[k]) for k in ("tropical_box", "extratropical_box") if man.get(k)}
    split = np.array([s["split"] for s in man["samples"]])
    return Dataset(stacked["input"], stacked["target1"], stacked["target2"], split, grid, man["var_names"], meta)


def _check_data_matches(cfg: dict, ds: Dataset) -> None:
    C, H, W = ds.inputs.shape[1:]
    if (cfg["C"], cfg["H"], cfg["W"]) != (C, H, W):
        raise DataError(f"config grid ({cfg['C']}, {cfg['H']}, {cfg['W']}) does not match data ({C}, {H}, {W})")


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args.config, args.set)
    ds = synth_dataset(synth_config(cfg), make_rng(cfg["data_seed"], "data"))
    man = write_dataset(ds, args.out, cfg)
    print(f"wrote {len(ds)} samples to {args.out} "
          f"(train {man['counts']['train']}, val {man['counts']['val']}, test {man['counts']['test']})")
    return 0


def write_history(history: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for h in history:
            w.writerow([h["epoch"]] + [repr(float(h[k])) for k in HISTORY_COLUMNS[1:]])


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set)
    ds = load_dataset(args.data)
    _check_data_matches(cfg, ds)
    _makedirs(args.out)
    params, history = train(ds, train_config(cfg))
    save_checkpoint(params, os.path.join(args.out, "checkpoint.tpck"), extra={"run_config": cfg})
    write_history(history, os.path.join(args.out, "history.csv"))
    _write_json(os.path.join(args.out, "config.json"), cfg)
    best = min(history, key=lambda h: h["val_loss"])
    print(f"trained {len(history) - 1} epochs; best epoch {best['epoch']} "
          f"val_loss {best['val_loss']:.6f} val_rmse_weighted {best['val_rmse_weighted']:.6f}")
    return 0


def _check_checkpoint_matches(config: ModelConfig, ds: Dataset) -> None:
    C, H, W = ds.inputs.shape[1:]
    if (config.C, config.H, config.W) != (C, H, W):
        raise DataError(
            f"checkpoint fingerprint {config.fingerprint()} is for ({config.C}, {config.H}, {config.W}) "
            f"but the data grid is ({C}, {H}, {W})"
        )


def evaluate(params, ds: Dataset, split: str, oracle: bool = False, batch_size: int = 64) -> MetricReport:
    """Model, persistence and climatology scores on one split, physical units."""
    part = ds.subset(split)
    if len(part) == 0:
        raise DataError(f"split {split!r} is empty")
    truths = (part.target1, part.target2)
    if oracle:
        preds = truths
    else:
        if params.norm is None:
            raise DataError("checkpoint carries no normalization statistics")
        from .griddata import denormalize

        y1, y2 = predict_batch(params, normalize(part.inputs, params.norm), batch_size)
        preds = (denormalize(y1, params.norm), denormalize(y2, params.norm))
    c1, c2 = climatology(ds.subset("train"))
    clims = (c1.values, c2.values)
    report = MetricReport()
    report.add("model", preds, truths, clims, ds.grid, ds.var_names)
    report.add("persistence", (part.inputs, part.inputs), truths, clims, ds.grid, ds.var_names)
    report.add(
        "climatology",
        tuple(np.broadcast_to(c, t.shape) for c, t in zip(clims, truths)),
        truths, clims, ds.grid, ds.var_names,
    )
    return report


def cmd_evaluate(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    _check_checkpoint_matches(params.config, ds)
    report = evaluate(params, ds, args.split, oracle=args.oracle)
    _makedirs(args.out)
    report.to_csv(os.path.join(args.out, "metrics.csv"))
    report.to_json(os.path.join(args.out, "metrics.json"))
    for source, scores in report.aggregate().items():
        print(source, " ".join(f"{k}={v:.6g}" for k, v in scores.items()))
    return 0


def cmd_predict(args) -> int:
    params = load_checkpoint(args.checkpoint)
    field = read_field(args.input)
    cfg = params.config
    if field.values.shape != (cfg.C, cfg.H, cfg.W):
        raise DataError(f"input {field.values.shape} does not match checkpoint ({cfg.C}, {cfg.H}, {cfg.W})")
    out = predict(field, params)
    write_field(out.week34, args.out_prefix + "_week34.tpit")
    write_field(out.week56, args.out_prefix + "_week56.tpit")
    print(f"wrote {args.out_prefix}_week34.tpit and {args.out_prefix}_week56.tpit")
    return 0


GRAD_FIXTURE = dict(C=3, H=8, W=12, D=16, L=1, n_heads=2, n_patterns=2, ode_steps=2)


def run_grad_check(cfg: dict, fault: Optional[str] = None, seed: int = 0, batch: int = 2) -> list:
    from .griddata import make_grid

    mc = ModelConfig(**GRAD_FIXTURE, lam=cfg["lam"], gamma=cfg["gamma"], ode_dt=cfg["ode_dt"])
    params = init_model(mc, make_grid(mc.H, mc.W), make_rng(seed, "init"))
    rng = make_rng(seed, "data")
    # move the near-zero initial patterns off the origin so their gradient is exercised
    for a in params.attn:
        a.P.data = rng.normal(size=a.P.shape)
    x, t1, t2 = (rng.normal(size=(batch, mc.C, mc.H, mc.W)) for _ in range(3))
    return gradient_check(params, x, t1, t2, cfg["grad_eps"], cfg["grad_rtol"], cfg["grad_floor"], fault)


def cmd_grad_check(args) -> int:
    cfg = resolve_config(args.config, args.set)
    try:
        report = run_grad_check(cfg, fault=args.inject_fault)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    width = max(len(n) for n, _, _ in report)
    for name, err, ok in report:
        print(f"{name:<{width}}  {err:.3e}  {'ok' if ok else 'FAIL'}")
    failed = [n for n, _, ok in report if not ok]
    if failed:
        raise GradCheckError(f"gradient check failed for: {', '.join(failed)}")
    print(f"all {len(report)} parameter groups within rtol {cfg['grad_rtol']}")
    return 0


def sweep_row(ds: Dataset, params, history: list, lam: float, seed: int) -> dict:
    """Summary of one trained model for the lambda sweep.

    ``box_rmse`` is the validation weighted RMSE over the extratropical box,
    in normalized units, averaged over variables and both horizons.
    """
    va = ds.subset("val")
    box = ds.meta.get("extratropical_box")
    mask = box_mask(ds.grid, box) if box else np.ones((ds.grid.H, ds.grid.W), dtype=bool)
    y1, y2 = predict_batch(params, normalize(va.inputs, params.norm))
    r1 = box_rmse(y1, normalize(va.target1, params.norm), ds.grid, mask).mean()
    r2 = box_rmse(y2, normalize(va.target2, params.norm), ds.grid, mask).mean()
    best = min(history, key=lambda h: h["val_loss"])
    return {
        "lambda": lam,
        "seed": seed,
        "best_epoch": best["epoch"],
        "val_loss": best["val_loss"],
        "val_rmse_weighted": best["val_rmse_weighted"],
        "box_rmse": float((r1 + r2) / 2.0),
    }


def sweep_lambda(ds: Dataset, tc: TrainConfig, values, history_dir=None) -> list:
    """One training run per lambda on shared data and seed."""
    if not values:
        raise ConfigError("sweep needs at least one lambda value")
    rows = []
    for lam in values:
        params, history = train(ds, dataclasses.replace(tc, lam=float(lam)))
        rows.append(sweep_row(ds, params, history, lam, tc.seed))
        if history_dir is not None:
            write_history(history, os.path.join(history_dir, f"history_lambda_{lam!r}.csv"))
    return rows


def write_sweep(rows: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r["lambda"]), r["seed"], r["best_epoch"]]
                       + [repr(float(r[k])) for k in SWEEP_COLUMNS[3:]])


def _parse_values(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad lambda list {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise ConfigError("lambda values must be a non-empty list of numbers >= 0")
    return vals


def cmd_sweep_lambda(args) -> int:
    cfg = resolve_config(args.config, args.set)
    values = _parse_values(args.values)
    ds = load_dataset(args.data)
    _check_data_matches(cfg, ds)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    _makedirs(out_dir)
    rows = sweep_lambda(ds, train_config(cfg), values, history_dir=out_dir if args.keep_history else None)
    write_sweep(rows, args.out)
    for r in rows:
        print(f"lambda={r['lambda']!r} val_rmse_weighted={r['val_rmse_weighted']:.6f} box_rmse={r['box_rmse']:.6f}")
    return 0


# -- entry point --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="telepit",
        description="Teleconnection-aware S2S forecasting toolkit.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_config_help() if config else None,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset directory")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")

    p = add("evaluate", cmd_evaluate, "score a checkpoint with all metrics and baselines", config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True, help="directory for metrics.csv and metrics.json")
    p.add_argument("--oracle", action="store_true", help="score the targets themselves (sanity check)")

    p = add("predict", cmd_predict, "forecast both horizons for one TPIT input file", config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out-prefix", required=True)

    p = add("grad-check", cmd_grad_check, "finite-difference check of every parameter group")
    p.add_argument("--inject-fault", metavar="GROUP", default=None, help="corrupt one group's gradient (test hook)")

    p = add("sweep-lambda", cmd_sweep_lambda, "train once per lambda value and compare")
    p.add_argument("--data", required=True)
    p.add_argument("--values", required=True, help="comma-separated lambda values")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--keep-history", action="store_true", help="write one history CSV per lambda next to --out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TelepitError as exc:
        print(f"telepit: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:  # invalid model/config combination caught by a validator
        print(f"telepit: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"telepit: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
