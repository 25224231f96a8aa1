"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training criteria (7-9) share one cache of runs so that every distinct
(seed, lambda) model is trained once, then once more for the determinism
check. Expect several minutes on one core.
"""
import io
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from telepit import cli
from telepit.embedding import embed, init_embedding, zonal_average
from telepit.griddata import (
    Field,
    SynthConfig,
    climatology,
    denormalize,
    make_grid,
    normalize,
    read_field,
    synth_dataset,
    write_field,
)
from telepit.metrics import acc, ms_ssim, rmse_weighted, spec_div, spec_res
from telepit.model import ModelConfig, TrainConfig, forward, init_model, load_checkpoint, predict_batch, save_checkpoint, train
from telepit.numerics import make_rng
from telepit.physode import evolve, init_ode, ode_rhs

pytestmark = pytest.mark.slow

TOY = dict(D=32, L=2, n_heads=4, n_patterns=4, learning_rate=1e-3, batch_size=16)
TOY_EPOCHS = 40
SEEDS = (7, 8, 9)


def report(capsys, number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# -- 1 ----------------------------------------------------------------------


def test_c1_full_model_gradient_oracle(capsys):
    cfg = cli.resolve_config()
    t0 = time.process_time()
    rows = cli.run_grad_check(cfg)
    elapsed = time.process_time() - t0
    worst = max(rows, key=lambda r: r[1])
    failed = [n for n, _, ok in rows if not ok]
    ok = not failed and elapsed <= 120.0 and cfg["grad_eps"] == 1e-4 and cfg["grad_rtol"] == 1e-2
    report(capsys, 1, "full-model gradient oracle", ok,
           f"{len(rows)} groups, worst {worst[0]} rel {worst[1]:.2e}, failed {failed or 'none'}, "
           f"{elapsed:.1f}s cpu")


# -- 2 ----------------------------------------------------------------------


def test_c2_lambda_zero_reduction(capsys):
    worst = 0.0
    for seed in range(10):
        cfg = ModelConfig(C=3, H=8, W=12, D=16, L=1, n_heads=2, n_patterns=2, lam=0.0)
        params = init_model(cfg, make_grid(8, 12), make_rng(seed, "init"))
        rng = make_rng(seed, "data")
        for a in params.attn:
            a.P.data = rng.normal(size=a.P.shape)
        x = rng.normal(size=(2, 3, 8, 12))
        for y, z in zip(forward(x, params), forward(x, params, use_tele=False)):
            worst = max(worst, float(np.max(np.abs(y.data - z.data))))
    report(capsys, 2, "lambda=0 reduction", worst <= 1e-10, f"max |diff| {worst:.1e} over 10 fixtures")


# -- 3 ----------------------------------------------------------------------


def test_c3_ode_bound(capsys):
    rng = np.random.default_rng(3)
    worst_step, worst_rate = -np.inf, -np.inf
    for _ in range(100):
        H, D = int(rng.integers(1, 12)), int(rng.integers(1, 9))
        gamma, dt, steps = float(rng.uniform(0.01, 1.0)), float(rng.uniform(0.1, 2.0)), int(rng.integers(0, 6))
        p = init_ode(rng, D, gamma=gamma, dt=dt, steps=steps)
        scale = 10.0 ** rng.uniform(-1, 2)
        for t in (p.nu, p.mu, p.f):
            t.data = rng.normal(scale=scale, size=D)
        p.alpha.data = np.array(rng.normal(scale=scale))
        X = rng.normal(scale=10.0 ** rng.uniform(-1, 2), size=(H, D))
        step = np.max(np.abs(evolve(X, p).data - X)) - (gamma * dt * steps + 1e-12)
        rate = np.max(np.abs(ode_rhs(X, p).data)) - gamma
        worst_step, worst_rate = max(worst_step, step), max(worst_rate, rate)
    ok = worst_step <= 0 and worst_rate < 0
    report(capsys, 3, "ODE bound", ok,
           f"max excess over gamma*dt*steps+1e-12 = {worst_step:.2e}; max |rate| - gamma = {worst_rate:.2e}")


# -- 4 ----------------------------------------------------------------------


def test_c4_zonal_projection_invariance(capsys):
    rng = np.random.default_rng(4)
    exact = 0
    for _ in range(20):
        C, H, W = int(rng.integers(1, 5)), int(rng.integers(3, 20)), int(rng.integers(4, 40))
        grid = make_grid(H, W)
        params = init_embedding(grid, C, 8, rng)
        x = rng.normal(scale=10.0 ** rng.uniform(-3, 3), size=(C, H, W))
        sym = np.broadcast_to(np.swapaxes(zonal_average(x), 0, 1)[:, :, None], x.shape)
        exact += bool(np.array_equal(embed(Field(x, grid, ["v"] * C), params).data,
                                     embed(Field(sym.copy(), grid, ["v"] * C), params).data))
    report(capsys, 4, "zonal-projection invariance", exact == 20, f"{exact}/20 fields bitwise equal")


# -- 5 ----------------------------------------------------------------------


def _naive_rmse(p, t, w):
    H, W = p.shape
    return math.sqrt(sum(w[i] * (p[i, j] - t[i, j]) ** 2 for i in range(H) for j in range(W)) / (H * W))


def _naive_acc(p, t, c, w):
    H, W = p.shape
    cells = [(i, j) for i in range(H) for j in range(W)]
    num = sum(w[i] * (p[i, j] - c[i, j]) * (t[i, j] - c[i, j]) for i, j in cells)
    a = sum(w[i] * (p[i, j] - c[i, j]) ** 2 for i, j in cells)
    b = sum(w[i] * (t[i, j] - c[i, j]) ** 2 for i, j in cells)
    return num / math.sqrt(a * b)


def _naive_spectrum(x):
    H, W = x.shape
    P = []
    for k in range(1, W // 2 + 1):
        acc_k = 0.0
        for i in range(H):
            re = sum(x[i, n] * math.cos(2 * math.pi * k * n / W) for n in range(W))
            im = sum(x[i, n] * math.sin(2 * math.pi * k * n / W) for n in range(W))
            acc_k += re * re + im * im
        P.append(acc_k / H)
    S = [max(v / sum(P), 1e-12) for v in P]
    return [v / sum(S) for v in S]


def test_c5_metric_oracles(capsys):
    rng = np.random.default_rng(5)
    err_rmse = err_acc = err_res = 0.0
    div_self, div_min, ssim_self = 0.0, np.inf, 0.0
    for _ in range(50):
        H, W = int(rng.integers(3, 13)), int(rng.integers(8, 25))
        g = make_grid(H, W)
        p, t, c = rng.normal(size=(3, H, W))
        err_rmse = max(err_rmse, abs(rmse_weighted(p, t, g) - _naive_rmse(p, t, g.weights)))
        err_acc = max(err_acc, abs(acc(p, t, c, g) - _naive_acc(p, t, c, g.weights)))
        S, Sh = _naive_spectrum(t), _naive_spectrum(p)
        ks = [k for k in range(1, W // 2 + 1) if k > W // 4]
        naive_res = math.sqrt(sum((Sh[k - 1] - S[k - 1]) ** 2 for k in ks) / len(ks))
        err_res = max(err_res, abs(spec_res(p, t) - naive_res))
        div_self = max(div_self, abs(spec_div(t, t)))
        div_min = min(div_min, spec_div(p, t))
        big = rng.normal(size=(int(rng.integers(11, 40)), int(rng.integers(11, 60))))
        ssim_self = max(ssim_self, abs(ms_ssim(big, big) - 1.0))
    w3 = make_grid(3, 4, lat_span_deg=60.0).weights
    weights_ok = np.allclose(w3, [0.75, 1.5, 0.75], rtol=0, atol=1e-15)
    ok = (err_rmse <= 1e-12 and err_acc <= 1e-12 and err_res <= 1e-12 and div_self <= 1e-12
          and div_min >= 0 and ssim_self <= 1e-9 and weights_ok)
    report(capsys, 5, "metric oracles", ok,
           f"rmse {err_rmse:.1e}, acc {err_acc:.1e}, spec_res {err_res:.1e}, spec_div(x,x) {div_self:.1e}, "
           f"min spec_div {div_min:.3g}, |ms_ssim(x,x)-1| {ssim_self:.1e}, weights {w3.round(12).tolist()}")


# -- 6 ----------------------------------------------------------------------


def test_c6_round_trips(tmp_path, capsys):
    rng = np.random.default_rng(6)
    g = make_grid(8, 12)
    vals = rng.normal(scale=100.0, size=(3, 8, 12))
    write_field(Field(vals, g, ["a", "b", "c"]), tmp_path / "f.tpit")
    back = read_field(tmp_path / "f.tpit").values
    tpit_ok = np.array_equal(back, vals.astype(np.float32).astype(np.float64))
    cfg = ModelConfig(C=3, H=8, W=12, D=16, L=1, n_heads=2, n_patterns=2)
    params = init_model(cfg, g, make_rng(6, "init"))
    save_checkpoint(params, tmp_path / "m.tpck")
    loaded = load_checkpoint(tmp_path / "m.tpck", expected=cfg)
    x = rng.normal(size=(4, 3, 8, 12))
    ckpt_ok = all(a.data.tobytes() == b.data.tobytes() for a, b in zip(forward(x, params), forward(x, loaded)))
    report(capsys, 6, "file/checkpoint round-trips", tpit_ok and ckpt_ok,
           f"TPIT exact at f32: {tpit_ok}; checkpoint forward bitwise: {ckpt_ok}")


# -- 7-9: training runs -------------------------------------------------------


@pytest.fixture(scope="module")
def toy_data():
    return synth_dataset(SynthConfig(n_samples=640, rho=0.8), make_rng(7, "data"))


class Runs:
    def __init__(self, ds):
        self.ds = ds
        self.cache = {}
        self.seconds = {}

    def get(self, seed, lam, fresh=False):
        key = (seed, lam)
        if fresh or key not in self.cache:
            t0 = time.process_time()
            out = train(self.ds, TrainConfig(**TOY, epochs=TOY_EPOCHS, lam=lam, seed=seed))
            self.seconds[key] = time.process_time() - t0
            if fresh:
                return out
            self.cache[key] = out
        return self.cache[key]


@pytest.fixture(scope="module")
def runs(toy_data):
    return Runs(toy_data)


def _history_csv(history) -> bytes:
    buf = io.StringIO()
    import csv

    w = csv.writer(buf)
    w.writerow(cli.HISTORY_COLUMNS)
    for h in history:
        w.writerow([h["epoch"]] + [repr(float(h[k])) for k in cli.HISTORY_COLUMNS[1:]])
    return buf.getvalue().encode()


def test_c7_toy_training_convergence(runs, toy_data, capsys):
    params, history = runs.get(7, 0.2)
    va = toy_data.subset("val")
    y1, y2 = predict_batch(params, normalize(va.inputs, params.norm))
    preds = (denormalize(y1, params.norm), denormalize(y2, params.norm))
    truths = (va.target1, va.target2)
    clims = [c.values for c in climatology(toy_data.subset("train"))]
    g = toy_data.grid
    wins = {1: 0, 2: 0}
    parts = []
    for h in (1, 2):
        for v, name in enumerate(toy_data.var_names):
            model = rmse_weighted(preds[h - 1][:, v], truths[h - 1][:, v], g).mean()
            clim = rmse_weighted(np.broadcast_to(clims[h - 1][v], truths[h - 1][:, v].shape),
                                 truths[h - 1][:, v], g).mean()
            pers = rmse_weighted(va.inputs[:, v], truths[h - 1][:, v], g).mean()
            gain = 1.0 - model / min(clim, pers)
            wins[h] += gain >= 0.10
            parts.append(f"{name}/h{h} {gain:+.0%}")
    seconds = runs.seconds[(7, 0.2)]
    improved = history[-1]["val_loss"] < history[0]["val_loss"]
    init = init_model(params.config, g, make_rng(7, "init"))
    moved = any(np.linalg.norm(a.P.data - b.P.data) > 0 for a, b in zip(params.attn, init.attn))
    ok = wins[1] >= 2 and wins[2] >= 2 and seconds <= 600 and improved and moved
    report(capsys, 7, "toy training convergence", ok,
           f"gain vs best baseline: {', '.join(parts)}; {TOY_EPOCHS} epochs in {seconds:.0f}s cpu; "
           f"patterns moved: {moved}")


def test_c8_teleconnection_recovery(runs, toy_data, capsys):
    rows = {}
    for seed in SEEDS:
        for lam in (0.0, 0.2):
            params, history = runs.get(seed, lam)
            rows[(seed, lam)] = cli.sweep_row(toy_data, params, history, lam, seed)["box_rmse"]
    better = sum(rows[(s, 0.2)] <= rows[(s, 0.0)] for s in SEEDS)
    mean_tele = np.mean([rows[(s, 0.2)] for s in SEEDS])
    mean_plain = np.mean([rows[(s, 0.0)] for s in SEEDS])
    detail = "; ".join(f"seed {s}: {rows[(s, 0.2)]:.6f} vs {rows[(s, 0.0)]:.6f}" for s in SEEDS)
    ok = better >= 2 and mean_tele < mean_plain
    report(capsys, 8, "teleconnection recovery", ok,
           f"box RMSE lambda=0.2 vs 0 ({detail}); wins {better}/3; mean {mean_tele:.6f} vs {mean_plain:.6f}")


def test_c9_determinism(runs, capsys):
    same = 0
    keys = sorted(runs.cache)
    for key in keys:
        _, first = runs.cache[key]
        _, again = runs.get(*key, fresh=True)
        same += _history_csv(first) == _history_csv(again)
    report(capsys, 9, "determinism", same == len(keys) and len(keys) >= 1,
           f"{same}/{len(keys)} history CSVs bit-identical on rerun")
