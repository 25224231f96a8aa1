"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times the latitude-stencil ODE rate (forward and backward), the MS-SSIM
window filter, and one full training step of the toy model under each
available backend. Prints one table row per (kernel, backend).
"""
import argparse
import timeit

import numpy as np

from telepit import kernels
from telepit.griddata import make_grid
from telepit.metrics import gaussian_window
from telepit.model import ModelConfig, forward, init_model, loss
from telepit.numerics import make_rng


def _cases(rng):
    B, H, D = 16, 16, 32
    x = rng.normal(size=(B, H, D))
    nu, mu, f = rng.normal(size=(3, D))
    corr = rng.normal(size=(B, H, D))
    fwd_args = (x, nu, mu, f, 0.1, corr, 0.1)
    _, th = kernels._BACKENDS["python"].ode_rate_forward(*fwd_args)
    bwd_args = (rng.normal(size=(B, H, D)), th, x, nu, mu, 0.1, corr, 0.1)
    img = rng.normal(size=(121, 250))
    win = gaussian_window()

    cfg = ModelConfig(C=3, H=16, W=32, D=32, L=2, n_heads=4, n_patterns=4)
    params = init_model(cfg, make_grid(16, 32), make_rng(0, "init"))
    batch = [rng.normal(size=(16, 3, 16, 32)) for _ in range(3)]

    def train_step():
        params.zero_grad()
        loss(forward(batch[0], params), batch[1], batch[2]).backward()

    return {
        "ode_rate_forward (16x16x32)": lambda: kernels.ode_rate_forward(*fwd_args),
        "ode_rate_backward (16x16x32)": lambda: kernels.ode_rate_backward(*bwd_args),
        "filter_valid (121x250, 11-tap)": lambda: kernels.filter_valid(img, win),
        "train step (toy model, batch 16)": train_step,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    results = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        for name, fn in cases.items():
            fn()
            n = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
            best = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
            results[(name, backend)] = best
    print(f"{'kernel':<36}{'backend':<10}{'time':>12}{'speedup':>10}")
    for name in cases:
        base = results[(name, "python")]
        for backend in kernels.available_backends():
            t = results[(name, backend)]
            print(f"{name:<36}{backend:<10}{t * 1e6:>10.1f}us{base / t:>9.2f}x")


if __name__ == "__main__":
    main()
