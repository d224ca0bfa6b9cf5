"""Compare the numba and pure-numpy time-stepping kernels.

    python3 benchmarks/bench_kernels.py [--modes 24] [--steps 1600] [--repeat 3]

Both paths run the same source, so the script also reports the largest
difference between their outputs.
"""

import argparse
import time

import numpy as np

from cascade_hum import _accel
from cascade_hum.cascade import CascadeConfig
from cascade_hum.descriptors import Bump
from cascade_hum.evolution import step_coefficients


def setup(N, n, batch, seed=0):
    cfg = CascadeConfig(n=n, L=np.pi, N=N,
                        subdiagonal=[Bump(2.2, 2.6, 1.0, 0.2)] * (n - 1))
    D = cfg.m * N
    dt = 0.25 / np.sqrt(cfg.lam[-1])
    r11, r12, r21, r22 = step_coefficients(np.tile(cfg.lam, cfg.m), dt, "impulse")
    rng = np.random.default_rng(seed)
    K = np.ascontiguousarray(cfg.coupling_matrix)
    return dict(K=K, r=(r11, r12, r21, r22), dt=dt, D=D,
                q=rng.standard_normal(D), p=rng.standard_normal(D),
                Q=rng.standard_normal((D, batch)), P=rng.standard_normal((D, batch)),
                Oq=rng.standard_normal((N, D)))


def run_record(fn, s, M):
    return fn(s["q"], s["p"], s["K"], np.zeros((0, s["D"])), *s["r"], s["dt"], M)


def run_gram(fn, s, M):
    wts = np.full(M + 1, s["dt"])
    r = tuple(c[:, None] for c in s["r"])
    return fn(s["Q"], s["P"], s["K"], *r, s["dt"], M, s["Oq"], wts)


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--modes", type=int, default=24)
    ap.add_argument("--levels", type=int, default=2)
    ap.add_argument("--steps", type=int, default=1600)
    ap.add_argument("--batch", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    s = setup(args.modes, args.levels, args.batch)

    print(f"N={args.modes} n={args.levels} steps={args.steps} batch={args.batch}")
    print(f"{'kernel':8s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, runner in (("record", run_record), ("gram", run_gram)):
        jit = _accel.kernel(name, accelerated=True)
        runner(jit, s, 2)  # compile or load from cache
        t_py, out_py = timed(lambda: runner(_accel.kernel(name, accelerated=False), s, args.steps),
                             args.repeat)
        t_nb, out_nb = timed(lambda: runner(jit, s, args.steps), args.repeat)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(out_py, out_nb))
        print(f"{name:8s} {t_py:10.4f} {t_nb:10.4f} {t_py / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
