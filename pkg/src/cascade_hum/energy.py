"""
Level energies ``e_k(U_i) = 1/2 (|A^{k/2} u_i|^2 + |A^{(k-1)/2} u_i'|^2)``,
energy ledgers along trajectories, and Monte Carlo estimates of
observability and admissibility constants.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .cascade import canonical_levels, random_state
from .errors import InvalidArgument, UndefinedRatio
from .evolution import (fit_step, integrate_forward, propagate,
                        propagate_quadratic_forms, time_steps)
from .observation import admissibility_integral
from .spectral import eigenvalues, weighted_norm2

UNOBSERVABLE_FLOOR = 1e-14


def level_energy(u, v, k):
    """Energy at level ``k`` of one component given as two SpectralFields."""
    return 0.5 * float(weighted_norm2(u.coeffs, u.L, k) + weighted_norm2(v.coeffs, v.L, k - 1))


def state_energy(U, levels):
    """Sum over components of ``e_{levels[i]}(U_i)``."""
    return float(sum(0.5 * (weighted_norm2(U.u[i], U.L, k) + weighted_norm2(U.v[i], U.L, k - 1))
                     for i, k in enumerate(levels)))


def config_hash(cfg):
    doc = json.dumps(cfg.to_json(), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class EnergyLedger:
    times: np.ndarray
    levels: list
    series: dict
    dt: float
    T: float
    cfg_hash: str = None

    def get(self, component, level):
        return self.series[(component, level)]

    def columns(self):
        return sorted(self.series)

    def write_csv(self, path):
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"e{k}_u{i}" for i, k in cols])
            for j, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(self.series[c][j])) for c in cols])


def ledger(traj, levels=None, cfg=None):
    """Energy time series per component and level.

    ``levels[i]`` is a level or a list of levels for component ``i + 1``; each
    list must contain the component's canonical level.
    """
    canon = canonical_levels(traj.n, traj.m)
    if levels is None:
        levels = [[k] for k in canon]
    if len(levels) < traj.m:
        raise InvalidArgument(f"need level lists for {traj.m} components, got {len(levels)}")
    levels = [sorted({lv} if np.isscalar(lv) else set(lv)) for lv in levels[: traj.m]]
    for i, (ks, c) in enumerate(zip(levels, canon)):
        if c not in ks:
            raise InvalidArgument(f"levels for component {i + 1} must include {c}")
    series = {}
    for i, ks in enumerate(levels):
        for k in ks:
            series[(i + 1, k)] = 0.5 * (weighted_norm2(traj.Q[:, i], traj.L, k)
                                        + weighted_norm2(traj.P[:, i], traj.L, k - 1))
    return EnergyLedger(traj.times, levels, series, traj.dt, traj.T,
                        config_hash(cfg) if cfg is not None else None)


def observability_ratio(cfg, U0, T, dt, obs):
    """``int_0^T |B* U_target|^2 dt / sum_i e_{k_i}(U_i)(0)`` at the canonical levels."""
    denom = state_energy(U0, canonical_levels(cfg.n, cfg.m))
    if not denom > 0:
        raise UndefinedRatio("observability ratio of zero initial data")
    traj = integrate_forward(cfg, U0, T, dt)
    return admissibility_integral(traj, obs) / denom


def _ratio(num, den):
    if den < UNOBSERVABLE_FLOOR:
        return np.inf if num > 0 else 0.0
    return num / den


def _sum_of_squares_rows(cfg, obs):
    """Rows and segment labels for the batched quadratic-form recorder."""
    N, m, n = cfg.N, cfg.m, cfg.n
    D = m * N
    lam = cfg.lam
    levels = canonical_levels(n, m)
    rows_q, rows_p, seg = [], [], []

    O = obs.matrix(N, cfg.L)
    block = np.zeros((O.shape[0], D))
    block[:, (obs.target - 1) * N : obs.target * N] = O
    if obs.field == "velocity":
        rows_q.append(np.zeros_like(block)); rows_p.append(block)
    else:
        rows_q.append(block); rows_p.append(np.zeros_like(block))
    seg += [0] * O.shape[0]

    for i, k in enumerate(levels):
        dq = np.zeros((N, D)); dp = np.zeros((N, D))
        idx = np.arange(N)
        dq[idx, i * N + idx] = np.sqrt(0.5 * lam**k)
        dp[idx, i * N + idx] = np.sqrt(0.5 * lam ** (k - 1))
        rows_q += [dq, np.zeros((N, D))]
        rows_p += [np.zeros((N, D)), dp]
        seg += [1 + i] * (2 * N)

    if n >= 2:
        C = cfg.coupling_blocks[(n, n - 1)]
        ev, vec = np.linalg.eigh(C)
        R = (vec * np.sqrt(np.clip(ev, 0, None))).T
        rq = np.zeros((N, D))
        rq[:, (n - 2) * N : (n - 1) * N] = R
        rows_q.append(rq); rows_p.append(np.zeros((N, D)))
        seg += [1 + m] * N
    return np.vstack(rows_q), np.vstack(rows_p), np.array(seg)


@dataclass
class ObservabilityReport:
    T_grid: list
    samples: int
    seed: int
    d_hat: np.ndarray          # (len(T), m): sup e_{k_i}(U_i)(0) / obs
    k_hat: np.ndarray          # (len(T), m): sup int_0^T e_{k_i}(U_i) dt / obs
    r_hat: np.ndarray          # (len(T),): sup int_0^T <C w_{n-1}, w_{n-1}> dt / obs
    C_hat: np.ndarray          # (len(T),): sup obs / sum_i e_{k_i}(U_i)(0)
    min_ratio: np.ndarray      # (len(T),): inf obs / sum_i e_{k_i}(U_i)(0)
    slope: float               # log-log slope of d_hat_{n,n} against T
    extremal: list = field(default_factory=list)
    n: int = 2

    def unobservable(self):
        return ~np.isfinite(self.d_hat)

    def to_json(self):
        def clean(a):
            a = np.asarray(a, dtype=float)
            return [None if not np.isfinite(x) else float(x) for x in a.ravel()] if a.ndim == 1 else \
                [clean(r) for r in a]
        return {
            "T_grid": [float(t) for t in self.T_grid],
            "samples": self.samples,
            "seed": self.seed,
            "d_hat": clean(self.d_hat),
            "k_hat": clean(self.k_hat),
            "r_hat": clean(self.r_hat),
            "C_hat": clean(self.C_hat),
            "min_ratio": clean(self.min_ratio),
            "unobservable": self.unobservable().tolist(),
            "slope_d_nn": None if not np.isfinite(self.slope) else float(self.slope),
            "extremal": self.extremal,
        }

    def write_csv(self, path):
        m = self.d_hat.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T"] + [f"d_{i}" for i in range(1, m + 1)]
                       + [f"k_{i}" for i in range(1, m + 1)] + ["r", "C", "min_ratio"])
            for j, T in enumerate(self.T_grid):
                row = [T, *self.d_hat[j], *self.k_hat[j], self.r_hat[j], self.C_hat[j],
                       self.min_ratio[j]]
                w.writerow([repr(float(x)) for x in row])


def _draw_batch(cfg, samples, seed):
    # draw s excites all components when s % (m+1) == 0, else only component s % (m+1)
    rng = np.random.default_rng(seed)
    states, patterns = [], []
    for s in range(samples):
        pat = s % (cfg.m + 1)
        comps = None if pat == 0 else [pat]
        states.append(random_state(cfg, rng, components=comps))
        patterns.append("all" if pat == 0 else f"u{pat}")
    return states, patterns


def estimate_constants(cfg, obs, T_grid, samples, seed=0, dt=None, min_time=None,
                       scheme="impulse", accelerated=None):
    """Monte Carlo estimates of the observability and admissibility constants
    over the horizons in ``T_grid``, all from one batched run to ``max(T_grid)``
    with the same draws (so the estimates at different ``T`` are comparable)."""
    T_grid = sorted(float(t) for t in T_grid)
    if not T_grid or samples < 1:
        raise InvalidArgument("need a nonempty T grid and at least one sample")
    floor = 2 * cfg.L if min_time is None else float(min_time)
    if T_grid[0] < floor:
        raise InvalidArgument(f"T={T_grid[0]} is below the time floor {floor:.6g}")
    if dt is None:
        dt = fit_step(T_grid[-1], 0.25 / np.sqrt(cfg.lam[-1]))
    steps = [time_steps(T, dt) for T in T_grid]
    M = steps[-1]

    states, patterns = _draw_batch(cfg, samples, seed)
    Q0 = np.stack([s.u.ravel() for s in states], axis=1)
    P0 = np.stack([s.v.ravel() for s in states], axis=1)
    Fq, Fp, seg = _sum_of_squares_rows(cfg, obs)
    forms = propagate_quadratic_forms(np.tile(cfg.lam, cfg.m), cfg.coupling_matrix, Q0, P0, dt, M,
                                      Fq, Fp, seg, scheme, accelerated)
    # cumulative trapezoid integrals over time for every segment and draw
    incr = 0.5 * dt * (forms[1:] + forms[:-1])
    cum = np.concatenate([np.zeros_like(forms[:1]), np.cumsum(incr, axis=0)])

    m, n = cfg.m, cfg.n
    e0 = forms[0, 1 : 1 + m]                     # (m, B)
    total0 = e0.sum(axis=0)
    nT = len(T_grid)
    d_hat = np.zeros((nT, m)); k_hat = np.zeros((nT, m))
    r_hat = np.zeros(nT); C_hat = np.zeros(nT); min_ratio = np.zeros(nT)
    extremal = []
    for j, Mj in enumerate(steps):
        ob = cum[Mj, 0]
        for i in range(m):
            d = [_ratio(e0[i, s], ob[s]) for s in range(samples)]
            d_hat[j, i] = max(d)
            k_hat[j, i] = max(_ratio(cum[Mj, 1 + i, s], ob[s]) for s in range(samples))
            if i == n - 1:
                arg = int(np.argmax(d))
                extremal.append({"T": T_grid[j], "draw": arg, "pattern": patterns[arg]})
        if n >= 2:
            r_hat[j] = max(_ratio(cum[Mj, 1 + m, s], ob[s]) for s in range(samples))
        C_hat[j] = max(ob[s] / total0[s] for s in range(samples))
        min_ratio[j] = min(ob[s] / total0[s] for s in range(samples))

    dnn = d_hat[:, n - 1]
    ok = np.isfinite(dnn) & (dnn > 0)
    slope = float(np.polyfit(np.log(np.array(T_grid)[ok]), np.log(dnn[ok]), 1)[0]) \
        if ok.sum() >= 2 else float("nan")
    return ObservabilityReport(T_grid, samples, seed, d_hat, k_hat, r_hat, C_hat, min_ratio,
                               slope, extremal, n)


@dataclass
class InhomogeneousReport:
    T_grid: list
    eta: np.ndarray
    alpha: np.ndarray
    spread: float
    stable: bool
    holds: bool

    def to_json(self):
        return {"T_grid": list(self.T_grid), "eta": self.eta.tolist(),
                "alpha": self.alpha.tolist(), "spread": self.spread,
                "stable": self.stable, "holds": self.holds}


def _best_pair(E, F, O):
    """Smallest ``(eta, alpha)`` with ``eta O_s >= E_s - alpha F_s`` for all ``s``,
    balancing the two sides by their sample means."""
    cands = [0.0] + [e / f for e, f in zip(E, F) if f > 0]
    best = None
    for a in sorted(set(cands)):
        eta = max(max(0.0, e - a * f) / o for e, f, o in zip(E, F, O))
        cost = eta * np.mean(O) + a * np.mean(F)
        if best is None or cost < best[0] - 1e-15 * abs(cost):
            best = (cost, eta, a)
    return best[1], best[2]


def uniform_inhomogeneous_check(obs, f, T_grid, samples, N, L, dt=None, seed=0, data=True,
                                scale=1.0, min_time=None, accelerated=None):
    """Check ``eta int |B* P|^2 >= int e_1(P) - alpha int |f|^2`` for the
    scalar wave ``P'' + A P = f`` over random data and source amplitudes, and
    whether the fitted ``eta`` is stable (within 2x) across ``T_grid``.

    ``f`` is ``None``, an ``(M+1, N)`` modal signal on the grid up to
    ``max(T_grid)``, or a callable ``f(rng, times, N)`` returning one.
    ``scale`` multiplies both data and source.
    """
    T_grid = sorted(float(t) for t in T_grid)
    if not T_grid or samples < 1:
        raise InvalidArgument("need a nonempty T grid and at least one sample")
    floor = 2 * L if min_time is None else float(min_time)
    if T_grid[0] < floor:
        raise InvalidArgument(f"T={T_grid[0]} is below the time floor {floor:.6g}")
    lam = eigenvalues(N, L)
    if dt is None:
        dt = fit_step(T_grid[-1], 0.25 / np.sqrt(lam[-1]))
    steps = [time_steps(T, dt) for T in T_grid]
    M = steps[-1]
    times = dt * np.arange(M + 1)
    rng = np.random.default_rng(seed)
    O_mat = obs.matrix(N, L)
    E = np.zeros((samples, M + 1)); Fi = np.zeros_like(E); Ob = np.zeros_like(E)
    for s in range(samples):
        if data:
            q0 = rng.standard_normal(N) * lam**-0.5 / np.sqrt(N)
            p0 = rng.standard_normal(N) / np.sqrt(N)
        else:
            q0 = np.zeros(N); p0 = np.zeros(N)
        if f is None:
            src = np.zeros((M + 1, N))
        elif callable(f):
            src = np.asarray(f(rng, times, N), dtype=float)
        else:
            src = np.asarray(f, dtype=float)
        amp = 10.0 ** rng.uniform(-1, 1)
        src = scale * amp * src
        Q, P = propagate(lam, np.zeros((N, N)), scale * q0, scale * p0, dt, M, src,
                         accelerated=accelerated)
        e1 = 0.5 * (weighted_norm2(Q, L, 1) + weighted_norm2(P, L, 0))
        field_ = P if obs.field == "velocity" else Q
        y = field_ @ O_mat.T
        for arr, vals in ((E, e1), (Fi, np.sum(src**2, axis=1)), (Ob, np.sum(y**2, axis=1))):
            arr[s, 1:] = np.cumsum(0.5 * dt * (vals[1:] + vals[:-1]))
    eta = np.zeros(len(T_grid)); alpha = np.zeros(len(T_grid))
    holds = True
    for j, Mj in enumerate(steps):
        eta[j], alpha[j] = _best_pair(E[:, Mj], Fi[:, Mj], Ob[:, Mj])
        slack = eta[j] * Ob[:, Mj] - (E[:, Mj] - alpha[j] * Fi[:, Mj])
        holds &= bool(np.all(slack >= -1e-9 * np.maximum(E[:, Mj], 1e-300)))
    spread = float(eta.max() / eta.min()) if eta.min() > 0 else float("inf")
    return InhomogeneousReport(T_grid, eta, alpha, spread, spread <= 2.0, holds)
