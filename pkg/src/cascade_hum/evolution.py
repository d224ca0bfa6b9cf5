"""
Time integration of cascade systems in modal coordinates.

The default ``"impulse"`` scheme splits ``q'' = -Lambda q - K q + f`` into an
exact rotation of each free mode and half-step kicks carrying the coupling
and the nodal source.  Free modes are therefore propagated exactly, the first
component (which nothing couples into) conserves every level energy to
rounding, and the scheme is symmetric, so backward solves are forward solves
of the time-reflected problem.  ``"verlet"`` is classical Stormer-Verlet
(``K = S``, drift ``q += h p``), kept for comparison.

Sources are sampled at the time nodes; a source value enters both half-kicks
adjacent to its node, which makes the discrete pairing between a forced
forward run and an adjoint backward run an exact trapezoid sum.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import _accel
from .cascade import CascadeState, canonical_levels
from .errors import GridMismatch, InvalidArgument, InvalidState, StepTooLarge
from .observation import trapezoid_weights
from .spectral import weighted_norm2

SCHEMES = ("impulse", "verlet")
SNAPSHOT_MAGIC = b"CHUMSNP1"
_HEADER = struct.Struct("<8s4q2d")


@dataclass(frozen=True)
class SourceSpec:
    """Nodal modal forcing: ``forcing[j, i, k]`` is mode ``k`` of component
    ``i + 1`` at ``times[j]``."""

    times: np.ndarray
    forcing: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        f = np.asarray(self.forcing, dtype=float)
        if f.ndim != 3 or f.shape[0] != t.size:
            raise InvalidArgument(f"forcing shape {f.shape} does not match {t.size} time nodes")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "forcing", f)

    def check(self, cfg, M, dt):
        if self.forcing.shape[1:] != (cfg.m, cfg.N):
            raise InvalidArgument(f"forcing components {self.forcing.shape[1:]} != ({cfg.m}, {cfg.N})")
        if self.times.size != M + 1 or not np.allclose(self.times, dt * np.arange(M + 1),
                                                       rtol=0, atol=1e-9 * max(1.0, M * dt)):
            raise GridMismatch("source is not sampled on the integration grid")
        if np.any(self.forcing[:, : cfg.n - 1, :]):
            raise InvalidArgument(f"only components {cfg.n}..{cfg.m} may carry sources")


@dataclass(frozen=True)
class Trajectory:
    """Positions ``Q`` and velocities ``P`` of shape ``(M+1, m, N)`` on a
    uniform grid ``times``; always stored in increasing time."""

    times: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    dt: float
    L: float
    n: int
    p: int = 0
    direction: str = "forward"

    @property
    def M(self):
        return self.times.size - 1

    @property
    def m(self):
        return self.Q.shape[1]

    @property
    def N(self):
        return self.Q.shape[2]

    @property
    def T(self):
        return float(self.times[-1])

    def state(self, j):
        return CascadeState(self.Q[j], self.P[j], self.L)

    @property
    def states(self):
        return [self.state(j) for j in range(self.M + 1)]

    @property
    def initial(self):
        return self.state(0)

    @property
    def final(self):
        return self.state(self.M)


def time_steps(T, dt):
    """Number of steps ``M`` with ``M dt = T``; raises on a mismatch."""
    if not dt > 0:
        raise InvalidArgument(f"time step must be positive, got {dt}")
    if not T > 0:
        raise InvalidArgument(f"horizon must be positive, got {T}")
    M = int(round(T / dt))
    if M < 1 or abs(M * dt - T) > 1e-9 * max(1.0, T):
        raise GridMismatch(f"T={T} is not an integer multiple of dt={dt}")
    return M


def check_step(dt, lam_max):
    limit = 0.5 / np.sqrt(lam_max)
    if dt > limit * (1 + 1e-12):
        raise StepTooLarge(f"dt={dt} exceeds the stability bound {limit:.6g} = 0.5/sqrt(lambda_N)")


def step_coefficients(lam, h, scheme):
    """Drift coefficients ``(r11, r12, r21, r22)`` for each degree of freedom."""
    if scheme == "impulse":
        w = np.sqrt(lam)
        c, s = np.cos(w * h), np.sin(w * h)
        return c, s / w, -w * s, c
    if scheme == "verlet":
        one = np.ones_like(lam)
        return one, h * one, 0.0 * one, one
    raise InvalidArgument(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def kick_matrix(lam, coupling, scheme):
    """Matrix applied in the kicks: the coupling alone, or the full stiffness."""
    K = np.array(coupling, dtype=float)
    if scheme == "verlet":
        K[np.diag_indices_from(K)] += lam
    return np.ascontiguousarray(K)


def propagate(lam, coupling, q0, p0, dt, M, forcing=None, scheme="impulse", accelerated=None):
    """Integrate ``q'' = -diag(lam) q - coupling q + forcing`` from ``(q0, p0)``.

    ``forcing`` is ``(M+1, D)`` or ``None``.  Returns ``(Q, P)`` of shape
    ``(M+1, D)``.
    """
    lam = np.asarray(lam, dtype=float)
    K = kick_matrix(lam, coupling, scheme)
    r = step_coefficients(lam, dt, scheme)
    F = np.zeros((0, lam.size)) if forcing is None else np.ascontiguousarray(forcing, dtype=float)
    run = _accel.kernel("record", accelerated)
    return run(np.array(q0, dtype=float), np.array(p0, dtype=float), K, F,
               *(np.ascontiguousarray(x) for x in r), float(dt), int(M))


def _system(cfg, transposed):
    K = cfg.coupling_matrix
    return np.tile(cfg.lam, cfg.m), (K.T if transposed else K)


def integrate_forward(cfg, U0, T, dt, src=None, transposed=False, scheme="impulse",
                      accelerated=None):
    """Forward solve from ``U0``.  ``transposed=True`` runs the controlled
    system (coupling ``S^T``); ``src`` adds a nodal source."""
    U0.check_compatible(cfg)
    M = time_steps(T, dt)
    check_step(dt, cfg.lam[-1])
    F = None
    if src is not None:
        src.check(cfg, M, dt)
        F = src.forcing.reshape(M + 1, -1)
    lam, K = _system(cfg, transposed)
    Q, P = propagate(lam, K, U0.u.ravel(), U0.v.ravel(), dt, M, F, scheme, accelerated)
    shape = (M + 1, cfg.m, cfg.N)
    return Trajectory(dt * np.arange(M + 1), Q.reshape(shape), P.reshape(shape),
                      float(dt), cfg.L, cfg.n, cfg.p, "forward")


def integrate_backward(cfg, UT, T, dt, src=None, transposed=False, scheme="impulse",
                       accelerated=None):
    """Terminal-value solve by time reflection: negate velocities, run
    forward with the reversed source, reflect back."""
    UT.check_compatible(cfg)
    M = time_steps(T, dt)
    check_step(dt, cfg.lam[-1])
    F = None
    if src is not None:
        src.check(cfg, M, dt)
        F = src.forcing[::-1].reshape(M + 1, -1)
    lam, K = _system(cfg, transposed)
    Q, P = propagate(lam, K, UT.u.ravel(), -UT.v.ravel(), dt, M, F, scheme, accelerated)
    shape = (M + 1, cfg.m, cfg.N)
    return Trajectory(dt * np.arange(M + 1), Q[::-1].reshape(shape).copy(),
                      -P[::-1].reshape(shape), float(dt), cfg.L, cfg.n, cfg.p, "backward")


def evolve_adjoint_observability(cfg, WT, T, dt, scheme="impulse", accelerated=None):
    """Homogeneous observed system solved backward from ``W(T) = WT``."""
    return integrate_backward(cfg, WT, T, dt, scheme=scheme, accelerated=accelerated)


def energy_series(traj, levels=None):
    """``e_k(U_i)(t)`` for each component, shape ``(M+1, m)``."""
    levels = canonical_levels(traj.n, traj.m) if levels is None else list(levels)
    if len(levels) < traj.m:
        raise InvalidArgument(f"need a level per component ({traj.m}), got {len(levels)}")
    out = np.empty((traj.M + 1, traj.m))
    for i, k in enumerate(levels[: traj.m]):
        out[:, i] = 0.5 * (weighted_norm2(traj.Q[:, i], traj.L, k)
                           + weighted_norm2(traj.P[:, i], traj.L, k - 1))
    return out


def write_energy_csv(traj, path, levels=None):
    """CSV with columns ``t`` and ``e<k>_u<i>`` at each component's level."""
    levels = canonical_levels(traj.n, traj.m) if levels is None else list(levels)
    e = energy_series(traj, levels)
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + [f"e{k}_u{i + 1}" for i, k in enumerate(levels[: traj.m])]) + "\n")
        for t, row in zip(traj.times, e):
            fh.write(",".join([repr(float(t))] + [repr(float(x)) for x in row]) + "\n")


def write_snapshot(traj, path):
    """Binary snapshot: header ``(magic, N, n, p, M, dt, L)`` little-endian,
    then for each node the ``m x N`` positions and velocities as float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, traj.N, traj.n, traj.p, traj.M, traj.dt, traj.L))
        data = np.concatenate([traj.Q, traj.P], axis=1)
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, N, n, p, M, dt, L = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise InvalidState("not a cascade snapshot file")
    m = n + p
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != (M + 1) * 2 * m * N:
        raise InvalidState("truncated snapshot")
    data = data.reshape(M + 1, 2 * m, N)
    return Trajectory(dt * np.arange(M + 1), data[:, :m].copy(), data[:, m:].copy(),
                      dt, L, n, p, "forward")


def trapezoid(values, dt):
    """Trapezoid integral over the leading axis."""
    values = np.asarray(values)
    return np.tensordot(trapezoid_weights(values.shape[0] - 1, dt), values, axes=1)


def fit_step(T, dt_max):
    """Largest step ``<= dt_max`` that divides ``T`` exactly."""
    if not dt_max > 0 or not T > 0:
        raise InvalidArgument("T and dt_max must be positive")
    return T / int(np.ceil(T / dt_max - 1e-9))


def _batch_coefficients(lam, dt, scheme):
    return tuple(np.ascontiguousarray(np.asarray(x, dtype=float)[:, None])
                 for x in step_coefficients(lam, dt, scheme))


def propagate_quadratic_forms(lam, coupling, Q0, P0, dt, M, Fq, Fp, segments,
                              scheme="impulse", accelerated=None):
    """Run a batch of homogeneous solutions (columns of ``Q0, P0``) and record,
    at every node, per-segment sums of squares of the rows of
    ``Fq q + Fp p``.  Returns ``(M+1, nseg, B)``."""
    lam = np.asarray(lam, dtype=float)
    K = kick_matrix(lam, coupling, scheme)
    seg = np.ascontiguousarray(segments, dtype=np.int64)
    run = _accel.kernel("forms", accelerated)
    return run(np.array(Q0, dtype=float), np.array(P0, dtype=float), K,
               *_batch_coefficients(lam, dt, scheme), float(dt), int(M),
               np.ascontiguousarray(Fq, dtype=float), np.ascontiguousarray(Fp, dtype=float),
               seg, int(seg.max()) + 1)


def propagate_gram(lam, coupling, Q0, P0, dt, M, Oq, scheme="impulse", accelerated=None):
    """Trapezoid Gram matrix ``sum_j w_j (Oq q_j)^T (Oq q_j)`` of a batch of
    homogeneous solutions, with the final batch state."""
    lam = np.asarray(lam, dtype=float)
    K = kick_matrix(lam, coupling, scheme)
    run = _accel.kernel("gram", accelerated)
    return run(np.array(Q0, dtype=float), np.array(P0, dtype=float), K,
               *_batch_coefficients(lam, dt, scheme), float(dt), int(M),
               np.ascontiguousarray(Oq, dtype=float), trapezoid_weights(M, dt))
