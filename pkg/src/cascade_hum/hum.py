"""
HUM control synthesis for cascade systems.

The adjoint ``w`` solves the observed system ``w'' = -S w`` backward from a
terminal datum ``W^T``; the control on each controlled component is the
control-spec operator applied to the adjoint position, and the controlled
system ``y'' = -S^T y + B v`` runs forward.  With

    J(t) = <y'(t), w(t)> - <y(t), w'(t)>

the discrete scheme satisfies ``J(T) - J(0) = sum_trap <v, B* w>`` exactly,
so the Gramian ``Lambda`` (applied to ``W^T``) is the terminal pairing state
``(y'(T), -y(T))`` of the controlled run from zero data, and the steering
condition ``y(T) = 0`` is the linear system ``Lambda W^T = -l`` with
``l = (y_free'(T), -y_free(T))``.

Terminal data are expanded in the unit basis of the selected components
and modes and rescaled by their natural-level weights before solving.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .cascade import CascadeState
from .energy import state_energy
from .errors import (GridMismatch, InvalidArgument, InvalidConfig, NotControllable,
                     SpaceViolation, TooLarge)
from .evolution import (check_step, integrate_backward, integrate_forward, propagate_gram,
                        time_steps)
from .observation import combine_sources, control_load, trapezoid_weights, write_control_csv

VARIANTS = ("bounded", "unbounded", "mixed")
DENSE_CAP = 4000
EIG_CUTOFF = 1e-10


def natural_levels(variant, n, p, q=None):
    """Energy level of each controlled-system component at which steering is
    measured: ``n - i + 1`` (interior controls) or ``n - i`` (boundary) for
    ``i <= n``; for the extra rows 1 (interior) or 0 (boundary)."""
    m = n + p
    if variant == "bounded":
        return [n - i + 1 if i <= n else 1 for i in range(1, m + 1)]
    if variant == "unbounded":
        return [n - i if i <= n else 0 for i in range(1, m + 1)]
    q = 0 if q is None else q
    return [n - i if i <= n else (0 if i <= n + q else 1) for i in range(1, m + 1)]


@dataclass
class ControlProblem:
    cfg: object
    Y0: CascadeState
    T: float
    dt: float
    controls: tuple
    variant: str = "bounded"
    q: int = None
    steer_components: tuple = None
    mode_filter: int = None
    min_time: float = None
    scheme: str = "impulse"

    def __post_init__(self):
        cfg = self.cfg
        self.Y0.check_compatible(cfg)
        self.controls = tuple(self.controls)
        targets = [c.target for c in self.controls]
        if targets != list(range(cfg.n, cfg.m + 1)):
            raise InvalidConfig(f"need one control per component {cfg.n}..{cfg.m} in order, got {targets}")
        for c in self.controls:
            c.validate(cfg.L)
        kinds = [c.kind for c in self.controls]
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "bounded" and any(k != "interior" for k in kinds):
            raise InvalidConfig("bounded variant needs interior controls only")
        if self.variant == "unbounded" and any(k != "boundary" for k in kinds):
            raise InvalidConfig("unbounded variant needs boundary controls only")
        if self.variant == "mixed":
            lead = 0
            while lead < len(kinds) and kinds[lead] == "boundary":
                lead += 1
            if "boundary" in kinds[lead:]:
                raise InvalidConfig(
                    "mixed controls must list boundary controls before interior ones "
                    "(an interior control ahead of a boundary control is not supported)"
                )
            if lead == 0:
                raise InvalidConfig("mixed variant needs at least one boundary control, on component n")
            q = lead - 1
            if self.q is not None and int(self.q) != q:
                raise InvalidConfig(f"mixed q={self.q} does not match the control kinds (q={q})")
            self.q = q
        floor = 2 * cfg.L if self.min_time is None else float(self.min_time)
        if self.T < floor * (1 - 1e-12):
            raise InvalidArgument(f"T={self.T} is below the controllability floor {floor:.6g}")
        self.M = time_steps(self.T, self.dt)
        check_step(self.dt, cfg.lam[-1])
        steer = range(1, cfg.m + 1) if self.steer_components is None else self.steer_components
        steer = tuple(sorted({int(c) for c in steer}))
        if not steer or steer[0] < 1 or steer[-1] > cfg.m:
            raise InvalidArgument(f"steered components must lie in 1..{cfg.m}")
        self.steer_components = steer
        if self.mode_filter is not None and not 1 <= int(self.mode_filter) <= cfg.N:
            raise InvalidArgument(f"mode filter must lie in 1..{cfg.N}")
        self.levels = natural_levels(self.variant, cfg.n, cfg.p, self.q)
        e = state_energy(self.Y0, self.levels)
        if not np.isfinite(e):
            raise SpaceViolation("initial data have infinite energy at the natural levels")

    @property
    def times(self):
        return self.dt * np.arange(self.M + 1)

    # terminal basis
    def basis_indices(self):
        cfg = self.cfg
        D = cfg.m * cfg.N
        modes = cfg.N if self.mode_filter is None else int(self.mode_filter)
        idx = [slot * D + (c - 1) * cfg.N + k
               for slot in (0, 1) for c in self.steer_components for k in range(modes)]
        return np.array(idx)

    def basis_weights(self):
        """Natural-level weight of each terminal basis vector: ``lambda^kappa``
        for positions, ``lambda^(kappa-1)`` for velocities, ``kappa = 1 - k^Y``."""
        cfg = self.cfg
        D = cfg.m * cfg.N
        idx = self.basis_indices()
        slot, rest = np.divmod(idx, D)
        comp, k = np.divmod(rest, cfg.N)
        kappa = 1 - np.array(self.levels)[comp]
        return cfg.lam[k] ** (kappa - slot)

    def control_matrix(self):
        """Stacked ``(G, mN)`` matrix of all control operators on adjoint positions."""
        cfg = self.cfg
        rows = []
        for c in self.controls:
            O = c.matrix(cfg.N, cfg.L)
            block = np.zeros((O.shape[0], cfg.m * cfg.N))
            block[:, (c.target - 1) * cfg.N : c.target * cfg.N] = O
            rows.append(block)
        return np.vstack(rows)

    def expand(self, coeffs):
        cfg = self.cfg
        flat = np.zeros(2 * cfg.m * cfg.N)
        flat[self.basis_indices()] = coeffs
        return CascadeState.from_flat(flat, cfg.m, cfg.N, cfg.L)


@dataclass
class HumSolution:
    adjoint_terminal: CascadeState
    controls: list
    times: np.ndarray
    solver: dict
    terminal_residual: float
    initial_energy: float
    success: bool
    control_energy: float
    final_state: CascadeState
    levels: list
    gramian_conditioning: tuple = None
    scaled_conditioning: tuple = None
    uncontrolled_dim: int = 0
    variant: str = "bounded"
    steer_components: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def relative_residual(self):
        return self.terminal_residual / self.initial_energy if self.initial_energy > 0 else 0.0

    def to_json(self):
        return {
            "success": bool(self.success),
            "variant": self.variant,
            "levels": list(self.levels),
            "steer_components": list(self.steer_components),
            "terminal_residual": float(self.terminal_residual),
            "initial_energy": float(self.initial_energy),
            "relative_residual": float(self.relative_residual),
            "control_energy": float(self.control_energy),
            "solver": self.solver,
            "gramian_conditioning": list(self.gramian_conditioning) if self.gramian_conditioning else None,
            "scaled_conditioning": list(self.scaled_conditioning) if self.scaled_conditioning else None,
            "uncontrolled_dim": int(self.uncontrolled_dim),
            "adjoint_terminal": self.adjoint_terminal.to_json(),
            "final_state": self.final_state.to_json(),
            **self.extra,
        }

    def write_controls(self, directory, prefix="control"):
        paths = []
        for j, v in enumerate(self.controls):
            path = os.path.join(directory, f"{prefix}_{j + 1}.csv")
            write_control_csv(path, self.times, v)
            paths.append(path)
        return paths


def adjoint_controls(problem, WT):
    """Control signals ``B* w`` along the adjoint solved backward from ``WT``."""
    cfg = problem.cfg
    W = integrate_backward(cfg, WT, problem.T, problem.dt, scheme=problem.scheme)
    out = []
    for c in problem.controls:
        out.append(W.Q[:, c.target - 1, :] @ c.matrix(cfg.N, cfg.L).T)
    return out


def controlled_run(problem, controls, Y0=None):
    """Forward controlled run driven only by the given signals."""
    cfg = problem.cfg
    Y0 = problem.Y0 if Y0 is None else Y0
    if len(controls) != len(problem.controls):
        raise InvalidArgument("one signal per control spec")
    src = combine_sources(control_load(c, v, problem.times, cfg.m, cfg.N, cfg.L)
                          for c, v in zip(problem.controls, controls))
    return integrate_forward(cfg, Y0, problem.T, problem.dt, src=src, transposed=True,
                             scheme=problem.scheme)


def _pairing_state(traj):
    f = traj.final
    return CascadeState(f.v, -f.u, f.L)


def gramian_apply(problem, WT):
    """Riesz image of ``Lambda(W^T, .)``: the state ``(y'(T), -y(T))`` of the
    controlled run from zero data driven by the controls of ``W^T``."""
    v = adjoint_controls(problem, WT)
    return _pairing_state(controlled_run(problem, v, Y0=CascadeState.zeros(problem.cfg)))


def free_linear_form(problem):
    """``l`` restricted to the terminal basis, from one free controlled run."""
    cfg = problem.cfg
    zero = [np.zeros((problem.M + 1, c.dimension(cfg.N))) for c in problem.controls]
    return _pairing_state(controlled_run(problem, zero)).flat()[problem.basis_indices()]


@dataclass
class DenseGramian:
    matrix: np.ndarray
    scaled: np.ndarray
    weights: np.ndarray
    eig_min: float
    eig_max: float
    scaled_eigenvalues: np.ndarray
    scaled_vectors: np.ndarray
    w0: np.ndarray      # adjoint positions at t=0, one column per basis vector
    w0_dot: np.ndarray  # adjoint velocities at t=0

    @property
    def symmetry_error(self):
        return float(np.abs(self.matrix - self.matrix.T).max())


def _basis_terminal(problem):
    cfg = problem.cfg
    D = cfg.m * cfg.N
    idx = problem.basis_indices()
    E = np.zeros((2 * D, idx.size))
    E[idx, np.arange(idx.size)] = 1.0
    return E[:D], E[D:]


def dense_gramian(problem, via="gram", accelerated=None):
    """Full Gramian on the terminal basis.

    ``via="gram"`` accumulates the trapezoid sums of ``B* w_j . B* w_k`` in one
    batched backward sweep; ``via="apply"`` calls :func:`gramian_apply` on
    each basis vector (slower, independent of the first route).
    """
    cfg = problem.cfg
    idx = problem.basis_indices()
    if idx.size > DENSE_CAP:
        raise TooLarge(f"terminal space dimension {idx.size} exceeds the dense cap {DENSE_CAP}")
    QT, PT = _basis_terminal(problem)
    lam = np.tile(cfg.lam, cfg.m)
    if via == "gram":
        G, q_end, p_end = propagate_gram(lam, cfg.coupling_matrix, QT, -PT, problem.dt, problem.M,
                                         problem.control_matrix(), problem.scheme, accelerated)
        w0, w0_dot = q_end, -p_end
    elif via == "apply":
        G = np.empty((idx.size, idx.size))
        for j in range(idx.size):
            e = np.zeros(idx.size)
            e[j] = 1.0
            G[:, j] = gramian_apply(problem, problem.expand(e)).flat()[idx]
        w0 = w0_dot = None
    else:
        raise InvalidArgument(f"unknown assembly route {via!r}")
    wts = problem.basis_weights()
    s = 1.0 / np.sqrt(wts)
    Gs = s[:, None] * G * s[None, :]
    Gs = 0.5 * (Gs + Gs.T)
    ev, vec = np.linalg.eigh(Gs)
    raw = np.linalg.eigvalsh(0.5 * (G + G.T))
    return DenseGramian(G, Gs, wts, float(raw[0]), float(raw[-1]), ev, vec, w0, w0_dot)


def assemble_linear_form(problem, dense=None):
    """``l_j = <y^1, w_j(0)> - <y^0, w_j'(0)>`` from backward solves of the
    terminal basis vectors."""
    if dense is None or dense.w0 is None:
        cfg = problem.cfg
        QT, PT = _basis_terminal(problem)
        Oq = np.zeros((1, cfg.m * cfg.N))
        _, q_end, p_end = propagate_gram(np.tile(cfg.lam, cfg.m), cfg.coupling_matrix, QT, -PT,
                                         problem.dt, problem.M, Oq, problem.scheme)
        w0, w0_dot = q_end, -p_end
    else:
        w0, w0_dot = dense.w0, dense.w0_dot
    y0 = problem.Y0.u.ravel()
    y1 = problem.Y0.v.ravel()
    return y1 @ w0 - y0 @ w0_dot


def _finish(problem, coeffs, solver, tol, conditioning=None, scaled=None, uncontrolled=0):
    cfg = problem.cfg
    WT = problem.expand(coeffs)
    controls = adjoint_controls(problem, WT)
    traj = controlled_run(problem, controls)
    final = traj.final
    levels = problem.levels
    steered = [c - 1 for c in problem.steer_components]
    residual = sum(state_energy(CascadeState(final.u[[i]], final.v[[i]], cfg.L), [levels[i]])
                   for i in steered)
    initial = state_energy(problem.Y0, levels)
    w = trapezoid_weights(problem.M, problem.dt)
    energy = float(sum(w @ np.sum(v * v, axis=1) for v in controls))
    success = residual <= 100 * tol * initial if initial > 0 else residual == 0
    return HumSolution(WT, controls, problem.times, solver, float(residual), float(initial),
                       bool(success), energy, final, levels, conditioning, scaled, uncontrolled,
                       problem.variant, problem.steer_components)


def solve_hum(problem, tol=1e-8, max_iter=None, method="auto", accelerated=None):
    """Solve ``Lambda W^T = -l`` and return the controls with an independent
    steering check.  Raises :class:`NotControllable` when the Gramian is
    singular and the restricted solve does not steer, or when CG stalls."""
    if not tol > 0:
        raise InvalidArgument("tolerance must be positive")
    idx = problem.basis_indices()
    if method == "auto":
        method = "dense" if idx.size <= DENSE_CAP else "cg"
    if not np.any(problem.Y0.u) and not np.any(problem.Y0.v):
        return _finish(problem, np.zeros(idx.size),
                       {"method": method, "iterations": 0, "residual": 0.0}, tol)
    s = 1.0 / np.sqrt(problem.basis_weights())

    if method == "dense":
        dg = dense_gramian(problem, accelerated=accelerated)
        ell = assemble_linear_form(problem, dg)
        b = -s * ell
        ev, vec = dg.scaled_eigenvalues, dg.scaled_vectors
        keep = ev > EIG_CUTOFF * ev[-1]
        if keep.all():
            z = scipy.linalg.cho_solve(scipy.linalg.cho_factor(dg.scaled), b)
        else:
            V = vec[:, keep]
            z = V @ ((V.T @ b) / ev[keep])
        resid = float(np.linalg.norm(dg.scaled @ z - b) / max(np.linalg.norm(b), 1e-300))
        sol = _finish(problem, s * z, {"method": "dense", "iterations": 1, "residual": resid}, tol,
                      (dg.eig_min, dg.eig_max), (float(ev[0]), float(ev[-1])),
                      int((~keep).sum()))
        if not keep.all() and not sol.success:
            raise NotControllable(
                f"Gramian is singular at T={problem.T} ({sol.uncontrolled_dim} directions below "
                f"the cutoff); residual {sol.relative_residual:.3e} of the initial energy", sol)
        return sol

    if method != "cg":
        raise InvalidArgument(f"unknown method {method!r}")
    ell = free_linear_form(problem)
    b = -s * ell

    def matvec(z):
        x = problem.expand(s * np.ravel(z))
        return s * gramian_apply(problem, x).flat()[idx]

    op = scipy.sparse.linalg.LinearOperator((idx.size, idx.size), matvec=matvec, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    max_iter = 4 * idx.size if max_iter is None else int(max_iter)
    z, info = scipy.sparse.linalg.cg(op, b, rtol=tol, atol=0.0, maxiter=max_iter, callback=tick)
    resid = float(np.linalg.norm(matvec(z) - b) / max(np.linalg.norm(b), 1e-300))
    sol = _finish(problem, s * z, {"method": "cg", "iterations": count[0], "residual": resid}, tol)
    if info != 0:
        raise NotControllable(
            f"CG stalled after {count[0]} iterations at relative residual {resid:.3e} (T={problem.T})",
            sol)
    return sol


def problem_from_json(doc, cfg=None):
    """Build a :class:`ControlProblem` from its JSON form (see README)."""
    from .cascade import CascadeConfig, parse_length
    from .observation import ObservationSpec

    try:
        cfg = cfg or CascadeConfig.from_json(doc["system"])
        Y0 = CascadeState.from_json(doc["initial"]) if "initial" in doc else _initial_from_modes(cfg, doc)
        controls = [ObservationSpec.from_json(c) for c in doc["controls"]]
        return ControlProblem(
            cfg, Y0, parse_length(doc["T"]), float(doc["dt"]), controls,
            variant=doc.get("variant", "bounded"), q=doc.get("q"),
            steer_components=doc.get("steer_components"), mode_filter=doc.get("mode_filter"),
            min_time=doc.get("min_time"),
        )
    except KeyError as exc:
        raise InvalidConfig(f"control problem missing {exc}") from None
    except GridMismatch:
        raise


def _initial_from_modes(cfg, doc):
    """``initial_modes``: list of ``{"component", "mode", "position", "velocity"}``."""
    u = np.zeros((cfg.m, cfg.N))
    v = np.zeros((cfg.m, cfg.N))
    for e in doc.get("initial_modes", []):
        i, k = int(e["component"]) - 1, int(e["mode"]) - 1
        u[i, k] += float(e.get("position", 0.0))
        v[i, k] += float(e.get("velocity", 0.0))
    return CascadeState(u, v, cfg.L)


def write_hum_csv(solution, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        for key in ("terminal_residual", "initial_energy", "relative_residual", "control_energy"):
            w.writerow([key, repr(float(getattr(solution, key)))])
