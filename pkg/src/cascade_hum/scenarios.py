"""
End-to-end pipelines built on the cascade HUM solver.

Simultaneous control
    Three parallel waves ``p_i'' + A p_i + sum_j Q_ij p_j = eta_i h`` with
    ``eta = (2, 4, 1)`` become, under ``y = T p`` with
    ``T = [[-1/4, 1/4, -1/2], [3/4, -1/4, -1/2], [-1, 1, 1]]``, the
    3-cascade ``y_1'' + A y_1 + 6 alpha y_2 = 0``,
    ``y_2'' + A y_2 + (beta/2) y_3 = 0``, ``y_3'' + A y_3 = 3 h``.
    The coupling is ``Q = T^{-1} R T`` with ``R`` the cascade coupling, so
    one scalar control steers all three waves.

Insensitizing control
    ``y_1'' + A y_1 + c y_2 = 0``, ``y_2'' + A y_2 = b v`` with ``y_1`` zero
    at both ends of ``[0, T]``.  Then the functional
    ``phi = 1/2 int int c y_2^2`` has zero derivative with respect to
    perturbations of the ``y_2`` data, which is checked by centered
    differences.
"""

from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeConfig, CascadeState
from .descriptors import as_coefficient
from .energy import state_energy
from .errors import InvalidArgument
from .evolution import propagate, time_steps, check_step
from .hum import ControlProblem, controlled_run, solve_hum
from .observation import ObservationSpec, trapezoid_weights
from .spectral import SpectralField, assemble_multiplication, eigenvalues

TRANSFORM = np.array([[-0.25, 0.25, -0.5],
                      [0.75, -0.25, -0.5],
                      [-1.0, 1.0, 1.0]])
TRANSFORM_INV = np.linalg.inv(TRANSFORM)
CONTROL_WEIGHTS = np.array([2.0, 4.0, 1.0])
CASCADE_SOURCE = 3.0


def transform(p):
    """Apply the mixing matrix to a ``(3, ...)`` stack of components."""
    return np.tensordot(TRANSFORM, np.asarray(p, dtype=float), axes=1)


def inverse_transform(y):
    return np.tensordot(TRANSFORM_INV, np.asarray(y, dtype=float), axes=1)


def parallel_coupling_coefficients(alpha, beta):
    """``Q = T^{-1} R T`` as coefficient descriptors ``Q[i][j]``, where
    ``R[0][1] = 6 alpha`` and ``R[1][2] = beta / 2``."""
    alpha, beta = as_coefficient(alpha), as_coefficient(beta)
    Q = []
    for i in range(3):
        row = []
        for j in range(3):
            wa = 6.0 * TRANSFORM_INV[i, 0] * TRANSFORM[1, j]
            wb = 0.5 * TRANSFORM_INV[i, 1] * TRANSFORM[2, j]
            row.append(wa * alpha + wb * beta)
        Q.append(row)
    return Q


@dataclass
class SimultaneousSystem:
    alpha: object
    beta: object
    L: float
    N: int
    positions: np.ndarray            # (3, N)
    velocities: np.ndarray           # (3, N)
    alpha_region: tuple = None
    beta_region: tuple = None

    def __post_init__(self):
        self.alpha = as_coefficient(self.alpha)
        self.beta = as_coefficient(self.beta)
        self.positions = np.asarray(self.positions, dtype=float).reshape(3, self.N)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(3, self.N)

    def coupling_matrix(self):
        """``(3N, 3N)`` modal matrix of ``Q``."""
        N = self.N
        Ma = assemble_multiplication(self.alpha, N, self.L).matrix
        Mb = assemble_multiplication(self.beta, N, self.L).matrix
        R = np.zeros((3 * N, 3 * N))
        R[:N, N : 2 * N] = 6.0 * Ma
        R[N : 2 * N, 2 * N :] = 0.5 * Mb
        Tk = np.kron(TRANSFORM, np.eye(N))
        Tinv = np.kron(TRANSFORM_INV, np.eye(N))
        return Tinv @ R @ Tk

    def vector_field(self, q, p):
        """Acceleration of the parallel system at state ``(q, p)`` without control."""
        lam = np.tile(eigenvalues(self.N, self.L), 3)
        return -(lam * q.ravel() + self.coupling_matrix() @ q.ravel()).reshape(3, self.N)


def simultaneous_to_cascade(sys):
    """Equivalent 3-cascade and the transformation data."""
    cfg = CascadeConfig(
        n=3, L=sys.L, N=sys.N,
        subdiagonal=[6.0 * sys.alpha, 0.5 * sys.beta],
        regions=[sys.alpha_region, sys.beta_region],
    )
    info = {"matrix": TRANSFORM, "inverse": TRANSFORM_INV,
            "control_weights": CONTROL_WEIGHTS, "cascade_source": CASCADE_SOURCE}
    return cfg, info


def integrate_parallel(sys, T, dt, h=None, accelerated=None):
    """Forward run of the parallel system driven by ``(2h, 4h, h)``; ``h`` is
    a modal ``(M+1, N)`` signal or ``None``."""
    M = time_steps(T, dt)
    check_step(dt, eigenvalues(sys.N, sys.L)[-1])
    lam = np.tile(eigenvalues(sys.N, sys.L), 3)
    F = None
    if h is not None:
        F = (CONTROL_WEIGHTS[None, :, None] * np.asarray(h)[:, None, :]).reshape(M + 1, -1)
    Q, P = propagate(lam, sys.coupling_matrix(), sys.positions.ravel(), sys.velocities.ravel(),
                     dt, M, F, accelerated=accelerated)
    return Q.reshape(M + 1, 3, sys.N), P.reshape(M + 1, 3, sys.N)


@dataclass
class SimultaneousResult:
    h: np.ndarray
    hum: object
    initial_energy: float
    terminal_energy: float
    cascade_terminal: float

    @property
    def relative(self):
        return self.terminal_energy / self.initial_energy if self.initial_energy > 0 else 0.0

    def to_json(self):
        return {"initial_energy": float(self.initial_energy),
                "terminal_energy": float(self.terminal_energy),
                "relative": float(self.relative),
                "cascade_relative": float(self.hum.relative_residual),
                "success": bool(self.hum.success), "solver": self.hum.solver,
                "control_energy": self.hum.control_energy}


def solve_simultaneous(sys, T, dt, control, tol=1e-8, method="auto", min_time=None):
    """Steer all three parallel waves with one scalar control.

    ``control`` is an interior spec (its target is forced to component 3).
    The HUM source ``b v`` on the cascade equals ``3 h``, so
    ``h = (b v) / 3``.  The returned terminal energy comes from an
    independent run of the parallel system driven by ``(2h, 4h, h)``.
    """
    cfg, _ = simultaneous_to_cascade(sys)
    spec = ObservationSpec.interior(control.coefficient, control.region, 3)
    y_pos = transform(sys.positions)
    y_vel = transform(sys.velocities)
    Y0 = CascadeState(y_pos, y_vel, cfg.L)
    problem = ControlProblem(cfg, Y0, T, dt, [spec], "bounded", min_time=min_time)
    sol = solve_hum(problem, tol=tol, method=method)
    Mb = spec.matrix(cfg.N, cfg.L)
    h = (sol.controls[0] @ Mb) / CASCADE_SOURCE
    Q, P = integrate_parallel(sys, T, dt, h)
    def energy(q, p):
        return state_energy(CascadeState(q, p, sys.L), [1, 1, 1])
    return SimultaneousResult(h, sol, energy(sys.positions, sys.velocities), energy(Q[-1], P[-1]),
                              sol.terminal_residual)


@dataclass
class InsensitizingResult:
    hum: object
    controlled: list                  # per direction: (d_tau0, d_tau1) relative
    uncontrolled: list
    raw: list = field(default_factory=list)

    def worst(self, which="controlled"):
        rows = getattr(self, which)
        return max(max(abs(a), abs(b)) for a, b in rows) if rows else 0.0

    def to_json(self):
        return {"hum": {"success": bool(self.hum.success),
                        "relative_residual": self.hum.relative_residual,
                        "solver": self.hum.solver},
                "controlled": [[float(x) for x in r] for r in self.controlled],
                "uncontrolled": [[float(x) for x in r] for r in self.uncontrolled],
                "worst_controlled": float(self.worst("controlled")),
                "worst_uncontrolled": float(self.worst("uncontrolled"))}


def _phi_and_scale(problem, controls, Y0, C):
    traj = controlled_run(problem, controls, Y0=Y0)
    y = traj.Q[:, 1, :]
    w = trapezoid_weights(problem.M, problem.dt)
    return 0.5 * float(w @ np.einsum("tj,jk,tk->t", y, C, y))


def _sensitivity(problem, controls, C, z0, z1, eps):
    base = problem.Y0
    out = []
    for dz in ((z0, np.zeros_like(z0)), (np.zeros_like(z1), z1)):
        du = np.zeros_like(base.u); dv = np.zeros_like(base.v)
        du[1] = dz[0]; dv[1] = dz[1]
        pert = CascadeState(du, dv, base.L)
        plus = _phi_and_scale(problem, controls, base + eps * pert, C)
        minus = _phi_and_scale(problem, controls, base - eps * pert, C)
        # Cauchy-Schwarz scale for int int c y z
        phi_y = _phi_and_scale(problem, controls, base, C)
        zero_ctrl = [np.zeros_like(v) for v in controls]
        phi_z = _phi_and_scale(problem, zero_ctrl, pert, C)
        scale = 2.0 * np.sqrt(phi_y * phi_z)
        d = (plus - minus) / (2 * eps)
        out.append((d / scale if scale > 0 else 0.0, d))
    return out


def insensitizing_pipeline(y0, y1, b, omega, c, region, T, dt, N=None, L=None, eps=1e-4,
                           directions=5, seed=0, tol=1e-10, min_time=None):
    """Compute an insensitizing control for the wave with data ``(y0, y1)``
    and check the sensitivities of ``phi`` by centered differences.

    Perturbation directions ``z0`` (unit in ``H_1``) and ``z1`` (unit in
    ``L2``) are random; relative derivatives are divided by the
    Cauchy-Schwarz bound ``sqrt(int int c y^2) sqrt(int int c z^2)``.
    """
    if isinstance(y0, SpectralField):
        L, N = y0.L, y0.N
        y0, y1 = y0.coeffs, y1.coeffs
    if L is None or N is None:
        raise InvalidArgument("pass SpectralFields or give N and L")
    cfg = CascadeConfig(n=2, L=L, N=N, subdiagonal=[c], regions=[region])
    spec = ObservationSpec.interior(b, omega, 2)
    u = np.zeros((2, N)); v = np.zeros((2, N))
    u[1] = y0; v[1] = y1
    problem = ControlProblem(cfg, CascadeState(u, v, L), T, dt, [spec], "bounded",
                             steer_components=(1,), min_time=min_time)
    sol = solve_hum(problem, tol=tol)
    C = cfg.coupling_blocks[(2, 1)]
    lam = cfg.lam
    rng = np.random.default_rng(seed)
    zero = [np.zeros_like(x) for x in sol.controls]
    controlled, uncontrolled, raw = [], [], []
    for _ in range(directions):
        z0 = rng.standard_normal(N) / np.arange(1, N + 1) ** 2
        z1 = rng.standard_normal(N) / np.arange(1, N + 1)
        z0 /= np.sqrt(np.sum(lam * z0**2))
        z1 /= np.linalg.norm(z1)
        s_ctrl = _sensitivity(problem, sol.controls, C, z0, z1, eps)
        s_free = _sensitivity(problem, zero, C, z0, z1, eps)
        controlled.append((s_ctrl[0][0], s_ctrl[1][0]))
        uncontrolled.append((s_free[0][0], s_free[1][0]))
        raw.append({"controlled": [s_ctrl[0][1], s_ctrl[1][1]],
                    "uncontrolled": [s_free[0][1], s_free[1][1]]})
    return InsensitizingResult(sol, controlled, uncontrolled, raw)
