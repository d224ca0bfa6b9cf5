"""
Dirichlet-Laplacian eigenstructure on ``(0, L)``.

Functions are represented by their coefficients in the orthonormal sine basis
``phi_k(x) = sqrt(2/L) sin(k pi x / L)``, ``k = 1..N``, for which ``-d^2/dx^2``
is diagonal with eigenvalues ``lambda_k = (k pi / L)^2``.  Fractional powers
and the ``H_k`` norms are then exact at the truncation level.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .descriptors import Coefficient, as_coefficient
from .errors import InvalidArgument, InvalidCoefficient

GAUSS_NODES_PER_PANEL = 8
MIN_PANELS = 256


def eigenvalue(k, L):
    """``lambda_k = (k pi / L)^2``."""
    if int(k) != k or k < 1:
        raise InvalidArgument(f"mode index must be an integer >= 1, got {k}")
    if not L > 0:
        raise InvalidArgument(f"interval length must be positive, got {L}")
    return (k * np.pi / L) ** 2


def eigenvalues(N, L):
    if N < 1:
        raise InvalidArgument(f"truncation must be >= 1, got {N}")
    if not L > 0:
        raise InvalidArgument(f"interval length must be positive, got {L}")
    return (np.arange(1, N + 1) * np.pi / L) ** 2


def basis(N, L, x):
    """Matrix ``phi_k(x_j)`` of shape ``(N, len(x))``."""
    k = np.arange(1, N + 1)[:, None]
    return np.sqrt(2.0 / L) * np.sin(k * np.pi * np.asarray(x, dtype=float)[None, :] / L)


def basis_derivative(N, L, x):
    """Matrix ``phi_k'(x_j)``; ``phi_k'(0) = sqrt(2/L) k pi / L``."""
    k = np.arange(1, N + 1)[:, None]
    x = np.asarray(x, dtype=float)[None, :]
    return np.sqrt(2.0 / L) * (k * np.pi / L) * np.cos(k * np.pi * x / L)


@dataclass(frozen=True)
class SpectralField:
    coeffs: np.ndarray
    L: float

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=float).reshape(-1)
        if a.size < 1:
            raise InvalidArgument("a spectral field needs at least one mode")
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("spectral coefficients must be finite")
        if not self.L > 0:
            raise InvalidArgument(f"interval length must be positive, got {self.L}")
        a.flags.writeable = False
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "L", float(self.L))

    @property
    def N(self):
        return self.coeffs.size

    @classmethod
    def zeros(cls, N, L):
        return cls(np.zeros(N), L)

    @classmethod
    def mode(cls, k, N, L, amplitude=1.0):
        a = np.zeros(N)
        a[k - 1] = amplitude
        return cls(a, L)

    @classmethod
    def project(cls, f, N, L):
        """L2 projection of a callable onto the first ``N`` modes."""
        x, w = gauss_grid(L, N)
        fx = np.asarray(f(x), dtype=float)
        return cls(basis(N, L, x) @ (fx * w), L)

    def __call__(self, x):
        return self.coeffs @ basis(self.N, self.L, x)

    def eigenvalues(self):
        return eigenvalues(self.N, self.L)


def apply_fractional_power(u, s):
    """``A^{s/2} u``: mode ``k`` scaled by ``lambda_k^{s/2}``."""
    lam = u.eigenvalues()
    return SpectralField(lam ** (0.5 * s) * u.coeffs, u.L)


def sobolev_norm(u, k):
    """``|u|_k = (sum_j lambda_j^k a_j^2)^{1/2}``."""
    lam = u.eigenvalues()
    return float(np.sqrt(np.sum(lam**k * u.coeffs**2)))


def weighted_norm2(a, L, k):
    """Squared ``H_k`` norm of coefficient rows; works on ``(..., N)`` arrays."""
    a = np.asarray(a, dtype=float)
    lam = eigenvalues(a.shape[-1], L)
    return np.sum(lam**k * a**2, axis=-1)


@lru_cache(maxsize=64)
def _gauss_reference():
    return np.polynomial.legendre.leggauss(GAUSS_NODES_PER_PANEL)


def panel_edges(L, N, breakpoints=()):
    """Panel edges on ``[0, L]`` (at least ``max(4N, 256)`` panels), refined so
    every interior breakpoint is an edge."""
    target = max(4 * N, MIN_PANELS)
    cuts = sorted({0.0, float(L)} | {float(b) for b in breakpoints if 0.0 < b < L})
    edges = [cuts[0]]
    for lo, hi in zip(cuts, cuts[1:]):
        count = max(1, int(np.ceil(target * (hi - lo) / L)))
        edges.extend(np.linspace(lo, hi, count + 1)[1:])
    return np.asarray(edges)


def gauss_grid(L, N, breakpoints=()):
    """Composite Gauss-Legendre nodes and weights on ``[0, L]``."""
    xr, wr = _gauss_reference()
    e = panel_edges(L, N, breakpoints)
    mid = 0.5 * (e[1:] + e[:-1])
    half = 0.5 * (e[1:] - e[:-1])
    x = (mid[:, None] + half[:, None] * xr[None, :]).ravel()
    w = (half[:, None] * wr[None, :]).ravel()
    return x, w


@dataclass(frozen=True)
class MultiplicationOperator:
    """Matrix ``M_jk = int c phi_j phi_k`` of multiplication by ``c``."""

    matrix: np.ndarray
    source: Coefficient
    L: float

    @property
    def N(self):
        return self.matrix.shape[0]

    def apply(self, u):
        return SpectralField(self.matrix @ u.coeffs, u.L)


def assemble_multiplication(c, N, L):
    c = as_coefficient(c)
    if not L > 0:
        raise InvalidArgument(f"interval length must be positive, got {L}")
    x, w = gauss_grid(L, N, c.breakpoints())
    cx = np.asarray(c(x), dtype=float)
    if cx.shape != x.shape or not np.all(np.isfinite(cx)):
        raise InvalidCoefficient("coefficient produced non-finite or misshaped samples")
    phi = basis(N, L, x)
    M = (phi * (cx * w)) @ phi.T
    M = 0.5 * (M + M.T)
    M.flags.writeable = False
    return MultiplicationOperator(M, c, float(L))
