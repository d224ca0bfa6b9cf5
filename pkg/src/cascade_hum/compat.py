"""
Compatibility of a coupling coefficient with the Sobolev scale ``H_k`` in 1D.

Multiplication by a smooth ``c`` maps ``H_k`` (Dirichlet sine scale) into
itself exactly when the odd derivatives ``c^{(2p-1)}`` vanish at both
endpoints for ``p = 1..floor((k-1)/2)``.  :func:`check_compat_1d` evaluates
those derivatives, :func:`build_bump` builds coefficients that satisfy them
for every ``k``, and :func:`verify_Hk_stability` looks for the numerical
signature of ``c u`` leaving ``H_k`` as the truncation grows.
"""

from dataclasses import dataclass, field

import numpy as np

from .descriptors import Bump, Sampled, as_coefficient
from .errors import CannotEvaluate, InvalidArgument, Unsupported
from .spectral import assemble_multiplication, eigenvalues

COMPAT_TOL = 1e-8
FD_ACCURACY = 6
GROWTH_LIMIT = 2.0


def required_orders(k):
    """Odd derivative orders constrained at level ``k``."""
    return [2 * p - 1 for p in range(1, (int(k) - 1) // 2 + 1)]


def _endpoint_derivative(c, x0, order, L, side):
    exact = c.derivative(np.array([x0]), order)
    if exact is not None:
        return float(np.asarray(exact).ravel()[0])
    npts = order + FD_ACCURACY

    def one_sided(xs, count):
        # interpolating polynomial through the first `count` points
        poly = np.polynomial.Polynomial.fit(xs[:count] - x0, c(xs[:count]), deg=count - 1)
        return float(poly.deriv(order)(0.0))

    if isinstance(c, Sampled):
        xs = c.x if side == "left" else c.x[::-1]
        if xs.size < npts + 1:
            raise CannotEvaluate(
                f"{xs.size} samples cannot resolve derivative order {order} "
                f"(need {npts + 1} near the endpoint)")
        val = one_sided(xs, npts + 1)
        err = abs(val - one_sided(xs, npts))
    else:
        # halve the step until successive estimates stop improving
        sign = 1.0 if side == "left" else -1.0
        wide = npts + 4
        vals = [one_sided(x0 + sign * (L / d) * np.arange(wide), wide)
                for d in (5, 10, 20, 40, 80, 160, 320)]
        diffs = np.abs(np.diff(vals))
        j = int(np.argmin(diffs))
        val, err = vals[j + 1], float(diffs[j])
    if err > COMPAT_TOL and abs(val) <= err + COMPAT_TOL:
        raise CannotEvaluate(
            f"derivative of order {order} at the {side} endpoint is {val:.3e} +- {err:.1e}; "
            "the samples are too coarse to decide")
    return val


@dataclass
class CompatReport:
    k: int
    entries: list = field(default_factory=list)
    dimension: int = 1

    @property
    def passed(self):
        return all(e["passed"] for e in self.entries)

    def to_json(self):
        return {"k": self.k, "dimension": self.dimension, "passed": self.passed,
                "entries": self.entries}


def check_compat_1d(c, k, L):
    """Evaluate every constrained odd derivative at ``0`` and ``L``."""
    if k < 0:
        raise InvalidArgument("level must be nonnegative")
    c = as_coefficient(c)
    report = CompatReport(int(k))
    for order in required_orders(k):
        for side, x0 in (("left", 0.0), ("right", float(L))):
            val = _endpoint_derivative(c, x0, order, L, side)
            report.entries.append({"order": order, "endpoint": side, "value": val,
                                   "passed": bool(abs(val) <= COMPAT_TOL)})
    return report


def build_bump(region, L, amplitude=1.0, smoothness=None, delta=None):
    """Smooth nonnegative coefficient equal to ``amplitude`` on ``region`` and
    supported in ``(a - delta, b + delta)`` inside ``(0, L)``.

    The default transition width is 90% of the gap to the nearer endpoint,
    which keeps the transition resolvable at moderate truncations.
    ``smoothness`` is accepted for interface symmetry: the construction is
    infinitely smooth, so every level passes the compatibility check.
    """
    a, b = (float(v) for v in region)
    if not a < b:
        raise InvalidArgument(f"empty region ({a}, {b})")
    if a <= 0 or b >= L:
        raise Unsupported(f"region ({a}, {b}) touches the boundary of (0, {L})")
    gap = min(a, L - b)
    delta = 0.9 * gap if delta is None else float(delta)
    if not 0 < delta < gap:
        raise InvalidArgument(f"transition width {delta} must lie in (0, {gap})")
    return Bump(a, b, amplitude, delta)


@dataclass
class StabilityReport:
    k: float
    N_list: list
    estimates: list
    operator_norms: list
    growth: float
    stable: bool

    def to_json(self):
        return {"k": self.k, "N_list": list(self.N_list), "estimates": list(self.estimates),
                "operator_norms": list(self.operator_norms), "growth": self.growth,
                "verdict": "stable" if self.stable else "unstable"}


def verify_Hk_stability(c, k, N_list, L, samples=64, modes=8, seed=0):
    """For each ``N``: ``max |P_N(c u)|_k`` over random smooth unit ``u`` in
    ``H_k`` (spanned by the first ``modes`` modes), and the exact norm of the
    truncated operator ``A^{k/2} M_c A^{-k/2}``.  The coefficient is flagged
    unstable when the sampled estimate grows by more than 2x from the
    smallest to the largest ``N``."""
    if k < 0:
        raise InvalidArgument("level must be nonnegative")
    c = as_coefficient(c)
    N_list = sorted(int(N) for N in N_list)
    rng = np.random.default_rng(seed)
    r = min(modes, N_list[0])
    draws = rng.standard_normal((samples, r))
    estimates, norms = [], []
    for N in N_list:
        lam = eigenvalues(N, L)
        Mc = assemble_multiplication(c, N, L).matrix
        U = np.zeros((samples, N))
        U[:, :r] = draws
        U /= np.sqrt(np.sum(lam**k * U**2, axis=1))[:, None]
        V = U @ Mc.T
        estimates.append(float(np.sqrt(np.max(np.sum(lam**k * V**2, axis=1)))))
        s = lam ** (0.5 * k)
        norms.append(float(np.linalg.norm(s[:, None] * Mc / s[None, :], 2)))
    growth = estimates[-1] / estimates[0] if estimates[0] > 0 else 1.0
    return StabilityReport(k, N_list, estimates, norms, float(growth), growth <= GROWTH_LIMIT)
