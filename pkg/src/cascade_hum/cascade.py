"""
Cascade system assembly.

Components are numbered ``1..m`` with ``m = n + p``.  The modal stiffness
matrix ``S`` of the observed (adjoint) system ``q'' = -S q`` has ``Lambda``
blocks on the diagonal, the subdiagonal couplings ``C_{i,i-1}`` for
``2 <= i <= n`` and, for the extra rows ``i > n``, couplings ``C_{ik}`` with
``n-1 <= k <= i-1``.  The controlled system runs with ``S^T``.
"""

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .descriptors import as_coefficient, from_json as coefficient_from_json
from .errors import HypothesisViolation, InvalidArgument, InvalidConfig, InvalidState
from .observation import ObservationSpec
from .spectral import SpectralField, assemble_multiplication, eigenvalues

VALIDATION_GRID = 10_000


def parse_length(value):
    """Accept a number or a string such as ``"pi"`` or ``"2*pi"``."""
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(?:([0-9.eE+-]+)\s*\*\s*)?pi\s*", value)
        if not m:
            raise InvalidConfig(f"cannot parse length {value!r}")
        return (float(m.group(1)) if m.group(1) else 1.0) * math.pi
    return float(value)


@dataclass(frozen=True)
class CascadeConfig:
    n: int
    L: float
    N: int
    subdiagonal: tuple = ()
    p: int = 0
    offdiagonal: dict = field(default_factory=dict)
    regions: tuple = ()
    alphas: tuple = ()
    betas: tuple = ()
    observations: tuple = ()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidConfig(f"n must be an integer >= 1, got {self.n}")
        if int(self.p) != self.p or self.p < 0:
            raise InvalidConfig(f"p must be an integer >= 0, got {self.p}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidConfig(f"N must be an integer >= 1, got {self.N}")
        L = parse_length(self.L)
        if not L > 0:
            raise InvalidConfig(f"L must be positive, got {self.L}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", L)

        sub = tuple(as_coefficient(c) for c in self.subdiagonal)
        if len(sub) != self.n - 1:
            raise InvalidConfig(f"need {self.n - 1} subdiagonal couplings, got {len(sub)}")
        object.__setattr__(self, "subdiagonal", sub)

        off = {}
        for key, c in dict(self.offdiagonal).items():
            i, k = (int(v) for v in key)
            if not self.allowed_offdiagonal(i, k):
                raise InvalidConfig(
                    f"coupling ({i},{k}) is outside the cascade pattern for n={self.n}, p={self.p}"
                )
            off[(i, k)] = as_coefficient(c)
        object.__setattr__(self, "offdiagonal", off)

        for name in ("regions", "alphas", "betas"):
            vals = tuple(getattr(self, name))
            if vals and len(vals) != self.n - 1:
                raise InvalidConfig(f"{name} must have {self.n - 1} entries")
            if not vals:
                vals = (None,) * (self.n - 1)
            object.__setattr__(self, name, vals)
        regions = []
        for r in self.regions:
            if r is None:
                regions.append(None)
                continue
            a, b = (float(v) for v in r)
            if a < 0 or b > L:
                raise InvalidConfig(f"region ({a}, {b}) is not inside (0, {L})")
            regions.append((a, b))
        object.__setattr__(self, "regions", tuple(regions))

        obs = tuple(o if isinstance(o, ObservationSpec) else ObservationSpec.from_json(o)
                    for o in self.observations)
        for o in obs:
            if not self.n <= o.target <= self.m:
                raise InvalidConfig(
                    f"observation target {o.target} must lie in {self.n}..{self.m}"
                )
            o.validate(L)
        object.__setattr__(self, "observations", obs)

    @property
    def m(self):
        return self.n + self.p

    def allowed_offdiagonal(self, i, k):
        return self.n < i <= self.m and max(1, self.n - 1) <= k <= i - 1

    def couplings(self):
        """All couplings as ``{(row, col): Coefficient}`` with 1-based indices."""
        out = {(i, i - 1): c for i, c in zip(range(2, self.n + 1), self.subdiagonal)}
        out.update(self.offdiagonal)
        return out

    @cached_property
    def lam(self):
        return eigenvalues(self.N, self.L)

    @cached_property
    def coupling_blocks(self):
        blocks = {}
        for key, c in sorted(self.couplings().items()):
            blocks[key] = assemble_multiplication(c, self.N, self.L).matrix
        return blocks

    @cached_property
    def coupling_matrix(self):
        """``S - Lambda``: the off-diagonal block part of the stiffness."""
        N = self.N
        K = np.zeros((self.m * N, self.m * N))
        for (i, k), blk in self.coupling_blocks.items():
            K[(i - 1) * N : i * N, (k - 1) * N : k * N] = blk
        K.flags.writeable = False
        return K

    @cached_property
    def stiffness(self):
        S = self.coupling_matrix.copy()
        S[np.diag_indices_from(S)] += np.tile(self.lam, self.m)
        S.flags.writeable = False
        return S

    def with_updates(self, **changes):
        kwargs = {
            "n": self.n, "p": self.p, "L": self.L, "N": self.N,
            "subdiagonal": self.subdiagonal, "offdiagonal": self.offdiagonal,
            "regions": self.regions, "alphas": self.alphas, "betas": self.betas,
            "observations": self.observations,
        }
        kwargs.update(changes)
        return CascadeConfig(**kwargs)

    # JSON
    def to_json(self):
        sub = []
        for c, r, a, b in zip(self.subdiagonal, self.regions, self.alphas, self.betas):
            sub.append({
                "coefficient": c.to_json(),
                "region": list(r) if r is not None else None,
                "alpha": a,
                "beta": b,
            })
        return {
            "n": self.n,
            "p": self.p,
            "L": self.L,
            "N": self.N,
            "subdiagonal": sub,
            "offdiagonal": [
                {"row": i, "col": k, "coefficient": c.to_json()}
                for (i, k), c in sorted(self.offdiagonal.items())
            ],
            "observations": [o.to_json() for o in self.observations],
        }

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            try:
                doc = json.loads(doc)
            except json.JSONDecodeError as exc:
                raise InvalidConfig(f"malformed JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidConfig("cascade config must be a JSON object")
        missing = {"n", "L", "N"} - set(doc)
        if missing:
            raise InvalidConfig(f"cascade config missing {sorted(missing)}")
        try:
            sub = doc.get("subdiagonal", [])
            off = {}
            for entry in doc.get("offdiagonal", []):
                off[(entry["row"], entry["col"])] = coefficient_from_json(entry["coefficient"])
            return cls(
                n=doc["n"],
                p=doc.get("p", 0),
                L=doc["L"],
                N=doc["N"],
                subdiagonal=[coefficient_from_json(s["coefficient"]) for s in sub],
                offdiagonal=off,
                regions=[s.get("region") for s in sub],
                alphas=[s.get("alpha") for s in sub],
                betas=[s.get("beta") for s in sub],
                observations=doc.get("observations", []),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"bad cascade config: {exc!r}") from None


@dataclass(frozen=True)
class CascadeState:
    """Positions ``u`` and velocities ``v``, each an ``(m, N)`` coefficient array."""

    u: np.ndarray
    v: np.ndarray
    L: float

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 2 or u.shape != v.shape:
            raise InvalidState(f"positions {u.shape} and velocities {v.shape} must be equal (m, N)")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InvalidState("state has non-finite entries")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "L", float(self.L))

    @property
    def m(self):
        return self.u.shape[0]

    @property
    def N(self):
        return self.u.shape[1]

    @classmethod
    def zeros(cls, cfg):
        return cls(np.zeros((cfg.m, cfg.N)), np.zeros((cfg.m, cfg.N)), cfg.L)

    @classmethod
    def from_fields(cls, positions, velocities):
        fields = list(positions) + list(velocities)
        if not fields:
            raise InvalidState("empty state")
        L, N = fields[0].L, fields[0].N
        if any(f.L != L or f.N != N for f in fields):
            raise InvalidState("all fields must share L and N")
        return cls(np.array([f.coeffs for f in positions]), np.array([f.coeffs for f in velocities]), L)

    @classmethod
    def from_flat(cls, x, m, N, L):
        x = np.asarray(x, dtype=float)
        return cls(x[: m * N].reshape(m, N), x[m * N :].reshape(m, N), L)

    @property
    def positions(self):
        return [SpectralField(a, self.L) for a in self.u]

    @property
    def velocities(self):
        return [SpectralField(a, self.L) for a in self.v]

    def flat(self):
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def check_compatible(self, cfg):
        if self.u.shape != (cfg.m, cfg.N) or self.L != cfg.L:
            raise InvalidState(
                f"state shape {self.u.shape} / L={self.L} does not match config "
                f"({cfg.m}, {cfg.N}) / L={cfg.L}"
            )

    def __add__(self, other):
        return CascadeState(self.u + other.u, self.v + other.v, self.L)

    def __sub__(self, other):
        return CascadeState(self.u - other.u, self.v - other.v, self.L)

    def __mul__(self, s):
        return CascadeState(s * self.u, s * self.v, self.L)

    __rmul__ = __mul__

    def to_json(self):
        return {"L": self.L, "u": self.u.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_json(cls, doc):
        try:
            return cls(doc["u"], doc["v"], parse_length(doc["L"]))
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"bad state document: {exc!r}") from None


def canonical_levels(n, m):
    """Levels ``1 + i - n`` for ``i <= n`` and ``1`` for the extra rows."""
    return [1 + i - n if i <= n else 1 for i in range(1, m + 1)]


def random_state(cfg, rng, levels=None, components=None):
    """Gaussian modal data scaled so each component has ``H_k`` norm of order one
    at its level (position in ``H_k``, velocity in ``H_{k-1}``)."""
    levels = canonical_levels(cfg.n, cfg.m) if levels is None else levels
    lam = cfg.lam
    u = np.zeros((cfg.m, cfg.N))
    v = np.zeros((cfg.m, cfg.N))
    comps = range(cfg.m) if components is None else [c - 1 for c in components]
    for c in comps:
        k = levels[c]
        u[c] = rng.standard_normal(cfg.N) * lam ** (-0.5 * k) / np.sqrt(cfg.N)
        v[c] = rng.standard_normal(cfg.N) * lam ** (-0.5 * (k - 1)) / np.sqrt(cfg.N)
    return CascadeState(u, v, cfg.L)


@dataclass
class ValidationReport:
    entries: list
    alphas: list
    betas: list

    @property
    def passed(self):
        return all(e["passed"] for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e["passed"]]

    def to_json(self):
        return {"passed": self.passed, "entries": self.entries,
                "alphas": self.alphas, "betas": self.betas}


def validate_hypotheses(cfg, strict=False):
    """Check the sign, coercivity and boundedness hypotheses on the subdiagonal
    couplings.  With ``strict=True`` the first failure raises
    :class:`HypothesisViolation`."""
    x = np.linspace(0.0, cfg.L, VALIDATION_GRID + 2)[1:-1]
    entries, alphas, betas = [], [], []

    def record(hyp, i, ok, detail):
        entries.append({"hypothesis": hyp, "component": i, "passed": bool(ok), "detail": detail})
        if strict and not ok:
            raise HypothesisViolation(hyp, f"coupling c_{i},{i - 1}: {detail}")

    for i, c, region, alpha, beta in zip(range(2, cfg.n + 1), cfg.subdiagonal,
                                         cfg.regions, cfg.alphas, cfg.betas):
        cx = c(x)
        cmin = float(cx.min())
        sup = float(np.abs(cx).max())
        record("A2", i, cmin >= -1e-12, f"min c = {cmin:.3e}")
        b = sup if beta is None else float(beta)
        record("A2", i, float(cx.max()) <= b * (1 + 1e-12), f"sup c = {sup:.6g}, beta = {b:.6g}")
        betas.append(b)

        if region is None or not region[0] < region[1]:
            record("A3", i, False, f"coupling region {region} is empty")
            alphas.append(None)
            continue
        inside = (x > region[0]) & (x < region[1])
        if not inside.any():
            record("A3", i, False, f"coupling region {region} too small for the check grid")
            alphas.append(None)
            continue
        inf_c = float(cx[inside].min())
        a = inf_c if alpha is None else float(alpha)
        ok = a > 0 and inf_c >= a * (1 - 1e-12)
        record("A3", i, ok, f"inf over region = {inf_c:.6g}, alpha = {a:.6g}")
        alphas.append(a)
    return ValidationReport(entries, alphas, betas)


def apply_first_order(cfg, U):
    """``(u, v) -> (v, -S u)``."""
    U.check_compatible(cfg)
    acc = -(cfg.stiffness @ U.u.ravel()).reshape(cfg.m, cfg.N)
    return CascadeState(U.v.copy(), acc, cfg.L)


def _solve_stiffness(cfg, rhs):
    # block forward substitution: S is block lower triangular with Lambda on the diagonal
    blocks = cfg.coupling_blocks
    w = np.zeros_like(rhs)
    for i in range(1, cfg.m + 1):
        r = rhs[i - 1].copy()
        for k in range(1, i):
            blk = blocks.get((i, k))
            if blk is not None:
                r -= blk @ w[k - 1]
        w[i - 1] = r / cfg.lam
    return w


def apply_inverse_first_order(cfg, U):
    """Inverse of :func:`apply_first_order`: ``w = -S^{-1} v`` by forward
    recursion over components, and ``w' = u``."""
    U.check_compatible(cfg)
    return CascadeState(_solve_stiffness(cfg, -U.v), U.u.copy(), cfg.L)


def iterate_inverse(cfg, U, l):
    if int(l) != l or l < 1:
        raise InvalidArgument(f"iteration count must be >= 1, got {l}")
    out = [U]
    for _ in range(int(l)):
        out.append(apply_inverse_first_order(cfg, out[-1]))
    return out


def dense_first_order_matrix(cfg):
    """Explicit ``2mN x 2mN`` matrix of the first-order operator."""
    D = cfg.m * cfg.N
    A = np.zeros((2 * D, 2 * D))
    A[:D, D:] = np.eye(D)
    A[D:, :D] = -cfg.stiffness
    return A
