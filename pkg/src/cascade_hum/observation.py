"""
Observation operators and their adjoint control loads.

Interior observation multiplies a field of the target component by ``b`` and
lives in the truncated ``L2(0, L)`` (represented modally by the
multiplication matrix).  Boundary observation reads the outward normal
derivative at each active endpoint, scaled by a per-endpoint weight, and lives
in ``R^{#endpoints}``.  The control load of a signal ``v`` is always the
transpose of the observation matrix applied to ``v``, so the pairing
``<load(v), w> = <v, observe(w)>`` holds exactly.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .descriptors import as_coefficient
from .errors import GridMismatch, InvalidArgument, InvalidCoefficient, InvalidConfig
from .spectral import assemble_multiplication, basis_derivative

KINDS = ("interior", "boundary")
FIELDS = ("velocity", "position")
_ENDPOINT_ALIASES = {"left": "left", "0": "left", 0: "left", 0.0: "left",
                     "right": "right", "L": "right"}


def trapezoid_weights(M, dt):
    w = np.full(M + 1, float(dt))
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(frozen=True)
class ObservationSpec:
    kind: str
    target: int
    coefficient: object = None
    region: tuple = None
    endpoints: tuple = ()
    weights: tuple = ()
    field: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"observation kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.target) != self.target or self.target < 1:
            raise InvalidConfig(f"target component must be >= 1, got {self.target}")
        object.__setattr__(self, "target", int(self.target))
        fld = self.field or ("velocity" if self.kind == "interior" else "position")
        if fld not in FIELDS:
            raise InvalidConfig(f"observed field must be one of {FIELDS}, got {fld!r}")
        object.__setattr__(self, "field", fld)
        if self.kind == "interior":
            if self.coefficient is None or self.region is None:
                raise InvalidConfig("interior observation needs a coefficient and a region")
            a, b = (float(v) for v in self.region)
            if not a < b:
                raise InvalidConfig(f"observation region ({a}, {b}) is empty")
            object.__setattr__(self, "coefficient", as_coefficient(self.coefficient))
            object.__setattr__(self, "region", (a, b))
        else:
            ends = []
            for e in self.endpoints:
                if e not in _ENDPOINT_ALIASES:
                    raise InvalidConfig(f"unknown endpoint {e!r}; use 'left' or 'right'")
                ends.append(_ENDPOINT_ALIASES[e])
            if not ends or len(set(ends)) != len(ends):
                raise InvalidConfig("boundary observation needs distinct endpoints")
            weights = tuple(float(w) for w in (self.weights or (1.0,) * len(ends)))
            if len(weights) != len(ends):
                raise InvalidConfig("one weight per endpoint")
            if any(not w > 0 for w in weights):
                raise InvalidCoefficient("boundary weights must be positive")
            object.__setattr__(self, "endpoints", tuple(ends))
            object.__setattr__(self, "weights", weights)

    @classmethod
    def interior(cls, coefficient, region, target, field=None):
        return cls("interior", target, coefficient=coefficient, region=tuple(region), field=field)

    @classmethod
    def boundary(cls, endpoints, target, weights=None, field=None):
        return cls("boundary", target, endpoints=tuple(endpoints),
                   weights=tuple(weights) if weights is not None else (), field=field)

    @property
    def bounded(self):
        return self.kind == "interior"

    def validate(self, L):
        """Sign and positivity checks on ``(0, L)``; interior only."""
        if self.kind != "interior":
            return
        a, b = self.region
        if a < 0 or b > L:
            raise InvalidConfig(f"observation region ({a}, {b}) is not inside (0, {L})")
        x = np.linspace(0.0, L, 10_002)[1:-1]
        bx = self.coefficient(x)
        if bx.min() < -1e-12:
            raise InvalidCoefficient(f"observation coefficient is negative (min {bx.min():.3e})")
        inside = (x > a) & (x < b)
        if inside.any() and not bx[inside].min() > 0:
            raise InvalidCoefficient("observation coefficient vanishes inside its region")

    def dimension(self, N):
        return N if self.kind == "interior" else len(self.endpoints)

    def matrix(self, N, L):
        """``(G, N)`` matrix acting on the target component's coefficients."""
        if self.kind == "interior":
            return np.array(assemble_multiplication(self.coefficient, N, L).matrix)
        xs = np.array([0.0 if e == "left" else L for e in self.endpoints])
        signs = np.array([1.0 if e == "left" else -1.0 for e in self.endpoints])
        dphi = basis_derivative(N, L, xs).T
        return (signs * np.asarray(self.weights))[:, None] * dphi

    def to_json(self):
        doc = {"kind": self.kind, "target": self.target, "field": self.field}
        if self.kind == "interior":
            doc["coefficient"] = self.coefficient.to_json()
            doc["region"] = list(self.region)
        else:
            doc["endpoints"] = list(self.endpoints)
            doc["weights"] = list(self.weights)
        return doc

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict):
            raise InvalidConfig("observation spec must be a JSON object")
        try:
            kind = doc["kind"]
            target = doc["target"]
        except KeyError as exc:
            raise InvalidConfig(f"observation spec missing {exc}") from None
        if kind == "interior":
            from .descriptors import from_json
            if "coefficient" not in doc or "region" not in doc:
                raise InvalidConfig("interior observation needs 'coefficient' and 'region'")
            return cls.interior(from_json(doc["coefficient"]), doc["region"], target,
                                doc.get("field"))
        return cls("boundary", target, endpoints=tuple(doc.get("endpoints", ())),
                   weights=tuple(doc.get("weights", ())), field=doc.get("field"))


def _component(traj, spec):
    if not 1 <= spec.target <= traj.Q.shape[1]:
        raise InvalidArgument(f"target component {spec.target} out of range 1..{traj.Q.shape[1]}")
    data = traj.P if spec.field == "velocity" else traj.Q
    return data[:, spec.target - 1, :]


def observe(traj, spec):
    """Observation time series, shape ``(M+1, G)``."""
    comp = _component(traj, spec)
    return comp @ spec.matrix(comp.shape[1], traj.L).T


def admissibility_integral(traj, spec):
    y = observe(traj, spec)
    w = trapezoid_weights(y.shape[0] - 1, traj.dt)
    return float(w @ np.sum(y * y, axis=1))


def control_load(spec, v, times, m, N, L):
    """Modal forcing ``(M+1, m, N)`` generated by the signal ``v`` (shape
    ``(M+1, G)``) through the adjoint of ``spec``."""
    from .evolution import SourceSpec

    v = np.asarray(v, dtype=float)
    times = np.asarray(times, dtype=float)
    G = spec.dimension(N)
    if v.ndim == 1 and G == 1:
        v = v[:, None]
    if v.shape != (times.size, G):
        raise InvalidArgument(f"control of shape {v.shape} does not match grid ({times.size}, {G})")
    if not 1 <= spec.target <= m:
        raise InvalidArgument(f"target component {spec.target} out of range 1..{m}")
    forcing = np.zeros((times.size, m, N))
    forcing[:, spec.target - 1, :] = v @ spec.matrix(N, L)
    return SourceSpec(times, forcing)


def combine_sources(sources):
    sources = list(sources)
    base = sources[0]
    for s in sources[1:]:
        if s.times.shape != base.times.shape or not np.allclose(s.times, base.times, atol=1e-12):
            raise GridMismatch("sources live on different time grids")
    from .evolution import SourceSpec

    return SourceSpec(base.times, sum(s.forcing for s in sources))


def write_control_csv(path, times, v):
    v = np.atleast_2d(np.asarray(v, dtype=float).T).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"v{j}" for j in range(v.shape[1])])
        for t, row in zip(times, v):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def read_control_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:]
