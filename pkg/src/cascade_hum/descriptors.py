"""
Coefficient descriptors: scalar functions on ``(0, L)`` used as coupling,
control and observation coefficients.

A descriptor is a vectorised callable that also knows its breakpoints (for
quadrature alignment) and, when it is one of the built-in catalog entries,
how to round-trip through JSON::

    {"kind": "expr", "name": "bump", "params": {"a": 1.0, "b": 2.0, ...}}
    {"kind": "samples", "x": [...], "y": [...]}

Descriptors combine linearly (``6 * alpha``, ``alpha + beta``), which the
simultaneous-control scenario relies on.
"""

import math

import numpy as np

from .errors import InvalidConfig, InvalidCoefficient


class Coefficient:
    """Base class.  Subclasses implement ``_eval`` and ``to_json``."""

    name = "abstract"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._eval(x)

    def _eval(self, x):
        raise NotImplementedError

    def breakpoints(self):
        """Points where the coefficient (or a derivative) is not smooth."""
        return ()

    def derivative(self, x, order):
        """Analytic derivative, or ``None`` when only samples are available."""
        return None

    def to_json(self):
        raise InvalidConfig(f"coefficient {self!r} has no JSON form")

    # linear combinations
    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, as_coefficient(other))])

    __radd__ = __add__

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, as_coefficient(other))])

    def __rsub__(self, other):
        return LinearCombination([(1.0, as_coefficient(other)), (-1.0, self)])

    def __mul__(self, factor):
        if not np.isscalar(factor):
            return NotImplemented
        return LinearCombination([(float(factor), self)])

    __rmul__ = __mul__

    def __truediv__(self, factor):
        return self * (1.0 / float(factor))

    def __neg__(self):
        return self * -1.0


class Constant(Coefficient):
    name = "constant"

    def __init__(self, value=1.0):
        self.value = float(value)

    def _eval(self, x):
        return np.full_like(x, self.value)

    def derivative(self, x, order):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.value if order == 0 else 0.0)

    def to_json(self):
        return {"kind": "expr", "name": self.name, "params": {"value": self.value}}

    def __repr__(self):
        return f"Constant({self.value})"


class Linear(Coefficient):
    name = "linear"

    def __init__(self, slope=1.0, intercept=0.0):
        self.slope = float(slope)
        self.intercept = float(intercept)

    def _eval(self, x):
        return self.slope * x + self.intercept

    def derivative(self, x, order):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self._eval(x)
        return np.full_like(x, self.slope if order == 1 else 0.0)

    def to_json(self):
        return {
            "kind": "expr",
            "name": self.name,
            "params": {"slope": self.slope, "intercept": self.intercept},
        }


class Cosine(Coefficient):
    """``offset + amplitude * cos(frequency * x + phase)``."""

    name = "cosine"

    def __init__(self, offset=0.0, amplitude=1.0, frequency=1.0, phase=0.0):
        self.offset = float(offset)
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.phase = float(phase)

    def _eval(self, x):
        return self.offset + self.amplitude * np.cos(self.frequency * x + self.phase)

    def derivative(self, x, order):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self._eval(x)
        arg = self.frequency * x + self.phase + order * math.pi / 2
        return self.amplitude * self.frequency**order * np.cos(arg)

    def to_json(self):
        return {
            "kind": "expr",
            "name": self.name,
            "params": {
                "offset": self.offset,
                "amplitude": self.amplitude,
                "frequency": self.frequency,
                "phase": self.phase,
            },
        }


def _smooth_step(s):
    # C-infinity transition from 0 (s <= 0) to 1 (s >= 1)
    s = np.clip(s, 0.0, 1.0)

    def psi(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(-1.0 / t[pos])
        return out

    a = psi(s)
    b = psi(1.0 - s)
    return a / (a + b)


class Bump(Coefficient):
    """Smooth plateau: equal to ``amplitude`` on ``[a, b]``, zero outside
    ``[a - delta, b + delta]``, built from the ``exp(-1/s)`` transition."""

    name = "bump"

    def __init__(self, a, b, amplitude=1.0, delta=0.1):
        if not b > a:
            raise InvalidCoefficient(f"bump needs a < b, got ({a}, {b})")
        if not delta > 0:
            raise InvalidCoefficient("bump transition width must be positive")
        self.a = float(a)
        self.b = float(b)
        self.amplitude = float(amplitude)
        self.delta = float(delta)

    @property
    def support(self):
        return (self.a - self.delta, self.b + self.delta)

    def _eval(self, x):
        d = self.delta
        left = _smooth_step((x - (self.a - d)) / d)
        right = _smooth_step(((self.b + d) - x) / d)
        return self.amplitude * left * right

    def breakpoints(self):
        lo, hi = self.support
        return (lo, self.a, self.b, hi)

    def derivative(self, x, order):
        # exact only away from the support, which is all the compatibility
        # check needs for interior bumps
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        if np.all((x <= lo) | (x >= hi)):
            return np.zeros_like(x)
        return None

    def to_json(self):
        return {
            "kind": "expr",
            "name": self.name,
            "params": {
                "a": self.a,
                "b": self.b,
                "amplitude": self.amplitude,
                "delta": self.delta,
            },
        }


class Piecewise(Coefficient):
    """Piecewise constant: ``values[j]`` on ``(breaks[j-1], breaks[j])``."""

    name = "piecewise"

    def __init__(self, breaks, values):
        self.breaks = [float(b) for b in breaks]
        self.values = [float(v) for v in values]
        if len(self.values) != len(self.breaks) + 1:
            raise InvalidCoefficient("piecewise needs len(values) == len(breaks) + 1")
        if any(b1 >= b2 for b1, b2 in zip(self.breaks, self.breaks[1:])):
            raise InvalidCoefficient("piecewise breaks must increase")

    def _eval(self, x):
        idx = np.searchsorted(self.breaks, x, side="right")
        return np.asarray(self.values)[idx]

    def breakpoints(self):
        return tuple(self.breaks)

    def derivative(self, x, order):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self._eval(x)
        if np.any(np.isin(x, self.breaks)):
            return None
        return np.zeros_like(x)

    def to_json(self):
        return {
            "kind": "expr",
            "name": self.name,
            "params": {"breaks": self.breaks, "values": self.values},
        }


def indicator(a, b, value=1.0):
    """Indicator of ``(a, b)`` as a :class:`Piecewise` descriptor."""
    return Piecewise([a, b], [0.0, value, 0.0])


class Sampled(Coefficient):
    """Piecewise-linear interpolant of samples ``(x_j, y_j)``."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise InvalidCoefficient("samples need matching 1-D x and y with >= 2 points")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise InvalidCoefficient("non-finite coefficient samples")
        if np.any(np.diff(x) <= 0):
            raise InvalidCoefficient("sample abscissae must increase strictly")
        self.x = x
        self.y = y

    name = "samples"

    def _eval(self, x):
        return np.interp(x, self.x, self.y)

    def breakpoints(self):
        return tuple(self.x)

    def to_json(self):
        return {"kind": "samples", "x": self.x.tolist(), "y": self.y.tolist()}


class Callback(Coefficient):
    """Arbitrary closed-form callable; not JSON-serialisable.  ``derivative``,
    if given, is called as ``derivative(x, order)``."""

    name = "callback"

    def __init__(self, fn, label="callback", derivative=None, breakpoints=()):
        self.fn = fn
        self.label = label
        self._derivative = derivative
        self._breakpoints = tuple(breakpoints)

    def _eval(self, x):
        return np.asarray(self.fn(x), dtype=float) * np.ones_like(x)

    def breakpoints(self):
        return self._breakpoints

    def derivative(self, x, order):
        if self._derivative is None:
            return None
        return np.asarray(self._derivative(np.asarray(x, dtype=float), order), dtype=float)

    def __repr__(self):
        return f"Callback({self.label})"


class LinearCombination(Coefficient):
    name = "combination"

    def __init__(self, terms):
        flat = []
        for w, c in terms:
            if isinstance(c, LinearCombination):
                flat.extend((w * w2, c2) for w2, c2 in c.terms)
            else:
                flat.append((float(w), c))
        self.terms = flat

    def _eval(self, x):
        out = np.zeros_like(x)
        for w, c in self.terms:
            out += w * c(x)
        return out

    def breakpoints(self):
        pts = set()
        for _, c in self.terms:
            pts.update(c.breakpoints())
        return tuple(sorted(pts))

    def derivative(self, x, order):
        out = 0.0
        for w, c in self.terms:
            d = c.derivative(x, order)
            if d is None:
                return None
            out = out + w * d
        return out

    def to_json(self):
        return {
            "kind": "expr",
            "name": self.name,
            "params": {"terms": [{"weight": w, "coefficient": c.to_json()} for w, c in self.terms]},
        }


_CATALOG = {
    "constant": Constant,
    "linear": Linear,
    "cosine": Cosine,
    "bump": Bump,
    "piecewise": Piecewise,
}


def as_coefficient(value):
    if isinstance(value, Coefficient):
        return value
    if np.isscalar(value):
        return Constant(value)
    if callable(value):
        return Callback(value)
    return from_json(value)


def from_json(doc):
    """Build a descriptor from its JSON form; raises :class:`InvalidConfig`."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise InvalidConfig(f"coefficient must be an object with 'kind', got {doc!r}")
    kind = doc["kind"]
    if kind == "samples":
        try:
            return Sampled(doc["x"], doc["y"])
        except KeyError as exc:
            raise InvalidConfig(f"samples coefficient missing {exc}") from None
    if kind != "expr":
        raise InvalidConfig(f"unknown coefficient kind {kind!r}")
    name = doc.get("name")
    params = dict(doc.get("params", {}))
    if name == "combination":
        terms = [(t["weight"], from_json(t["coefficient"])) for t in params.get("terms", [])]
        return LinearCombination(terms)
    if name == "indicator":
        return indicator(**params)
    if name not in _CATALOG:
        raise InvalidConfig(f"unknown coefficient {name!r}; catalog: {sorted(_CATALOG)}")
    try:
        return _CATALOG[name](**params)
    except TypeError as exc:
        raise InvalidConfig(f"bad params for {name}: {exc}") from None
