"""
Time-stepping kernels with an optional numba path.

Each kernel is written once as plain numpy-compatible Python and, unless
``CASCADE_HUM_NUMBA=0`` is set in the environment (or numba is missing),
compiled with ``numba.njit``.  Both paths run the identical source, so
results agree to rounding.

The scheme is a kick-drift-kick splitting of

    q'' = -A q - K q + f(t)

where ``A`` is diagonal (handled exactly by the drift, a per-dof rotation
with coefficients ``r11, r12, r21, r22``) and ``K`` collects the coupling
(applied in the kicks at the position stage, together with the nodal
forcing ``f``).  Passing ``K = S`` and a pure drift ``q += h p`` recovers
classical Stormer-Verlet.
"""

import os
import warnings

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_enabled():
    value = os.environ.get("CASCADE_HUM_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def _propagate_record(q0, p0, K, F, r11, r12, r21, r22, h, M):
    D = q0.shape[0]
    Q = np.empty((M + 1, D))
    P = np.empty((M + 1, D))
    q = q0.copy()
    p = p0.copy()
    forced = F.shape[0] > 0
    acc = -np.dot(K, q)
    if forced:
        acc += F[0]
    Q[0] = q
    P[0] = p
    for m in range(M):
        p += 0.5 * h * acc
        qn = r11 * q + r12 * p
        p = r21 * q + r22 * p
        q = qn
        acc = -np.dot(K, q)
        if forced:
            acc += F[m + 1]
        p += 0.5 * h * acc
        Q[m + 1] = q
        P[m + 1] = p
    return Q, P


def _propagate_gram(Q0, P0, K, r11, r12, r21, r22, h, M, Oq, wts):
    # r** have shape (D, 1) so they broadcast over the batch columns
    q = Q0.copy()
    p = P0.copy()
    B = q.shape[1]
    gram = np.zeros((B, B))
    y = np.dot(Oq, q)
    gram += wts[0] * np.dot(y.T, y)
    acc = -np.dot(K, q)
    for m in range(M):
        p += 0.5 * h * acc
        qn = r11 * q + r12 * p
        p = r21 * q + r22 * p
        q = qn
        acc = -np.dot(K, q)
        p += 0.5 * h * acc
        y = np.dot(Oq, q)
        gram += wts[m + 1] * np.dot(y.T, y)
    return gram, q, p


def _propagate_forms(Q0, P0, K, r11, r12, r21, r22, h, M, Fq, Fp, seg, nseg):
    q = Q0.copy()
    p = P0.copy()
    B = q.shape[1]
    R = Fq.shape[0]
    out = np.zeros((M + 1, nseg, B))
    y = np.dot(Fq, q) + np.dot(Fp, p)
    for r in range(R):
        out[0, seg[r]] += y[r] * y[r]
    acc = -np.dot(K, q)
    for m in range(M):
        p += 0.5 * h * acc
        qn = r11 * q + r12 * p
        p = r21 * q + r22 * p
        q = qn
        acc = -np.dot(K, q)
        p += 0.5 * h * acc
        y = np.dot(Fq, q) + np.dot(Fp, p)
        for r in range(R):
            out[m + 1, seg[r]] += y[r] * y[r]
    return out


PY_KERNELS = {
    "record": _propagate_record,
    "gram": _propagate_gram,
    "forms": _propagate_forms,
}

_JIT_KERNELS = {}


def kernel(name, accelerated=None):
    """Return kernel ``name``; ``accelerated=None`` follows the env flag."""
    if accelerated is None:
        accelerated = USE_NUMBA
    if not accelerated:
        return PY_KERNELS[name]
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    if name not in _JIT_KERNELS:
        _JIT_KERNELS[name] = numba.njit(cache=True)(PY_KERNELS[name])
    return _JIT_KERNELS[name]


def set_threads(n):
    """Bound numba's worker pool; a no-op on the pure numpy path."""
    if n is None or not HAVE_NUMBA:
        return
    with warnings.catch_warnings():
        # the TBB probe warns on old TBB builds before falling back to omp/workqueue
        warnings.filterwarnings("ignore", message=".*TBB.*")
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
