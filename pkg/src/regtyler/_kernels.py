"""Hot numeric kernels with a numba path and a pure-numpy path.

The backend is picked once at import from ``REGTYLER_BACKEND`` (``numba`` or
``numpy``); numba is used by default when it imports. ``set_backend`` switches
at runtime, which the tests and ``benchmarks/bench_kernels.py`` rely on.

Both paths compute the same quantities in the same floating-point order as far
as is practical, but only agreement to rounding is promised.
"""

import os

import numpy as np
from scipy.linalg import solve_triangular

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

# quadratic forms below this are clamped before division
QUAD_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _quad_forms_np(X, L):
    Y = solve_triangular(L, X.T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", Y, Y)


def _weighted_scatter_np(X, w):
    Xw = X * w[:, None]
    S = Xw.T @ X
    return 0.5 * (S + S.T)


def _tyler_scatter_np(X, L, floor):
    q = _quad_forms_np(X, L)
    clamped = int(np.count_nonzero(q < floor))
    q = np.maximum(q, floor)
    return _weighted_scatter_np(X, 1.0 / q), q, clamped


def _span_count_np(Q, X, norms, tol):
    R = X - (X @ Q) @ Q.T
    resid = np.sqrt(np.einsum("ij,ij->i", R, R))
    return int(np.count_nonzero(resid <= tol * norms))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _quad_forms_nb(X, L):
        n, k = X.shape
        out = np.empty(n)
        y = np.empty(k)
        for i in range(n):
            acc = 0.0
            for r in range(k):
                s = X[i, r]
                for c in range(r):
                    s -= L[r, c] * y[c]
                y[r] = s / L[r, r]
                acc += y[r] * y[r]
            out[i] = acc
        return out

    @njit(cache=True, nogil=True)
    def _weighted_scatter_nb(X, w):
        n, k = X.shape
        S = np.zeros((k, k))
        for i in range(n):
            wi = w[i]
            for r in range(k):
                a = wi * X[i, r]
                for c in range(r + 1):
                    S[r, c] += a * X[i, c]
        for r in range(k):
            for c in range(r):
                S[c, r] = S[r, c]
        return S

    @njit(cache=True, nogil=True)
    def _tyler_scatter_nb(X, L, floor):
        q = _quad_forms_nb(X, L)
        clamped = 0
        w = np.empty(q.shape[0])
        for i in range(q.shape[0]):
            if q[i] < floor:
                q[i] = floor
                clamped += 1
            w[i] = 1.0 / q[i]
        return _weighted_scatter_nb(X, w), q, clamped

    @njit(cache=True, nogil=True)
    def _span_count_nb(Q, X, norms, tol):
        n, k = X.shape
        r = Q.shape[1]
        coef = np.empty(r)
        count = 0
        for i in range(n):
            for j in range(r):
                s = 0.0
                for a in range(k):
                    s += X[i, a] * Q[a, j]
                coef[j] = s
            ss = 0.0
            for a in range(k):
                v = X[i, a]
                for j in range(r):
                    v -= Q[a, j] * coef[j]
                ss += v * v
            if np.sqrt(ss) <= tol * norms[i]:
                count += 1
        return count


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_BACKENDS = {
    "numpy": {
        "quad_forms": _quad_forms_np,
        "weighted_scatter": _weighted_scatter_np,
        "tyler_scatter": _tyler_scatter_np,
        "span_count": _span_count_np,
    },
}
if HAVE_NUMBA:
    _BACKENDS["numba"] = {
        "quad_forms": _quad_forms_nb,
        "weighted_scatter": _weighted_scatter_nb,
        "tyler_scatter": _tyler_scatter_nb,
        "span_count": _span_count_nb,
    }

_active = {}


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels for subsequent calls."""
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available_backends()}")
    _active.clear()
    _active.update(_BACKENDS[name])
    _active["name"] = name


def get_backend():
    return _active["name"]


def _default_backend():
    requested = os.environ.get("REGTYLER_BACKEND", "").strip().lower()
    if requested:
        return requested
    return "numba" if HAVE_NUMBA else "numpy"


set_backend(_default_backend())


def quad_forms(X, L):
    """Return ``x_i^T (L L^T)^{-1} x_i`` for every row of ``X``.

    ``L`` is the lower Cholesky factor; no inverse is formed.
    """
    return _active["quad_forms"](np.ascontiguousarray(X, dtype=float),
                                 np.ascontiguousarray(L, dtype=float))


def weighted_scatter(X, w):
    """Return ``sum_i w_i x_i x_i^T`` (exactly symmetric)."""
    return _active["weighted_scatter"](np.ascontiguousarray(X, dtype=float),
                                       np.ascontiguousarray(w, dtype=float))


def tyler_scatter(X, L, floor=QUAD_FLOOR):
    """Fused ``sum_i x_i x_i^T / q_i`` with ``q_i`` from the factor ``L``.

    Returns ``(scatter, q, n_clamped)``; ``q`` is already clamped at ``floor``.
    """
    S, q, clamped = _active["tyler_scatter"](np.ascontiguousarray(X, dtype=float),
                                            np.ascontiguousarray(L, dtype=float),
                                            float(floor))
    return S, q, int(clamped)


def span_count(Q, X, norms, tol):
    """Count rows of ``X`` within ``tol * norms[i]`` of ``span(Q)``.

    ``Q`` must have orthonormal columns.
    """
    return int(_active["span_count"](np.ascontiguousarray(Q, dtype=float),
                                     np.ascontiguousarray(X, dtype=float),
                                     np.ascontiguousarray(norms, dtype=float),
                                     float(tol)))
