"""Dense symmetric-matrix primitives shared by every estimator."""

from __future__ import annotations

import enum
import threading

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import _kernels
from .errors import DefinitenessError, DomainError

__all__ = [
    "Definiteness",
    "ScatterMatrix",
    "as_scatter",
    "quad_form",
    "trace_normalize",
    "spd_sqrt",
    "geometric_mean",
    "inverse_condition",
    "random_spd",
]

EPS = np.finfo(float).eps


class Definiteness(str, enum.Enum):
    POSITIVE_DEFINITE = "positive-definite"
    POSITIVE_SEMIDEFINITE = "positive-semidefinite"
    INDEFINITE = "indefinite"


def _classify(eigvals, dim):
    lo, hi = eigvals[0], eigvals[-1]
    scale = max(abs(lo), abs(hi))
    if hi > 0 and lo > dim * EPS * hi:
        return Definiteness.POSITIVE_DEFINITE
    if lo >= -dim * EPS * scale:
        return Definiteness.POSITIVE_SEMIDEFINITE
    return Definiteness.INDEFINITE


class ScatterMatrix:
    """Immutable symmetric ``K x K`` matrix with a lazily cached Cholesky factor.

    The input is symmetrized as ``(A + A^T) / 2`` on construction and its
    definiteness is classified from the spectrum: positive-definite when
    ``lambda_min > K * eps * lambda_max``.
    """

    __slots__ = ("_entries", "_eigvals", "definiteness", "_chol", "_lock")

    def __init__(self, entries):
        A = np.array(entries, dtype=float, copy=True)
        if A.ndim == 0:
            A = A.reshape(1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise ValueError(f"scatter matrix must be square and non-empty, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise DomainError("scatter matrix has non-finite entries")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        self._entries = A
        self._eigvals = np.linalg.eigvalsh(A)
        self._eigvals.setflags(write=False)
        self.definiteness = _classify(self._eigvals, A.shape[0])
        self._chol = None
        self._lock = threading.Lock()

    # -- basic views -------------------------------------------------------

    @property
    def entries(self):
        return self._entries

    @property
    def dim(self):
        return self._entries.shape[0]

    @property
    def eigenvalues(self):
        """Ascending eigenvalues computed at construction."""
        return self._eigvals

    @property
    def is_pd(self):
        return self.definiteness is Definiteness.POSITIVE_DEFINITE

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._entries
        return self._entries.astype(dtype)

    def __reduce__(self):
        return (ScatterMatrix, (np.array(self._entries),))

    def __repr__(self):
        return f"ScatterMatrix(dim={self.dim}, {self.definiteness.value})"

    def trace(self):
        return float(np.trace(self._entries))

    def scaled(self, c):
        return ScatterMatrix(c * self._entries)

    # -- factorization-backed operations -----------------------------------

    def require_pd(self, what="matrix"):
        if not self.is_pd:
            raise DefinitenessError(f"{what} must be positive definite, got {self.definiteness.value}")

    @property
    def cholesky(self):
        """Lower Cholesky factor, computed once and shared between readers."""
        if self._chol is None:
            with self._lock:
                if self._chol is None:
                    self.require_pd()
                    L = np.linalg.cholesky(self._entries)
                    L.setflags(write=False)
                    self._chol = L
        return self._chol

    def solve(self, B):
        """Return ``Sigma^{-1} B`` through the cached factor."""
        return cho_solve((self.cholesky, True), B, check_finite=False)

    def inverse(self):
        return ScatterMatrix(self.solve(np.eye(self.dim)))

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))

    def quad_forms(self, X):
        """``x_i^T Sigma^{-1} x_i`` for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _kernels.quad_forms(X, self.cholesky)

    def trace_inv_product(self, T):
        """``Tr(Sigma^{-1} T)``."""
        return float(np.trace(self.solve(np.asarray(T, dtype=float))))


def as_scatter(a):
    return a if isinstance(a, ScatterMatrix) else ScatterMatrix(a)


def quad_form(x, sigma):
    """Return ``x^T Sigma^{-1} x`` using the cached triangular factor of ``sigma``."""
    sigma = as_scatter(sigma)
    sigma.require_pd("sigma")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != sigma.dim:
        raise ValueError(f"vector of length {x.shape[0]} does not match dim {sigma.dim}")
    y = solve_triangular(sigma.cholesky, x, lower=True, check_finite=False)
    return float(y @ y)


def trace_normalize(sigma):
    """Return ``sigma / Tr(sigma)``."""
    sigma = as_scatter(sigma)
    tr = sigma.trace()
    if not tr > 0:
        raise DomainError(f"trace must be positive to normalize, got {tr}")
    return ScatterMatrix(sigma.entries / tr)


def _psd_sqrt_array(A):
    w, V = np.linalg.eigh(A)
    w = np.sqrt(np.clip(w, 0.0, None))
    B = (V * w) @ V.T
    return 0.5 * (B + B.T)


def spd_sqrt(a):
    """Principal square root of a positive-semidefinite matrix."""
    a = as_scatter(a)
    if a.definiteness is Definiteness.INDEFINITE:
        raise DefinitenessError("square root requires a positive-semidefinite matrix")
    return ScatterMatrix(_psd_sqrt_array(a.entries))


def geometric_mean_array(A, M):
    """``A # M`` for PD arrays via the Cholesky factor of ``A``.

    ``A # M = R (R^{-1} M R^{-T})^{1/2} R^T`` for any ``A = R R^T``, which is the
    same matrix as ``A^{1/2}(A^{-1/2} M A^{-1/2})^{1/2} A^{1/2}``.
    """
    R = np.linalg.cholesky(A)
    Z = solve_triangular(R, M, lower=True, check_finite=False)
    Z = solve_triangular(R, Z.T, lower=True, check_finite=False)
    G = R @ _psd_sqrt_array(0.5 * (Z + Z.T)) @ R.T
    return 0.5 * (G + G.T)


def geometric_mean(a, m):
    """Matrix geometric mean ``A # M`` of two positive-definite matrices."""
    a, m = as_scatter(a), as_scatter(m)
    if a.dim != m.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {m.dim}")
    a.require_pd("first argument")
    m.require_pd("second argument")
    return ScatterMatrix(geometric_mean_array(a.entries, m.entries))


def inverse_condition(sigma):
    """``lambda_min / lambda_max`` with eigenvalues clamped at zero."""
    return _inverse_condition_from_eigs(as_scatter(sigma).eigenvalues)


def _inverse_condition_from_eigs(ev):
    hi = max(float(ev[-1]), 0.0)
    if hi == 0.0:
        raise DomainError("inverse condition number undefined for a zero (or negative) matrix")
    return max(float(ev[0]), 0.0) / hi


def random_spd(dim, rng, ridge=0.1):
    """``A A^T + ridge I`` with ``A`` standard normal from ``rng``."""
    A = rng.standard_normal((dim, dim))
    return ScatterMatrix(A @ A.T + ridge * np.eye(dim))
