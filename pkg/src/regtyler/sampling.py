"""Elliptical sample generation and ground-truth scatter matrices."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, DomainError
from .spd import ScatterMatrix, as_scatter

__all__ = [
    "Distribution",
    "EllipticalSpec",
    "SampleSet",
    "ar1_scatter",
    "draw_samples",
    "normalize_angular",
    "trial_rng",
    "random_target",
]


class Distribution(str, enum.Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class SampleSet:
    """Cleaned ``N x K`` sample matrix (rows are samples).

    Use :meth:`from_array` to build one from raw data; it drops rows whose
    largest absolute entry is ``<= zero_tol`` and records how many it dropped.
    """

    rows: np.ndarray
    dropped_zero_rows: int = 0

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError(f"samples must be a 2-D array, got ndim={rows.ndim}")
        if rows.shape[0] < 1:
            raise DegenerateSampleError("sample set is empty after cleaning")
        if not np.all(np.isfinite(rows)):
            raise DomainError("samples contain non-finite values")
        if np.any(np.max(np.abs(rows), axis=1) == 0.0):
            raise DegenerateSampleError("sample set contains a zero row; use SampleSet.from_array")
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_array(cls, X, zero_tol=0.0):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        keep = np.max(np.abs(X), axis=1) > zero_tol
        dropped = int(X.shape[0] - np.count_nonzero(keep))
        if not np.any(keep):
            raise DegenerateSampleError(f"all {X.shape[0]} samples are zero rows")
        return cls(X[keep], dropped)

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]


def as_samples(samples):
    return samples if isinstance(samples, SampleSet) else SampleSet.from_array(samples)


@dataclass(frozen=True)
class EllipticalSpec:
    kind: Distribution
    scatter: ScatterMatrix
    dof: float | None = None
    location: np.ndarray | None = field(default=None)

    def __post_init__(self):
        kind = Distribution(self.kind)
        object.__setattr__(self, "kind", kind)
        scatter = as_scatter(self.scatter)
        scatter.require_pd("scatter")
        object.__setattr__(self, "scatter", scatter)
        if kind is Distribution.STUDENT_T and not (self.dof is not None and self.dof > 0):
            raise DomainError("student_t requires dof > 0")
        loc = np.zeros(scatter.dim) if self.location is None else np.asarray(self.location, float)
        if loc.shape != (scatter.dim,):
            raise ValueError("location must be a K-vector")
        object.__setattr__(self, "location", loc)


def ar1_scatter(dim, beta):
    """AR(1) correlation matrix with entries ``beta ** |i - j|``."""
    if not 0.0 <= beta < 1.0:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    idx = np.arange(dim)
    lag = np.abs(idx[:, None] - idx[None, :])
    return ScatterMatrix(np.power(float(beta), lag))


def trial_rng(seed, *keys):
    """Generator for ``(seed, *keys)``, e.g. ``trial_rng(seed, trial)``.

    Streams depend only on the keys, never on scheduling order.
    """
    keys = tuple(int(k) for k in keys if k is not None)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=keys))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return trial_rng(seed)


def draw_samples(spec, n, seed):
    """Draw ``n`` samples from ``spec``.

    Gaussian rows are ``mu + L z``; Student-t rows are ``mu + L z sqrt(nu / s)``
    with ``s ~ chi2(nu)`` drawn per row. ``seed`` may be an int or a Generator.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = _as_rng(seed)
    L = spec.scatter.cholesky
    Z = rng.standard_normal((n, spec.scatter.dim))
    X = Z @ L.T
    if spec.kind is Distribution.STUDENT_T:
        s = rng.chisquare(spec.dof, size=n)
        X *= np.sqrt(spec.dof / s)[:, None]
    return SampleSet.from_array(X + spec.location)


def normalize_angular(samples):
    """Project every sample onto the unit sphere."""
    samples = as_samples(samples)
    norms = np.linalg.norm(samples.rows, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateSampleError("cannot normalize a zero-norm sample")
    return SampleSet(samples.rows / norms[:, None], samples.dropped_zero_rows)


def random_target(dim, seed, ridge=0.1):
    """Seeded "arbitrary" PD target ``A A^T + ridge I``, ``A`` standard normal."""
    rng = _as_rng(seed)
    A = rng.standard_normal((dim, dim))
    return ScatterMatrix(A @ A.T + ridge * np.eye(dim))
