"""Exact existence checks for the penalized Tyler estimators.

Both penalties (with a PD target) share one condition: every proper subspace
``S`` must satisfy ``P_N(S) < (1 + alpha0) dim(S) / K``, where ``P_N(S)`` is the
fraction of samples inside ``S``. For ``alpha0 > 0`` the same strict inequality
is also necessary; for ``alpha0 = 0`` it is Tyler's sufficient condition.

The worst subspace of each dimension can be taken to be spanned by samples:
the samples inside any ``S`` span some ``S' <= S`` with the same count and no
larger dimension. So the worst case for dimension ``d`` is found by trying
every subset of ``min(d, N)`` samples, which is exact and feasible at desk
scale.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from . import _kernels
from .errors import CapacityError
from .sampling import as_samples

__all__ = [
    "RANK_TOL",
    "MEMBERSHIP_TOL",
    "SUBSET_CAP",
    "BOUNDARY_TOL",
    "SubspaceWorst",
    "ExistenceReport",
    "subset_budget",
    "subspace_proportions",
    "existence_verdict",
]

RANK_TOL = 1e-10        # relative to the largest pivot of the unit-normalized subset
MEMBERSHIP_TOL = 1e-8   # distance to the span, relative to ||x||
SUBSET_CAP = 10**6
BOUNDARY_TOL = 1e-12    # |P_N(S) - threshold| below this is reported as indeterminate


@dataclass(frozen=True)
class SubspaceWorst:
    """Largest sample fraction found in a ``dim``-dimensional subspace."""

    dim: int
    proportion: float
    count: int
    witness: tuple


@dataclass
class ExistenceReport:
    dim: int
    n: int
    alpha0: float
    per_dim_worst: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    sufficient_ok: bool | None = None
    simplified_ok: bool = False
    alpha_floor: float = 0.0
    boundary_dims: tuple = ()
    dropped_zero_rows: int = 0
    notes: tuple = ()

    @property
    def indeterminate(self):
        """True when the only failures (if any) sit exactly on the boundary."""
        return bool(self.boundary_dims) and not self._strict_failures()

    @property
    def necessary_ok(self):
        """For ``alpha0 > 0`` the strict inequality is also necessary."""
        if self.alpha0 <= 0.0 or self.sufficient_ok is None:
            return None
        return self.sufficient_ok

    def _strict_failures(self):
        return [d for d, w in self.per_dim_worst.items()
                if d not in self.boundary_dims and w.proportion >= self.thresholds[d]]

    def margins(self):
        return {d: self.thresholds[d] - w.proportion for d, w in self.per_dim_worst.items()}

    def summary_lines(self):
        def fmt(v):
            return "unknown" if v is None else str(v).lower()

        lines = [
            f"K={self.dim}",
            f"N={self.n}",
            f"alpha0={self.alpha0:g}",
            f"sufficient_ok={fmt(self.sufficient_ok)}",
            f"simplified_ok={fmt(self.simplified_ok)}",
            f"alpha_floor={self.alpha_floor:g}",
            f"indeterminate={fmt(self.indeterminate)}",
        ]
        for d in sorted(self.per_dim_worst):
            w = self.per_dim_worst[d]
            lines.append(f"d={d} worst={w.count}/{self.n} threshold={self.thresholds[d]:.6g} witness={list(w.witness)}")
        lines.extend(f"note: {n}" for n in self.notes)
        return lines


def subset_budget(n, k):
    """Number of sample subsets the exact check enumerates."""
    return sum(math.comb(n, min(d, n)) for d in range(1, k))


def _orthonormal_span(A):
    """Orthonormal basis of ``span(A)`` columns via pivoted QR on unit columns."""
    A = A / np.linalg.norm(A, axis=0)
    Q, R, _ = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.count_nonzero(diag > RANK_TOL * diag[0])) if diag.size else 0
    return Q[:, :rank]


def subspace_proportions(samples, cap=SUBSET_CAP):
    """Worst-case ``P_N(S)`` for each proper dimension ``d = 1..K-1``.

    Returns a dict ``d -> SubspaceWorst``. Ties keep the lexicographically
    first witness subset. Raises :class:`CapacityError` when the enumeration
    would exceed ``cap`` subsets.
    """
    samples = as_samples(samples)
    X = samples.rows
    n, k = X.shape
    budget = subset_budget(n, k)
    if budget > cap:
        raise CapacityError(
            f"exact check needs {budget} subsets (cap {cap}); use the simplified N > K/(1+alpha0) test instead"
        )
    norms = np.linalg.norm(X, axis=1)
    out = {}
    cache = {}
    for d in range(1, k):
        m = min(d, n)
        if m not in cache:
            best_count, best_subset = -1, ()
            for subset in itertools.combinations(range(n), m):
                Q = _orthonormal_span(X[list(subset)].T)
                c = _kernels.span_count(Q, X, norms, MEMBERSHIP_TOL)
                if c > best_count:
                    best_count, best_subset = c, subset
                    if c == n:
                        break
            cache[m] = (best_count, best_subset)
        count, witness = cache[m]
        out[d] = SubspaceWorst(d, count / n, count, witness)
    return out


def existence_verdict(samples, config, cap=SUBSET_CAP, on_capacity="raise"):
    """Check the existence condition for ``config.alpha0`` on ``samples``.

    ``on_capacity="report"`` returns a report with ``sufficient_ok=None`` instead
    of raising when the subset budget is exceeded.
    """
    samples = as_samples(samples)
    n, k = samples.n, samples.dim
    alpha0 = float(config.alpha0)
    if config.target is not None:
        config.target.require_pd("target")
    report = ExistenceReport(
        dim=k,
        n=n,
        alpha0=alpha0,
        simplified_ok=bool(n * (1.0 + alpha0) > k),
        alpha_floor=max(k / n - 1.0, 0.0),
        dropped_zero_rows=samples.dropped_zero_rows,
    )
    report.thresholds = {d: (1.0 + alpha0) * d / k for d in range(1, k)}
    notes = []
    try:
        report.per_dim_worst = subspace_proportions(samples, cap)
    except CapacityError as exc:
        if on_capacity != "report":
            raise
        report.notes = (str(exc),)
        return report

    boundary, failed = [], []
    for d, w in report.per_dim_worst.items():
        thr = report.thresholds[d]
        if abs(w.proportion - thr) <= BOUNDARY_TOL:
            boundary.append(d)
        elif w.proportion > thr:
            failed.append(d)
    report.boundary_dims = tuple(boundary)
    if failed:
        report.sufficient_ok = False
    elif boundary:
        report.sufficient_ok = False
        notes.append(f"P_N(S) equals the threshold at d={boundary}; existence is indeterminate there")
    else:
        report.sufficient_ok = True
    if alpha0 > 0.0:
        notes.append("alpha0 > 0: the strict inequality is necessary as well as sufficient")
    else:
        notes.append("alpha0 = 0: Tyler's condition, sufficient only")
    report.notes = tuple(notes)
    return report
