"""Shrinkage-parameter selection on a grid of ``rho = 1 / (1 + alpha0)``.

A grid point is feasible when ``N > K rho`` (equivalently ``alpha0 > K/N - 1``);
infeasible points are not fitted and, like diverged fits, score ``+inf``.
Fits along the grid run in ascending ``rho`` and each converged fit seeds the
next one, which keeps near-boundary fits cheap without changing the limit
(the penalized solutions are unique).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NoFeasiblePointError
from .estimators import Penalty, ShrinkageConfig, SolverOptions, Status, estimate
from .sampling import as_samples
from .spd import as_scatter

__all__ = [
    "RhoGrid",
    "SHRINKAGE_KINDS",
    "shrinkage_config",
    "fit_at_rho",
    "is_feasible",
    "GridSearchResult",
    "oracle_grid_search",
    "validation_select",
    "nmse",
]

SHRINKAGE_KINDS = ("wiesel", "kl", "chen")
FEASIBILITY_RTOL = 1e-12


@dataclass(frozen=True)
class RhoGrid:
    values: tuple = tuple(np.round(np.arange(1, 101) / 100.0, 2))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise ValueError("grid must not be empty")
        if np.any(v <= 0.0) or np.any(v > 1.0):
            raise DomainError("grid values must lie in (0, 1]")
        if np.any(np.diff(v) <= 0.0):
            raise ValueError("grid values must be strictly increasing")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def uniform(cls, step=0.01):
        m = int(round(1.0 / step))
        return cls(tuple(np.round(np.arange(1, m + 1) * step, 10)))

    @staticmethod
    def to_alpha(rho):
        return (1.0 - rho) / rho

    @staticmethod
    def to_rho(alpha0):
        return 1.0 / (1.0 + alpha0)

    @property
    def alphas(self):
        return tuple(self.to_alpha(r) for r in self.values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def nmse(estimate, truth):
    """``||est/Tr(est) - truth/Tr(truth)||_F^2 / ||truth/Tr(truth)||_F^2``."""
    E = np.asarray(as_scatter(estimate).entries)
    S = np.asarray(as_scatter(truth).entries)
    if E.shape != S.shape:
        raise ValueError(f"shape mismatch {E.shape} vs {S.shape}")
    te, ts = np.trace(E), np.trace(S)
    if te == 0.0 or ts == 0.0:
        raise DomainError("nmse needs nonzero traces")
    E, S = E / te, S / ts
    return float(np.sum((E - S) ** 2) / np.sum(S**2))


def is_feasible(n, k, rho):
    """Simplified existence test ``N > K rho`` with a relative guard for rounding."""
    return n - k * rho > FEASIBILITY_RTOL * n


def shrinkage_config(kind, rho, target=None):
    """Config for ``kind`` in {wiesel, kl, chen} at shrinkage level ``rho``."""
    alpha0 = RhoGrid.to_alpha(rho)
    if kind == "wiesel":
        return ShrinkageConfig(Penalty.WIESEL, alpha0, target)
    if kind == "kl":
        return ShrinkageConfig(Penalty.KL, alpha0, target, normalize_trace=False)
    if kind == "chen":
        return ShrinkageConfig(Penalty.KL, alpha0, target, normalize_trace=True)
    raise ValueError(f"unknown shrinkage estimator {kind!r}; expected one of {SHRINKAGE_KINDS}")


def fit_at_rho(kind, samples, rho, target=None, options=None, init=None):
    options = options or SolverOptions()
    if init is not None:
        options = SolverOptions(**{**options.__dict__, "init": init})
    return estimate(samples, shrinkage_config(kind, rho, target), options)


@dataclass
class GridSearchResult:
    rho_star: float
    alpha0_star: float
    score_star: float
    grid: RhoGrid
    curve: np.ndarray
    statuses: list = field(default_factory=list)
    estimate: object = None

    @property
    def nmse_star(self):
        return self.score_star


def _sweep(kind, samples, grid, target, options, score):
    """Fit every grid point in ascending rho; ``score(result) -> float``."""
    samples = as_samples(samples)
    n, k = samples.n, samples.dim
    curve = np.full(len(grid), np.inf)
    statuses, estimates = [], []
    warm = None
    for i, rho in enumerate(grid.values):
        if not is_feasible(n, k, rho):
            statuses.append("infeasible")
            estimates.append(None)
            continue
        res = fit_at_rho(kind, samples, rho, target, options, init=warm)
        statuses.append(res.status.value)
        if res.status is Status.DIVERGED:
            estimates.append(None)
            warm = None
            continue
        curve[i] = score(res.sigma)
        estimates.append(res.sigma)
        warm = res.sigma if res.status is Status.CONVERGED else None
    return curve, statuses, estimates


def _argmin_result(grid, curve, statuses, estimates):
    if not np.any(np.isfinite(curve)):
        raise NoFeasiblePointError("every grid point was infeasible or diverged")
    i = int(np.argmin(curve))  # first minimizer, i.e. the smallest rho
    rho = grid.values[i]
    return GridSearchResult(rho, RhoGrid.to_alpha(rho), float(curve[i]), grid, curve, statuses, estimates[i])


def oracle_grid_search(kind, samples, target, truth, grid=None, options=None):
    """Pick the grid point whose fit is closest (in NMSE) to the known ``truth``."""
    grid = grid or RhoGrid()
    truth = as_scatter(truth)
    truth.require_pd("truth")
    curve, statuses, estimates = _sweep(kind, samples, grid, target, options, lambda s: nmse(s, truth))
    return _argmin_result(grid, curve, statuses, estimates)


def _portfolio_variance(weights, returns):
    return float(np.var(returns @ weights))


def validation_select(returns, train, validation, grid=None, kind="wiesel", target=None, options=None,
                      objective=None):
    """Choose rho by out-of-sample portfolio variance on a validation window.

    ``train`` and ``validation`` are row index ranges (``range``/``slice``/arrays)
    into ``returns``. Each feasible rho is fitted on the train rows; its
    min-variance weights are scored by ``objective(weights, validation_rows)``
    (population variance of the portfolio return by default).
    """
    from .portfolio import min_variance_weights

    R = np.asarray(returns, dtype=float)
    tr_idx = np.arange(R.shape[0])[train] if isinstance(train, slice) else np.asarray(train)
    va_idx = np.arange(R.shape[0])[validation] if isinstance(validation, slice) else np.asarray(validation)
    if va_idx.size == 0:
        raise DomainError("validation window is empty")
    if np.intersect1d(tr_idx, va_idx).size and not np.array_equal(tr_idx, va_idx):
        raise DomainError("train and validation windows overlap")
    V = R[va_idx]
    if np.all(np.ptp(V, axis=0) == 0.0):
        raise DomainError("validation window has constant returns")
    grid = grid or RhoGrid()
    objective = objective or _portfolio_variance
    curve, statuses, estimates = _sweep(
        kind, R[tr_idx], grid, target, options, lambda s: objective(min_variance_weights(s), V)
    )
    return _argmin_result(grid, curve, statuses, estimates)
