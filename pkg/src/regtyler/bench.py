"""Monte-Carlo NMSE sweeps and convergence diagnostics.

Every trial draws its samples from ``trial_rng(seed, N, trial)``, so a table is
a pure function of the scenario: worker count and completion order only affect
wall time. Reductions run in trial-index order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .errors import NoFeasiblePointError
from .estimators import (
    Penalty,
    ShrinkageConfig,
    SolverOptions,
    Status,
    estimate,
    sample_covariance,
    tyler_estimate,
)
from .sampling import EllipticalSpec, draw_samples, random_target, trial_rng
from .spd import as_scatter
from .structured import StructureSpec, constrained_estimate
from .tuning import SHRINKAGE_KINDS, RhoGrid, nmse, oracle_grid_search

__all__ = [
    "ESTIMATORS",
    "NMSE_HEADER",
    "PLOT_HEADER",
    "nmse",
    "Scenario",
    "NmseRow",
    "NmseTable",
    "run_nmse_sweep",
    "DiagnosticSeries",
    "run_convergence_diagnostic",
    "write_plot_data",
]

ESTIMATORS = ("sample_cov", "tyler", "tyler_toeplitz") + SHRINKAGE_KINDS
NMSE_HEADER = ("estimator", "K", "N", "rho", "alpha0", "trials", "diverged", "mean_nmse", "stderr")
PLOT_HEADER = ("series", "iteration", "step_frobenius", "inv_condition")


@dataclass(frozen=True)
class Scenario:
    """One NMSE experiment. ``target=None`` means the identity."""

    distribution: EllipticalSpec
    n_values: tuple
    estimators: tuple = ("sample_cov", "tyler", "wiesel", "kl")
    target: object = None
    trials: int = 100
    seed: int = 0
    grid: RhoGrid = field(default_factory=RhoGrid)
    options: SolverOptions = field(default_factory=lambda: SolverOptions(tol=1e-8))

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; expected a subset of {ESTIMATORS}")
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    @property
    def dim(self):
        return self.distribution.scatter.dim


@dataclass(frozen=True)
class NmseRow:
    estimator: str
    K: int
    N: int
    rho: float
    alpha0: float
    trials: int
    diverged: int
    mean_nmse: float
    stderr: float

    @property
    def all_diverged(self):
        return self.diverged == self.trials


@dataclass
class NmseTable:
    rows: list = field(default_factory=list)

    def get(self, estimator, n):
        for r in self.rows:
            if r.estimator == estimator and r.N == n:
                return r
        raise KeyError((estimator, n))

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(NMSE_HEADER)
        for r in self.rows:
            w.writerow([r.estimator, r.K, r.N, repr(r.rho), repr(r.alpha0), r.trials, r.diverged,
                        repr(r.mean_nmse), repr(r.stderr)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        reader = csv.DictReader(lines)
        if tuple(reader.fieldnames or ()) != NMSE_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = [
            NmseRow(d["estimator"], int(d["K"]), int(d["N"]), float(d["rho"]), float(d["alpha0"]),
                    int(d["trials"]), int(d["diverged"]), float(d["mean_nmse"]), float(d["stderr"]))
            for d in reader
        ]
        return cls(rows)


def _fit_one(name, X, scenario, truth):
    """Return ``(nmse, rho)`` or ``None`` when the fit diverged."""
    opts = scenario.options
    if name == "sample_cov":
        return nmse(sample_covariance(X), truth), 1.0
    if name == "tyler":
        res = tyler_estimate(X, opts)
        return (None if res.status is Status.DIVERGED else (nmse(res.sigma, truth), 1.0))
    if name == "tyler_toeplitz":
        res = constrained_estimate(X, ShrinkageConfig.tyler(), StructureSpec.toeplitz(), opts)
        ok = res.status in (Status.CONVERGED, Status.MAX_ITERATIONS)
        return (nmse(res.sigma, truth), 1.0) if ok else None
    try:
        g = oracle_grid_search(name, X, scenario.target, truth, scenario.grid, opts)
    except NoFeasiblePointError:
        return None
    return g.nmse_star, g.rho_star


def _trial(scenario, n, t, truth):
    X = draw_samples(scenario.distribution, n, trial_rng(scenario.seed, n, t))
    return [_fit_one(name, X, scenario, truth) for name in scenario.estimators]


def _summarize(name, k, n, results, trials):
    ok = [r for r in results if r is not None]
    diverged = trials - len(ok)
    if name in SHRINKAGE_KINDS:
        rho = float(np.mean([r[1] for r in ok])) if ok else math.nan
        alpha0 = RhoGrid.to_alpha(rho) if ok else math.nan
    else:
        rho, alpha0 = 1.0, 0.0
    vals = np.array([r[0] for r in ok], dtype=float)
    mean = float(np.mean(vals)) if vals.size else math.nan
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else (0.0 if vals.size else math.nan)
    return NmseRow(name, k, n, rho, alpha0, trials, diverged, mean, se)


def run_nmse_sweep(scenario, workers=1):
    """Mean NMSE (over non-diverged trials) per (estimator, N)."""
    truth = scenario.distribution.scatter
    k = scenario.dim
    table = NmseTable()
    for n in scenario.n_values:
        per_trial = parallel_map(_trial, [(scenario, n, t, truth) for t in range(scenario.trials)], workers)
        for j, name in enumerate(scenario.estimators):
            table.rows.append(_summarize(name, k, n, [r[j] for r in per_trial], scenario.trials))
    return table


@dataclass
class DiagnosticSeries:
    label: str
    alpha0: float
    trace: object

    @property
    def status(self):
        return self.trace.status

    def iterations_to(self, tol):
        """First iteration whose relative step is ``<= tol`` (None if never)."""
        r = np.asarray(self.trace.residual)
        hit = np.nonzero(r <= tol)[0]
        return int(hit[0]) if hit.size else None

    def rows(self):
        steps = self.trace.residual
        ics = self.trace.inv_condition
        for t in range(1, len(steps)):
            yield self.label, t, steps[t], ics[t]


def run_convergence_diagnostic(k, n, alphas, penalty="wiesel", seed=0, max_iter=5000, target=None):
    """Solver traces for each ``alpha0`` with early stopping switched off.

    Samples are standard Gaussian from ``trial_rng(seed, 0)``; the target is a
    seeded random PD matrix from ``trial_rng(seed, 1)`` unless given.
    """
    penalty = Penalty(penalty)
    X = draw_samples(
        EllipticalSpec("gaussian", np.eye(k)), n, trial_rng(seed, 0)
    )
    T = random_target(k, trial_rng(seed, 1)) if target is None else as_scatter(target)
    opts = SolverOptions(tol=0.0, max_iter=max_iter, stop_on_divergence=False)
    out = []
    for a in alphas:
        res = estimate(X, ShrinkageConfig(penalty, float(a), T), opts)
        out.append(DiagnosticSeries(f"{penalty.value}_alpha0={a:g}", float(a), res.trace))
    return out


def write_plot_data(series, header_lines=()):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_HEADER)
    for s in series:
        for label, t, step, ic in s.rows():
            w.writerow([label, t, repr(step), repr(ic)])
    return buf.getvalue()
