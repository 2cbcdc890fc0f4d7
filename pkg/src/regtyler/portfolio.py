"""Minimum-variance portfolio backtest on daily log-returns.

Price CSV contract: a header row whose first column is ``date`` (ISO-8601)
followed by one column per asset, strictly increasing dates and no blanks.
Return rows whose entries are all below ``1e-6`` in absolute value are dropped.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ._parallel import parallel_map
from .errors import DomainError, OrderingError, PriceParseError, RegTylerError
from .estimators import SolverOptions, Status, sample_covariance, tyler_estimate
from .sampling import EllipticalSpec, ar1_scatter, draw_samples, trial_rng
from .spd import as_scatter
from .tuning import SHRINKAGE_KINDS, RhoGrid, fit_at_rho, validation_select

__all__ = [
    "DISCARD_TOL",
    "BACKTEST_HEADER",
    "ReturnPanel",
    "BacktestConfig",
    "BacktestRow",
    "BacktestResult",
    "load_prices",
    "prices_to_returns",
    "min_variance_weights",
    "rolling_backtest",
    "make_synthetic_prices",
    "write_prices",
    "fixture_path",
    "fixture_manifest",
]

DISCARD_TOL = 1e-6
BACKTEST_HEADER = ("estimator", "n_train", "realized_variance", "rebalances", "skipped")


@dataclass(frozen=True)
class ReturnPanel:
    dates: tuple
    assets: tuple
    returns: np.ndarray
    discarded: int = 0

    def __post_init__(self):
        R = np.array(self.returns, dtype=float).reshape(len(self.dates), len(self.assets))
        if not np.all(np.isfinite(R)):
            raise DomainError("returns contain non-finite values")
        R.setflags(write=False)
        object.__setattr__(self, "returns", R)

    @property
    def length(self):
        return self.returns.shape[0]

    @property
    def dim(self):
        return self.returns.shape[1]


def _parse_date(text, row):
    try:
        if "T" in text or " " in text.strip():
            return _dt.datetime.fromisoformat(text.strip())
        return _dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise PriceParseError(f"row {row}: bad ISO-8601 date {text!r}", row=row, column="date") from exc


def load_prices(source):
    """Read a price CSV (path, text stream) into a :class:`ReturnPanel`."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return load_prices(fh)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise PriceParseError("empty price file", row=1) from None
    header = [h.strip() for h in header]
    if not header or header[0].lower() != "date" or len(header) < 2:
        raise PriceParseError("header must start with 'date' followed by asset columns", row=1)
    assets = tuple(header[1:])
    dates, prices = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            col = header[len(rec)] if len(rec) < len(header) else None
            raise PriceParseError(f"row {lineno}: expected {len(header)} fields, got {len(rec)}",
                                  row=lineno, column=col)
        dates.append(_parse_date(rec[0], lineno))
        row = []
        for name, cell in zip(assets, rec[1:]):
            if not cell.strip():
                raise PriceParseError(f"row {lineno}: missing value for {name}", row=lineno, column=name)
            try:
                v = float(cell)
            except ValueError:
                raise PriceParseError(f"row {lineno}: non-numeric price {cell!r} for {name}",
                                      row=lineno, column=name) from None
            if not (v > 0 and math.isfinite(v)):
                raise PriceParseError(f"row {lineno}: price for {name} must be positive, got {v}",
                                      row=lineno, column=name)
            row.append(v)
        prices.append(row)
    for i in range(1, len(dates)):
        if not dates[i] > dates[i - 1]:
            raise OrderingError(f"dates not strictly increasing at row {i + 2}: {dates[i - 1]} then {dates[i]}")
    if len(prices) < 2:
        raise PriceParseError("need at least two price rows")
    return prices_to_returns(dates, assets, np.array(prices))


def prices_to_returns(dates, assets, prices):
    P = np.asarray(prices, dtype=float)
    R = np.diff(np.log(P), axis=0)
    keep = np.max(np.abs(R), axis=1) >= DISCARD_TOL
    kept_dates = tuple(d for d, k in zip(dates[1:], keep) if k)
    return ReturnPanel(kept_dates, tuple(assets), R[keep], int(np.count_nonzero(~keep)))


def min_variance_weights(sigma):
    """``Sigma^{-1} 1 / (1^T Sigma^{-1} 1)``; invariant to scaling ``sigma``."""
    sigma = as_scatter(sigma)
    sigma.require_pd("sigma")
    u = sigma.solve(np.ones(sigma.dim))
    return u / np.sum(u)


@dataclass(frozen=True)
class BacktestConfig:
    n_train: int
    n_val: int = 10
    n_test: int = 10
    estimators: tuple = ("sample_cov", "tyler", "wiesel", "kl")
    grid: RhoGrid = field(default_factory=RhoGrid)
    target: object = None
    options: SolverOptions = field(default_factory=lambda: SolverOptions(tol=1e-8))

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1 or self.n_test < 1:
            raise DomainError("n_train, n_val and n_test must be >= 1")
        known = {"sample_cov", "tyler"} | set(SHRINKAGE_KINDS)
        bad = set(self.estimators) - known
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}; expected a subset of {sorted(known)}")
        object.__setattr__(self, "estimators", tuple(self.estimators))


@dataclass(frozen=True)
class BacktestRow:
    estimator: str
    n_train: int
    realized_variance: float
    rebalances: int
    skipped: int


@dataclass
class BacktestResult:
    rows: list
    weights: dict
    realized: dict
    rho_star: dict

    def get(self, estimator):
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BACKTEST_HEADER)
        for r in self.rows:
            w.writerow([r.estimator, r.n_train, repr(r.realized_variance), r.rebalances, r.skipped])
        return buf.getvalue()


def _fit_block(name, R, t, config):
    """Weights chosen at rebalance index ``t`` using rows ``< t`` only."""
    lo = t - config.n_train - config.n_val
    window = R[lo:t]
    if name == "sample_cov":
        return min_variance_weights(sample_covariance(window)), None
    if name == "tyler":
        res = tyler_estimate(window, config.options)
        if res.status is Status.DIVERGED:
            raise DomainError(res.trace.message)
        return min_variance_weights(res.sigma), None
    sel = validation_select(R, range(lo, t - config.n_val), range(t - config.n_val, t), config.grid,
                            name, config.target, config.options)
    res = fit_at_rho(name, window, sel.rho_star, config.target, config.options)
    if res.status is Status.DIVERGED:
        raise DomainError(res.trace.message)
    return min_variance_weights(res.sigma), sel.rho_star


def rebalance_points(length, config):
    start = config.n_train + config.n_val
    return list(range(start, length - config.n_test + 1, config.n_test))


def _try_fit(name, R, t, config):
    try:
        return _fit_block(name, R, t, config)
    except RegTylerError as exc:
        return exc


def rolling_backtest(panel, config, workers=1):
    """Walk forward in blocks of ``n_test`` days and report realized variance.

    Fits only see rows before their rebalance date, so blocks are independent
    and may run on ``workers`` processes. If a fit fails the previous weights are
    held (equal weights before the first success) and the block counts as
    skipped.
    """
    R = panel.returns
    k = panel.dim
    points = rebalance_points(panel.length, config)
    if not points:
        need = config.n_train + config.n_val + config.n_test
        raise DomainError(f"panel has {panel.length} rows; at least {need} are needed for one block")
    equal = np.full(k, 1.0 / k)
    rows, weights, realized, rhos = [], {}, {}, {}
    for name in config.estimators + ("equal_weight",):
        if name == "equal_weight":
            fits = [(equal, None)] * len(points)
        else:
            fits = parallel_map(_try_fit, [(name, R, t, config) for t in points], workers)
        held = equal
        skipped = 0
        hist, series, chosen = [], [], []
        for t, fit in zip(points, fits):
            if isinstance(fit, Exception):
                w = held
                skipped += 1
            else:
                w, rho = fit
                chosen.append(rho)
            held = w
            hist.append((t, w))
            series.append(R[t:t + config.n_test] @ w)
        if skipped == len(points):
            warnings.warn(f"{name}: every block failed to fit; reporting equal-weight returns", RuntimeWarning,
                          stacklevel=2)
        realized[name] = np.concatenate(series)
        weights[name] = hist
        rhos[name] = chosen
        rows.append(BacktestRow(name, config.n_train, float(np.var(realized[name])), len(points), skipped))
    return BacktestResult(rows, weights, realized, rhos)


# ---------------------------------------------------------------------------
# synthetic fixture
# ---------------------------------------------------------------------------

def _business_days(start, count):
    out, d = [], start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d += _dt.timedelta(days=1)
    return out


def make_synthetic_prices(n_assets=45, n_rows=720, seed=20240601, n_flat_days=6, n_quiet_days=4, dof=3.0,
                          beta=0.5, scale=0.01):
    """Heavy-tailed synthetic close prices with planted near-zero return days.

    Returns ``(dates, assets, prices, planted)`` where ``planted`` lists the
    return-row indices that the discard rule must remove: ``n_flat_days`` days
    with unchanged prices and ``n_quiet_days`` with every move below 1e-6.
    """
    rng = trial_rng(seed)
    spec = EllipticalSpec("student_t", ar1_scatter(n_assets, beta).scaled(scale**2), dof)
    R = draw_samples(spec, n_rows - 1, rng).rows.copy()
    R += 2e-4  # small drift
    planted = np.sort(rng.choice(np.arange(5, n_rows - 6), size=n_flat_days + n_quiet_days, replace=False))
    flat, quiet = planted[:n_flat_days], planted[n_flat_days:]
    R[flat] = 0.0
    R[quiet] = rng.uniform(-5e-7, 5e-7, size=(quiet.size, n_assets))
    P = np.empty((n_rows, n_assets))
    P[0] = rng.uniform(20.0, 200.0, size=n_assets)
    for i in range(1, n_rows):
        P[i] = P[i - 1] * np.exp(R[i - 1])
    P = np.round(P, 6)
    # rounding moves the planted rows a little; re-pin flat days exactly
    for i in flat:
        P[i + 1] = P[i]
    dates = _business_days(_dt.date(2016, 1, 4), n_rows)
    assets = tuple(f"A{j:02d}" for j in range(n_assets))
    return dates, assets, P, [int(i) for i in planted]


def write_prices(dates, assets, prices, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("date",) + tuple(assets))
    for d, row in zip(dates, prices):
        w.writerow([d.isoformat()] + [f"{v:.6f}" for v in row])


def fixture_path():
    return Path(str(resources.files("regtyler") / "data" / "synthetic_prices.csv"))


def fixture_manifest():
    with open(Path(str(resources.files("regtyler") / "data" / "synthetic_prices.json"))) as fh:
        return json.load(fh)
