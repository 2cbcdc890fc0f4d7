"""Tyler's estimator and its Wiesel / KL shrinkage variants.

All three solvers share one fixed-point loop. With ``q_i = x_i^T S_t^{-1} x_i``
and ``W_t = (K/N) sum_i x_i x_i^T / q_i`` the updates are

* tyler:  ``S~ = W_t``, then ``S = S~ / Tr(S~)``
* wiesel: ``S~ = W_t / (1+a) + a/(1+a) * K T / Tr(S_t^{-1} T)``, then trace-normalized
* kl:     ``S = W_t / (1+a) + a/(1+a) * T`` (no normalization unless asked for,
  in which case it is the diagonal-loading heuristic when ``T = I``)

Every Wiesel and KL step minimizes a majorizer of the matching loss, so the
recorded loss sequence is non-increasing.

Divergence (the iterates heading for the boundary of the PD cone) is flagged
by any of:

* inverse condition number below ``divergence_floor`` or trace above
  ``trace_ceiling``;
* the relative step has stalled below ``tol`` while ``log(lambda_min/lambda_max)``
  keeps moving by more than ``collapse_tol`` per iteration (trace-normalized
  iterates sliding into a singular limit);
* a sustained geometric escape: over three consecutive windows of
  ``escape_window`` iterations the log inverse condition number drops by at
  least ``escape_min`` per window without slowing down.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve

from . import _kernels
from .errors import DefinitenessError, DomainError
from .sampling import SampleSet, as_samples
from .spd import EPS, ScatterMatrix, as_scatter

__all__ = [
    "Penalty",
    "Status",
    "ShrinkageConfig",
    "SolverOptions",
    "IterationTrace",
    "EstimatorResult",
    "SampleSet",
    "sample_covariance",
    "evaluate_loss",
    "fixed_point_map",
    "fixed_point_residual",
    "tyler_estimate",
    "wiesel_estimate",
    "kl_estimate",
    "estimate",
    "wiesel_to_kl_rescale",
]


class Penalty(str, enum.Enum):
    NONE = "none"
    WIESEL = "wiesel"
    KL = "kl"


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    DIVERGED = "diverged"
    INNER_SOLVE_FAILED = "inner_solve_failed"


@dataclass(frozen=True)
class ShrinkageConfig:
    """Penalty choice, weight ``alpha0`` and target ``T``.

    ``target=None`` means the identity of the sample dimension.
    ``normalize_trace=None`` resolves to True for none/wiesel and False for kl;
    setting it True for kl gives the trace-normalized (diagonal-loading) variant.
    """

    penalty: Penalty = Penalty.NONE
    alpha0: float = 0.0
    target: ScatterMatrix | None = None
    normalize_trace: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "penalty", Penalty(self.penalty))
        if not (self.alpha0 >= 0.0 and math.isfinite(self.alpha0)):
            raise DomainError(f"alpha0 must be a finite value >= 0, got {self.alpha0}")
        if self.target is not None:
            target = as_scatter(self.target)
            target.require_pd("target")
            object.__setattr__(self, "target", target)
        if self.normalize_trace is None:
            object.__setattr__(self, "normalize_trace", self.penalty is not Penalty.KL)

    @classmethod
    def tyler(cls):
        return cls(Penalty.NONE, 0.0)

    @classmethod
    def wiesel(cls, alpha0, target=None):
        return cls(Penalty.WIESEL, alpha0, target)

    @classmethod
    def kl(cls, alpha0, target=None, normalize_trace=False):
        return cls(Penalty.KL, alpha0, target, normalize_trace)

    @property
    def rho(self):
        return 1.0 / (1.0 + self.alpha0)

    def target_array(self, dim):
        if self.target is None:
            return np.eye(dim)
        if self.target.dim != dim:
            raise ValueError(f"target has dim {self.target.dim}, samples have dim {dim}")
        return self.target.entries


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 2000
    init: object = None
    divergence_floor: float = 1e-12
    trace_ceiling: float = 1e12
    collapse_tol: float | None = None  # defaults to sqrt(tol)
    escape_window: int = 100
    escape_min: float = 0.1
    escape_ratio: float = 0.95
    stop_on_divergence: bool = True

    def collapse_threshold(self):
        if self.collapse_tol is not None:
            return self.collapse_tol
        return math.sqrt(self.tol) if self.tol > 0 else 0.0


@dataclass
class IterationTrace:
    """Per-iterate diagnostics; entry 0 describes the initial matrix.

    ``step[t]`` is ``||S_t - S_{t-1}||_F`` and ``residual[t]`` the relative step
    ``||S_t - S_{t-1}||_F / ||S_{t-1}||_F``, which equals the fixed-point
    residual of ``S_{t-1}`` once iterates are on the normalization manifold.
    """

    loss: list = field(default_factory=list)
    step: list = field(default_factory=list)
    inv_condition: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    status: Status = Status.MAX_ITERATIONS
    clamped: int = 0
    message: str = ""
    diverged_at: int | None = None

    @property
    def iterations(self):
        return max(len(self.loss) - 1, 0)

    def append(self, loss, step, inv_condition, residual):
        self.loss.append(float(loss))
        self.step.append(float(step))
        self.inv_condition.append(float(inv_condition))
        self.residual.append(float(residual))

    def max_loss_increase(self):
        """Largest ``(L_{t+1} - L_t) / (1 + |L_t|)`` over the run (``-inf`` if none)."""
        L = np.asarray(self.loss)
        L = L[np.isfinite(L)]
        if L.size < 2:
            return -np.inf
        return float(np.max((L[1:] - L[:-1]) / (1.0 + np.abs(L[:-1]))))

    def is_monotone(self, slack=1e-12):
        return self.max_loss_increase() <= slack

    def as_arrays(self):
        return {name: np.asarray(getattr(self, name)) for name in ("loss", "step", "inv_condition", "residual")}


@dataclass
class EstimatorResult:
    sigma: ScatterMatrix
    trace: IterationTrace
    config: ShrinkageConfig
    extras: dict = field(default_factory=dict)

    @property
    def status(self):
        return self.trace.status

    @property
    def converged(self):
        return self.trace.status is Status.CONVERGED


# ---------------------------------------------------------------------------
# losses, maps and residuals
# ---------------------------------------------------------------------------

def sample_covariance(samples):
    """Zero-mean sample covariance ``(1/N) sum_i x_i x_i^T``."""
    samples = as_samples(samples)
    X = samples.rows
    return ScatterMatrix(_kernels.weighted_scatter(X, np.full(samples.n, 1.0 / samples.n)))


def _loss_from_parts(kind, logdet, log_q_sum, n, k, alpha0, trace_inv_target):
    if kind == "tyler":
        return 0.5 * k * log_q_sum + 0.5 * n * logdet
    base = logdet + (k / n) * log_q_sum
    if kind == "wiesel":
        return base + alpha0 * (k * math.log(trace_inv_target) + logdet)
    if kind == "kl":
        return base + alpha0 * (trace_inv_target + logdet)
    raise ValueError(f"unknown loss kind {kind!r}")


def _loss_kind(config):
    return {"none": "tyler", "wiesel": "wiesel", "kl": "kl"}[config.penalty.value]


def evaluate_loss(kind, sigma, samples, config=None):
    """Negative log-likelihood of ``sigma`` (plus penalty) for the given kind.

    ``tyler`` uses the ``(K/2) sum log q + (N/2) log det`` weighting; ``wiesel``
    and ``kl`` use ``log det + (K/N) sum log q + alpha0 * penalty``.
    """
    kind = getattr(kind, "value", kind)
    if kind == "none":
        kind = "tyler"
    sigma = as_scatter(sigma)
    sigma.require_pd("sigma")
    samples = as_samples(samples)
    config = config or ShrinkageConfig()
    n, k = samples.n, samples.dim
    q = np.maximum(sigma.quad_forms(samples.rows), _kernels.QUAD_FLOOR)
    tr = 0.0
    if kind in ("wiesel", "kl"):
        tr = sigma.trace_inv_product(config.target_array(k))
    return _loss_from_parts(kind, sigma.logdet(), float(np.sum(np.log(q))), n, k, config.alpha0, tr)


def _map_array(kind, S, L, X, alpha0, T):
    n, k = X.shape
    W, _, _ = _kernels.tyler_scatter(X, L)
    data = (k / n) * W
    if kind == "tyler":
        return data
    shrink = 1.0 / (1.0 + alpha0)
    if kind == "wiesel":
        tr = float(np.trace(cho_solve((L, True), T, check_finite=False)))
        return shrink * data + (1.0 - shrink) * k * T / tr
    return shrink * data + (1.0 - shrink) * T


def fixed_point_map(kind, sigma, samples, config=None):
    """Right-hand side of the fixed-point equation evaluated at ``sigma``."""
    kind = getattr(kind, "value", kind)
    if kind == "none":
        kind = "tyler"
    sigma = as_scatter(sigma)
    sigma.require_pd("sigma")
    samples = as_samples(samples)
    config = config or ShrinkageConfig()
    T = config.target_array(samples.dim)
    return ScatterMatrix(_map_array(kind, sigma.entries, sigma.cholesky, samples.rows, config.alpha0, T))


def fixed_point_residual(kind, sigma, samples, config=None):
    """``||S - RHS(S)||_F / ||S||_F``; tyler and wiesel compare trace-normalized sides."""
    kind = getattr(kind, "value", kind)
    if kind == "none":
        kind = "tyler"
    sigma = as_scatter(sigma)
    rhs = fixed_point_map(kind, sigma, samples, config).entries
    S = sigma.entries
    if kind in ("tyler", "wiesel"):
        S = S / np.trace(S)
        rhs = rhs / np.trace(rhs)
    return float(np.linalg.norm(S - rhs) / np.linalg.norm(S))


def wiesel_to_kl_rescale(sigma, target):
    """Scale ``sigma`` by ``c = Tr(sigma^{-1} T) / K`` so that ``Tr((c sigma)^{-1} T) = K``."""
    sigma, target = as_scatter(sigma), as_scatter(target)
    sigma.require_pd("sigma")
    target.require_pd("target")
    c = sigma.trace_inv_product(target.entries) / sigma.dim
    return ScatterMatrix(c * sigma.entries)


# ---------------------------------------------------------------------------
# the shared fixed-point loop
# ---------------------------------------------------------------------------

def _initial_matrix(options, k):
    if options.init is None:
        return np.eye(k)
    S0 = as_scatter(options.init)
    if S0.dim != k:
        raise ValueError(f"init has dim {S0.dim}, samples have dim {k}")
    S0.require_pd("init")
    return np.array(S0.entries)


def _cholesky_or_none(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None


def _inv_cond(S):
    ev = np.linalg.eigvalsh(S)
    hi = ev[-1]
    if not hi > 0:
        return 0.0
    return max(ev[0], 0.0) / hi


def _escaping(ics, t, options):
    w = options.escape_window
    if w <= 0 or t < 3 * w or t % w:
        return False
    pts = [ics[t - j * w] for j in (3, 2, 1, 0)]
    if min(pts) <= 0.0:
        return True
    logs = np.log(pts)
    drops = -(np.diff(logs))
    if np.any(drops < options.escape_min):
        return False
    return bool(drops[1] >= options.escape_ratio * drops[0] and drops[2] >= options.escape_ratio * drops[1])


def run_fixed_point(samples, config, options=None):
    """Run the fixed-point iteration selected by ``config``; see module docstring."""
    samples = as_samples(samples)
    options = options or SolverOptions()
    X = samples.rows
    n, k = X.shape
    kind = _loss_kind(config)
    alpha0 = config.alpha0
    T = config.target_array(k)
    normalize = bool(config.normalize_trace)
    shrink = 1.0 / (1.0 + alpha0)

    S = _initial_matrix(options, k)
    L = np.linalg.cholesky(S)
    trace = IterationTrace()

    def loss_and_scatter(S, L):
        W, q, clamped = _kernels.tyler_scatter(X, L)
        trace.clamped += clamped
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        tr = 0.0
        if kind != "tyler":
            tr = float(np.trace(cho_solve((L, True), T, check_finite=False)))
        loss = _loss_from_parts(kind, logdet, float(np.sum(np.log(q))), n, k, alpha0, tr)
        return loss, W, tr

    loss, W, tr = loss_and_scatter(S, L)
    trace.append(loss, np.nan, _inv_cond(S), np.nan)
    ics = trace.inv_condition
    collapse_tol = options.collapse_threshold()
    flagged = None

    for t in range(1, options.max_iter + 1):
        data = (k / n) * W
        if kind == "tyler":
            Sn = data
        elif kind == "wiesel":
            Sn = shrink * data + (1.0 - shrink) * (k / tr) * T
        else:
            Sn = shrink * data + (1.0 - shrink) * T
        if normalize:
            Sn = Sn / np.trace(Sn)
        Sn = 0.5 * (Sn + Sn.T)
        if not np.all(np.isfinite(Sn)):
            flagged = flagged or (t, "non-finite iterate")
            break
        Ln = _cholesky_or_none(Sn)
        if Ln is None:
            flagged = flagged or (t, "iterate lost positive definiteness")
            break
        ic = _inv_cond(Sn)
        if ic <= k * EPS:
            # numerically singular by the same rule ScatterMatrix uses
            flagged = flagged or (t, "iterate lost positive definiteness")
            break
        step = float(np.linalg.norm(Sn - S))
        rel = step / float(np.linalg.norm(S))
        S, L = Sn, Ln
        loss, W, tr = loss_and_scatter(S, L)
        trace.append(loss, step, ic, rel)

        if flagged is None:
            if ic < options.divergence_floor:
                flagged = (t, f"inverse condition {ic:.3e} below floor")
            elif np.trace(S) > options.trace_ceiling:
                flagged = (t, "trace exceeded ceiling")
            elif rel <= options.tol and abs(math.log(max(ic, 1e-300) / max(ics[-2], 1e-300))) > collapse_tol:
                flagged = (t, "steps stalled while the condition number keeps collapsing")
            elif _escaping(ics, t, options):
                flagged = (t, "sustained geometric escape toward the boundary")
            if flagged is not None and options.stop_on_divergence:
                break
        if rel <= options.tol and flagged is None:
            trace.status = Status.CONVERGED
            trace.message = f"relative step {rel:.3e} <= tol after {t} iterations"
            break

    if flagged is not None:
        trace.status = Status.DIVERGED
        trace.diverged_at = flagged[0]
        trace.message = f"diverged at iteration {flagged[0]}: {flagged[1]}"
    elif trace.status is not Status.CONVERGED:
        trace.message = f"no convergence within {options.max_iter} iterations"

    return EstimatorResult(ScatterMatrix(S), trace, config)


def tyler_estimate(samples, options=None):
    """Tyler's trace-normalized fixed-point iteration."""
    return run_fixed_point(samples, ShrinkageConfig.tyler(), options)


def _with_penalty(config, penalty):
    if config.penalty is not penalty:
        if config.penalty is Penalty.NONE and config.alpha0 == 0.0 and config.target is None:
            return replace(config, penalty=penalty, normalize_trace=None)
        raise ValueError(f"expected a {penalty.value} config, got {config.penalty.value}")
    return config


def wiesel_estimate(samples, config, options=None):
    """Wiesel-penalized estimator (MM iteration with trace normalization)."""
    return run_fixed_point(samples, _with_penalty(config, Penalty.WIESEL), options)


def kl_estimate(samples, config, options=None):
    """KL-penalized estimator; unnormalized unless ``config.normalize_trace``."""
    return run_fixed_point(samples, _with_penalty(config, Penalty.KL), options)


def estimate(samples, config, options=None):
    """Dispatch on ``config.penalty``."""
    return run_fixed_point(samples, config, options)


def check_pd(sigma, what="sigma"):
    sigma = as_scatter(sigma)
    if not sigma.is_pd:
        raise DefinitenessError(f"{what} must be positive definite")
    return sigma
