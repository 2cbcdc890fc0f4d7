"""Structure-constrained shrinkage estimation by majorization-minimization.

Majorizing ``log det`` by its tangent and each ``log q_i`` by ``q_i / q_i(S_t)``
(and, for the Wiesel penalty, ``log Tr(S^{-1} T)`` by its tangent) gives the
convex surrogate

    g(S | S_t) = Tr(A S) + Tr(S^{-1} B),
    A = c_A S_t^{-1},   B = sum_i w_i x_i x_i^T + c_T T,   w_i = (K/N) / q_i(S_t)

with ``c_A = 1 + alpha0`` (1 for Tyler) and ``c_T = alpha0 K / Tr(S_t^{-1} T)``
(Wiesel), ``alpha0`` (KL) or 0 (Tyler). Over the whole PD cone its minimizer
is the geometric mean ``S_t # M_t`` with ``M_t = B / c_A``. Over a convex set
the surrogate is minimized numerically: Toeplitz matrices are parametrized by
their first row (damped Newton), and ``S + diag(sigma)`` by a full factor of
``S`` plus box-bounded ``sigma`` (L-BFGS-B).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, toeplitz
from scipy.optimize import minimize

from .errors import DomainError, InnerSolveFailed
from .estimators import (
    EstimatorResult,
    IterationTrace,
    Penalty,
    ShrinkageConfig,
    SolverOptions,
    Status,
    evaluate_loss,
    fixed_point_map,
)
from .sampling import as_samples
from .spd import ScatterMatrix, as_scatter, geometric_mean, geometric_mean_array

__all__ = [
    "StructureKind",
    "StructureSpec",
    "Surrogate",
    "mm_target_matrix",
    "build_surrogate",
    "smoothed_update",
    "smoothed_estimate",
    "inner_convex_solve",
    "constrained_estimate",
    "toeplitz_residual",
]

INNER_GTOL = 1e-7   # contract: gradient norm <= INNER_GTOL * (1 + |g|)
STALL_STEP = 1e-14


class StructureKind(str, enum.Enum):
    NONE = "none"
    TOEPLITZ = "toeplitz"
    LINEAR_ADDITIVE = "linear_additive"


@dataclass(frozen=True)
class StructureSpec:
    """Constraint set; ``noise_intervals`` is a ``K x 2`` array of ``[lo, hi]`` bounds."""

    kind: StructureKind = StructureKind.NONE
    noise_intervals: np.ndarray | None = None

    def __post_init__(self):
        kind = StructureKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StructureKind.LINEAR_ADDITIVE:
            if self.noise_intervals is None:
                raise ValueError("linear_additive structure needs noise_intervals")
            iv = np.array(self.noise_intervals, dtype=float)
            if iv.ndim != 2 or iv.shape[1] != 2:
                raise ValueError("noise_intervals must have shape (K, 2)")
            if np.any(np.isnan(iv)) or np.any(iv[:, 0] < 0) or np.any(iv[:, 0] > iv[:, 1]) or np.any(np.isinf(iv[:, 0])):
                raise DomainError("noise intervals need finite lower bounds with 0 <= lower <= upper")
            iv.setflags(write=False)
            object.__setattr__(self, "noise_intervals", iv)

    @classmethod
    def toeplitz(cls):
        return cls(StructureKind.TOEPLITZ)

    @classmethod
    def linear_additive(cls, intervals):
        return cls(StructureKind.LINEAR_ADDITIVE, intervals)


@dataclass(frozen=True)
class Surrogate:
    """Coefficient bundle of ``g(S) = Tr(A S) + Tr(S^{-1} B)`` built at ``sigma_t``."""

    A: np.ndarray
    B: np.ndarray
    sigma_t: np.ndarray
    weights: np.ndarray
    c_A: float
    c_T: float
    loss_kind: str

    @property
    def target_matrix(self):
        """``M_t = B / c_A``; the unconstrained minimizer is ``sigma_t # M_t``."""
        return self.B / self.c_A

    def value(self, sigma):
        S = np.asarray(sigma, dtype=float)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return np.inf
        return float(np.sum(self.A * S) + np.trace(cho_solve((L, True), self.B, check_finite=False)))

    def gradient(self, sigma):
        """Euclidean gradient ``A - S^{-1} B S^{-1}``."""
        Sinv = np.linalg.inv(np.asarray(sigma, dtype=float))
        return self.A - Sinv @ self.B @ Sinv

    def loss_scale(self, n):
        """Factor turning the surrogate's loss scaling into :func:`evaluate_loss`'s."""
        return 0.5 * n if self.loss_kind == "tyler" else 1.0


def _loss_kind(config):
    return {"none": "tyler", "wiesel": "wiesel", "kl": "kl"}[config.penalty.value]


def build_surrogate(sigma_t, samples, config):
    sigma_t = as_scatter(sigma_t)
    sigma_t.require_pd("sigma_t")
    samples = as_samples(samples)
    X = samples.rows
    n, k = X.shape
    T = config.target_array(k)
    q = sigma_t.quad_forms(X)
    w = (k / n) / np.maximum(q, 1e-300)
    B = (X * w[:, None]).T @ X
    kind = _loss_kind(config)
    alpha0 = config.alpha0
    if kind == "tyler":
        c_A, c_T = 1.0, 0.0
    elif kind == "wiesel":
        c_A, c_T = 1.0 + alpha0, alpha0 * k / sigma_t.trace_inv_product(T)
    else:
        c_A, c_T = 1.0 + alpha0, alpha0
    if c_T:
        B = B + c_T * T
    B = 0.5 * (B + B.T)
    A = c_A * sigma_t.inverse().entries
    return Surrogate(A, B, np.array(sigma_t.entries), w, c_A, c_T, kind)


def mm_target_matrix(kind, sigma_t, samples, config):
    """``M_t``: the (un-normalized) fixed-point map of the chosen penalty at ``sigma_t``."""
    kind = getattr(kind, "value", kind)
    if kind in ("wiesel", "kl"):
        if config.penalty.value != kind:
            config = ShrinkageConfig(Penalty(kind), config.alpha0, config.target)
    elif kind not in ("none", "tyler"):
        raise ValueError(f"unknown kind {kind!r}")
    return fixed_point_map(kind, sigma_t, samples, config)


def smoothed_update(sigma_t, m_t):
    """``sigma_t # m_t``, the minimizer of the fully-majorized surrogate."""
    return geometric_mean(sigma_t, m_t)


# ---------------------------------------------------------------------------
# inner solvers
# ---------------------------------------------------------------------------

def _diag_sums(M):
    """``Tr(M E_k)`` for the symmetric Toeplitz basis ``E_0 = I``, ``E_k`` = ones on +-k."""
    k = M.shape[0]
    out = np.empty(k)
    out[0] = np.trace(M)
    for j in range(1, k):
        out[j] = np.trace(M, offset=j) + np.trace(M, offset=-j)
    return out


def _toeplitz_basis(k):
    E = np.zeros((k, k, k))
    for j in range(k):
        E[j] = toeplitz(np.eye(k)[j])
    return E


def _toeplitz_value(surrogate, c):
    S = toeplitz(c)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.inf, None
    val = float(np.sum(surrogate.A * S) + np.trace(cho_solve((L, True), surrogate.B, check_finite=False)))
    return val, L


def _solve_toeplitz(surrogate, start, max_newton=100):
    k = start.shape[0]
    c = np.array(start[0], dtype=float)
    E = _toeplitz_basis(k)
    a_sums = _diag_sums(surrogate.A)
    f, L = _toeplitz_value(surrogate, c)
    f_start = f
    if not np.isfinite(f):
        raise InnerSolveFailed("Toeplitz start is not positive definite")
    gnorm = np.inf
    for it in range(max_newton):
        Sinv = cho_solve((L, True), np.eye(k), check_finite=False)
        G = Sinv @ surrogate.B @ Sinv
        g = a_sums - _diag_sums(G)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= 1e-3 * INNER_GTOL * (1.0 + abs(f)):
            break
        P = np.einsum("ij,ljk->lik", Sinv, E)        # Sinv E_l
        Q = np.einsum("ij,ljk->lik", G, E)           # G E_k
        H = 2.0 * np.einsum("lij,kji->kl", P, Q)
        H = 0.5 * (H + H.T)
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -g
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -gnorm**2
        if -slope <= 1e-15 * (1.0 + abs(f)):
            break
        s = 1.0
        while True:
            c_new = c + s * d
            f_new, L_new = _toeplitz_value(surrogate, c_new)
            if f_new <= f + 1e-4 * s * slope:
                break
            s *= 0.5
            if s < STALL_STEP:
                if gnorm <= INNER_GTOL * (1.0 + abs(f)):
                    return toeplitz(c), {"newton_iterations": it, "grad_norm": gnorm}
                raise InnerSolveFailed(
                    "Toeplitz line search stalled",
                    {"newton_iterations": it, "grad_norm": gnorm, "value": f},
                )
        c, f, L = c_new, f_new, L_new
    if f > f_start:  # pragma: no cover - Armijo steps cannot increase f
        c = np.array(start[0], dtype=float)
    return toeplitz(c), {"newton_iterations": it, "grad_norm": gnorm, "value": f}


def _solve_linear_additive(surrogate, start_factor, start_noise, intervals):
    k = start_factor.shape[0]
    A, B = surrogate.A, surrogate.B

    def unpack(z):
        return z[: k * k].reshape(k, k), z[k * k:]

    def fun(z):
        F, sig = unpack(z)
        S = F @ F.T + np.diag(sig)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return 1e300, np.zeros_like(z)
        Sinv = cho_solve((L, True), np.eye(k), check_finite=False)
        SB = Sinv @ B
        val = float(np.sum(A * S) + np.trace(SB))
        D = A - SB @ Sinv
        D = 0.5 * (D + D.T)
        return val, np.concatenate([(2.0 * D @ F).ravel(), np.diag(D)])

    z0 = np.concatenate([start_factor.ravel(), start_noise])
    bounds = [(None, None)] * (k * k) + [(lo, hi if np.isfinite(hi) else None) for lo, hi in intervals]
    f0, _ = fun(z0)
    res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 20000, "maxcor": 30, "ftol": 1e-16, "gtol": 1e-12})
    z = res.x if res.fun <= f0 else z0
    f, g = fun(z)
    _, sig = unpack(z)
    lo, hi = intervals[:, 0], intervals[:, 1]
    gs = g[k * k:]
    proj = np.where((sig <= lo) & (gs > 0), 0.0, np.where((sig >= hi) & (gs < 0), 0.0, gs))
    pg = float(np.linalg.norm(np.concatenate([g[: k * k], proj])))
    info = {"lbfgs_iterations": int(res.nit), "grad_norm": pg, "value": f, "message": str(res.message)}
    if pg > INNER_GTOL * (1.0 + abs(f)) and f >= f0:
        raise InnerSolveFailed("linear-additive inner solve made no progress", info)
    F, sig = unpack(z)
    return F, np.clip(sig, lo, hi), info


def inner_convex_solve(surrogate, structure, start):
    """Minimize ``surrogate`` over the structure's set, starting from ``start``.

    ``start`` is a feasible PD matrix (for linear_additive, a ``(F, sigma)`` pair
    with ``S = F F^T``). Returns the minimizer as a :class:`ScatterMatrix`
    (linear_additive: ``(sigma_matrix, F, sigma)``). The surrogate value at the
    output never exceeds the value at ``start``.
    """
    kind = structure.kind
    if kind is StructureKind.NONE:
        Ainv = np.linalg.inv(surrogate.A)
        return ScatterMatrix(geometric_mean_array(0.5 * (Ainv + Ainv.T), surrogate.B))
    if kind is StructureKind.TOEPLITZ:
        S0 = np.asarray(start, dtype=float)
        if toeplitz_residual(S0) > 0:
            raise DomainError("Toeplitz inner solve needs a Toeplitz start")
        S, _ = _solve_toeplitz(surrogate, S0)
        return ScatterMatrix(S)
    F0, sig0 = start
    F, sig, _ = _solve_linear_additive(surrogate, np.asarray(F0, float), np.asarray(sig0, float),
                                       structure.noise_intervals)
    return ScatterMatrix(F @ F.T + np.diag(sig)), F, sig


def toeplitz_residual(sigma):
    """``max |S_ij - S_{i+1,j+1}|``."""
    S = np.asarray(sigma, dtype=float)
    if S.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(S[:-1, :-1] - S[1:, 1:])))


# ---------------------------------------------------------------------------
# outer loops
# ---------------------------------------------------------------------------

def _normalizes(config):
    return bool(config.normalize_trace)


def _outer_loop(samples, config, options, step):
    """Shared MM driver; ``step(S, state) -> (S_new, state_new)``."""
    samples = as_samples(samples)
    options = options or SolverOptions()
    kind = _loss_kind(config)
    trace = IterationTrace()
    S, state = step(None, None)
    ic = _inv_cond(S)
    trace.append(evaluate_loss(kind, S, samples, config), np.nan, ic, np.nan)
    extras = {}
    for t in range(1, options.max_iter + 1):
        try:
            S_new, state = step(S, state)
        except InnerSolveFailed as exc:
            trace.status = Status.INNER_SOLVE_FAILED
            trace.message = f"inner solve failed at outer iteration {t}: {exc}"
            extras["diagnostics"] = exc.diagnostics
            break
        if _normalizes(config):
            tr = float(np.trace(S_new))
            S_new = S_new / tr
            state = _rescale_state(state, tr)
        ic = _inv_cond(S_new)
        if not ic > options.divergence_floor:
            trace.status = Status.DIVERGED
            trace.diverged_at = t
            trace.message = f"diverged at outer iteration {t}: inverse condition {ic:.3e}"
            break
        step_norm = float(np.linalg.norm(S_new - S))
        rel = step_norm / float(np.linalg.norm(S))
        S = S_new
        trace.append(evaluate_loss(kind, S, samples, config), step_norm, ic, rel)
        if rel <= options.tol:
            trace.status = Status.CONVERGED
            trace.message = f"relative step {rel:.3e} <= tol after {t} outer iterations"
            break
    else:
        trace.message = f"no convergence within {options.max_iter} outer iterations"
    return ScatterMatrix(S), trace, state, extras


def _rescale_state(state, tr):
    if isinstance(state, tuple):
        F, sig = state
        return F / math.sqrt(tr), sig / tr
    return state


def _inv_cond(S):
    ev = np.linalg.eigvalsh(S)
    return max(ev[0], 0.0) / ev[-1] if ev[-1] > 0 else 0.0


def smoothed_estimate(samples, config, options=None):
    """Unconstrained MM with the geometric-mean update ``S <- S # M(S)``."""
    samples = as_samples(samples)
    options = options or SolverOptions()
    k = samples.dim
    init = np.eye(k) if options.init is None else np.array(as_scatter(options.init).entries)

    def step(S, _):
        if S is None:
            return init, None
        sur = build_surrogate(S, samples, config)
        return inner_convex_solve(sur, StructureSpec(), S).entries, None

    sigma, trace, _, extras = _outer_loop(samples, config, options, step)
    return EstimatorResult(sigma, trace, config, extras)


def constrained_estimate(samples, config, structure, options=None):
    """MM over a convex structure set; the constraint holds by parametrization."""
    samples = as_samples(samples)
    options = options or SolverOptions()
    structure = structure if isinstance(structure, StructureSpec) else StructureSpec(structure)
    k = samples.dim
    if structure.kind is StructureKind.NONE:
        return smoothed_estimate(samples, config, options)

    if structure.kind is StructureKind.TOEPLITZ:
        if options.init is None:
            init = np.eye(k)
        else:
            init = toeplitz(np.array(as_scatter(options.init).entries)[0])
            if not np.allclose(init, as_scatter(options.init).entries, rtol=0, atol=1e-12):
                raise DomainError("init must be Toeplitz")

        def step(S, _):
            if S is None:
                return init, None
            sur = build_surrogate(S, samples, config)
            S_new, _ = _solve_toeplitz(sur, toeplitz(S[0]))
            return S_new, None

        sigma, trace, _, extras = _outer_loop(samples, config, options, step)
        sigma = ScatterMatrix(toeplitz(sigma.entries[0]))
        extras["first_row"] = np.array(sigma.entries[0])
        return EstimatorResult(sigma, trace, config, extras)

    iv = structure.noise_intervals
    if iv.shape[0] != k:
        raise ValueError(f"need {k} noise intervals, got {iv.shape[0]}")
    if options.init is None:
        state0 = (np.eye(k), iv[:, 0].copy())
    else:
        init = as_scatter(options.init)
        sig0 = iv[:, 0].copy()
        state0 = (np.linalg.cholesky(init.entries - np.diag(sig0)), sig0)

    def step(S, state):
        if S is None:
            F, sig = state0
            return F @ F.T + np.diag(sig), state0
        sur = build_surrogate(S, samples, config)
        F, sig, _ = _solve_linear_additive(sur, state[0], state[1], iv)
        return F @ F.T + np.diag(sig), (F, sig)

    sigma, trace, state, extras = _outer_loop(samples, config, options, step)
    F, sig = state
    extras["low_rank"] = ScatterMatrix(F @ F.T)
    extras["noise"] = np.array(sig)
    return EstimatorResult(sigma, trace, config, extras)

