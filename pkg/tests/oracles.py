"""Independent reference computations used by the tests.

Nothing here calls into regtyler, so agreement is meaningful.
"""

import numpy as np
from scipy.optimize import minimize


def gauss_jordan_inverse(A):
    """Inverse by Gauss-Jordan elimination with partial pivoting (pure Python loops)."""
    A = [list(map(float, row)) for row in np.asarray(A)]
    n = len(A)
    M = [row + [1.0 if i == j else 0.0 for j in range(n)] for i, row in enumerate(A)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col]))
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        M[col] = [v / p for v in M[col]]
        for r in range(n):
            if r != col:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return np.array([row[n:] for row in M])


def kl_loss(S, X, alpha0, T):
    """log det S + (K/N) sum log(x' S^-1 x) + alpha0 (Tr(S^-1 T) + log det S)."""
    n, k = X.shape
    Sinv = gauss_jordan_inverse(S)
    q = np.einsum("ij,jk,ik->i", X, Sinv, X)
    logdet = np.log(np.linalg.det(S))
    return logdet + (k / n) * np.sum(np.log(q)) + alpha0 * (np.trace(Sinv @ T) + logdet)


def kl_direct_minimizer(X, alpha0, T):
    """Minimize the KL-penalized loss over 2x2 SPD matrices with Nelder-Mead.

    Parametrization: S = L L^T with L lower triangular, log-diagonal.
    """
    def unpack(z):
        L = np.array([[np.exp(z[0]), 0.0], [z[1], np.exp(z[2])]])
        return L @ L.T

    best = None
    for z0 in ([0.0, 0.0, 0.0], [0.5, 0.3, -0.2], [-0.5, -0.3, 0.4]):
        res = minimize(lambda z: kl_loss(unpack(z), X, alpha0, T), z0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 40000, "maxfev": 80000})
        if best is None or res.fun < best.fun:
            best = res
    return unpack(best.x)


def kkt_min_variance(S):
    """Solve [[2S, 1], [1', 0]] [w; mu] = [0; 1]."""
    k = S.shape[0]
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = 2 * S
    M[:k, k] = 1.0
    M[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    return np.linalg.solve(M, rhs)[:k]


def brute_force_max_in_subspace(X, basis, tol=1e-8):
    """Count samples within tol*||x|| of span(basis) using least squares."""
    count = 0
    for x in X:
        coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
        if np.linalg.norm(x - basis @ coef) <= tol * np.linalg.norm(x):
            count += 1
    return count
