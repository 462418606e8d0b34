"""Cholesky factorisation with an explicit rank check, plus solves built on it."""

import numpy as np
from scipy.linalg import solve_triangular

PIVOT_RTOL = 1e-12


class _Singular(Exception):
    def __init__(self, column):
        super().__init__(column)
        self.column = column


def cholesky(a, rtol=PIVOT_RTOL):
    """Lower Cholesky factor of a symmetric matrix.

    Raises ``_Singular`` carrying the first column whose pivot falls below
    ``rtol * max(diag(a))``. Callers translate it into the public error type.
    """
    a = np.array(a, dtype=float, copy=True)
    d = a.shape[0]
    scale = float(np.max(np.abs(np.diag(a)))) if d else 0.0
    if not np.isfinite(scale) or scale <= 0.0:
        raise _Singular(0)
    tol = rtol * scale
    L = np.zeros_like(a)
    for k in range(d):
        pivot = a[k, k] - L[k, :k] @ L[k, :k]
        if not pivot > tol:
            raise _Singular(k)
        L[k, k] = np.sqrt(pivot)
        if k + 1 < d:
            L[k + 1:, k] = (a[k + 1:, k] - L[k + 1:, :k] @ L[k, :k]) / L[k, k]
    return L


def cho_solve(L, b):
    y = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def cho_inverse(L):
    """Materialise ``A^{-1}`` by solving against identity columns."""
    inv = cho_solve(L, np.eye(L.shape[0]))
    return 0.5 * (inv + inv.T)
