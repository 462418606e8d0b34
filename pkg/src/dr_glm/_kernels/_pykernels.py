"""Vectorised numpy versions of the accumulation kernels.

Same signatures and return conventions as the compiled ``_ckernels``
module; used when the extension is not built or ``DR_GLM_PURE_PYTHON`` is set.
"""

import numpy as np
from scipy.special import gammaln

BINOMIAL = 1
POISSON = 2
MULTINOMIAL = 3

POISSON_ETA_MAX = 700.0


def gram(X, y):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    return X.T @ X, X.T @ y, float(y @ y)


def _first_bad(mask):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else -1


def _multinomial_parts(X, y, beta, r):
    n, p = X.shape
    B = beta.reshape(r - 1, p).T
    eta = X @ B
    bad = _first_bad(~np.isfinite(eta).all(axis=1))
    if bad >= 0:
        return None, None, None, bad
    m = np.maximum(eta.max(axis=1), 0.0)
    e = np.exp(eta - m[:, None])
    denom = np.exp(-m) + e.sum(axis=1)
    P = e / denom[:, None]
    lognorm = m + np.log(denom)
    yi = y.astype(np.int64)
    is_ref = yi == 1
    picked = eta[np.arange(n), np.clip(yi - 2, 0, r - 2)]
    logp = np.where(is_ref, 0.0, picked) - lognorm
    Y = (yi[:, None] == np.arange(2, r + 1)[None, :]).astype(float)
    return logp, P, Y, -1


def loglik(code, X, y, beta, r):
    """Log-likelihood only; returns ``(ll, bad_row)`` with ``bad_row = -1`` if fine."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if code == MULTINOMIAL:
        logp, _, _, bad = _multinomial_parts(X, y, beta, r)
        if bad >= 0:
            return -np.inf, bad
        return float(logp.sum()), -1
    eta = X @ beta
    if code == POISSON:
        bad = _first_bad(~(eta <= POISSON_ETA_MAX))
        if bad >= 0:
            return -np.inf, bad
        terms = y * eta - np.exp(eta) - gammaln(y + 1.0)
    else:
        bad = _first_bad(~np.isfinite(eta))
        if bad >= 0:
            return -np.inf, bad
        terms = y * eta - np.logaddexp(0.0, eta)
    return float(terms.sum()), -1


def glm_terms(code, X, y, beta, r):
    """Log-likelihood, score and observed information in one call.

    Returns ``(ll, score, info, bad_row)``; on a bad row the arrays are
    ``None`` and ``ll`` is ``-inf``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n, p = X.shape
    if code == MULTINOMIAL:
        logp, P, Y, bad = _multinomial_parts(X, y, beta, r)
        if bad >= 0:
            return -np.inf, None, None, bad
        k = r - 1
        score = (X.T @ (Y - P)).T.ravel()
        info = np.empty((k * p, k * p))
        for a in range(k):
            for b in range(a, k):
                w = P[:, a] * ((1.0 if a == b else 0.0) - P[:, b])
                blk = (X * w[:, None]).T @ X
                info[a * p:(a + 1) * p, b * p:(b + 1) * p] = blk
                if a != b:
                    info[b * p:(b + 1) * p, a * p:(a + 1) * p] = blk.T
        return float(logp.sum()), score, info, -1
    eta = X @ beta
    if code == POISSON:
        bad = _first_bad(~(eta <= POISSON_ETA_MAX))
        if bad >= 0:
            return -np.inf, None, None, bad
        mu = np.exp(eta)
        w = mu
        ll = float((y * eta - mu - gammaln(y + 1.0)).sum())
    else:
        bad = _first_bad(~np.isfinite(eta))
        if bad >= 0:
            return -np.inf, None, None, bad
        mu = np.where(eta >= 0, 1.0 / (1.0 + np.exp(-np.abs(eta))),
                      np.exp(-np.abs(eta)) / (1.0 + np.exp(-np.abs(eta))))
        w = mu * (1.0 - mu)
        ll = float((y * eta - np.logaddexp(0.0, eta)).sum())
    score = X.T @ (y - mu)
    info = (X * w[:, None]).T @ X
    return ll, score, info, -1
