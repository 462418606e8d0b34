# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused single-pass accumulation kernels.

One sweep over the rows yields the log-likelihood, score and the upper
triangle of the observed information; rows are summed in file order so
the result does not depend on BLAS threading.
"""

import numpy as np
from libc.math cimport exp, log, log1p, lgamma, fabs, isfinite
from libc.stdlib cimport malloc, free

cdef enum:
    BINOMIAL = 1
    POISSON = 2
    MULTINOMIAL = 3

cdef double POISSON_ETA_MAX = 700.0


def gram(X, y):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1], i, a, b
    xx_arr = np.zeros((p, p))
    xy_arr = np.zeros(p)
    cdef double[:, ::1] xx = xx_arr
    cdef double[::1] xy = xy_arr
    cdef double yy = 0.0, xa, yi
    with nogil:
        for i in range(n):
            yi = yv[i]
            yy += yi * yi
            for a in range(p):
                xa = x[i, a]
                xy[a] += xa * yi
                for b in range(a, p):
                    xx[a, b] += xa * x[i, b]
        for a in range(p):
            for b in range(a):
                xx[a, b] = xx[b, a]
    return xx_arr, xy_arr, yy


cdef inline double _softplus(double t) nogil:
    if t > 0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


cdef inline double _expit(double t) nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef Py_ssize_t _single(int code, const double[:, ::1] x, const double[::1] yv,
                        const double[::1] beta, double* ll_out,
                        double[::1] score, double[:, ::1] info, bint want_derivs) nogil:
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1], i, a, b
    cdef double eta, mu, w, r, yi, xa, ll = 0.0
    for i in range(n):
        eta = 0.0
        for a in range(p):
            eta += x[i, a] * beta[a]
        if not isfinite(eta):
            return i
        yi = yv[i]
        if code == POISSON:
            if eta > POISSON_ETA_MAX:
                return i
            mu = exp(eta)
            w = mu
            ll += yi * eta - mu - lgamma(yi + 1.0)
        else:
            mu = _expit(eta)
            w = mu * (1.0 - mu)
            ll += yi * eta - _softplus(eta)
        if want_derivs:
            r = yi - mu
            for a in range(p):
                xa = x[i, a]
                score[a] += r * xa
                xa = xa * w
                for b in range(a, p):
                    info[a, b] += xa * x[i, b]
    ll_out[0] = ll
    return -1


cdef Py_ssize_t _multi(const double[:, ::1] x, const double[::1] yv,
                       const double[::1] beta, Py_ssize_t r, double* ll_out,
                       double[::1] score, double[:, ::1] info, bint want_derivs,
                       double* eta, double* prob) nogil:
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1], k = r - 1
    cdef Py_ssize_t i, a, b, j, c, yc
    cdef double m, denom, lognorm, ll = 0.0, w, xa, ind
    for i in range(n):
        m = 0.0
        for j in range(k):
            eta[j] = 0.0
            for a in range(p):
                eta[j] += x[i, a] * beta[j * p + a]
            if not isfinite(eta[j]):
                return i
            if eta[j] > m:
                m = eta[j]
        denom = exp(-m)
        for j in range(k):
            prob[j] = exp(eta[j] - m)
            denom += prob[j]
        lognorm = m + log(denom)
        yc = <Py_ssize_t>yv[i]
        if yc == 1:
            ll -= lognorm
        else:
            ll += eta[yc - 2] - lognorm
        if not want_derivs:
            continue
        for j in range(k):
            prob[j] /= denom
        for j in range(k):
            ind = 1.0 if yc == j + 2 else 0.0
            for a in range(p):
                score[j * p + a] += (ind - prob[j]) * x[i, a]
            for c in range(j, k):
                if c == j:
                    w = prob[j] * (1.0 - prob[j])
                    for a in range(p):
                        xa = w * x[i, a]
                        for b in range(a, p):
                            info[j * p + a, j * p + b] += xa * x[i, b]
                else:
                    w = -prob[j] * prob[c]
                    for a in range(p):
                        xa = w * x[i, a]
                        for b in range(p):
                            info[j * p + a, c * p + b] += xa * x[i, b]
    ll_out[0] = ll
    return -1


def _run(int code, X, y, beta, Py_ssize_t r, bint want_derivs):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t p = x.shape[1]
    cdef Py_ssize_t d = p * (r - 1) if code == MULTINOMIAL else p
    cdef Py_ssize_t bad, a, b
    cdef double ll = 0.0
    cdef double* eta = NULL
    cdef double* prob = NULL
    cdef Py_ssize_t dd = d if want_derivs else 0
    score_arr = np.zeros(dd)
    info_arr = np.zeros((dd, dd))
    cdef double[::1] score = score_arr
    cdef double[:, ::1] info = info_arr
    if code == MULTINOMIAL:
        eta = <double*>malloc((r - 1) * sizeof(double))
        prob = <double*>malloc((r - 1) * sizeof(double))
        if eta == NULL or prob == NULL:
            free(eta)
            free(prob)
            raise MemoryError()
        try:
            with nogil:
                bad = _multi(x, yv, bv, r, &ll, score, info, want_derivs, eta, prob)
        finally:
            free(eta)
            free(prob)
    else:
        with nogil:
            bad = _single(code, x, yv, bv, &ll, score, info, want_derivs)
    if bad >= 0:
        return float("-inf"), None, None, int(bad)
    if want_derivs:
        with nogil:
            for a in range(d):
                for b in range(a):
                    info[a, b] = info[b, a]
        return ll, score_arr, info_arr, -1
    return ll, None, None, -1


def loglik(int code, X, y, beta, Py_ssize_t r):
    ll, _, _, bad = _run(code, X, y, beta, r, False)
    return ll, bad


def glm_terms(int code, X, y, beta, Py_ssize_t r):
    return _run(code, X, y, beta, r, True)
