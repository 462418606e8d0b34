"""Families, likelihood pieces and the two per-subset fitting engines.

Coefficient layout for the multinomial family is category-major: the
``p`` coefficients of category 2, then those of category 3, and so on.
Category 1 is the reference and carries no coefficients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._linalg import _Singular, cho_inverse, cho_solve, cholesky
from .errors import (
    DimensionError,
    DomainError,
    NonConvergedWarning,
    NonFiniteError,
    SeparationError,
    SingularDesign,
    SingularInformation,
)

GAUSSIAN = "gaussian-identity"
BINOMIAL = "binomial-logit"
POISSON = "poisson-log"
MULTINOMIAL = "multinomial-logit"

_ALIASES = {
    "gaussian": GAUSSIAN,
    "linear": GAUSSIAN,
    GAUSSIAN: GAUSSIAN,
    "binomial": BINOMIAL,
    "logistic": BINOMIAL,
    BINOMIAL: BINOMIAL,
    "poisson": POISSON,
    POISSON: POISSON,
    "multinomial": MULTINOMIAL,
    MULTINOMIAL: MULTINOMIAL,
}
_LINKS = {GAUSSIAN: "identity", BINOMIAL: "logit", POISSON: "log",
          MULTINOMIAL: "baseline-category-logit"}
_CODES = {BINOMIAL: _kernels.BINOMIAL, POISSON: _kernels.POISSON,
          MULTINOMIAL: _kernels.MULTINOMIAL}

SEPARATION_BETA_MAX = 1e4
# a categorical-response fit this close to a perfect likelihood has separated data
SEPARATION_LOGLIK = 1e-6


@dataclass(frozen=True)
class Family:
    """A response distribution together with its canonical link.

    ``num_categories`` is required (and at least 3) for the multinomial
    family and must be ``None`` for the others.
    """

    kind: str
    num_categories: int | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise DomainError(f"unknown family {self.kind!r}; expected one of "
                              f"{sorted(set(_ALIASES.values()))}")
        object.__setattr__(self, "kind", kind)
        if kind == MULTINOMIAL:
            if self.num_categories is None or int(self.num_categories) < 3:
                raise DomainError("multinomial-logit needs num_categories >= 3, "
                                  f"got {self.num_categories}")
            object.__setattr__(self, "num_categories", int(self.num_categories))
        elif self.num_categories is not None:
            raise DomainError(f"{kind} takes no num_categories")

    @classmethod
    def _unchecked(cls, kind, num_categories=None):
        # r=2 multinomial, used only to cross-check against the logistic fit
        obj = object.__new__(cls)
        object.__setattr__(obj, "kind", _ALIASES[kind])
        object.__setattr__(obj, "num_categories", num_categories)
        return obj

    @property
    def link(self) -> str:
        return _LINKS[self.kind]

    @property
    def short_name(self) -> str:
        return self.kind.split("-")[0]

    @property
    def equations(self) -> int:
        """Number of linear predictors per row (r - 1 for multinomial)."""
        return self.num_categories - 1 if self.kind == MULTINOMIAL else 1

    def dim(self, p: int) -> int:
        return self.equations * p

    def _code(self) -> int:
        return _CODES[self.kind]

    def _r(self) -> int:
        return self.num_categories if self.kind == MULTINOMIAL else 2


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 50
    gradient_tolerance: float = 1e-8
    step_halving_max: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if self.step_halving_max < 0:
            raise ValueError("step_halving_max must be >= 0")

    @property
    def ridge_fallback(self) -> bool:
        return False


class GramStats(NamedTuple):
    gram_xx: np.ndarray
    gram_xy: np.ndarray
    yy: float
    n: int


@dataclass
class SubsetFit:
    """Everything recombination needs from one subset's fit.

    ``gram_xx``, ``gram_xy``, ``yy`` and ``rss`` are filled only for the
    gaussian family. For gaussian fits ``neg_hessian`` is ``X'X`` so that
    ``covariance @ neg_hessian`` equals ``sigma2 * I``; for the likelihood
    families it is the observed information, the exact inverse of
    ``covariance``.
    """

    subset_index: int
    beta: np.ndarray
    covariance: np.ndarray
    neg_hessian: np.ndarray
    n_rows: int
    converged: bool
    iterations: int
    final_gradient_norm: float
    gram_xx: np.ndarray | None = None
    gram_xy: np.ndarray | None = None
    yy: float | None = None
    rss: float | None = None
    sigma2: float | None = None
    log_likelihood: float | None = None
    family: Family | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    def convergence_record(self) -> dict:
        return {"subset": self.subset_index, "n_rows": self.n_rows,
                "converged": bool(self.converged), "iterations": self.iterations,
                "final_gradient_norm": float(self.final_gradient_norm)}


def _as_design(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"design block must be 2-D, got shape {X.shape}")
    return X


def _check_block(X, y):
    X = _as_design(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"design has {X.shape[0]} rows but response has "
                             f"{y.shape[0]} values")
    if X.shape[0] < 1:
        raise DimensionError("empty block: at least one row is required")
    return X, y


def _check_beta(family, X, beta):
    beta = np.asarray(beta, dtype=float).ravel()
    expected = family.dim(X.shape[1])
    if beta.shape[0] != expected:
        raise DimensionError(f"beta has length {beta.shape[0]}, expected {expected} "
                             f"for {X.shape[1]} design columns ({family.kind})")
    return beta


def check_response(family: Family, y) -> np.ndarray:
    """Validate that ``y`` lies in the family's support."""
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DomainError("response contains non-finite values")
    kind = family.kind
    if kind == BINOMIAL:
        bad = np.flatnonzero((y != 0.0) & (y != 1.0))
        if bad.size:
            raise DomainError(f"binomial response must be 0/1; row {bad[0]} is {y[bad[0]]}")
    elif kind == POISSON:
        bad = np.flatnonzero((y < 0) | (y != np.floor(y)))
        if bad.size:
            raise DomainError(f"poisson response must be a non-negative integer; "
                              f"row {bad[0]} is {y[bad[0]]}")
    elif kind == MULTINOMIAL:
        r = family.num_categories
        bad = np.flatnonzero((y < 1) | (y > r) | (y != np.floor(y)))
        if bad.size:
            raise DomainError(f"multinomial response must be a category index in 1..{r}; "
                              f"row {bad[0]} is {y[bad[0]]}")
    return y


def linear_predictor(X, beta, family: Family | None = None):
    """``X @ beta``; an ``n x (r-1)`` matrix for the multinomial family.

    Without ``family`` a ``beta`` whose length is a multiple ``k * p`` with
    ``k > 1`` is read as ``k`` category blocks.
    """
    X = _as_design(X)
    p = X.shape[1]
    beta = np.asarray(beta, dtype=float).ravel()
    if family is not None:
        beta = _check_beta(family, X, beta)
        k = family.equations
    else:
        if beta.shape[0] == 0 or beta.shape[0] % p:
            raise DimensionError(f"beta has length {beta.shape[0]}, expected a "
                                 f"multiple of {p} (design columns)")
        k = beta.shape[0] // p
    if k == 1 and (family is None or family.kind != MULTINOMIAL):
        return X @ beta
    return X @ beta.reshape(k, p).T


def mean_from_eta(family: Family, eta):
    """Inverse link.

    For the multinomial family ``eta`` has one column per non-reference
    category and the result has ``r`` columns, reference probability first.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        row = int(np.flatnonzero(~np.isfinite(eta.reshape(eta.shape[0], -1)).any(axis=1))[0]) \
            if eta.ndim else 0
        raise NonFiniteError(f"non-finite linear predictor at row {row}", row=row)
    kind = family.kind
    if kind == GAUSSIAN:
        return eta.copy()
    if kind == BINOMIAL:
        z = np.exp(-np.abs(eta))
        return np.where(eta >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    if kind == POISSON:
        over = np.flatnonzero(np.atleast_1d(eta) > _kernels._pykernels.POISSON_ETA_MAX)
        if over.size:
            raise NonFiniteError(f"poisson mean overflows at row {over[0]} "
                                 f"(eta={np.atleast_1d(eta)[over[0]]:.4g})", row=int(over[0]))
        return np.exp(eta)
    single = eta.ndim == 1
    E = np.atleast_2d(eta)
    if E.shape[1] != family.equations:
        raise DimensionError(f"eta has {E.shape[1]} columns, expected {family.equations}")
    full = np.concatenate([np.zeros((E.shape[0], 1)), E], axis=1)
    full -= full.max(axis=1, keepdims=True)
    P = np.exp(full)
    P /= P.sum(axis=1, keepdims=True)
    return P[0] if single else P


def _gaussian_rss(X, y, beta):
    r = y - X @ beta
    return float(r @ r), r


def log_likelihood(family: Family, beta, X, y) -> float:
    """Log-likelihood at ``beta``.

    The gaussian value is profiled over the variance, evaluated at
    ``sigma2 = RSS(beta) / n``.
    """
    X, y = _check_block(X, y)
    beta = _check_beta(family, X, beta)
    if family.kind == GAUSSIAN:
        n = X.shape[0]
        rss, _ = _gaussian_rss(X, y, beta)
        if not rss > 0 or not math.isfinite(rss):
            raise NonFiniteError("profiled gaussian log-likelihood undefined (RSS = "
                                 f"{rss})", row=None)
        return -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)
    y = check_response(family, y)
    ll, bad = _kernels.loglik(family._code(), X, y, beta, family._r())
    if bad >= 0:
        raise NonFiniteError(f"non-finite log-likelihood term at row {bad}", row=bad)
    return float(ll)


def _terms(family, X, y, beta):
    ll, g, info, bad = _kernels.glm_terms(family._code(), X, y, beta, family._r())
    if bad >= 0:
        raise NonFiniteError(f"non-finite intermediate at row {bad}", row=bad)
    return ll, g, info


def score(family: Family, beta, X, y) -> np.ndarray:
    """Gradient of the log-likelihood.

    For the gaussian family this is the scale-free ``X'(y - X beta)``; the
    gradient of the profiled log-likelihood is that divided by ``RSS/n``.
    """
    X, y = _check_block(X, y)
    beta = _check_beta(family, X, beta)
    if family.kind == GAUSSIAN:
        return X.T @ (y - X @ beta)
    y = check_response(family, y)
    return _terms(family, X, y, beta)[1]


def observed_information(family: Family, beta, X, y) -> np.ndarray:
    """Negative Hessian of the log-likelihood (``X'X`` for gaussian)."""
    X, y = _check_block(X, y)
    beta = _check_beta(family, X, beta)
    if family.kind == GAUSSIAN:
        return X.T @ X
    y = check_response(family, y)
    return _terms(family, X, y, beta)[2]


def accumulate_gram(X, y) -> GramStats:
    X, y = _check_block(X, y)
    xx, xy, yy = _kernels.gram(X, y)
    return GramStats(xx, xy, float(yy), X.shape[0])


def merge_gram(parts) -> GramStats:
    """Sum Gram statistics in the given order."""
    parts = list(parts)
    if not parts:
        raise DimensionError("no Gram statistics to merge")
    xx = np.array(parts[0].gram_xx, dtype=float, copy=True)
    xy = np.array(parts[0].gram_xy, dtype=float, copy=True)
    yy, n = float(parts[0].yy), int(parts[0].n)
    for part in parts[1:]:
        if np.shape(part.gram_xx) != xx.shape or np.shape(part.gram_xy) != xy.shape:
            raise DimensionError(f"Gram dimensions differ: {xx.shape} vs "
                                 f"{np.shape(part.gram_xx)}")
        xx += part.gram_xx
        xy += part.gram_xy
        yy += part.yy
        n += part.n
    return GramStats(xx, xy, yy, n)


def solve_normal_equations(gram_xx, gram_xy):
    """Solve ``gram_xx @ b = gram_xy``; returns ``(b, cholesky_factor)``."""
    try:
        L = cholesky(gram_xx)
    except _Singular as exc:
        raise SingularDesign(f"Gram matrix is singular: column {exc.column} is linearly "
                             "dependent on earlier columns", column=exc.column) from None
    return cho_solve(L, np.asarray(gram_xy, dtype=float)), L


def fit_ols(gram_xx, gram_xy, yy, n, subset_index: int = 1) -> SubsetFit:
    gram_xx = np.asarray(gram_xx, dtype=float)
    gram_xy = np.asarray(gram_xy, dtype=float).ravel()
    p = gram_xy.shape[0]
    if gram_xx.shape != (p, p):
        raise DimensionError(f"gram_xx has shape {gram_xx.shape}, expected {(p, p)}")
    if not np.allclose(gram_xx, gram_xx.T, rtol=1e-12, atol=0.0):
        raise DimensionError("gram_xx is not symmetric")
    n = int(n)
    if n <= p:
        raise DimensionError(f"need more rows than columns for OLS: n={n}, p={p}")
    beta, L = solve_normal_equations(gram_xx, gram_xy)
    rss = float(yy - 2.0 * beta @ gram_xy + beta @ gram_xx @ beta)
    rss = max(rss, 0.0)
    sigma2 = rss / (n - p)
    cov = sigma2 * cho_inverse(L)
    grad = gram_xy - gram_xx @ beta
    return SubsetFit(
        subset_index=subset_index, beta=beta, covariance=cov,
        neg_hessian=gram_xx.copy(), n_rows=n, converged=True, iterations=0,
        final_gradient_norm=float(np.max(np.abs(grad))), gram_xx=gram_xx.copy(),
        gram_xy=gram_xy.copy(), yy=float(yy), rss=rss, sigma2=sigma2,
        family=Family(GAUSSIAN),
    )


def fit_irls(family: Family, X, y, config: FitConfig | None = None, beta_init=None,
             subset_index: int = 1, warn: bool = True) -> SubsetFit:
    """Damped Newton-Raphson for the canonical-link likelihood families.

    Each step solves ``I(beta) delta = score(beta)``; the step is halved
    while the log-likelihood fails to increase. Iteration stops once the
    score's max-norm drops below ``config.gradient_tolerance``. Hitting
    ``max_iterations`` (or exhausting step-halving) returns the current
    fit with ``converged=False`` and issues ``NonConvergedWarning`` (unless
    ``warn`` is false, as in the threaded pipeline, which reports through
    the convergence flag instead).
    """
    if family.kind == GAUSSIAN:
        raise DomainError("fit_irls handles the likelihood families; use fit_ols for gaussian")
    config = config or FitConfig()
    X, y = _check_block(X, y)
    y = check_response(family, y)
    d = family.dim(X.shape[1])
    beta = np.zeros(d) if beta_init is None else _check_beta(family, X, beta_init).copy()
    if not np.all(np.isfinite(beta)):
        raise DomainError("beta_init must be finite")
    code, r = family._code(), family._r()

    ll, g, info = _terms(family, X, y, beta)
    gnorm = float(np.max(np.abs(g)))
    iterations = 0
    stalled = False
    while gnorm >= config.gradient_tolerance and iterations < config.max_iterations:
        try:
            L = cholesky(info)
        except _Singular as exc:
            raise SingularInformation(
                f"subset {subset_index}: information matrix is singular at column "
                f"{exc.column}", subset=subset_index, column=exc.column) from None
        step = cho_solve(L, g)
        slack = 1e-13 * (abs(ll) + 1.0)
        t = 1.0
        for _ in range(config.step_halving_max + 1):
            cand = beta + t * step
            ll_c, bad = _kernels.loglik(code, X, y, cand, r)
            if bad < 0 and ll_c >= ll - slack:
                break
            t *= 0.5
        else:
            stalled = True
            break
        beta = cand
        iterations += 1
        if np.max(np.abs(beta)) > SEPARATION_BETA_MAX:
            raise SeparationError(
                f"subset {subset_index}: coefficients exceed {SEPARATION_BETA_MAX:g} "
                "in magnitude (complete or quasi-complete separation?)",
                subset=subset_index)
        ll, g, info = _terms(family, X, y, beta)
        gnorm = float(np.max(np.abs(g)))

    converged = gnorm < config.gradient_tolerance
    if converged and family.kind in (BINOMIAL, MULTINOMIAL) and ll > -SEPARATION_LOGLIK:
        # the score vanishes along a separating direction long before |beta| hits the cap
        raise SeparationError(
            f"subset {subset_index}: fitted probabilities reproduce the response exactly "
            f"(log-likelihood {ll:.3g}); the data are completely separated",
            subset=subset_index)
    if not converged and warn:
        why = "step-halving exhausted" if stalled else f"{config.max_iterations} iterations"
        warnings.warn(f"subset {subset_index}: not converged after {why} "
                      f"(|score|_inf = {gnorm:.3g})", NonConvergedWarning, stacklevel=2)
    try:
        L = cholesky(info)
    except _Singular as exc:
        raise SingularInformation(
            f"subset {subset_index}: information matrix is singular at column {exc.column}",
            subset=subset_index, column=exc.column) from None
    return SubsetFit(
        subset_index=subset_index, beta=beta, covariance=cho_inverse(L), neg_hessian=info,
        n_rows=X.shape[0], converged=converged, iterations=iterations,
        final_gradient_norm=gnorm, log_likelihood=float(ll), family=family,
    )
