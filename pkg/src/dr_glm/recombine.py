"""Recombination of per-subset fits and Wald inference on the result.

All reductions run over subsets in ascending ``subset_index`` order so a
combined result is bit-reproducible however the subset fits were
scheduled.

The aggregated variance weights every subset equally,
``(1/S^2) * sum_s V_s``, whatever its row count. It approximates the
full-data covariance well for balanced plans and degrades as subset sizes
diverge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from ._linalg import _Singular, cho_inverse, cho_solve, cholesky
from .errors import CombineRejected, DimensionError, SingularInformation
from .glm import GAUSSIAN, BINOMIAL, Family, GramStats, merge_gram, solve_normal_equations

GRAM_SUM = "gram-sum"
HESSIAN_WEIGHTED = "hessian-weighted"
MEAN = "mean"

AGGREGATED = "aggregated"
POOLED = "pooled"


@dataclass
class CombinedFit:
    beta: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    stat: np.ndarray
    p_value: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    df: int | None
    S: int
    n: int
    method: str
    family: Family
    confidence: float = 0.95
    labels: list = field(default_factory=list)
    variance_method: str = AGGREGATED
    flags: list = field(default_factory=list)

    @property
    def stat_name(self) -> str:
        return "t" if self.df is not None else "z"

    def coefficient_rows(self) -> list[dict]:
        labels = self.labels or [f"beta{j}" for j in range(self.beta.shape[0])]
        return [
            {"label": labels[j], "estimate": float(self.beta[j]), "se": float(self.se[j]),
             "stat": float(self.stat[j]), "p": float(self.p_value[j]),
             "ci_low": float(self.ci_low[j]), "ci_high": float(self.ci_high[j])}
            for j in range(self.beta.shape[0])
        ]


class LinearCombination(NamedTuple):
    beta: np.ndarray
    gram: GramStats
    rss: float


def _ordered(fits):
    fits = sorted(fits, key=lambda f: f.subset_index)
    if not fits:
        raise DimensionError("no subset fits to combine")
    d = fits[0].d
    for f in fits[1:]:
        if f.d != d:
            raise DimensionError(f"subset {f.subset_index} has {f.d} coefficients, "
                                 f"subset {fits[0].subset_index} has {d}")
    return fits


def _require_converged(fits):
    bad = [f.subset_index for f in fits if not f.converged]
    if bad:
        raise CombineRejected(f"subsets {bad} did not converge; refusing to recombine",
                              subsets=bad)


def combine_linear(gram_parts) -> LinearCombination:
    """Solve the pooled normal equations ``(sum X'X) b = sum X'y``."""
    pooled = merge_gram(gram_parts)
    beta, _ = solve_normal_equations(pooled.gram_xx, pooled.gram_xy)
    rss = float(pooled.yy - 2.0 * beta @ pooled.gram_xy + beta @ pooled.gram_xx @ beta)
    return LinearCombination(beta, pooled, max(rss, 0.0))


def combine_hessian_weighted(fits) -> np.ndarray:
    """``(sum I_s)^{-1} sum I_s beta_s`` with ``I_s`` the observed information."""
    fits = _ordered(fits)
    _require_converged(fits)
    if len(fits) == 1:
        return fits[0].beta.copy()
    info = np.zeros_like(fits[0].neg_hessian, dtype=float)
    rhs = np.zeros(fits[0].d)
    for f in fits:
        info += f.neg_hessian
        rhs += f.neg_hessian @ f.beta
    try:
        L = cholesky(info)
    except _Singular as exc:
        raise SingularInformation(f"summed information is singular at column {exc.column}",
                                  column=exc.column) from None
    return cho_solve(L, rhs)


def combine_mean(fits) -> np.ndarray:
    fits = _ordered(fits)
    _require_converged(fits)
    total = np.zeros(fits[0].d)
    for f in fits:
        total += f.beta
    return total / len(fits)


def aggregate_variance(fits) -> np.ndarray:
    """``(1/S^2) * sum_s V(beta_s)``."""
    fits = _ordered(fits)
    total = np.zeros((fits[0].d, fits[0].d))
    for f in fits:
        cov = np.asarray(f.covariance, dtype=float)
        if cov.shape != total.shape:
            raise DimensionError(f"subset {f.subset_index} covariance has shape {cov.shape}, "
                                 f"expected {total.shape}")
        total += cov
    S = len(fits)
    return total / (S * S)


def pooled_variance(combo: LinearCombination) -> np.ndarray:
    """Exact full-data OLS covariance from pooled sufficient statistics."""
    n, p = combo.gram.n, combo.beta.shape[0]
    sigma2 = combo.rss / (n - p)
    return sigma2 * cho_inverse(cholesky(combo.gram.gram_xx))


def normal_quantile(prob: float) -> float:
    return float(stats.norm.ppf(prob))


def t_quantile(prob: float, df: float) -> float:
    return float(stats.t.ppf(prob, df))


def two_sided_p(stat, df=None):
    a = np.abs(np.asarray(stat, dtype=float))
    if df is None:
        return 2.0 * stats.norm.sf(a)
    return 2.0 * stats.t.sf(a, df)


def wald_inference(beta, variance, family: Family, n: int, p: int, confidence: float = 0.95,
                   S: int = 1, method: str = MEAN, labels=None,
                   variance_method: str = AGGREGATED) -> CombinedFit:
    """Standard errors, Wald statistics, two-sided p-values and intervals.

    Gaussian fits use Student-t with ``n - p`` degrees of freedom, the
    other families the standard normal. A zero standard error with a
    nonzero estimate gives a signed infinite statistic and ``p = 0``; the
    coefficient is listed in ``flags``.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    variance = np.asarray(variance, dtype=float)
    d = beta.shape[0]
    if variance.shape != (d, d):
        raise DimensionError(f"variance has shape {variance.shape}, expected {(d, d)}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    diag = np.diag(variance).copy()
    if np.any(diag < 0):
        raise ValueError(f"negative variance on the diagonal at index {int(np.argmin(diag))}")
    se = np.sqrt(diag)
    df = int(n) - int(p) if family.kind == GAUSSIAN else None
    if df is not None and df < 1:
        raise DimensionError(f"residual degrees of freedom must be >= 1, got {df}")

    flags = []
    stat = np.empty(d)
    pos = se > 0
    stat[pos] = beta[pos] / se[pos]
    for j in np.flatnonzero(~pos):
        stat[j] = math.copysign(math.inf, beta[j]) if beta[j] != 0 else 0.0
        flags.append({"index": int(j), "issue": "zero-se"})
    p_value = two_sided_p(stat, df)
    p_value = np.clip(p_value, 0.0, 1.0)

    upper = 1.0 - (1.0 - confidence) / 2.0
    q = normal_quantile(upper) if df is None else t_quantile(upper, df)
    half = q * se
    return CombinedFit(beta=beta, variance=variance, se=se, stat=stat, p_value=p_value,
                       ci_low=beta - half, ci_high=beta + half, df=df, S=int(S), n=int(n),
                       method=method, family=family, confidence=confidence,
                       labels=list(labels) if labels is not None else [],
                       variance_method=variance_method, flags=flags)


def method_for(family: Family) -> str:
    if family.kind == GAUSSIAN:
        return GRAM_SUM
    if family.kind == BINOMIAL:
        return HESSIAN_WEIGHTED
    return MEAN


def recombine(fits, family: Family, n: int, p: int, confidence: float = 0.95, labels=None,
              variance_method: str = AGGREGATED) -> CombinedFit:
    """Pick the family's combination rule, then run Wald inference.

    ``variance_method="pooled"`` (gaussian only) swaps the aggregated
    variance for the exact pooled-RSS covariance.
    """
    fits = _ordered(fits)
    _require_converged(fits)
    method = method_for(family)
    if method == GRAM_SUM:
        combo = combine_linear([GramStats(f.gram_xx, f.gram_xy, f.yy, f.n_rows) for f in fits])
        beta = combo.beta
        if variance_method == POOLED:
            variance = pooled_variance(combo)
        else:
            variance = aggregate_variance(fits)
    else:
        if variance_method != AGGREGATED:
            raise ValueError("pooled variance is only defined for the gaussian family")
        beta = combine_hessian_weighted(fits) if method == HESSIAN_WEIGHTED else combine_mean(fits)
        variance = aggregate_variance(fits)
    return wald_inference(beta, variance, family, n, p, confidence=confidence, S=len(fits),
                          method=method, labels=labels, variance_method=variance_method)
