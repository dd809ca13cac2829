"""Hypothesis test deciding whether a variable-entry ordering is stable.

At each step of a LASSO path the next variable to enter is the one whose
column is most correlated with the current residual.  With synthetic
perturbation data that correlation is an average of n per-row products
``r_t * x_tj``, so by the central limit theorem the gap between the top two
candidates carries sampling noise of known size.  The test implemented here
asks: if the perturbation data were regenerated from scratch, would the same
variable win again?  When the answer is "not reliably", the companion
sample-size rule says how many rows would be needed.

Conventions: ``normal_quantile(p)`` is the *upper-tail* quantile, i.e. the z
with ``P(Z > z) = p``, so ``normal_quantile(0.05) ~= 1.6449``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateInputError, ValidationError

__all__ = [
    "ProductCovariance",
    "TestDecision",
    "normal_quantile",
    "normal_upper_tail",
    "product_covariance",
    "entry_test",
    "bonferroni_entry_test",
    "required_sample_size",
]

DEFAULT_GROWTH_FACTOR = 4.0


def normal_quantile(p: float) -> float:
    """Upper-tail standard normal quantile: the z with ``P(Z > z) = p``.

    ``normal_quantile(0.5) == 0``; smaller p gives larger z.  Raises
    :class:`ValidationError` unless ``0 < p < 1``.
    """
    if not (0.0 < p < 1.0) or not math.isfinite(p):
        raise ValidationError(f"probability must lie strictly in (0, 1), got {p!r}")
    # -ndtri(p) rather than ndtri(1 - p): keeps full precision for tiny p.
    return float(-ndtri(p))


def normal_upper_tail(z: float) -> float:
    """``P(Z > z)`` for a standard normal Z.  Inverse of :func:`normal_quantile`."""
    if not math.isfinite(z):
        if math.isnan(z):
            raise ValidationError("z must not be NaN")
        return 0.0 if z > 0 else 1.0
    return float(ndtr(-z))


@dataclass(frozen=True)
class ProductCovariance:
    """First and second moments of the per-row products for two candidates.

    ``c1_hat``/``c2_hat`` are the mean products (the candidates' correlations
    with the residual) and ``sigma11``, ``sigma22``, ``sigma12`` the unbiased
    empirical (co)variances of the two product sequences.  ``n`` is the number
    of rows behind the estimate.
    """

    c1_hat: float
    c2_hat: float
    sigma11: float
    sigma22: float
    sigma12: float
    n: int

    @property
    def diff_variance(self) -> float:
        """Variance of the difference of products, clamped to be nonnegative."""
        return max(self.sigma11 + self.sigma22 - 2.0 * self.sigma12, 0.0)


@dataclass(frozen=True)
class TestDecision:
    """Outcome of one entry test.

    ``significant`` means the observed winner would keep winning on freshly
    regenerated data at the requested confidence; equivalently
    ``statistic_t >= 0`` and ``p_value <= alpha``.  When not significant,
    ``recommended_n`` is the sample size at which the test is projected to
    succeed (always > n); when significant it equals the current n.
    """

    statistic_t: float
    p_value: float
    significant: bool
    recommended_n: int
    compared: tuple[str, str]
    n: int
    step: int = 0


def product_covariance(residual: np.ndarray, col_i: np.ndarray,
                       col_j: np.ndarray) -> ProductCovariance:
    """Moments of ``residual * col_i`` versus ``residual * col_j``.

    All three arrays must be 1-d of the same length n >= 2.  Covariances are
    the unbiased (n - 1 denominator) estimates.
    """
    r = np.asarray(residual, dtype=float)
    a = np.asarray(col_i, dtype=float)
    b = np.asarray(col_j, dtype=float)
    if r.ndim != 1 or a.shape != r.shape or b.shape != r.shape:
        raise ValidationError("residual and both columns must be 1-d arrays of equal length")
    if not (np.isfinite(r).all() and np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValidationError("residual and columns must be finite")
    n = r.shape[0]
    if n < 2:
        raise DegenerateInputError("product covariance needs at least 2 rows")
    pa = r * a
    pb = r * b
    cov = np.cov(pa, pb, ddof=1)
    return ProductCovariance(
        c1_hat=float(pa.mean()),
        c2_hat=float(pb.mean()),
        sigma11=float(cov[0, 0]),
        sigma22=float(cov[1, 1]),
        sigma12=float(cov[0, 1]),
        n=n,
    )


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 0.5):
        raise ValidationError(f"alpha must lie strictly in (0, 0.5), got {alpha!r}")


def _pair_p_value(cov: ProductCovariance) -> float:
    """Upper-tail p-value for 'candidate 1 beats candidate 2 on fresh data'.

    The factor 2 in the variance accounts for the comparison being made
    against an independent regeneration of the same size, not against the
    truth.  Degenerate zero-variance inputs get p = 0 (strict gap) or
    p = 0.5 (exact tie).
    """
    gap = cov.c1_hat - cov.c2_hat
    var = cov.diff_variance
    if var == 0.0:
        return 0.0 if gap > 0 else 0.5
    z = math.sqrt(cov.n) * gap / math.sqrt(2.0 * var)
    return normal_upper_tail(z)


def entry_test(cov: ProductCovariance, alpha: float, *,
               compared: tuple[str, str] = ("c1", "c2"), step: int = 0,
               growth_factor: float = DEFAULT_GROWTH_FACTOR) -> TestDecision:
    """Test whether the leading candidate's win would survive regeneration.

    Requires ``cov.c1_hat >= cov.c2_hat`` (order the candidates, negating
    columns with negative correlation, before calling).  The statistic is

        t = (c1 - c2) - z_alpha * sqrt(2 * var_diff / n)

    and the decision is significant exactly when ``t >= 0``.  With zero
    variance and a zero gap the comparison is undecidable at any sample size;
    that corner reports ``t = -inf``, ``p = 0.5``, not significant.
    """
    _check_alpha(alpha)
    gap = cov.c1_hat - cov.c2_hat
    if gap < 0:
        raise ValidationError("c1_hat must be >= c2_hat; order the candidates first")
    var = cov.diff_variance
    if var == 0.0:
        if gap > 0:
            t, p, significant = gap, 0.0, True
        else:
            t, p, significant = float("-inf"), 0.5, False
    else:
        se = math.sqrt(2.0 * var / cov.n)
        t = gap - normal_quantile(alpha) * se
        p = _pair_p_value(cov)
        significant = t >= 0.0
    if significant:
        recommended = cov.n
    else:
        recommended = required_sample_size(cov.n, p, alpha, growth_factor=growth_factor)
    return TestDecision(
        statistic_t=float(t),
        p_value=float(p),
        significant=significant,
        recommended_n=recommended,
        compared=compared,
        n=cov.n,
        step=step,
    )


def bonferroni_entry_test(covs: Sequence[ProductCovariance], alpha: float, *,
                          compared_names: Sequence[tuple[str, str]] | None = None,
                          step: int = 0,
                          growth_factor: float = DEFAULT_GROWTH_FACTOR) -> TestDecision:
    """Compare the top candidate against every remaining one at once.

    Each entry of ``covs`` pairs the same leading candidate with one
    competitor.  The per-pair p-values are summed and the entry is declared
    significant when the sum stays below alpha (a union bound, so the family
    error rate is at most alpha).  On failure the recommended sample size is
    driven by the hardest competitor: the largest per-pair p-value tested
    against alpha / (number of competitors).

    ``compared`` on the returned decision names the hardest pair.
    """
    _check_alpha(alpha)
    if not covs:
        raise ValidationError("at least one covariance pair is required")
    n = covs[0].n
    for cov in covs:
        if cov.n != n:
            raise ValidationError("all covariance pairs must share the same n")
        if cov.c1_hat < cov.c2_hat:
            raise ValidationError("c1_hat must be >= c2_hat in every pair")
    p_values = [_pair_p_value(cov) for cov in covs]
    total = sum(p_values)
    significant = total < alpha
    worst = int(np.argmax(p_values))
    if compared_names is not None:
        names = tuple(compared_names[worst])
    else:
        names = ("c1", "c2")
    # alpha - total plays the role of the t statistic: nonnegative exactly
    # when the summed evidence clears the bar (up to the measure-zero tie).
    statistic = alpha - total
    if significant:
        recommended = n
    else:
        per_pair_alpha = alpha / len(covs)
        recommended = required_sample_size(n, p_values[worst], per_pair_alpha,
                                           growth_factor=growth_factor)
    return TestDecision(
        statistic_t=float(statistic),
        p_value=float(min(total, 1.0)),
        significant=significant,
        recommended_n=recommended,
        compared=names,
        n=n,
        step=step,
    )


def required_sample_size(n: int, p_value: float, alpha: float, *,
                         growth_factor: float = DEFAULT_GROWTH_FACTOR) -> int:
    """Sample size projected to turn an insignificant entry test around.

    Solves ``sqrt(n / n') = z_{p} / z_{alpha}`` for n', i.e.
    ``n' = ceil(n * (z_alpha / z_p)**2)``, where p is the observed p-value.
    The result is forced to at least n + 1 so the adaptive loop always makes
    progress.  For p >= 0.5 the normal quantile is no longer positive and the
    projection is meaningless; in that regime the sample is simply grown by
    ``growth_factor``.
    """
    if n < 1:
        raise ValidationError(f"n must be a positive count, got {n!r}")
    _check_alpha(alpha)
    if not (0.0 <= p_value <= 1.0):
        raise ValidationError(f"p_value must lie in [0, 1], got {p_value!r}")
    if growth_factor < 2.0:
        raise ValidationError(f"growth_factor must be >= 2, got {growth_factor!r}")
    if p_value >= 0.5:
        return max(int(math.ceil(growth_factor * n)), n + 1)
    if p_value == 0.0:
        # Already overwhelming evidence; only the progress floor applies.
        return n + 1
    ratio = normal_quantile(alpha) / normal_quantile(p_value)
    return max(int(math.ceil(n * ratio * ratio)), n + 1)
