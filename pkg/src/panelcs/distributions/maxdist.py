"""Distribution of the largest coordinate of a multivariate t or normal vector."""

from __future__ import annotations

import numpy as np
from scipy import optimize

from ..errors import BracketFailure, DomainError, InputError
from .bivariate import MAX_EXACT_DOF, bvn_cdf, bvt_cdf
from .qmc import QmcConfig, check_scale_matrix, correlation_from_scale, qmc_points, rect_prob
from .scalar import norm_cdf, norm_quantile, t_cdf, t_quantile

__all__ = [
    "mvn_rect_prob",
    "mvt_rect_prob",
    "mvt_max_cdf",
    "mvt_max_quantile",
    "max_quantiles_bivariate",
]


def _dof_or_none(dof):
    if dof is None or np.isinf(dof):
        return None
    if dof < 1:
        raise DomainError("degrees of freedom must be >= 1")
    return float(dof)


def mvn_rect_prob(V, lower, upper, qmc: QmcConfig | None = None):
    """Gaussian rectangle probability ``P(lower <= X <= upper)``, X ~ N(0, V).

    Returns ``(probability, standard_error)``.
    """
    return mvt_rect_prob(V, lower, upper, None, qmc)


def mvt_rect_prob(V, lower, upper, dof, qmc: QmcConfig | None = None):
    V = check_scale_matrix(V)
    corr, sd = correlation_from_scale(V)
    lower = np.broadcast_to(np.asarray(lower, dtype=np.float64), sd.shape) / sd
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), sd.shape) / sd
    return rect_prob(lower, upper, corr, _dof_or_none(dof), qmc or QmcConfig())


def _max_cdf_std(x, sd, corr, dof, qmc, points=None):
    """P(max_j X_j <= x) with X standardized by ``sd`` (no validation)."""
    b = x / sd
    p = sd.size
    if p == 1:
        return float(norm_cdf(b[0]) if dof is None else t_cdf(b[0], dof))
    if p == 2 and dof is None:
        return float(bvn_cdf(b[0], b[1], corr[0, 1]))
    if p == 2 and dof == int(dof) and dof <= MAX_EXACT_DOF:
        return float(bvt_cdf(b[0], b[1], corr[0, 1], int(dof)))
    est, _ = rect_prob(np.full(p, -np.inf), b, corr, dof, qmc, points)
    return est


def mvt_max_cdf(x: float, V, dof, qmc: QmcConfig | None = None) -> float:
    """``P(max_j X_j <= x)`` for X multivariate t with scale ``V`` and ``dof``.

    ``dof=None`` (or ``inf``) gives the Gaussian limit.  Exact formulas are
    used in one and two dimensions; randomized QMC otherwise.
    """
    V = check_scale_matrix(V)
    corr, sd = correlation_from_scale(V)
    return _max_cdf_std(float(x), sd, corr, _dof_or_none(dof), qmc or QmcConfig())


def mvt_max_quantile(p: float, V, dof, qmc: QmcConfig | None = None) -> float:
    """Inverse of :func:`mvt_max_cdf` in ``x``.

    The root is bracketed by the marginal bound and the union bound; the QMC
    point set is frozen across evaluations so the objective is deterministic.
    """
    if not 0 < p < 1:
        raise DomainError("probability must lie in (0, 1)")
    qmc = qmc or QmcConfig()
    V = check_scale_matrix(V)
    corr, sd = correlation_from_scale(V)
    dof = _dof_or_none(dof)
    dim = sd.size
    quant = norm_quantile if dof is None else (lambda q: t_quantile(q, dof))
    lo = float(np.max(sd) * quant(p))
    if dim == 1:
        return lo
    hi = float(np.max(sd) * quant(1.0 - (1.0 - p) / dim))
    points = None
    if not (dim == 2 and (dof is None or (dof == int(dof) and dof <= MAX_EXACT_DOF))):
        points = qmc_points((dim - 1) + (dof is not None), qmc)

    def objective(x):
        return _max_cdf_std(x, sd, corr, dof, qmc, points) - p

    tol = (1.0 - p) / 50.0
    f_lo, f_hi = objective(lo), objective(hi)
    if f_lo >= 0:
        if f_lo > tol:
            raise BracketFailure(f"max cdf at marginal bound exceeds target by {f_lo:.3g}")
        return lo
    if f_hi <= 0:
        if f_hi < -tol:
            raise BracketFailure(f"max cdf at union bound falls short of target by {-f_hi:.3g}")
        return hi
    return float(optimize.brentq(objective, lo, hi, xtol=1e-12, rtol=1e-13, maxiter=200))


def max_quantiles_bivariate(p: float, corr, scale, dof) -> np.ndarray:
    """Vectorized quantiles of the maximum of a bivariate t (or normal) vector.

    ``corr`` holds the correlations and ``scale`` (shape ``(n, 2)``) the
    marginal scales; bisection on the exact distribution function.
    """
    if not 0 < p < 1:
        raise DomainError("probability must lie in (0, 1)")
    dof = _dof_or_none(dof)
    corr = np.asarray(corr, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64).reshape(corr.shape + (2,))
    if dof is not None and (dof != int(dof) or dof > MAX_EXACT_DOF):
        raise InputError("exact bivariate route needs integer dof <= MAX_EXACT_DOF")
    quant = norm_quantile if dof is None else (lambda q: t_quantile(q, dof))
    smax = scale.max(axis=-1)
    lo = smax * quant(p)
    hi = smax * quant(1.0 - (1.0 - p) / 2.0)

    def cdf(x):
        h, k = x / scale[..., 0], x / scale[..., 1]
        return bvn_cdf(h, k, corr) if dof is None else bvt_cdf(h, k, corr, int(dof))

    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-12 * np.maximum(1.0, np.abs(hi))):
            break
    return 0.5 * (lo + hi)
