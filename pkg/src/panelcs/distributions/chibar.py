"""Orthant probabilities, Kudo weights and the QLR null distribution.

``w[j] = w(p, j, V)`` is the probability that the projection of a N(0, V)
vector onto the nonpositive orthant (in the ``V^{-1}`` metric) lies on a face
of dimension ``j``; ``w[p]`` is the atom at zero of the QLR statistic.
"""

from __future__ import annotations

from dataclasses import replace
from itertools import combinations

import numpy as np
from scipy import optimize

from ..errors import BelowPointMass, BracketFailure, CholeskyFailure, DomainError, SingularMatrix
from .qmc import QmcConfig, check_scale_matrix, correlation_from_scale, rect_prob
from .scalar import chi2_tail, f_tail

__all__ = [
    "orthant_prob",
    "kudo_weights",
    "kudo_weights_bivariate",
    "fqlr_cdf",
    "fqlr_quantile",
    "fqlr_cdf_from_weights",
    "fqlr_quantiles_from_weights",
]

KUDO_MIN_POINTS = 65536


def _orthant_corr(corr: np.ndarray, qmc: QmcConfig) -> float:
    p = corr.shape[0]
    if p == 1:
        return 0.5
    if p == 2:
        return 0.25 + np.arcsin(np.clip(corr[0, 1], -1, 1)) / (2 * np.pi)
    if p == 3:
        s = np.arcsin(np.clip([corr[0, 1], corr[0, 2], corr[1, 2]], -1, 1)).sum()
        return 0.125 + s / (4 * np.pi)
    est, _ = rect_prob(np.full(p, -np.inf), np.zeros(p), corr, None, qmc)
    return est


def orthant_prob(V, qmc: QmcConfig | None = None) -> float:
    """``P(Y <= 0)`` for Y ~ N(0, V); closed form up to three dimensions."""
    V = check_scale_matrix(V)
    corr, _ = correlation_from_scale(V)
    return float(_orthant_corr(corr, qmc or QmcConfig()))


def _inverse(a: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("matrix is not positive definite") from exc
    if np.min(np.diag(c)) < 1e-12 * np.sqrt(np.max(np.diag(a))):
        raise SingularMatrix("matrix is numerically singular")
    ci = np.linalg.inv(c)
    out = ci.T @ ci
    return 0.5 * (out + out.T)


def kudo_weights(V, qmc: QmcConfig | None = None) -> np.ndarray:
    """Weights ``w(p, j, V)`` for ``j = 0..p`` by subset enumeration.

    ``w(p, p - |M|, V)`` sums, over subsets M of size |M|, the product of the
    orthant probability of ``N(0, (V_MM)^{-1})`` and that of
    ``N(0, ((V^{-1})_{M'M'})^{-1})`` with M' the complement of M.  Orthant
    integrals use at least ``KUDO_MIN_POINTS`` QMC points, since their errors
    add up over the ``2^p`` subsets.
    """
    qmc = qmc or QmcConfig()
    qmc = replace(qmc, n_points=max(qmc.n_points, KUDO_MIN_POINTS))
    try:
        V = check_scale_matrix(V)
    except CholeskyFailure as exc:
        raise SingularMatrix(str(exc)) from exc
    p = V.shape[0]
    Vinv = _inverse(V)
    w = np.zeros(p + 1)
    full = tuple(range(p))
    for size in range(p + 1):
        total = 0.0
        for M in combinations(full, size):
            Mc = [j for j in full if j not in M]
            p1 = 1.0
            if M:
                inv_sub = _inverse(V[np.ix_(M, M)])
                p1 = _orthant_corr(correlation_from_scale(inv_sub)[0], qmc)
            p2 = 1.0
            if Mc:
                cond = _inverse(Vinv[np.ix_(Mc, Mc)])
                p2 = _orthant_corr(correlation_from_scale(cond)[0], qmc)
            total += p1 * p2
        w[p - size] = total
    return w


def kudo_weights_bivariate(rho) -> np.ndarray:
    """Closed-form weights for ``p = 2``, vectorized over correlations; shape ``(..., 3)``."""
    rho = np.asarray(rho, dtype=np.float64)
    a = np.arcsin(np.clip(rho, -1, 1)) / (2 * np.pi)
    return np.stack([0.25 - a, np.full_like(rho, 0.5), 0.25 + a], axis=-1)


def _tails(t, j, dof):
    t = np.maximum(np.asarray(t, dtype=np.float64), 0.0)
    if dof is None:
        return chi2_tail(t, j)
    return f_tail(t / j, j, dof)


def fqlr_cdf_from_weights(t, w, dof):
    """QLR distribution function from precomputed weights (``w[..., j]``, j = 0..p).

    ``dof=None`` gives the Gaussian limit, a chi-bar-squared type mixture.
    """
    w = np.asarray(w, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    p = w.shape[-1] - 1
    out = np.ones(np.broadcast_shapes(t.shape, w.shape[:-1]))
    for j in range(1, p + 1):
        out = out - w[..., p - j] * _tails(t, j, dof)
    out = np.where(t < 0, 0.0, np.clip(out, 0.0, 1.0))
    return out[()] if out.ndim == 0 else out


def _check_dof(dof):
    if dof is None or np.isinf(dof):
        return None
    if dof < 1:
        raise DomainError("degrees of freedom must be >= 1")
    return float(dof)


def fqlr_cdf(t: float, V, dof, qmc: QmcConfig | None = None) -> float:
    """Distribution function of the finite-sample QLR null distribution."""
    if t < 0:
        raise DomainError("QLR distribution is supported on t >= 0")
    w = kudo_weights(V, qmc)
    return float(fqlr_cdf_from_weights(t, w, _check_dof(dof)))


def fqlr_quantile(p: float, V, dof, qmc: QmcConfig | None = None) -> float:
    """Inverse of :func:`fqlr_cdf`; ``p`` must exceed the atom at zero."""
    if not 0 < p < 1:
        raise DomainError("probability must lie in (0, 1)")
    w = kudo_weights(V, qmc)
    return float(fqlr_quantiles_from_weights(p, w[None, :], _check_dof(dof))[0])


def fqlr_quantiles_from_weights(p: float, w, dof) -> np.ndarray:
    """Quantiles for a batch of weight vectors ``w`` of shape ``(n, p + 1)``."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if np.any(p <= w[:, -1]):
        raise BelowPointMass(
            f"level {p} is at or below the point mass {w[:, -1].max():.4g} at zero"
        )
    out = np.empty(w.shape[0])
    for n, wn in enumerate(w):
        def objective(x, wn=wn):
            return float(fqlr_cdf_from_weights(x, wn, dof)) - p

        hi = 1.0
        while objective(hi) < 0:
            hi *= 2.0
            if hi > 1e12:
                raise BracketFailure("could not bracket the QLR quantile")
        lo = 0.0 if hi == 1.0 else hi / 2.0
        out[n] = optimize.brentq(objective, lo, hi, xtol=1e-13, rtol=4e-15, maxiter=500)
    return out

