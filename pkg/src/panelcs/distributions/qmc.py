"""Randomized quasi-Monte Carlo for normal and t rectangle probabilities.

Separation-of-variables (Genz) integrand with variable reordering by
increasing expected truncation, evaluated on independently scrambled Sobol
point sets.  The spread across scrambles gives the standard error.  For the
t case the first coordinate drives the chi mixing variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.stats import qmc as _scipy_qmc

from ..errors import CholeskyFailure, InputError

__all__ = ["QmcConfig", "check_scale_matrix", "rect_prob", "qmc_points", "correlation_from_scale"]

_PSD_TOL = 1e-10


@dataclass(frozen=True)
class QmcConfig:
    """Point budget and seed for randomized QMC.

    ``n_points`` is rounded up to the next power of two (Sobol balance).
    """

    n_points: int = 4096
    n_randomizations: int = 12
    seed: int = 20240101

    def __post_init__(self):
        if self.n_points < 64:
            raise InputError("n_points must be >= 64")
        if self.n_randomizations < 3:
            raise InputError("n_randomizations must be >= 3")


def check_scale_matrix(v, name: str = "V") -> np.ndarray:
    """Validate a symmetric positive semi-definite matrix and return it as float array."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise InputError(f"{name} must be square")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} has non-finite entries")
    if np.max(np.abs(v - v.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(v))):
        raise InputError(f"{name} is not symmetric")
    if np.min(np.linalg.eigvalsh(v)) < -_PSD_TOL * max(1.0, np.max(np.abs(np.diag(v)))):
        raise CholeskyFailure(f"{name} is not positive semi-definite")
    if np.any(np.diag(v) <= 0):
        raise CholeskyFailure(f"{name} has a non-positive diagonal entry")
    return v


def correlation_from_scale(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sd = np.sqrt(np.diag(v))
    corr = v / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return corr, sd


@lru_cache(maxsize=64)
def _points_cached(dim: int, m: int, reps: int, seed: int) -> np.ndarray:
    children = np.random.SeedSequence(seed).spawn(reps)
    pts = np.empty((reps, 2**m, dim))
    for r, child in enumerate(children):
        eng = _scipy_qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(child))
        pts[r] = eng.random_base2(m)
    pts.flags.writeable = False
    return pts


def qmc_points(dim: int, qmc: QmcConfig) -> np.ndarray:
    """Scrambled Sobol points, shape ``(n_randomizations, n, dim)``; frozen per config."""
    m = int(np.ceil(np.log2(qmc.n_points)))
    return _points_cached(int(dim), m, int(qmc.n_randomizations), int(qmc.seed))


def _reorder_cholesky(lower, upper, corr):
    """Genz-Bretz ordering and Cholesky factor of the permuted correlation."""
    p = corr.shape[0]
    a, b = lower.copy(), upper.copy()
    c = corr.copy()
    perm = np.arange(p)
    L = np.zeros((p, p))
    y = np.zeros(p)
    for i in range(p):
        best, best_j = np.inf, i
        for j in range(i, p):
            var = c[j, j] - L[j, :i] @ L[j, :i]
            sd = np.sqrt(max(var, 0.0))
            if sd <= np.sqrt(_PSD_TOL):
                mass = 1.0
            else:
                shift = L[j, :i] @ y[:i]
                mass = special.ndtr((b[j] - shift) / sd) - special.ndtr((a[j] - shift) / sd)
            if mass < best:
                best, best_j = mass, j
        if best_j != i:
            for arr in (a, b, perm):
                arr[[i, best_j]] = arr[[best_j, i]]
            c[[i, best_j], :] = c[[best_j, i], :]
            c[:, [i, best_j]] = c[:, [best_j, i]]
            L[[i, best_j], :i] = L[[best_j, i], :i]
        var = c[i, i] - L[i, :i] @ L[i, :i]
        if var < -_PSD_TOL:
            raise CholeskyFailure("matrix is not positive semi-definite")
        L[i, i] = np.sqrt(max(var, 0.0))
        for j in range(i + 1, p):
            if L[i, i] > np.sqrt(_PSD_TOL):
                L[j, i] = (c[j, i] - L[j, :i] @ L[i, :i]) / L[i, i]
        # expected value of the truncated variable drives the next choice
        shift = L[i, :i] @ y[:i]
        if L[i, i] > np.sqrt(_PSD_TOL):
            lo = (a[i] - shift) / L[i, i]
            hi = (b[i] - shift) / L[i, i]
            mass = special.ndtr(hi) - special.ndtr(lo)
            dens = _npdf(lo) - _npdf(hi)
            y[i] = dens / mass if mass > 1e-300 else (lo if np.isfinite(lo) else hi)
        else:
            y[i] = 0.0
    return a, b, L


def _npdf(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(np.isfinite(z), np.exp(-0.5 * np.where(np.isfinite(z), z, 0.0) ** 2), 0.0) / np.sqrt(
        2 * np.pi
    )


def _genz_integrand(a, b, L, dof, u):
    """Integrand values at uniform points ``u`` (shape ``(..., d)``)."""
    p = L.shape[0]
    shape = u.shape[:-1]
    col = 0
    if dof is not None:
        s = np.sqrt(2.0 * special.gammaincinv(dof / 2.0, u[..., 0]) / dof)
        col = 1
    else:
        s = np.ones(shape)
    f = np.ones(shape)
    z = np.zeros(shape + (p,))
    for i in range(p):
        shift = z[..., :i] @ L[i, :i] if i else 0.0
        if L[i, i] > np.sqrt(_PSD_TOL):
            with np.errstate(invalid="ignore"):
                lo = np.where(np.isneginf(a[i]), -np.inf, (a[i] * s - shift) / L[i, i])
                hi = np.where(np.isposinf(b[i]), np.inf, (b[i] * s - shift) / L[i, i])
            plo, phi = special.ndtr(lo), special.ndtr(hi)
            mass = np.clip(phi - plo, 0.0, 1.0)
            f = f * mass
            if i < p - 1:
                q = np.clip(plo + u[..., col] * mass, 1e-300, 1.0 - 1e-16)
                z[..., i] = special.ndtri(q)
                col += 1
        else:
            ok = (a[i] * s <= shift + 1e-12) & (shift - 1e-12 <= b[i] * s)
            f = f * ok
            if i < p - 1:
                col += 1
    return f


def rect_prob(lower, upper, corr, dof=None, qmc: QmcConfig | None = None, points=None):
    """Estimate ``P(lower <= X <= upper)`` for X normal (``dof=None``) or t.

    ``corr`` must be a correlation matrix.  Returns ``(estimate, std_error)``.
    """
    qmc = qmc or QmcConfig()
    lower = np.asarray(lower, dtype=np.float64).copy()
    upper = np.asarray(upper, dtype=np.float64).copy()
    p = corr.shape[0]
    if np.any(lower >= upper):
        return 0.0, 0.0
    a, b, L = _reorder_cholesky(lower, upper, corr)
    dim = (p - 1) + (dof is not None)
    if dim == 0:
        return float(special.ndtr(b[0]) - special.ndtr(a[0])), 0.0
    if points is None:
        points = qmc_points(dim, qmc)
    vals = _genz_integrand(a, b, L, dof, points).mean(axis=1)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(vals.size))
    return est, se
