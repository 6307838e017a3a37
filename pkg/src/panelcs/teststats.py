"""MAX and QLR test statistics.

The QLR statistic is the squared ``Omega^{-1}``-distance from ``D`` to the
nonpositive orthant.  It is computed exactly by enumerating which
coordinates of the minimizer sit on the boundary ``t_j = 0``: for a boundary
set ``S`` the value is ``D_S' Omega_SS^{-1} D_S`` and the candidate is kept
when it is primal and dual feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .distributions.critical import Method
from .errors import SingularOmega
from .moments import MomentBlock

__all__ = [
    "ProjectionResult",
    "max_statistic",
    "qlr_statistic",
    "qlr_values",
    "statistic",
]

_FEAS_TOL = 1e-10


@dataclass(frozen=True)
class ProjectionResult:
    value: float
    minimizer: np.ndarray
    active_set: tuple[int, ...]


def max_statistic(block: MomentBlock) -> float:
    return float(np.max(block.D_hat))


def _check_omega(omega):
    try:
        chol = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise SingularOmega("Omega is not positive definite") from exc
    if np.min(np.diagonal(chol, axis1=-2, axis2=-1)) < 1e-12:
        raise SingularOmega("Omega is numerically singular")


def _subsets(p):
    for size in range(p + 1):
        yield from combinations(range(p), size)


def _project(D, omega):
    """Batched projection; returns (value, minimizer, boundary mask)."""
    D = np.asarray(D, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    _check_omega(omega)
    p = D.shape[-1]
    batch = D.shape[:-1]
    best = np.full(batch, np.inf)
    best_t = np.zeros(batch + (p,))
    best_mask = np.zeros(batch + (p,), dtype=bool)
    fallback = np.full(batch, np.inf)
    fallback_t = np.zeros(batch + (p,))
    fallback_mask = np.zeros(batch + (p,), dtype=bool)
    scale = 1.0 + np.max(np.abs(D), axis=-1)
    for S in _subsets(p):
        S = list(S)
        F = [j for j in range(p) if j not in S]
        z = np.zeros(batch + (p,))
        if S:
            om_ss = omega[..., S, :][..., :, S]
            lam = np.linalg.solve(om_ss, D[..., S][..., None])[..., 0]
            val = np.einsum("...j,...j->...", D[..., S], lam)
            z[..., S] = D[..., S]
            if F:
                z[..., F] = np.einsum("...fs,...s->...f", omega[..., F, :][..., :, S], lam)
            dual_ok = np.all(lam >= -_FEAS_TOL * scale[..., None], axis=-1)
        else:
            val = np.zeros(batch)
            dual_ok = np.ones(batch, dtype=bool)
        t = D - z
        primal_ok = np.all(t <= _FEAS_TOL * scale[..., None], axis=-1)
        mask = np.zeros(p, dtype=bool)
        mask[S] = True
        # strict improvement keeps ties on the smaller boundary set
        take = primal_ok & dual_ok & (val < best - 1e-14 * scale)
        best = np.where(take, val, best)
        best_t = np.where(take[..., None], t, best_t)
        best_mask = np.where(take[..., None], mask, best_mask)
        take_fb = primal_ok & (val < fallback - 1e-14 * scale)
        fallback = np.where(take_fb, val, fallback)
        fallback_t = np.where(take_fb[..., None], t, fallback_t)
        fallback_mask = np.where(take_fb[..., None], mask, fallback_mask)
    miss = ~np.isfinite(best)
    best = np.where(miss, fallback, best)
    best_t = np.where(miss[..., None], fallback_t, best_t)
    best_mask = np.where(miss[..., None], fallback_mask, best_mask)
    best_t = np.minimum(best_t, 0.0)
    best_t = np.where(best_mask, 0.0, best_t)
    return np.maximum(best, 0.0), best_t, best_mask


def qlr_values(D, omega) -> np.ndarray:
    """QLR statistics for stacked ``D`` (``(..., p)``) and ``omega`` (``(..., p, p)``)."""
    return _project(D, omega)[0]


def qlr_statistic(block: MomentBlock) -> ProjectionResult:
    value, t, mask = _project(block.D_hat[None], block.omega[None])
    return ProjectionResult(
        value=float(value[0]),
        minimizer=t[0],
        active_set=tuple(int(j) for j in np.flatnonzero(mask[0])),
    )


def statistic(method, block: MomentBlock) -> float:
    method = Method(method)
    if method is Method.QLR:
        return qlr_statistic(block).value
    return max_statistic(block)
