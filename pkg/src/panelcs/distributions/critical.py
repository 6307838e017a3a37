"""Bonferroni-corrected critical values for the SNS, MAX and QLR procedures."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import InputError
from .bivariate import MAX_EXACT_DOF
from .chibar import fqlr_quantiles_from_weights, kudo_weights, kudo_weights_bivariate
from .maxdist import max_quantiles_bivariate, mvt_max_quantile
from .qmc import QmcConfig, check_scale_matrix
from .scalar import norm_quantile, t_quantile

__all__ = [
    "Method",
    "Regime",
    "CriticalValueRequest",
    "critical_value",
    "critical_values",
]


class Method(str, Enum):
    SNS = "sns"
    MAX = "max"
    QLR = "qlr"


class Regime(str, Enum):
    FINITE_T = "finite_t"
    GAUSSIAN_LIMIT = "gaussian_limit"


@dataclass(frozen=True)
class CriticalValueRequest:
    method: Method
    alpha: float
    n_eff: int
    n_groups: int
    dof: int
    omega: np.ndarray | None = None
    regime: Regime = Regime.FINITE_T

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "regime", Regime(self.regime))
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if self.n_eff < 1 or self.alpha / self.n_eff >= 1:
            raise InputError("n_eff must be >= 1")
        if self.n_groups < 2 or self.dof < 1:
            raise InputError("need G >= 2 and dof >= 1")
        if (self.omega is None) != (self.method is Method.SNS):
            raise InputError("omega is required for MAX/QLR and not used by SNS")


def critical_value(req: CriticalValueRequest, qmc: QmcConfig | None = None) -> float:
    omegas = None if req.omega is None else np.asarray(req.omega, dtype=np.float64)[None]
    out = critical_values(
        req.method, req.alpha, req.n_eff, req.n_groups, req.dof, omegas, req.regime, qmc
    )
    return float(out[0])


def _scale(dof: int, regime: Regime) -> float:
    # D-hat is sqrt(T/(T-1)) times a t statistic; the factor tends to one in the limit
    return 1.0 if regime is Regime.GAUSSIAN_LIMIT else float(np.sqrt((dof + 1) / dof))


def critical_values(
    method,
    alpha: float,
    n_eff: int,
    n_groups: int,
    dof: int,
    omegas=None,
    regime=Regime.FINITE_T,
    qmc: QmcConfig | None = None,
    cache: dict | None = None,
) -> np.ndarray:
    """Critical values for a batch of correlation matrices ``omegas`` (``(B, p, p)``).

    ``n_eff = 0`` means no unit is tested jointly and yields ``-inf``
    (everything but the estimated group is rejected).  ``cache`` memoizes
    per-matrix results across calls, keyed on exact bit patterns.
    """
    method, regime = Method(method), Regime(regime)
    qmc = qmc or QmcConfig()
    p_dim = n_groups - 1
    batch = 1 if omegas is None else len(omegas)
    if n_eff == 0:
        return np.full(batch, -np.inf)
    level = alpha / n_eff
    if not 0 < level < 1:
        raise InputError("alpha / n_eff must lie in (0, 1)")
    limit = regime is Regime.GAUSSIAN_LIMIT
    scale = _scale(dof, regime)
    if method is Method.SNS:
        q = 1.0 - level / p_dim
        val = scale * float(norm_quantile(q) if limit else t_quantile(q, dof))
        return np.full(batch, val)
    if omegas is None:
        raise InputError("omega is required for MAX/QLR")
    omegas = np.asarray(omegas, dtype=np.float64)
    if omegas.shape[1:] != (p_dim, p_dim):
        raise InputError(f"omega must be {p_dim}x{p_dim}")

    out = np.empty(batch)
    todo = []
    keys = []
    for b in range(batch):
        key = (method, level, n_groups, dof, regime, omegas[b].tobytes())
        keys.append(key)
        if cache is not None and key in cache:
            out[b] = cache[key]
        else:
            todo.append(b)
    if todo:
        idx = np.asarray(todo)
        out[idx] = _compute(method, 1.0 - level, omegas[idx], dof, limit, scale, qmc)
        if cache is not None:
            for b in todo:
                cache[keys[b]] = out[b]
    return out


def _compute(method, prob, omegas, dof, limit, scale, qmc):
    p_dim = omegas.shape[1]
    mdof = None if limit else dof
    if method is Method.MAX:
        if p_dim == 1:
            sd = np.sqrt(omegas[:, 0, 0])
            return scale * sd * float(norm_quantile(prob) if limit else t_quantile(prob, dof))
        if p_dim == 2 and (limit or dof <= MAX_EXACT_DOF):
            sd = np.sqrt(np.stack([omegas[:, 0, 0], omegas[:, 1, 1]], axis=-1))
            rho = omegas[:, 0, 1] / (sd[:, 0] * sd[:, 1])
            return scale * max_quantiles_bivariate(prob, rho, sd, mdof)
        return scale * np.array([mvt_max_quantile(prob, om, mdof, qmc) for om in omegas])
    # QLR
    if p_dim == 1:
        w = np.tile([0.5, 0.5], (len(omegas), 1))
    elif p_dim == 2:
        rho = omegas[:, 0, 1] / np.sqrt(omegas[:, 0, 0] * omegas[:, 1, 1])
        w = kudo_weights_bivariate(rho)
    else:
        w = np.array([kudo_weights(check_scale_matrix(om), qmc) for om in omegas])
    return fqlr_quantiles_from_weights(prob, w, mdof)
