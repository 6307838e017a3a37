"""Recentered moment inequalities for group membership.

For unit ``i``, hypothesized group ``g`` and alternative ``h`` the recentered
difference of squared residuals is

    d_it(g, h) = ((y - x'b_g)^2 - (y - x'b_h)^2 + (x'(b_g - b_h))^2) / 2,

which has mean zero when ``g`` is the true group.  Studentizing its time sum
gives ``D_i(g, h)``; the correlations across ``h`` give ``Omega_i(g)``.
Group arguments of the public functions are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GroupModel, PanelDataset, validate_model
from .errors import DegenerateMoment, InputError

__all__ = [
    "DEFAULT_EPSILON",
    "MomentBlock",
    "UnadjustedBlock",
    "PanelMoments",
    "moment_block",
    "unadjusted_block",
    "fe_transform",
    "fe_jackknife_block",
    "half_indicator",
    "panel_moments",
    "regularize",
]

DEFAULT_EPSILON = 0.012
MAX_ALTERNATIVES = 16
_DEGENERACY = 1e-12


@dataclass(frozen=True)
class MomentBlock:
    unit: int
    hypothesis: int
    alt_groups: tuple[int, ...]
    d_hat: np.ndarray
    d_bar: np.ndarray
    s_hat: np.ndarray
    D_hat: np.ndarray
    omega_star: np.ndarray
    omega: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class UnadjustedBlock:
    unit: int
    hypothesis: int
    alt_groups: tuple[int, ...]
    D_hat_u: np.ndarray


@dataclass(frozen=True)
class PanelMoments:
    """Studentized moments for every unit and hypothesized group.

    Arrays are indexed ``[i, g, j]`` with ``g`` 0-based and ``j`` running over
    the alternatives ``h != g`` in increasing order.
    """

    D: np.ndarray
    omega: np.ndarray
    omega_star: np.ndarray
    D_u: np.ndarray
    n_periods: int
    epsilon: float

    @property
    def n_units(self) -> int:
        return self.D.shape[0]

    @property
    def n_groups(self) -> int:
        return self.D.shape[1]


def _alternatives(n_groups: int) -> np.ndarray:
    return np.array([[h for h in range(n_groups) if h != g] for g in range(n_groups)], dtype=int)


def _residuals(y, x, beta):
    # r[i, g, t] = y[i, t] - x[i, t]' beta[g, t]
    return y[:, None, :] - np.einsum("itk,gtk->igt", x, beta)


def _pair_index(n_groups):
    alts = _alternatives(n_groups)
    g_idx = np.repeat(np.arange(n_groups)[:, None], n_groups - 1, axis=1)
    return g_idx, alts


def _recentered(y, x, beta, y_center=None, x_center=None):
    """d-hat array of shape (N, G, G-1, T), optionally after subtracting centers."""
    if y_center is not None:
        y = y - y_center
        x = x - x_center
    r = _residuals(y, x, beta)
    g_idx, alts = _pair_index(beta.shape[0])
    fit = np.einsum("itk,gtk->igt", x, beta)
    q = fit[:, g_idx, :] - fit[:, alts, :]
    r2 = r * r
    return 0.5 * (r2[:, g_idx, :] - r2[:, alts, :] + q * q)


def _unadjusted(y, x, beta):
    r2 = _residuals(y, x, beta) ** 2
    g_idx, alts = _pair_index(beta.shape[0])
    return r2[:, g_idx, :] - r2[:, alts, :]


def _studentize(d, numerator=None):
    """Return (D, s_hat, centered) for series along the last axis."""
    n_t = d.shape[-1]
    d_bar = d.mean(axis=-1, keepdims=True)
    c = d - d_bar
    s = np.sqrt(np.sum(c * c, axis=-1))
    scale = n_t * np.max(np.abs(d), axis=-1)
    bad = s <= _DEGENERACY * scale
    if np.any(bad):
        where = np.argwhere(bad)[0]
        raise DegenerateMoment(
            f"moment series with (near) zero variance at index {tuple(int(v) for v in where)}"
        )
    num = d.sum(axis=-1) if numerator is None else numerator
    return num / s, s, c


def regularize(omega_star, epsilon):
    """Add ``max(epsilon - det, 0)`` to the diagonal (batched over leading axes)."""
    p = omega_star.shape[-1]
    det = np.linalg.det(omega_star)
    bump = np.maximum(epsilon - det, 0.0)
    return omega_star + bump[..., None, None] * np.eye(p)


def _correlation(c, s):
    cross = np.einsum("...ht,...jt->...hj", c, c)
    om = cross / (s[..., :, None] * s[..., None, :])
    p = om.shape[-1]
    idx = np.arange(p)
    om[..., idx, idx] = 1.0
    return np.clip(om, -1.0, 1.0)


def _check(panel, model, epsilon):
    validate_model(panel, model)
    if epsilon < 0:
        raise InputError("epsilon must be >= 0")
    if model.n_groups - 1 > MAX_ALTERNATIVES:
        raise InputError(f"at most {MAX_ALTERNATIVES + 1} groups are supported")


def _check_group(model, g):
    if not 1 <= g <= model.n_groups:
        raise InputError(f"group must lie in 1..{model.n_groups}")


def _block(panel, model, d, i, g, epsilon, numerator=None) -> MomentBlock:
    D, s, c = _studentize(d, numerator)
    om_star = _correlation(c, s)
    alts = tuple(int(h) + 1 for h in _alternatives(model.n_groups)[g - 1])
    return MomentBlock(
        unit=i,
        hypothesis=g,
        alt_groups=alts,
        d_hat=d,
        d_bar=d.mean(axis=-1),
        s_hat=s,
        D_hat=D,
        omega_star=om_star,
        omega=regularize(om_star, epsilon),
        epsilon=epsilon,
    )


def moment_block(
    panel: PanelDataset, model: GroupModel, i: int, g: int, epsilon: float = DEFAULT_EPSILON
) -> MomentBlock:
    """Studentized moments for unit ``i`` (0-based) under ``H0: g_i = g`` (1-based)."""
    _check(panel, model, epsilon)
    _check_group(model, g)
    y = panel.outcomes[i : i + 1]
    x = panel.covariates[i : i + 1]
    d = _recentered(y, x, model.coefficients)[0, g - 1]
    return _block(panel, model, d, i, g, epsilon)


def unadjusted_block(panel: PanelDataset, model: GroupModel, i: int, g: int) -> UnadjustedBlock:
    """Studentized differences of squared residuals without recentering."""
    _check(panel, model, 0.0)
    _check_group(model, g)
    d = _unadjusted(panel.outcomes[i : i + 1], panel.covariates[i : i + 1], model.coefficients)
    D, _, _ = _studentize(d[0, g - 1])
    alts = tuple(int(h) + 1 for h in _alternatives(model.n_groups)[g - 1])
    return UnadjustedBlock(unit=i, hypothesis=g, alt_groups=alts, D_hat_u=D)


def fe_transform(panel: PanelDataset) -> PanelDataset:
    """Subtract each unit's time mean from outcomes and covariates."""
    y = panel.outcomes - panel.outcomes.mean(axis=1, keepdims=True)
    x = panel.covariates - panel.covariates.mean(axis=1, keepdims=True)
    return panel.with_data(y, x)


def half_indicator(n_periods: int, t0: int) -> np.ndarray:
    """Half-panel membership (1 or 2) of periods ``1..T`` for a split after ``t0``."""
    return np.where(np.arange(1, n_periods + 1) <= t0, 1, 2)


def _half_means(a, t0):
    # per-period mean over the half that contains the period; a has time on axis 1
    n_t = a.shape[1]
    half = half_indicator(n_t, t0)
    first = a[:, half == 1].mean(axis=1, keepdims=True)
    second = a[:, half == 2].mean(axis=1, keepdims=True)
    shape = [1, n_t] + [1] * (a.ndim - 2)
    mask = (half == 1).reshape(shape)
    return np.where(mask, first, second)


def _jackknife_parts(y, x, beta):
    """Full-sample FE moments and the half-panel average, both (N, G, G-1, T)."""
    n_t = y.shape[1]
    ym = y.mean(axis=1, keepdims=True)
    xm = x.mean(axis=1, keepdims=True)
    d_fe = _recentered(y, x, beta, ym, xm)
    halves = []
    for t0 in (n_t // 2, (n_t + 1) // 2):
        halves.append(_recentered(y, x, beta, _half_means(y, t0), _half_means(x, t0)))
    return d_fe, 0.5 * (halves[0] + halves[1])


def fe_jackknife_block(
    panel: PanelDataset, model: GroupModel, i: int, g: int, epsilon: float = DEFAULT_EPSILON
) -> MomentBlock:
    """Half-panel jackknife version of the fixed-effects moments.

    ``panel`` is the untransformed panel.  The numerator is
    ``2 * sum_t d_FE - sum_t d_half`` and the studentization uses the
    full-sample fixed-effects series.
    """
    _check(panel, model, epsilon)
    _check_group(model, g)
    if panel.n_periods < 4:
        raise InputError("the half-panel jackknife needs T >= 4")
    d_fe, d_half = _jackknife_parts(
        panel.outcomes[i : i + 1], panel.covariates[i : i + 1], model.coefficients
    )
    d = d_fe[0, g - 1]
    num = 2.0 * d.sum(axis=-1) - d_half[0, g - 1].sum(axis=-1)
    return _block(panel, model, d, i, g, epsilon, numerator=num)


def panel_moments(
    panel: PanelDataset,
    model: GroupModel,
    epsilon: float = DEFAULT_EPSILON,
    *,
    fixed_effects: bool = False,
    jackknife: bool = False,
) -> PanelMoments:
    """Moments for all units and hypotheses at once.

    With ``fixed_effects`` the within transformation is applied first; with
    ``jackknife`` (implies fixed effects) the half-panel corrected numerator
    replaces the plain one.
    """
    _check(panel, model, epsilon)
    y, x, beta = panel.outcomes, panel.covariates, model.coefficients
    if jackknife:
        if panel.n_periods < 4:
            raise InputError("the half-panel jackknife needs T >= 4")
        d, d_half = _jackknife_parts(y, x, beta)
        num = 2.0 * d.sum(axis=-1) - d_half.sum(axis=-1)
    else:
        if fixed_effects:
            y = y - y.mean(axis=1, keepdims=True)
            x = x - x.mean(axis=1, keepdims=True)
        d = _recentered(y, x, beta)
        num = None
    D, s, c = _studentize(d, num)
    om_star = _correlation(c, s)
    if jackknife or fixed_effects:
        y = y - y.mean(axis=1, keepdims=True)
        x = x - x.mean(axis=1, keepdims=True)
    D_u, _, _ = _studentize(_unadjusted(y, x, beta))
    return PanelMoments(
        D=D,
        omega=regularize(om_star, epsilon),
        omega_star=om_star,
        D_u=D_u,
        n_periods=panel.n_periods,
        epsilon=epsilon,
    )
