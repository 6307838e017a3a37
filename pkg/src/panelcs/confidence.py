"""Unit-wise and joint confidence sets for group membership, with p-values.

Acceptance of ``H0: g_i = g`` is decided through the tail mass
``m_i(g)`` of the statistic under the procedure's reference distribution:

* SNS: ``(G - 1) * (1 - t_{T-1}(sqrt((T-1)/T) * T_i(g)))``
* MAX: ``1 - t_max(sqrt((T-1)/T) * T_i(g); Omega_i(g), T-1)``
* QLR: ``1 - F_QLR(T_i(g); Omega_i(g), T-1)``

With ``n`` units in the Bonferroni count, ``T_i(g) <= c`` holds exactly when
``n * m_i(g) >= level``, so the sets agree with the critical-value form while
needing a single distribution-function evaluation per hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GroupModel, PanelDataset
from .distributions.bivariate import MAX_EXACT_DOF, bvn_cdf, bvt_cdf
from .distributions.chibar import kudo_weights, kudo_weights_bivariate
from .distributions.critical import Method, Regime, critical_value, CriticalValueRequest
from .distributions.maxdist import mvt_max_cdf
from .distributions.qmc import QmcConfig
from .distributions.scalar import chi2_tail, f_tail, norm_cdf, t_cdf
from .errors import AssignmentViolation, InputError, InvalidBeta
from .moments import DEFAULT_EPSILON, PanelMoments, panel_moments
from .teststats import qlr_values

__all__ = [
    "UnitConfidenceSet",
    "JointConfidenceSet",
    "PValueReport",
    "AnalysisOptions",
    "unit_statistics",
    "rejection_mass",
    "unit_cs",
    "joint_cs",
    "unit_selection_cs",
    "pvalues",
    "jointly_significant",
    "selection_from_arrays",
    "check_assignment",
    "pvalues_from_mass",
]

_ASSIGNMENT_TOL = 1e-9


@dataclass(frozen=True)
class UnitConfidenceSet:
    unit: int
    groups: tuple[int, ...]
    method: Method
    alpha_level: float


@dataclass(frozen=True)
class JointConfidenceSet:
    per_unit: tuple[UnitConfidenceSet, ...]
    method: Method
    alpha: float
    beta: float
    n_selected: int
    iterations: tuple[tuple[int, int], ...] = ()

    def covers(self, assignment) -> bool:
        """Whether the configuration ``assignment`` (1-based labels) lies in the set."""
        assignment = np.asarray(assignment).ravel()
        if assignment.size != len(self.per_unit):
            raise InputError("assignment length differs from the number of units")
        return all(int(g) in cs.groups for g, cs in zip(assignment, self.per_unit))

    def cardinalities(self) -> np.ndarray:
        return np.array([len(cs.groups) for cs in self.per_unit])


@dataclass(frozen=True)
class PValueReport:
    ghat: np.ndarray
    unitwise_p: np.ndarray
    joint_p: np.ndarray
    method: Method
    n_selected: int


@dataclass(frozen=True)
class AnalysisOptions:
    """Settings shared by the confidence-set routines."""

    epsilon: float = DEFAULT_EPSILON
    fixed_effects: bool = False
    jackknife: bool = False
    regime: Regime = Regime.FINITE_T
    qmc: QmcConfig = field(default_factory=QmcConfig)

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))


# ---------------------------------------------------------------- array level


def unit_statistics(method, moments: PanelMoments) -> np.ndarray:
    """Test statistics ``T_i(g)`` as an ``(N, G)`` array."""
    method = Method(method)
    if method is Method.QLR:
        return qlr_values(moments.D, moments.omega)
    return moments.D.max(axis=-1)


def _max_tail(x, omegas, dof, qmc):
    # P(max_j X_j > x) with X ~ t(Omega, dof) (dof=None: Gaussian)
    p = omegas.shape[-1]
    sd = np.sqrt(np.diagonal(omegas, axis1=-2, axis2=-1))
    if p == 1:
        z = x / sd[..., 0]
        return norm_cdf(-z) if dof is None else t_cdf(-z, dof)
    if p == 2 and (dof is None or dof <= MAX_EXACT_DOF):
        rho = omegas[..., 0, 1] / (sd[..., 0] * sd[..., 1])
        h, k = x / sd[..., 0], x / sd[..., 1]
        cdf = bvn_cdf(h, k, rho) if dof is None else bvt_cdf(h, k, rho, int(dof))
        return 1.0 - cdf
    flat_x = np.ravel(x)
    flat_om = omegas.reshape(-1, p, p)
    out = np.array([1.0 - mvt_max_cdf(xi, om, dof, qmc) for xi, om in zip(flat_x, flat_om)])
    return out.reshape(np.shape(x))


def _qlr_tail(stat, omegas, dof, qmc):
    p = omegas.shape[-1]
    if p == 1:
        w = np.broadcast_to([0.5, 0.5], stat.shape + (2,))
    elif p == 2:
        sd = np.sqrt(omegas[..., 0, 0] * omegas[..., 1, 1])
        w = kudo_weights_bivariate(omegas[..., 0, 1] / sd)
    else:
        flat = omegas.reshape(-1, p, p)
        w = np.array([kudo_weights(om, qmc) for om in flat]).reshape(stat.shape + (p + 1,))
    t = np.maximum(stat, 0.0)
    out = np.zeros(stat.shape)
    for j in range(1, p + 1):
        tail = chi2_tail(t, j) if dof is None else f_tail(t / j, j, dof)
        out = out + w[..., p - j] * tail
    return out


def rejection_mass(method, stats, omegas, n_periods: int, regime=Regime.FINITE_T, qmc=None):
    """Tail mass ``m_i(g)`` of each statistic; see the module docstring."""
    method, regime = Method(method), Regime(regime)
    qmc = qmc or QmcConfig()
    stats = np.asarray(stats, dtype=np.float64)
    omegas = np.asarray(omegas, dtype=np.float64)
    p = omegas.shape[-1]
    limit = regime is Regime.GAUSSIAN_LIMIT
    dof = None if limit else n_periods - 1
    shrink = 1.0 if limit else np.sqrt((n_periods - 1) / n_periods)
    if method is Method.SNS:
        z = shrink * stats
        tail = norm_cdf(-z) if limit else t_cdf(-z, dof)
        return p * np.asarray(tail)
    if method is Method.MAX:
        return np.asarray(_max_tail(shrink * stats, omegas, dof, qmc))
    return _qlr_tail(stats, omegas, dof, qmc)


def _accept(mass, n_eff, level):
    return n_eff * mass >= level


def _ghat_mask(ghat, n_groups):
    return np.arange(1, n_groups + 1)[None, :] == np.asarray(ghat)[:, None]


def _sns_selection_threshold(beta, n_units, n_groups, n_periods, regime):
    if beta == 0:
        return np.inf
    req = CriticalValueRequest(Method.SNS, beta, n_units, n_groups, n_periods - 1, None, regime)
    return critical_value(req)


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")


def _check_beta(alpha, beta):
    if not 0 <= beta < alpha / 3:
        raise InvalidBeta(f"beta must satisfy 0 <= beta < alpha/3 (got beta={beta}, alpha={alpha})")


def check_assignment(moments: PanelMoments, ghat) -> None:
    """Raise AssignmentViolation unless ``D_u(ghat_i, h) <= 0`` for every unit and ``h``."""
    idx = np.asarray(ghat) - 1
    du = moments.D_u[np.arange(moments.n_units), idx]
    bad = np.flatnonzero(np.any(du > _ASSIGNMENT_TOL, axis=-1))
    if bad.size:
        raise AssignmentViolation(
            f"assignment is not a least-squares assignment for unit(s) {bad.tolist()[:10]}"
        )


def selection_from_arrays(mass, ghat, d_unadjusted, alpha, beta, n_periods, regime):
    """Run the unit-selection iteration on precomputed arrays.

    Returns ``(accepted (N, G) bool, n_selected, trace)``.  ``beta = 0``
    reproduces the plain joint set with ``N`` units in the Bonferroni count.
    """
    n_units, n_groups = mass.shape
    own = _ghat_mask(ghat, n_groups)
    c_sel = _sns_selection_threshold(beta, n_units, n_groups, n_periods, regime)
    nonempty = np.any(d_unadjusted > -2.0 * c_sel, axis=-1)
    level = alpha - 2.0 * beta
    H = np.ones((n_units, n_groups), dtype=bool)
    trace = []
    s = 0
    while True:
        n_hat = int(np.sum(np.any(H & nonempty, axis=1)))
        trace.append((s, n_hat))
        H_next = _accept(mass, n_hat, level) | own
        if np.array_equal(H_next, H):
            break
        H = H_next
        s += 1
    return H, n_hat, tuple(trace)


# ------------------------------------------------------------- public objects


def _prepare(panel, model, options):
    if model.assignment is None:
        raise InputError("model has no assignment")
    moments = panel_moments(
        panel,
        model,
        options.epsilon,
        fixed_effects=options.fixed_effects,
        jackknife=options.jackknife,
    )
    return moments


def _sets(accepted, method, level):
    return tuple(
        UnitConfidenceSet(
            unit=i,
            groups=tuple(int(g) + 1 for g in np.flatnonzero(row)),
            method=method,
            alpha_level=level,
        )
        for i, row in enumerate(accepted)
    )


def _mass(method, moments, options):
    stats = unit_statistics(method, moments)
    return rejection_mass(
        method, stats, moments.omega, moments.n_periods, options.regime, options.qmc
    )


def unit_cs(
    panel: PanelDataset,
    model: GroupModel,
    i: int,
    alpha: float,
    method=Method.MAX,
    options: AnalysisOptions | None = None,
) -> UnitConfidenceSet:
    """Confidence set for unit ``i`` (0-based) at level ``1 - alpha``, no Bonferroni split."""
    _check_alpha(alpha)
    method, options = Method(method), options or AnalysisOptions()
    if model.assignment is None:
        raise InputError("model has no assignment")
    sub = panel.subset([i])
    sub_model = model.with_assignment(model.assignment[i : i + 1])
    moments = _prepare(sub, sub_model, options)
    mass = _mass(method, moments, options)
    accepted = _accept(mass, 1, alpha) | _ghat_mask(sub_model.assignment, model.n_groups)
    (cs,) = _sets(accepted, method, alpha)
    return UnitConfidenceSet(unit=i, groups=cs.groups, method=method, alpha_level=alpha)


def joint_cs(
    panel: PanelDataset,
    model: GroupModel,
    alpha: float,
    method=Method.MAX,
    options: AnalysisOptions | None = None,
) -> JointConfidenceSet:
    """Bonferroni product of unit-wise sets, each at level ``alpha / N``."""
    return unit_selection_cs(panel, model, alpha, 0.0, method, options)


def unit_selection_cs(
    panel: PanelDataset,
    model: GroupModel,
    alpha: float,
    beta: float,
    method=Method.MAX,
    options: AnalysisOptions | None = None,
) -> JointConfidenceSet:
    _check_alpha(alpha)
    _check_beta(alpha, beta)
    method, options = Method(method), options or AnalysisOptions()
    moments = _prepare(panel, model, options)
    check_assignment(moments, model.assignment)
    mass = _mass(method, moments, options)
    accepted, n_hat, trace = selection_from_arrays(
        mass, model.assignment, moments.D_u, alpha, beta, moments.n_periods, options.regime
    )
    level = alpha - 2.0 * beta
    return JointConfidenceSet(
        per_unit=_sets(accepted, method, level / max(n_hat, 1)),
        method=method,
        alpha=alpha,
        beta=beta,
        n_selected=n_hat,
        iterations=trace,
    )


def pvalues_from_mass(mass, ghat, n_selected) -> tuple[np.ndarray, np.ndarray]:
    others = ~_ghat_mask(ghat, mass.shape[1])
    unit_p = np.max(np.where(others, mass, -np.inf), axis=1)
    return unit_p, n_selected * unit_p


def pvalues(
    panel: PanelDataset,
    model: GroupModel,
    method=Method.MAX,
    n_selected: int | None = None,
    options: AnalysisOptions | None = None,
) -> PValueReport:
    """Unit-wise and joint significance p-values of the estimated memberships.

    ``n_selected`` defaults to ``N``.  Values are not clipped to ``[0, 1]``.
    """
    method, options = Method(method), options or AnalysisOptions()
    moments = _prepare(panel, model, options)
    n_sel = moments.n_units if n_selected is None else int(n_selected)
    if n_sel < 0:
        raise InputError("n_selected must be >= 0")
    mass = _mass(method, moments, options)
    unit_p, joint_p = pvalues_from_mass(mass, model.assignment, n_sel)
    return PValueReport(
        ghat=np.asarray(model.assignment).copy(),
        unitwise_p=unit_p,
        joint_p=joint_p,
        method=method,
        n_selected=n_sel,
    )


def jointly_significant(report: PValueReport, alpha: float) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(report.joint_p < alpha))
