"""Monte Carlo designs and the coverage-study harness.

Every replication draws from its own ``PCG64`` stream seeded by
``SeedSequence([master_seed, rep])``, so results do not depend on how
replications are scheduled across threads.  Gaussian noise comes from
``Generator.standard_normal`` (ziggurat).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from .confidence import rejection_mass, selection_from_arrays, unit_statistics
from .core import GroupModel, PanelDataset
from .distributions.critical import Method, Regime
from .distributions.qmc import QmcConfig
from .errors import InputError
from .estimation import assign_groups
from .moments import DEFAULT_EPSILON, panel_moments

__all__ = [
    "DesignKind",
    "DesignSpec",
    "CoverageRow",
    "CoverageTable",
    "group_effects",
    "make_design",
    "run_study",
]


class DesignKind(str, Enum):
    HOMOSCEDASTIC_A = "homoscedastic_A"
    HOMOSCEDASTIC_B = "homoscedastic_B"
    HETEROSCEDASTIC_2G = "heteroscedastic_2G"


@dataclass(frozen=True)
class DesignSpec:
    kind: DesignKind
    n_periods: int
    sigma: float
    n_units: int = 50
    g0: int = 1
    high_noise_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DesignKind(self.kind))
        if self.n_periods < 2 or self.n_units < 1:
            raise InputError("need T >= 2 and N >= 1")
        if not self.sigma > 0:
            raise InputError("sigma must be positive")
        if self.kind is DesignKind.HETEROSCEDASTIC_2G:
            if not 0 <= self.high_noise_prob <= 1:
                raise InputError("high_noise_prob must lie in [0, 1]")
            if self.g0 != 1:
                raise InputError("the heteroscedastic design has g0 = 1")
        elif self.g0 not in (1, 2, 3):
            raise InputError("g0 must be 1, 2 or 3")

    @property
    def n_groups(self) -> int:
        return 2 if self.kind is DesignKind.HETEROSCEDASTIC_2G else 3


def _tent(t, n_periods, low, slope):
    return low + slope * np.abs(t - n_periods / 2) / n_periods


def group_effects(kind, n_periods: int) -> np.ndarray:
    """Group fixed effects ``alpha[g, t]`` for ``t = 1..T``."""
    kind = DesignKind(kind)
    t = np.arange(1, n_periods + 1, dtype=np.float64)
    if kind is DesignKind.HETEROSCEDASTIC_2G:
        return np.stack([np.full(n_periods, 0.5), np.full(n_periods, -0.5)])
    low, slope, shift = (-0.5, 2.0, 1.0) if kind is DesignKind.HOMOSCEDASTIC_A else (-2.0, 8.0, 0.0)
    wrapped = t % math.ceil(n_periods / 2)
    return np.stack(
        [
            np.zeros(n_periods),
            _tent(t, n_periods, low, slope) + shift,
            _tent(wrapped, n_periods / 2, low, slope) - shift,
        ]
    )


def _true_model(spec: DesignSpec) -> GroupModel:
    effects = group_effects(spec.kind, spec.n_periods)
    return GroupModel(
        effects[:, :, None],
        time_constant=spec.kind is DesignKind.HETEROSCEDASTIC_2G,
        assignment=np.full(spec.n_units, spec.g0),
    )


def _draw(spec: DesignSpec, model: GroupModel, rng: np.random.Generator):
    n, n_t = spec.n_units, spec.n_periods
    sd = np.full(n, spec.sigma * math.sqrt(n_t))
    high = np.ones(n, dtype=bool)
    if spec.kind is DesignKind.HETEROSCEDASTIC_2G:
        high = rng.random(n) < spec.high_noise_prob
        sd = np.where(high, sd, sd / 5.0)
    noise = rng.standard_normal((n, n_t)) * sd[:, None]
    y = model.coefficients[spec.g0 - 1, :, 0][None, :] + noise
    return PanelDataset(y, np.ones((n, n_t, 1))), high


def make_design(spec: DesignSpec, rng: np.random.Generator | None = None):
    """Simulated panel and the true model (intercept-only covariates).

    Returns ``(panel, model, high_noise)`` where ``high_noise`` flags the
    noisy units of the heteroscedastic design (all ``True`` otherwise).
    """
    rng = rng or np.random.Generator(np.random.PCG64(spec.seed))
    model = _true_model(spec)
    panel, high = _draw(spec, model, rng)
    return panel, model, high


@dataclass(frozen=True)
class CoverageRow:
    design: str
    g0: int
    sigma: float
    n_periods: int
    high_noise_prob: float | None
    method: str
    regime: str
    alpha: float
    beta: float
    reps: int
    coverage: float
    coverage_se: float | None
    cardinality: float
    cardinality_se: float | None
    naive_coverage: float
    naive_coverage_se: float | None
    power: float | None
    power_se: float | None
    selected_fraction: float
    selected_fraction_se: float | None


@dataclass(frozen=True)
class CoverageTable:
    rows: tuple[CoverageRow, ...]

    def row(self, method) -> CoverageRow:
        method = Method(method).value
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self) -> str:
        names = [f.name for f in fields(CoverageRow)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for r in self.rows:
            writer.writerow(["" if getattr(r, n) is None else _fmt(getattr(r, n)) for n in names])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class _RepResult:
    naive: bool
    per_method: dict = field(default_factory=dict)


def _replicate(spec, model, methods, alpha, beta, regime, epsilon, qmc, master_seed, rep):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, rep])))
    panel, high = _draw(spec, model, rng)
    fitted = assign_groups(panel, model)
    ghat = fitted.assignment
    truth = model.assignment
    moments = panel_moments(panel, fitted, epsilon)
    out = _RepResult(naive=bool(np.array_equal(ghat, truth)))
    rows = np.arange(spec.n_units)
    for method in methods:
        stats = unit_statistics(method, moments)
        mass = rejection_mass(method, stats, moments.omega, spec.n_periods, regime, qmc)
        accepted, n_hat, _ = selection_from_arrays(
            mass, ghat, moments.D_u, alpha, beta, spec.n_periods, regime
        )
        card = accepted.sum(axis=1)
        out.per_method[method] = (
            bool(np.all(accepted[rows, truth - 1])),
            float(card.mean()),
            int(np.sum((card == 1) & high)),
            int(high.sum()),
            n_hat / spec.n_units,
        )
    return out


def _mean_se(values):
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def _binomial(p, n):
    return None if n < 2 else math.sqrt(p * (1.0 - p) / n)


def run_study(
    spec: DesignSpec,
    methods=(Method.SNS, Method.MAX, Method.QLR),
    alpha: float = 0.1,
    beta: float = 0.0,
    reps: int = 1000,
    master_seed: int = 0,
    qmc: QmcConfig | None = None,
    regime=Regime.FINITE_T,
    epsilon: float = DEFAULT_EPSILON,
    threads: int = 1,
) -> CoverageTable:
    """Simulated coverage of the joint (or unit-selection) confidence sets.

    Coefficients are treated as known; ``g_hat`` is the least-squares
    assignment at the true coefficients.  Output is identical for any
    ``threads``.
    """
    if reps < 1:
        raise InputError("reps must be >= 1")
    if not 0 < alpha < 1 or not 0 <= beta < alpha / 3:
        raise InputError("need 0 < alpha < 1 and 0 <= beta < alpha/3")
    methods = tuple(Method(m) for m in methods)
    regime = Regime(regime)
    qmc = qmc or QmcConfig()
    model = _true_model(spec)

    def one(rep):
        return _replicate(spec, model, methods, alpha, beta, regime, epsilon, qmc, master_seed, rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(rep) for rep in range(reps)]

    naive = math.fsum(r.naive for r in results) / reps
    het = spec.kind is DesignKind.HETEROSCEDASTIC_2G
    rows = []
    for method in methods:
        vals = [r.per_method[method] for r in results]
        cover = math.fsum(v[0] for v in vals) / reps
        card, card_se = _mean_se([v[1] for v in vals])
        hits, n_high = sum(v[2] for v in vals), sum(v[3] for v in vals)
        power = hits / n_high if (het and n_high) else None
        sel, sel_se = _mean_se([v[4] for v in vals])
        rows.append(
            CoverageRow(
                design=spec.kind.value,
                g0=spec.g0,
                sigma=spec.sigma,
                n_periods=spec.n_periods,
                high_noise_prob=spec.high_noise_prob if het else None,
                method=method.value,
                regime=regime.value,
                alpha=alpha,
                beta=beta,
                reps=reps,
                coverage=cover,
                coverage_se=_binomial(cover, reps),
                cardinality=card,
                cardinality_se=card_se,
                naive_coverage=naive,
                naive_coverage_se=_binomial(naive, reps),
                power=power,
                power_se=None if power is None else _binomial(power, n_high),
                selected_fraction=sel,
                selected_fraction_se=sel_se,
            )
        )
    return CoverageTable(tuple(rows))
