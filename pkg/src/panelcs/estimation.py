"""Kmeans-type estimator for grouped panel regressions.

Alternates between least-squares coefficients given the assignment and the
least-squares assignment given the coefficients, from several random starts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import GroupModel, PanelDataset
from .errors import EmptyGroup, InputError, RankDeficient

__all__ = ["EstimatorConfig", "FitResult", "fit_grouped", "assign_groups", "objective"]


@dataclass(frozen=True)
class EstimatorConfig:
    n_groups: int
    restarts: int = 50
    max_iter: int = 200
    tol: float = 1e-10
    seed: int = 0
    time_constant: bool = False

    def __post_init__(self):
        if self.n_groups < 2:
            raise InputError("need at least two groups")
        if self.restarts < 1 or self.max_iter < 1:
            raise InputError("restarts and max_iter must be >= 1")
        if self.tol < 0:
            raise InputError("tol must be >= 0")


@dataclass(frozen=True)
class FitResult:
    model: GroupModel
    objective: float
    trace: tuple[float, ...]
    restart: int


def _ssr(y, x, beta):
    # ssr[i, g] = sum_t (y_it - x_it' beta_gt)^2
    r = y[:, None, :] - np.einsum("itk,gtk->igt", x, beta)
    return np.einsum("igt,igt->ig", r, r)


def objective(panel: PanelDataset, model: GroupModel) -> float:
    """``(NT)^{-1} sum_i sum_t (y_it - x_it' beta_{g_i t})^2`` at the model's assignment."""
    if model.assignment is None:
        raise InputError("model has no assignment")
    ssr = _ssr(panel.outcomes, panel.covariates, model.coefficients)
    picked = ssr[np.arange(panel.n_units), model.assignment - 1]
    return float(picked.sum() / (panel.n_units * panel.n_periods))


def assign_groups(panel: PanelDataset, model: GroupModel) -> GroupModel:
    """Least-squares assignment; ties go to the smallest group index."""
    ssr = _ssr(panel.outcomes, panel.covariates, model.coefficients)
    return model.with_assignment(np.argmin(ssr, axis=1) + 1)


def _lstsq(a, b):
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= 1e-10 * max(1.0, diag.max()):
        raise RankDeficient("group design matrix is rank deficient")
    return np.linalg.solve(r, q.T @ b)


def _coefficients(y, x, labels, n_groups, time_constant):
    n_t, k = y.shape[1], x.shape[2]
    beta = np.empty((n_groups, n_t, k))
    for g in range(n_groups):
        members = labels == g
        if not members.any():
            raise EmptyGroup(f"group {g + 1} has no members")
        yg, xg = y[members], x[members]
        if time_constant:
            beta[g] = _lstsq(xg.reshape(-1, k), yg.reshape(-1))
        else:
            for t in range(n_t):
                beta[g, t] = _lstsq(xg[:, t, :], yg[:, t])
    return beta


def _initial_labels(rng, n_units, n_groups):
    while True:
        labels = rng.integers(0, n_groups, size=n_units)
        if np.unique(labels).size == n_groups:
            return labels


def _run(y, x, cfg, rng):
    n, n_t = y.shape
    labels = _initial_labels(rng, n, cfg.n_groups)
    trace = []
    for _ in range(cfg.max_iter):
        beta = _coefficients(y, x, labels, cfg.n_groups, cfg.time_constant)
        ssr = _ssr(y, x, beta)
        new = np.argmin(ssr, axis=1)
        trace.append(float(ssr[np.arange(n), new].sum() / (n * n_t)))
        converged = np.array_equal(new, labels)
        labels = new
        if converged or (len(trace) > 1 and trace[-2] - trace[-1] <= cfg.tol):
            break
    # beta may be fitted to the previous labels; labels are its argmin either way
    return beta, labels, trace[-1], tuple(trace)


def _canonical(beta, labels):
    order = np.argsort(beta[:, 0, 0], kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.size)
    return beta[order], relabel[labels]


_REDRAWS = 20


def _attempt(y, x, config, seed_seq):
    # a run that empties a group starts over from a fresh draw of the same stream
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    for _ in range(_REDRAWS):
        try:
            return _run(y, x, config, rng)
        except EmptyGroup as exc:
            failure = exc
        except RankDeficient as exc:
            return exc
    return failure


def fit_grouped(panel: PanelDataset, config: EstimatorConfig, threads: int = 1) -> FitResult:
    """Best of ``config.restarts`` alternating-minimization runs.

    Each restart draws its own generator from ``SeedSequence(config.seed)``.
    A run that empties a group is redrawn from that generator (up to 20
    times); runs that still fail, or hit a rank-deficient design, are
    discarded.  Ties in the objective go to the lowest restart index.
    """
    if config.n_groups > panel.n_units:
        raise InputError("more groups than units")
    y, x = panel.outcomes, panel.covariates
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda ss: _attempt(y, x, config, ss), seeds))
    else:
        runs = [_attempt(y, x, config, ss) for ss in seeds]
    best, failure = None, None
    for r, run in enumerate(runs):
        if isinstance(run, Exception):
            failure = run
            continue
        beta, labels, value, trace = run
        if best is None or value < best[2]:
            best = (beta, labels, value, trace, r)
    if best is None:
        raise failure
    beta, labels, value, trace, r = best
    beta, labels = _canonical(beta, labels)
    model = GroupModel(beta, time_constant=config.time_constant, assignment=labels + 1)
    # re-derive the assignment so ties follow the smallest-index rule after relabeling
    model = assign_groups(panel, model)
    return FitResult(model=model, objective=value, trace=trace, restart=r)
