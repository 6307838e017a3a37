"""Balanced panels, grouped coefficient models and their CSV formats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateCell,
    DuplicateGroups,
    InputError,
    MissingCell,
    NonFinite,
    ZeroVariance,
)

__all__ = [
    "PanelDataset",
    "GroupModel",
    "load_panel",
    "save_panel",
    "load_coefficients",
    "save_coefficients",
    "save_assignment",
    "standardize_per_unit",
    "validate_model",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel of outcomes ``y[i, t]`` and covariates ``x[i, t, k]``."""

    outcomes: np.ndarray
    covariates: np.ndarray
    unit_labels: tuple[str, ...] = ()
    time_labels: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=np.float64)
        x = np.asarray(self.covariates, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if y.ndim != 2 or x.ndim != 3 or x.shape[:2] != y.shape:
            raise DimensionMismatch(
                f"outcomes {y.shape} and covariates {x.shape} do not form a panel"
            )
        n, t = y.shape
        if n < 1 or t < 2 or x.shape[2] < 1:
            raise InputError(f"need N >= 1, T >= 2, K >= 1; got N={n}, T={t}, K={x.shape[2]}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise NonFinite("panel contains NaN or infinite values")
        units = tuple(self.unit_labels) or tuple(str(i + 1) for i in range(n))
        times = tuple(self.time_labels) or tuple(str(s + 1) for s in range(t))
        if len(units) != n or len(times) != t:
            raise DimensionMismatch("label counts do not match the panel shape")
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "unit_labels", tuple(str(u) for u in units))
        object.__setattr__(self, "time_labels", tuple(str(s) for s in times))

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def covariate_dim(self) -> int:
        return self.covariates.shape[2]

    def with_data(self, outcomes, covariates) -> "PanelDataset":
        return replace(self, outcomes=outcomes, covariates=covariates)

    def subset(self, units) -> "PanelDataset":
        """Panel restricted to the 0-based unit indices ``units``."""
        idx = np.atleast_1d(np.asarray(units, dtype=int))
        return PanelDataset(
            self.outcomes[idx],
            self.covariates[idx],
            tuple(self.unit_labels[i] for i in idx),
            self.time_labels,
        )


@dataclass(frozen=True)
class GroupModel:
    """Group-specific coefficient paths ``beta[g, t, k]``.

    ``assignment`` holds 1-based group labels, one per unit, when memberships
    have been estimated.
    """

    coefficients: np.ndarray
    time_constant: bool = False
    assignment: np.ndarray | None = field(default=None)

    def __post_init__(self):
        b = np.asarray(self.coefficients, dtype=np.float64)
        if b.ndim != 3:
            raise DimensionMismatch("coefficients must have shape (G, T, K)")
        if b.shape[0] < 2:
            raise InputError("need at least two groups")
        if not np.all(np.isfinite(b)):
            raise NonFinite("coefficients contain NaN or infinite values")
        if self.time_constant and not np.all(b == b[:, :1, :]):
            raise InputError("time_constant model with coefficients varying over time")
        object.__setattr__(self, "coefficients", _frozen(b))
        if self.assignment is not None:
            a = np.asarray(self.assignment)
            if a.ndim != 1 or not np.all(a == np.round(a)):
                raise InputError("assignment must be a 1-d integer sequence")
            a = a.astype(np.int64)
            if a.size and (a.min() < 1 or a.max() > b.shape[0]):
                raise InputError(f"assignment labels must lie in 1..{b.shape[0]}")
            a.flags.writeable = False
            object.__setattr__(self, "assignment", a)

    @property
    def n_groups(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_periods(self) -> int:
        return self.coefficients.shape[1]

    @property
    def covariate_dim(self) -> int:
        return self.coefficients.shape[2]

    def with_assignment(self, assignment) -> "GroupModel":
        return replace(self, assignment=assignment)

    @classmethod
    def constant(cls, beta, n_periods: int, assignment=None) -> "GroupModel":
        """Build a time-constant model from ``beta[g, k]``."""
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim == 1:
            beta = beta[:, None]
        coef = np.repeat(beta[:, None, :], n_periods, axis=1)
        return cls(coef, time_constant=True, assignment=assignment)


def _sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise InputError(f"cannot parse {text!r} as a number ({where})") from exc
    if not math.isfinite(value):
        raise NonFinite(f"non-finite value {text!r} ({where})")
    return value


def load_panel(path, schema: Mapping[str, str] | None = None) -> PanelDataset:
    """Read a long-format panel CSV.

    The default columns are ``unit``, ``time``, ``y`` and ``x1..xK``. ``schema``
    renames them, e.g. ``{"unit": "state", "x": ["lgr", "lminwage"]}``; the
    value for ``"x"`` may be a list of column names. Units and periods are
    sorted numerically when their labels parse as numbers.
    """
    schema = dict(schema or {})
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        ucol = schema.get("unit", "unit")
        tcol = schema.get("time", "time")
        ycol = schema.get("y", "y")
        xcols = schema.get("x")
        if xcols is None:
            xcols = [c for c in header if c.startswith("x") and c[1:].isdigit()]
            xcols.sort(key=lambda c: int(c[1:]))
        elif isinstance(xcols, str):
            xcols = [xcols]
        missing = [c for c in [ucol, tcol, ycol, *xcols] if c not in header]
        if missing or not xcols:
            raise InputError(f"missing columns {missing or ['x1']} in {path}")
        cells: dict[tuple[str, str], tuple[float, list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            key = (row[ucol].strip(), row[tcol].strip())
            if key in cells:
                raise DuplicateCell(f"duplicate row for unit={key[0]}, time={key[1]}")
            where = f"line {lineno}"
            cells[key] = (
                _parse_float(row[ycol], where),
                [_parse_float(row[c], where) for c in xcols],
            )
    units = sorted({u for u, _ in cells}, key=_sort_key)
    times = sorted({s for _, s in cells}, key=_sort_key)
    n, t, k = len(units), len(times), len(xcols)
    y = np.empty((n, t))
    x = np.empty((n, t, k))
    for i, u in enumerate(units):
        for s, tt in enumerate(times):
            try:
                y[i, s], x[i, s] = cells[(u, tt)]
            except KeyError:
                raise MissingCell(f"no row for unit={u}, time={tt}") from None
    return PanelDataset(y, x, tuple(units), tuple(times))


def save_panel(panel: PanelDataset, path) -> None:
    k = panel.covariate_dim
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "time", "y", *[f"x{j + 1}" for j in range(k)]])
        for i, u in enumerate(panel.unit_labels):
            for s, tt in enumerate(panel.time_labels):
                w.writerow(
                    [u, tt, repr(float(panel.outcomes[i, s]))]
                    + [repr(float(v)) for v in panel.covariates[i, s]]
                )


def load_coefficients(path, panel: PanelDataset) -> GroupModel:
    """Read a ``group,time,k,value`` coefficients CSV against ``panel``.

    ``time`` may be ``*`` for coefficients shared by all periods; ``k`` is the
    1-based covariate index.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    tindex = {lab: s for s, lab in enumerate(panel.time_labels)}
    entries: dict[tuple[int, str, int], float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"group", "time", "k", "value"} <= set(reader.fieldnames or []):
            raise InputError("coefficients file needs columns group,time,k,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (int(row["group"]), row["time"].strip(), int(row["k"]))
            except ValueError as exc:
                raise InputError(f"bad group/k index on line {lineno}") from exc
            if key in entries:
                raise DuplicateCell(f"duplicate coefficient {key}")
            entries[key] = _parse_float(row["value"], f"line {lineno}")
    if not entries:
        raise InputError("empty coefficients file")
    n_groups = max(g for g, _, _ in entries)
    k_dim = max(k for _, _, k in entries)
    if k_dim != panel.covariate_dim:
        raise DimensionMismatch(f"coefficients have K={k_dim}, panel has K={panel.covariate_dim}")
    star = {tt for _, tt, _ in entries} == {"*"}
    t_dim = panel.n_periods
    beta = np.full((n_groups, t_dim, k_dim), np.nan)
    for (g, tt, k), v in entries.items():
        if g < 1 or k < 1:
            raise InputError("group and k indices are 1-based")
        if tt == "*":
            beta[g - 1, :, k - 1] = v
        elif tt in tindex:
            beta[g - 1, tindex[tt], k - 1] = v
        else:
            raise DimensionMismatch(f"time label {tt!r} not in panel")
    if np.isnan(beta).any():
        raise MissingCell("coefficients file does not cover every (group, time, k)")
    return GroupModel(beta, time_constant=star)


def save_coefficients(model: GroupModel, path, time_labels: Sequence[str] | None = None) -> None:
    g_dim, t_dim, k_dim = model.coefficients.shape
    labels = list(time_labels) if time_labels is not None else [str(s + 1) for s in range(t_dim)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "time", "k", "value"])
        for g in range(g_dim):
            periods = [("*", 0)] if model.time_constant else list(zip(labels, range(t_dim)))
            for lab, s in periods:
                for k in range(k_dim):
                    w.writerow([g + 1, lab, k + 1, repr(float(model.coefficients[g, s, k]))])


def save_assignment(model: GroupModel, panel: PanelDataset, path) -> None:
    if model.assignment is None:
        raise InputError("model has no assignment")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "group"])
        for lab, g in zip(panel.unit_labels, model.assignment):
            w.writerow([lab, int(g)])


def standardize_per_unit(panel: PanelDataset, covariates: bool = False) -> PanelDataset:
    """Rescale each unit's outcome series (and optionally covariates) to unit sd.

    The standard deviation uses divisor ``T - 1``; series are not demeaned.
    """
    y = panel.outcomes
    sd = y.std(axis=1, ddof=1)
    if np.any(sd == 0):
        bad = [panel.unit_labels[i] for i in np.flatnonzero(sd == 0)]
        raise ZeroVariance(f"constant outcome series for units {bad}")
    x = panel.covariates
    if covariates:
        sx = x.std(axis=1, ddof=1, keepdims=True)
        if np.any(sx == 0):
            raise ZeroVariance("constant covariate series; standardize outcomes only")
        x = x / sx
    return panel.with_data(y / sd[:, None], x)


def validate_model(panel: PanelDataset, model: GroupModel) -> None:
    """Check that ``model`` fits ``panel`` and that no two groups coincide."""
    if model.covariate_dim != panel.covariate_dim:
        raise DimensionMismatch(
            f"model has K={model.covariate_dim}, panel has K={panel.covariate_dim}"
        )
    if model.n_periods != panel.n_periods:
        raise DimensionMismatch(f"model has T={model.n_periods}, panel has T={panel.n_periods}")
    if model.assignment is not None and model.assignment.shape[0] != panel.n_units:
        raise DimensionMismatch("assignment length differs from the number of units")
    b = model.coefficients
    for g in range(model.n_groups):
        for h in range(g + 1, model.n_groups):
            if np.max(np.linalg.norm(b[g] - b[h], axis=1)) <= 0.0:
                raise DuplicateGroups(f"groups {g + 1} and {h + 1} share the same coefficients")
