"""Command-line interface: ``analyze``, ``simulate``, ``estimate`` and ``critval``.

Exit codes: 0 on success, 2 for input or configuration errors, 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .confidence import AnalysisOptions, pvalues, unit_selection_cs
from .core import load_coefficients, load_panel, save_assignment, save_coefficients
from .distributions.critical import CriticalValueRequest, Method, Regime, critical_value
from .distributions.qmc import QmcConfig
from .errors import InputError, NumericalError, PanelCSError
from .estimation import EstimatorConfig, assign_groups, fit_grouped
from .moments import DEFAULT_EPSILON, fe_transform
from .simulation import DesignKind, DesignSpec, run_study

SCHEMA_VERSION = 1

_DESIGNS = {
    "a": DesignKind.HOMOSCEDASTIC_A,
    "b": DesignKind.HOMOSCEDASTIC_B,
    "het": DesignKind.HETEROSCEDASTIC_2G,
}


@dataclass(frozen=True)
class RunConfig:
    """Every tunable setting; file values override defaults, flags override both."""

    alpha: float = 0.1
    beta: float = 0.0
    methods: str = "sns,max,qlr"
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    qmc_points: int = 4096
    qmc_randomizations: int = 12
    qmc_seed: int = 20240101
    threads: int = 1
    fixed_effects: bool = False
    jackknife: bool = False
    limit: bool = False
    groups: int = 0
    restarts: int = 50
    max_iter: int = 200
    time_constant: bool = False
    design: str = "a"
    t: int = 40
    sigma: float = 0.5
    g0: int = 1
    n: int = 50
    high_noise_prob: float = 0.5
    reps: int = 1000

    def validate(self) -> "RunConfig":
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if not 0 <= self.beta < self.alpha / 3:
            raise InputError("beta must satisfy 0 <= beta < alpha/3")
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        if self.threads < 1:
            raise InputError("threads must be >= 1")
        self.method_list()
        return self

    def method_list(self) -> tuple[Method, ...]:
        try:
            return tuple(Method(m.strip().lower()) for m in self.methods.split(",") if m.strip())
        except ValueError as exc:
            raise InputError(f"unknown method in {self.methods!r}") from exc

    def qmc(self) -> QmcConfig:
        return QmcConfig(self.qmc_points, self.qmc_randomizations, self.qmc_seed)

    def regime(self) -> Regime:
        return Regime.GAUSSIAN_LIMIT if self.limit else Regime.FINITE_T


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, text: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text.strip().strip('"').strip("'")
    except ValueError as exc:
        raise InputError(f"bad value for {name}: {text!r}") from exc


def read_config_file(path) -> dict:
    """Flat ``key = value`` file (``#`` comments); unknown keys are an error."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such config file: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise InputError(f"cannot parse config file: {exc}") from exc
    out = {}
    for key, value in parser["run"].items():
        name = key.replace("-", "_")
        if name not in _FIELD_TYPES:
            raise InputError(f"unknown config key {key!r}")
        out[name] = _coerce(name, value)
    return out


# ------------------------------------------------------------------ commands


def _options(cfg: RunConfig) -> AnalysisOptions:
    return AnalysisOptions(
        epsilon=cfg.epsilon,
        fixed_effects=cfg.fixed_effects or cfg.jackknife,
        jackknife=cfg.jackknife,
        regime=cfg.regime(),
        qmc=cfg.qmc(),
    )


def _json_float(v: float):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def run_analyze(cfg: RunConfig, panel_path, coefficients_path=None, output=None) -> str:
    panel = load_panel(panel_path)
    transformed = fe_transform(panel) if (cfg.fixed_effects or cfg.jackknife) else panel
    if coefficients_path:
        model = load_coefficients(coefficients_path, panel)
    elif cfg.groups >= 2:
        est = EstimatorConfig(
            n_groups=cfg.groups,
            restarts=cfg.restarts,
            max_iter=cfg.max_iter,
            seed=cfg.seed,
            time_constant=cfg.time_constant,
        )
        model = fit_grouped(transformed, est, threads=cfg.threads).model
    else:
        raise InputError("analyze needs --coefficients or --groups G (G >= 2)")
    model = assign_groups(transformed, model)
    options = _options(cfg)
    methods = cfg.method_list()
    sets, reports = {}, {}
    for method in methods:
        cs = unit_selection_cs(panel, model, cfg.alpha, cfg.beta, method, options)
        sets[method] = cs
        reports[method] = pvalues(panel, model, method, cs.n_selected, options)
    units = []
    for i, label in enumerate(panel.unit_labels):
        entry = {"label": label, "ghat": int(model.assignment[i])}
        for method in methods:
            entry[f"cs_{method.value}"] = list(sets[method].per_unit[i].groups)
        entry["p_unit"] = {m.value: _json_float(reports[m].unitwise_p[i]) for m in methods}
        entry["p_joint"] = {m.value: _json_float(reports[m].joint_p[i]) for m in methods}
        units.append(entry)
    report = {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "alpha": cfg.alpha,
            "beta": cfg.beta,
            "epsilon": cfg.epsilon,
            "methods": [m.value for m in methods],
            "n_selected": {m.value: sets[m].n_selected for m in methods},
            "selection_trace": {m.value: [list(s) for s in sets[m].iterations] for m in methods},
            "jointly_significant": {
                m.value: [panel.unit_labels[i] for i in np.flatnonzero(reports[m].joint_p < cfg.alpha)]
                for m in methods
            },
            "seed": cfg.seed,
            "regime": cfg.regime().value,
            "fixed_effects": cfg.fixed_effects or cfg.jackknife,
            "jackknife": cfg.jackknife,
            "n_units": panel.n_units,
            "n_periods": panel.n_periods,
            "n_groups": model.n_groups,
            "version": __version__,
        },
        "units": units,
    }
    text = json.dumps(report, indent=2) + "\n"
    _emit(text, output)
    return text


def run_simulate(cfg: RunConfig, output=None) -> str:
    try:
        kind = _DESIGNS[cfg.design.lower()]
    except KeyError as exc:
        raise InputError(f"unknown design {cfg.design!r}; use a, b or het") from exc
    spec = DesignSpec(
        kind=kind,
        n_periods=cfg.t,
        sigma=cfg.sigma,
        n_units=cfg.n,
        g0=1 if kind is DesignKind.HETEROSCEDASTIC_2G else cfg.g0,
        high_noise_prob=cfg.high_noise_prob,
    )
    table = run_study(
        spec,
        methods=cfg.method_list(),
        alpha=cfg.alpha,
        beta=cfg.beta,
        reps=cfg.reps,
        master_seed=cfg.seed,
        qmc=cfg.qmc(),
        regime=cfg.regime(),
        epsilon=cfg.epsilon,
        threads=cfg.threads,
    )
    text = table.to_csv()
    _emit(text, output)
    return text


def run_estimate(cfg: RunConfig, panel_path, coefficients_out, assignment_out) -> None:
    if cfg.groups < 2:
        raise InputError("estimate needs --groups G (G >= 2)")
    panel = load_panel(panel_path)
    if cfg.fixed_effects:
        panel = fe_transform(panel)
    est = EstimatorConfig(
        n_groups=cfg.groups,
        restarts=cfg.restarts,
        max_iter=cfg.max_iter,
        seed=cfg.seed,
        time_constant=cfg.time_constant,
    )
    result = fit_grouped(panel, est, threads=cfg.threads)
    save_coefficients(result.model, coefficients_out, panel.time_labels)
    save_assignment(result.model, panel, assignment_out)


def run_critval(cfg: RunConfig, method, n_eff, dof, omega_path=None) -> str:
    omega = None
    method = Method(method)
    if omega_path is not None:
        try:
            omega = np.atleast_2d(np.loadtxt(omega_path, delimiter=",", dtype=np.float64))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read omega file: {exc}") from exc
    elif method is not Method.SNS:
        omega = np.eye(cfg.groups - 1) if cfg.groups >= 2 else None
    req = CriticalValueRequest(method, cfg.alpha, n_eff, cfg.groups, dof, omega, cfg.regime())
    value = critical_value(req, cfg.qmc())
    text = f"{value:.12g}\n"
    _emit(text, None)
    return text


def _emit(text, output):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------- parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--print-config", action="store_true", help="print effective settings and exit")
    p.add_argument("--threads", type=int, help="worker threads (env PCS_THREADS)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--qmc-points", type=int)
    p.add_argument("--qmc-randomizations", type=int)
    p.add_argument("--qmc-seed", type=int)


def _parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="panelcs", description=__doc__.splitlines()[0])
    root.add_argument("--version", action="version", version=__version__)
    sub = root.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="confidence sets and p-values for a panel")
    _add_common(a)
    a.add_argument("--panel", help="long-format panel CSV")
    a.add_argument("--coefficients", help="group,time,k,value CSV")
    a.add_argument("--groups", type=int)
    a.add_argument("--restarts", type=int)
    a.add_argument("--time-constant", action="store_const", const=True)
    a.add_argument("--beta", type=float)
    a.add_argument("--methods")
    a.add_argument("--fixed-effects", action="store_const", const=True)
    a.add_argument("--jackknife", action="store_const", const=True)
    a.add_argument("--limit", action="store_const", const=True)
    a.add_argument("--output", "-o")

    s = sub.add_parser("simulate", help="Monte Carlo coverage study")
    _add_common(s)
    s.add_argument("--design", choices=sorted(_DESIGNS))
    s.add_argument("--t", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--g0", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--high-noise-prob", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--reps", type=int)
    s.add_argument("--methods")
    s.add_argument("--limit", action="store_const", const=True)
    s.add_argument("--output", "-o")

    e = sub.add_parser("estimate", help="kmeans-type grouped estimation")
    _add_common(e)
    e.add_argument("--panel")
    e.add_argument("--groups", type=int)
    e.add_argument("--restarts", type=int)
    e.add_argument("--time-constant", action="store_const", const=True)
    e.add_argument("--fixed-effects", action="store_const", const=True)
    e.add_argument("--coefficients-out", default="coefficients.csv")
    e.add_argument("--assignment-out", default="assignment.csv")

    c = sub.add_parser("critval", help="a single critical value")
    _add_common(c)
    c.add_argument("--method", choices=[m.value for m in Method], required=True)
    c.add_argument("--n", type=int, required=True, dest="n_eff")
    c.add_argument("--groups", type=int, required=True)
    c.add_argument("--dof", type=int, required=True)
    c.add_argument("--omega", help="comma-separated (G-1)x(G-1) matrix file")
    c.add_argument("--limit", action="store_const", const=True)
    return root


_NON_CONFIG = {
    "command", "config", "print_config", "panel", "coefficients", "output",
    "coefficients_out", "assignment_out", "method", "n_eff", "dof", "omega",
}


def build_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = {}
    if environ.get("PCS_THREADS"):
        values["threads"] = _coerce("threads", environ["PCS_THREADS"])
    if args.config:
        values.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in _NON_CONFIG or value is None:
            continue
        values[key] = value
    return replace(RunConfig(), **values).validate()


def _dispatch(args, cfg):
    if args.command == "analyze":
        if not args.panel:
            raise InputError("analyze needs --panel")
        run_analyze(cfg, args.panel, args.coefficients, args.output)
    elif args.command == "simulate":
        run_simulate(cfg, args.output)
    elif args.command == "estimate":
        if not args.panel:
            raise InputError("estimate needs --panel")
        run_estimate(cfg, args.panel, args.coefficients_out, args.assignment_out)
    else:
        run_critval(cfg, args.method, args.n_eff, args.dof, args.omega)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = build_config(args)
        if args.print_config:
            for key, value in asdict(cfg).items():
                sys.stdout.write(f"{key} = {value}\n")
            return 0
        _dispatch(args, cfg)
    except InputError as exc:
        sys.stderr.write(f"panelcs: input error: {exc}\n")
        return 2
    except NumericalError as exc:
        sys.stderr.write(f"panelcs: numerical error: {exc}\n")
        return 3
    except PanelCSError as exc:
        sys.stderr.write(f"panelcs: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"panelcs: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
