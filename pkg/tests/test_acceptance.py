"""End-to-end acceptance checks.

Every test appends one PASS/FAIL line to the terminal summary before
asserting.  Study cells use master seed 0 and 1000 replications unless a
line says otherwise.
"""

import json
import math
import os
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from panelcs.core import PanelDataset, save_panel
from panelcs.distributions import QmcConfig, fqlr_quantile, kudo_weights, mvt_max_cdf, mvt_rect_prob
from panelcs.distributions.bivariate import bvn_cdf, bvt_cdf
from panelcs.distributions.chibar import fqlr_cdf_from_weights
from panelcs.moments import panel_moments
from panelcs.simulation import DesignKind, DesignSpec, make_design, run_study
from panelcs.teststats import _project, qlr_statistic, qlr_values

from conftest import ACCEPTANCE_LINES
from oracles import grid_projection, qlr_instance, random_omega
from test_teststats import block

THREADS = os.cpu_count() or 1
REPS = 1000
METHODS = ("sns", "max", "qlr")


def record(name, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def study(kind, n_periods, sigma, g0=1, reps=REPS, **kw):
    spec_kw = {k: kw.pop(k) for k in ("high_noise_prob",) if k in kw}
    spec = DesignSpec(kind, n_periods, sigma, g0=g0, **spec_kw)
    return run_study(spec, reps=reps, master_seed=0, threads=THREADS, **kw)


def fmt(values):
    return "/".join(f"{v:.3f}" for v in values)


# ------------------------------------------------------------ design A


DESIGN_A = [
    # (g0, sigma, T, coverage targets, cardinality targets or None)
    (1, 0.50, 40, (0.92, 0.92, 0.94), (2.75, 2.67, 2.65)),
    (1, 0.25, 10, (0.96, 0.96, 0.96), (2.40, 2.21, 2.09)),
    (2, 0.25, 40, (0.96, 0.91, 0.92), None),
]


@pytest.mark.parametrize("g0,sigma,n_periods,cover,card", DESIGN_A)
def test_design_a_coverage(g0, sigma, n_periods, cover, card):
    table = study(DesignKind.HOMOSCEDASTIC_A, n_periods, sigma, g0)
    got_cov = [table.row(m).coverage for m in METHODS]
    got_card = [table.row(m).cardinality for m in METHODS]
    ok = all(abs(a - b) <= 0.03 + 1e-12 for a, b in zip(got_cov, cover))
    if card is not None:
        ok &= all(abs(a - b) <= 0.10 for a, b in zip(got_card, card))
    detail = f"g0={g0} sigma={sigma} T={n_periods} coverage {fmt(got_cov)} vs {fmt(cover)} (+-0.03)"
    if card is not None:
        detail += f"; cardinality {fmt(got_card)} vs {fmt(card)} (+-0.10)"
    assert record("design A coverage", ok, detail)


def test_naive_assignment_collapses():
    worst = 0.0
    for g0 in (1, 2, 3):
        for n_periods in (10, 20, 30, 40):
            table = study(DesignKind.HOMOSCEDASTIC_A, n_periods, 0.5, g0, methods=("sns",))
            worst = max(worst, table.rows[0].naive_coverage)
    assert record(
        "naive singleton collapse", worst <= 0.01,
        f"max naive coverage over 12 sigma=0.5 cells = {worst:.3f} (<= 0.01)",
    )


def test_gaussian_limit_undercoverage():
    limit = dict(methods=("max", "qlr"), regime="gaussian_limit")
    base = study(DesignKind.HOMOSCEDASTIC_A, 10, 0.25, **limit)
    got = (base.row("max").coverage, base.row("qlr").coverage)
    level_ok = abs(got[0] - 0.64) <= 0.05 and abs(got[1] - 0.71) <= 0.05
    # monotonicity uses 4000 replications per T so that steps of ~0.02 are resolved
    path = {m: [] for m in ("max", "qlr")}
    for n_periods in (10, 20, 30, 40):
        table = study(DesignKind.HOMOSCEDASTIC_A, n_periods, 0.25, reps=4000, **limit)
        for m in path:
            path[m].append(table.row(m).coverage)
    mono = all(np.all(np.diff(v) >= 0) for v in path.values())
    detail = (
        f"T=10 MAX/QLR {fmt(got)} vs 0.640/0.710 (+-0.05); coverage over T=10..40 "
        f"MAX {fmt(path['max'])}, QLR {fmt(path['qlr'])} (nondecreasing, 4000 reps)"
    )
    assert record("gaussian-limit undercoverage", level_ok and mono, detail)


# ----------------------------------------------------- heteroscedastic


def test_heteroscedastic_unit_selection():
    het = dict(high_noise_prob=0.25, methods=("sns",))
    sel = study(DesignKind.HETEROSCEDASTIC_2G, 40, 0.25, beta=0.01, **het).rows[0]
    plain = study(DesignKind.HETEROSCEDASTIC_2G, 40, 0.25, beta=0.0, **het).rows[0]
    sel_hi = study(DesignKind.HETEROSCEDASTIC_2G, 40, 0.5, beta=0.01, **het).rows[0]
    plain_hi = study(DesignKind.HETEROSCEDASTIC_2G, 40, 0.5, beta=0.0, **het).rows[0]
    ok = (
        abs(sel.coverage - 0.93) <= 0.04
        and abs(sel.selected_fraction - 0.26) <= 0.03
        and abs(sel.power - 0.92) <= 0.04
        and abs(plain.coverage - 0.98) <= 0.03
        and abs(plain.power - 0.82) <= 0.04
        and sel_hi.power <= plain_hi.power
    )
    detail = (
        f"beta=0.01 coverage {sel.coverage:.3f} (0.93+-0.04), N/N {sel.selected_fraction:.3f} "
        f"(0.26+-0.03), power {sel.power:.3f} (0.92+-0.04); beta=0 coverage {plain.coverage:.3f} "
        f"(0.98+-0.03), power {plain.power:.3f} (0.82+-0.04); sigma=0.5 power "
        f"{sel_hi.power:.3f} with selection <= {plain_hi.power:.3f} without"
    )
    assert record("heteroscedastic unit selection", ok, detail)


def test_design_b_coverage():
    table = study(DesignKind.HOMOSCEDASTIC_B, 40, 0.25)
    got = [table.row(m).coverage for m in METHODS]
    ok = all(abs(v - 0.94) <= 0.03 for v in got)
    assert record("design B coverage", ok, f"{fmt(got)} vs 0.94 each (+-0.03)")


# ------------------------------------------------------ Bonferroni bounds


def test_bonferroni_miss_probability_bounds():
    mpmath.mp.dps = 50
    alpha = mpmath.mpf("0.1")
    bad, plus_bad = [], []
    for n in range(8, 10001):
        a_n = alpha / n
        exact = 1 - (1 - a_n) ** n
        lower = alpha - alpha**2 / 2
        inner = (1 / mpmath.mpf(n)) * (1 - a_n) ** -2
        upper = alpha - (alpha**2 / 2) * (1 - alpha / 3 - inner)
        plus_variant = alpha - (alpha**2 / 2) * (1 - alpha / 3 + inner)
        if not lower <= exact <= upper:
            bad.append(n)
        if exact > plus_variant:
            plus_bad.append(n)
    detail = (
        f"exact miss within bounds for {9993 - len(bad)}/9993 N in 8..10000; "
        f"'+' sign variant of the upper bound exceeded at N=50: {50 in plus_bad}"
    )
    assert record("Bonferroni bound check", not bad, detail)


# ------------------------------------------------- distribution oracles


def _kudo_mc(omega, rng, draws):
    z = rng.multivariate_normal(np.zeros(len(omega)), omega, size=draws)
    _, _, mask = _project(z, omega)
    free = len(omega) - mask.sum(axis=1)
    counts = np.bincount(free, minlength=len(omega) + 1)
    p_hat = counts / draws
    return p_hat, np.sqrt(p_hat * (1 - p_hat) / draws)


def _ks_qlr(omega, rng, draws):
    z = rng.multivariate_normal(np.zeros(len(omega)), omega, size=draws)
    sample = np.sort(qlr_values(z, omega))
    w = kudo_weights(omega)
    n = draws
    zeros = int(np.sum(sample <= 0.0))
    ks = abs(zeros / n - w[-1])
    pos = sample[zeros:]
    cdf = fqlr_cdf_from_weights(pos, w, 1e6)
    i = np.arange(zeros + 1, n + 1)
    ks = max(ks, np.max(np.abs(i / n - cdf)), np.max(np.abs((i - 1) / n - cdf)))
    return ks


def _max_mc(omega, x, dof, rng, draws):
    z = rng.multivariate_normal(np.zeros(len(omega)), omega, size=draws)
    w = np.sqrt(rng.chisquare(dof, size=draws) / dof)
    hit = np.mean(np.max(z / w[:, None], axis=1) <= x)
    return hit, math.sqrt(hit * (1 - hit) / draws)


def _max_dominance_threshold(rho, n_periods):
    # smallest grid t beyond which the finite-sample max cdf stays below the Gaussian one
    grid = np.linspace(-5.0, 12.0, 1701)
    shrink = math.sqrt((n_periods - 1) / n_periods)
    finite = bvt_cdf(shrink * grid, shrink * grid, np.full_like(grid, rho), n_periods - 1)
    gauss = bvn_cdf(grid, grid, np.full_like(grid, rho))
    ok = finite <= gauss + 1e-13
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return float(grid[0]) if bad.size == 0 else float(grid[bad[-1] + 1])


def test_distribution_oracle_suite():
    rng = np.random.default_rng(20240607)
    notes, ok = [], True

    # Kudo weights, p = 2 closed form
    worst = 0.0
    for rho in np.linspace(-0.95, 0.95, 39):
        v = np.array([[1.0, rho], [rho, 1.0]])
        a = math.asin(rho) / (2 * math.pi)
        worst = max(worst, np.max(np.abs(kudo_weights(v) - [0.25 - a, 0.5, 0.25 + a])))
    ok &= worst <= 1e-6
    notes.append(f"kudo p=2 max err {worst:.1e}")

    # Kudo weights, p = 3, 4 against simulated active-set counts
    worst_z = 0.0
    for p in (3, 4):
        for _ in range(3):
            v = random_omega(rng, p, epsilon=0.0)
            p_hat, se = _kudo_mc(v, rng, 400_000)
            z = np.max(np.abs(kudo_weights(v) - p_hat) / np.maximum(se, 1e-12))
            worst_z = max(worst_z, z)
    ok &= worst_z <= 3.0
    notes.append(f"kudo p=3,4 max |z| {worst_z:.2f}")

    # QLR distribution at dof 1e6 against 1e6 projection draws
    ks = max(_ks_qlr(random_omega(rng, p, epsilon=0.0), rng, 1_000_000) for p in (2, 3))
    ok &= ks < 0.005
    notes.append(f"QLR KS {ks:.4f}")

    # max-t distribution against 1e6 draws
    worst_z = 0.0
    for p, dof, x in ((2, 9, 1.5), (3, 5, 2.0), (3, 39, 0.8), (4, 19, 2.5)):
        v = random_omega(rng, p, epsilon=0.0)
        est, se_mc = _max_mc(v, x, dof, rng, 1_000_000)
        val = mvt_max_cdf(x, v, dof)
        _, se_qmc = mvt_rect_prob(v, [-np.inf] * p, [x] * p, dof)
        worst_z = max(worst_z, abs(val - est) / math.hypot(se_mc, se_qmc))
    ok &= worst_z <= 3.0
    notes.append(f"max-t |z| {worst_z:.2f}")

    # active-set solver against grid search on 1000 instances
    worst_gap = 0.0
    for p in (1, 2, 3, 4):
        for _ in range(250):
            D, omega = qlr_instance(rng, p)
            grid, _ = grid_projection(D, omega)
            got = qlr_statistic(block(D, omega)).value
            worst_gap = max(worst_gap, abs(grid - got))
    ok &= worst_gap <= 1e-4
    notes.append(f"QLR grid gap {worst_gap:.1e} on 1000")

    # finite-sample MAX dominance beyond a threshold (exact bivariate routes)
    thresholds = []
    for rho in rng.uniform(-0.95, 0.95, size=10):
        for n_periods in (5, 10, 40):
            thresholds.append(_max_dominance_threshold(rho, n_periods))
    max_ok = all(t is not None for t in thresholds)
    ok &= max_ok
    notes.append(f"MAX dominance threshold found {max_ok} (max t* {max(t for t in thresholds if t is not None):.2f})")

    # finite-sample QLR quantile dominates the Gaussian-limit quantile
    qlr_ok = True
    qmc = QmcConfig(n_points=16384)
    for n in (50, 200, 1000):
        level = 1 - 0.1 / n
        nu_min = math.ceil(2 * math.log(n / 0.1))
        for p in (2, 3):
            v = random_omega(rng, p)
            gauss = fqlr_quantile(level, v, None, qmc)
            for nu in (nu_min, 2 * nu_min, 100):
                qlr_ok &= fqlr_quantile(level, v, nu, qmc) >= gauss
    ok &= qlr_ok
    notes.append(f"QLR dominance {qlr_ok}")

    assert record("distribution oracle suite", ok, "; ".join(notes))


# --------------------------------------------- moment correlations


def test_design_a_moment_correlations():
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 40, 0.5, n_units=10_000, seed=0)
    panel, truth, _ = make_design(spec)
    pm = panel_moments(panel, truth)
    first = float(np.mean(pm.omega_star[:, 0, 0, 1]))
    second = float(np.mean(pm.omega_star[:, 1, 0, 1]))
    ok = abs(first + 0.93) <= 0.02 and abs(second - 0.98) <= 0.02
    assert record(
        "design A moment correlations", ok,
        f"mean off-diagonal under g=1 {first:.3f} (-0.93+-0.02), g=2 {second:.3f} (0.98+-0.02)",
    )


# ----------------------------------------------- determinism, pipeline


def _synthetic_panel(path):
    rng = np.random.default_rng(77)
    n, n_t, burn = 50, 26, 20
    groups = np.repeat([1, 2, 3], [17, 17, 16])
    theta = np.array([[0.2, 1.0, -1.0], [0.5, -1.0, 1.0], [0.7, 0.5, 0.5]])
    mu = rng.normal(size=n)
    x = rng.normal(size=(n, n_t + burn, 2))
    y = np.zeros((n, n_t + burn + 1))
    for t in range(n_t + burn):
        th = theta[groups - 1]
        y[:, t + 1] = mu + th[:, 0] * y[:, t] + np.einsum("ik,ik->i", th[:, 1:], x[:, t]) + rng.normal(size=n)
    lag = y[:, burn:-1]
    outcome = y[:, burn + 1 :]
    covariates = np.concatenate([lag[:, :, None], x[:, burn:]], axis=2)
    save_panel(PanelDataset(outcome, covariates), path)
    return groups


def _cli(args):
    proc = subprocess.run(
        [sys.executable, "-m", "panelcs", *map(str, args)], capture_output=True, check=False
    )
    return proc.returncode, proc.stdout


def test_determinism_across_threads(tmp_path):
    panel = tmp_path / "panel.csv"
    _synthetic_panel(panel)
    sim = ["simulate", "--design", "a", "--t", 10, "--sigma", 0.5, "--reps", 40, "--seed", 9]
    ana = ["analyze", "--panel", panel, "--groups", 3, "--restarts", 8, "--time-constant",
           "--jackknife", "--beta", 0.01, "--seed", 4]
    outputs = {}
    for name, args in (("simulate", sim), ("analyze", ana)):
        runs = [_cli(args + ["--threads", k]) for k in (1, 4, 4)]
        outputs[name] = all(code == 0 for code, _ in runs) and len({out for _, out in runs}) == 1
    ok = all(outputs.values())
    assert record(
        "determinism across threads", ok,
        f"simulate identical {outputs['simulate']}, analyze identical {outputs['analyze']} (threads 1/4/4)",
    )


def test_synthetic_analyze_pipeline(tmp_path):
    panel = tmp_path / "panel.csv"
    truth = _synthetic_panel(panel)
    code, out = _cli(["analyze", "--panel", panel, "--groups", 3, "--restarts", 20,
                      "--time-constant", "--jackknife", "--beta", 0.01, "--seed", 1])
    report = json.loads(out) if code == 0 else None
    ok = report is not None
    detail = f"exit {code}"
    if ok:
        ghat = np.array([u["ghat"] for u in report["units"]])
        # match estimated labels to the truth by majority
        mapping = {g: np.bincount(truth[ghat == g]).argmax() for g in np.unique(ghat)}
        agree = float(np.mean([mapping[g] == t for g, t in zip(ghat, truth)]))
        covered = all(
            any(mapping.get(g) == t for g in u["cs_max"]) for u, t in zip(report["units"], truth)
        )
        meta = report["metadata"]
        ok = agree >= 0.9 and covered and meta["jackknife"] and meta["n_units"] == 50 and meta["n_periods"] == 26
        detail = (
            f"N=50 T=26 K=3 jackknife: label agreement {agree:.2f}, MAX joint set covers truth "
            f"{covered}, N_sel {meta['n_selected']}"
        )
    assert record("synthetic analyze pipeline", ok, detail)
