import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelcs.core import GroupModel, PanelDataset
from panelcs.errors import EmptyGroup, InputError, RankDeficient
from panelcs.estimation import EstimatorConfig, assign_groups, fit_grouped, objective
from panelcs.moments import panel_moments
from panelcs.simulation import DesignKind, DesignSpec, make_design

from conftest import constant_model, intercept_panel


def test_noiseless_recovery():
    rng = np.random.default_rng(1)
    truth = rng.integers(1, 4, size=30)
    means = np.array([-3.0, 0.5, 4.0])
    y = np.repeat(means[truth - 1][:, None], 6, axis=1)
    fit = fit_grouped(intercept_panel(y), EstimatorConfig(3, restarts=10, seed=2, time_constant=True))
    assert fit.objective == pytest.approx(0.0, abs=1e-20)
    # canonical labels sort groups by their first coefficient, matching means order
    np.testing.assert_array_equal(fit.model.assignment, truth)
    np.testing.assert_allclose(fit.model.coefficients[:, 0, 0], means, atol=1e-12)


def test_noiseless_time_varying_recovery():
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 8, 1e-9, n_units=24, seed=3)
    _, truth, _ = make_design(spec)
    labels = np.tile([1, 2, 3], 8)
    y = truth.coefficients[labels - 1, :, 0]
    fit = fit_grouped(intercept_panel(y), EstimatorConfig(3, restarts=20, seed=0))
    same = [
        np.array_equal(np.array(perm)[fit.model.assignment - 1], labels)
        for perm in itertools.permutations([1, 2, 3])
    ]
    assert any(same)
    assert fit.objective == pytest.approx(0.0, abs=1e-20)


def test_label_permutation_leaves_objective():
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 10, 0.5, n_units=30, seed=4)
    panel, _, _ = make_design(spec)
    fit = fit_grouped(panel, EstimatorConfig(3, restarts=5, seed=1))
    base = objective(panel, fit.model)
    assert base == pytest.approx(fit.objective, rel=1e-12)
    for perm in itertools.permutations(range(3)):
        perm = np.array(perm)
        inv = np.argsort(perm)
        model = GroupModel(fit.model.coefficients[perm], assignment=inv[fit.model.assignment - 1] + 1)
        assert objective(panel, model) == pytest.approx(base, rel=1e-14)


def test_trace_nonincreasing_on_many_panels():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, n_t, k = 20, 5, int(rng.integers(1, 3))
        x = rng.normal(size=(n, n_t, k))
        x[..., 0] = 1.0
        beta = rng.normal(scale=2.0, size=(3, n_t, k))
        labels = rng.integers(0, 3, size=n)
        y = np.einsum("itk,itk->it", x, beta[labels]) + rng.normal(size=(n, n_t))
        cfg = EstimatorConfig(3, restarts=3, seed=seed, time_constant=True)
        fit = fit_grouped(PanelDataset(y, x), cfg)
        trace = np.array(fit.trace)
        assert np.all(np.diff(trace) <= 1e-12 * (1 + trace[:-1]))


@settings(max_examples=20)
@given(st.integers(0, 10**6))
def test_objective_below_truth(seed):
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 10, 0.3, n_units=25, seed=seed)
    panel, truth, _ = make_design(spec)
    fit = fit_grouped(panel, EstimatorConfig(3, restarts=10, seed=seed))
    assert fit.objective <= objective(panel, truth) + 1e-10


def test_deterministic_across_threads():
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 12, 0.5, n_units=40, seed=5)
    panel, _, _ = make_design(spec)
    cfg = EstimatorConfig(3, restarts=16, seed=99)
    a = fit_grouped(panel, cfg, threads=1)
    b = fit_grouped(panel, cfg, threads=4)
    assert a.model.coefficients.tobytes() == b.model.coefficients.tobytes()
    np.testing.assert_array_equal(a.model.assignment, b.model.assignment)
    assert (a.objective, a.restart, a.trace) == (b.objective, b.restart, b.trace)


def test_fitted_assignment_is_least_squares():
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 10, 0.6, n_units=30, seed=6)
    panel, _, _ = make_design(spec)
    fit = fit_grouped(panel, EstimatorConfig(3, restarts=5, seed=0))
    pm = panel_moments(panel, fit.model)
    idx = fit.model.assignment - 1
    assert np.all(pm.D_u[np.arange(30), idx] <= 1e-12)


def test_assign_groups_exact_and_ties():
    model = constant_model([0.0, 1.0, 2.0], 3)
    y = np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0], [0.5, 0.5, 0.5]])
    out = assign_groups(intercept_panel(y), model)
    np.testing.assert_array_equal(out.assignment, [1, 3, 1])


def test_naive_assignment_errs_in_noisy_design():
    spec = DesignSpec(DesignKind.HOMOSCEDASTIC_A, 40, 0.5, n_units=50, seed=7)
    panel, truth, _ = make_design(spec)
    fitted = assign_groups(panel, truth)
    assert np.any(fitted.assignment != truth.assignment)


def test_rank_deficient():
    y = np.arange(8, dtype=float).reshape(4, 2)
    x = np.ones((4, 2, 2))  # duplicated regressor
    with pytest.raises(RankDeficient):
        fit_grouped(PanelDataset(y, x), EstimatorConfig(2, restarts=2, time_constant=True))


def test_every_restart_empties_a_group():
    # three identical units with three groups: any start leaves a group empty after one step
    y = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    with pytest.raises(EmptyGroup):
        fit_grouped(intercept_panel(y), EstimatorConfig(3, restarts=3, time_constant=True))


def test_config_validation():
    with pytest.raises(InputError):
        EstimatorConfig(1)
    with pytest.raises(InputError):
        EstimatorConfig(2, restarts=0)
    with pytest.raises(InputError):
        fit_grouped(intercept_panel([[1.0, 2.0]]), EstimatorConfig(2))
