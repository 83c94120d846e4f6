import logging
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import balanced_spec
from morpho.errors import DataError, DimensionMismatchError, FitError
from morpho.mesh import measure, unflatten
from morpho.regression_shape import regression_cv_r2, regression_fit, representative_for_value
from morpho.synth import ConfounderEffect, generate
from oracles import constrained_representative


@pytest.fixture(scope="module")
def overweight():
    """Controls whose BMI thickens the LV wall and nothing else."""
    spec = balanced_spec(
        n=60,
        confounder_effects=[ConfounderEffect("bmi", "thicken_lv", 0.5)],
        variation_modes=8,
    )
    cohort, truth = generate(spec)
    controls = cohort.subset(cohort.class_mask("controls"))
    return controls, truth


@pytest.fixture(scope="module")
def bmi_model(overweight):
    c, _ = overweight
    return regression_fit(c.shapes, c.demographics["bmi"].to_numpy(), 3)


def test_linear_target_high_r2(balanced):
    cohort, truth = balanced
    d = truth.variation_directions[0]
    values = (cohort.shapes - cohort.shapes.mean(axis=0)) @ d + 50.0
    assert regression_cv_r2(cohort.shapes, values, 3, 5, seed=0) >= 0.95


def test_permuted_target_no_r2(overweight):
    c, _ = overweight
    values = np.random.default_rng(1).permutation(c.demographics["bmi"].to_numpy())
    assert regression_cv_r2(c.shapes, values, 3, 5, seed=0) <= 0.1


def test_prediction_at_mean(bmi_model, overweight):
    c, _ = overweight
    assert abs(bmi_model.predict(bmi_model.mean_shape) - c.demographics["bmi"].mean()) < 1e-9
    with pytest.raises(DimensionMismatchError):
        bmi_model.predict(bmi_model.mean_shape[:-1])


def test_mean_value_gives_mean_shape(bmi_model):
    x = representative_for_value(bmi_model, bmi_model.value_mean)
    assert np.array_equal(x, bmi_model.mean_shape)


def test_matches_numerical_constrained_optimizer(bmi_model):
    m = bmi_model
    k = m.metric_modes
    rng = np.random.default_rng(2)
    for b in m.value_mean + rng.uniform(-2.5, 2.5, 20) * m.value_sd:
        closed = representative_for_value(m, b)
        numeric = constrained_representative(
            m.mean_shape, m.pca.components[:k], m.pca.variances[:k], m.coeffs, m.value_mean, b
        )
        assert np.abs(closed - numeric).max() < 1e-6
        assert abs(m.predict(closed) - b) < 1e-9


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_affine_in_target(bmi_model, b1, b2):
    b1, b2 = bmi_model.value_mean + b1, bmi_model.value_mean + b2
    x1 = representative_for_value(bmi_model, b1)
    x2 = representative_for_value(bmi_model, b2)
    xm = representative_for_value(bmi_model, (b1 + b2) / 2)
    assert np.abs(x1 + x2 - 2 * xm).max() < 1e-10 * max(1.0, np.abs(x1).max())


def test_mass_effect_exceeds_volume_effect(bmi_model, overweight):
    c, _ = overweight
    base = measure(unflatten(bmi_model.mean_shape, c.template))
    high = measure(unflatten(representative_for_value(bmi_model, 30.0), c.template))
    low = measure(unflatten(representative_for_value(bmi_model, 17.5), c.template))
    mass_change = high.lv_mass / base.lv_mass - low.lv_mass / base.lv_mass
    vol_change = abs(high.lv_edv / base.lv_edv - low.lv_edv / base.lv_edv)
    assert mass_change > 0
    assert mass_change > vol_change


def test_extreme_target_warns(bmi_model, caplog):
    with caplog.at_level(logging.WARNING):
        representative_for_value(bmi_model, bmi_model.value_mean + 4 * bmi_model.value_sd)
    assert "3 SD" in caplog.text
    with pytest.raises(DataError):
        representative_for_value(bmi_model, float("nan"))


def test_fit_checks(rng):
    x = rng.standard_normal((10, 6))
    with pytest.raises(DataError, match="constant"):
        regression_fit(x, np.ones(10))
    with pytest.raises(DataError, match="at least 5"):
        regression_fit(x[:4], np.arange(4.0))
    with pytest.raises(DimensionMismatchError):
        regression_fit(x, np.arange(9.0))
    with pytest.raises(DataError, match="non-finite"):
        regression_fit(x, np.r_[np.arange(9.0), np.nan])


def test_coefficients_orthogonal_to_variability(bmi_model):
    # a model whose coefficients see none of the metric modes cannot be inverted
    m = bmi_model
    p = m.pca.components[: m.metric_modes]
    w = np.random.default_rng(0).standard_normal(m.mean_shape.size)
    w -= p.T @ (p @ w)
    broken = replace(m, pls=SimpleNamespace(coef=w[:, None]))
    with pytest.raises(FitError, match="orthogonal"):
        representative_for_value(broken, m.value_mean + 1)
