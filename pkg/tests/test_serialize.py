import json

import numpy as np
import pytest

from conftest import CONFOUNDERS
from morpho.discriminant import PipelineConfig, fit_pipeline
from morpho.errors import DataError
from morpho.linear import pca_fit
from morpho.regression_shape import regression_fit, representative_for_value
from morpho.serialize import (
    dumps,
    load,
    pca_from_dict,
    pca_to_dict,
    pipeline_from_dict,
    pipeline_to_dict,
    regression_from_dict,
    regression_to_dict,
    save,
)


@pytest.fixture(scope="module")
def fitted(small_cohort):
    cohort, _ = small_cohort
    cfg = PipelineConfig(pca_modes=10, adjust=True, deflate=True, confounders=CONFOUNDERS)
    return cohort, fit_pipeline(cohort, cfg)


def test_pipeline_roundtrip(fitted, tmp_path):
    cohort, f = fitted
    path = tmp_path / "model.json"
    save(pipeline_to_dict(f, cohort.template), path)
    g, template = pipeline_from_dict(load(path))
    assert g.config == f.config
    assert np.array_equal(g.pattern.standardized, f.pattern.standardized)
    assert np.array_equal(g.pattern.raw_coeffs, f.pattern.raw_coeffs)
    assert np.array_equal(template.vertices, cohort.template.vertices)
    assert list(template.region_map) == list(cohort.template.region_map)
    # predictions (including deflation and adjustment) survive exactly
    assert np.abs(g.decision_function(cohort) - f.decision_function(cohort)).max() < 1e-12
    assert np.abs(g.scores(cohort) - f.scores(cohort)).max() < 1e-12


def test_pipeline_without_pls_or_template(small_cohort):
    cohort, _ = small_cohort
    f = fit_pipeline(cohort, PipelineConfig(dr_method="pca", pca_modes=4))
    g, template = pipeline_from_dict(json.loads(dumps(pipeline_to_dict(f))))
    assert template is None and g.pls is None
    assert np.array_equal(g.decision_function(cohort), f.decision_function(cohort))


def test_regression_roundtrip(small_cohort):
    cohort, _ = small_cohort
    m = regression_fit(cohort.shapes, cohort.demographics["bmi"].to_numpy(), 3)
    doc = json.loads(dumps(regression_to_dict(m, metrics={"cv_r2": 0.5})))
    m2, _ = regression_from_dict(doc)
    assert doc["metrics"] == {"cv_r2": 0.5}
    assert np.array_equal(representative_for_value(m2, 27.0), representative_for_value(m, 27.0))


def test_pca_roundtrip_and_canonical_text(small_cohort):
    cohort, _ = small_cohort
    m = pca_fit(cohort.shapes)
    text = dumps(pca_to_dict(m))
    m2 = pca_from_dict(json.loads(text))
    assert np.array_equal(m2.components, m.components)
    assert np.array_equal(m2.variances, m.variances)
    assert dumps(pca_to_dict(m2)) == text
    assert dumps({"b": 1, "a": 2}).startswith('{"a"')
    with pytest.raises(ValueError):
        dumps({"x": float("nan")})


def test_wrong_kind_or_version(fitted):
    cohort, f = fitted
    doc = pipeline_to_dict(f)
    with pytest.raises(DataError, match="shape_regression"):
        regression_from_dict(doc)
    doc["version"] = 99
    with pytest.raises(DataError, match="version"):
        pipeline_from_dict(doc)
    with pytest.raises(DataError, match="list"):
        pipeline_from_dict([])


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(DataError, match="malformed"):
        load(p)
