from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import CONFOUNDERS
from morpho.cohort import Cohort
from morpho.discriminant import PipelineConfig
from morpho.errors import ConfigError, DataError
from morpho.experiments import (
    REPORT_COLUMNS,
    DownsampleSpec,
    deflation_population_study,
    downsample,
    dummy_variable_experiment,
    keep_count,
    rank_weighted_draws,
    stability_experiment,
)
from morpho.synth import generate, imbalance_spec
from oracles import exact_inclusion


def tiny_cohort(n_controls=8, n_cases=4, seed=0):
    rng = np.random.default_rng(seed)
    n = n_controls + n_cases
    ids = [f"s{i:02d}" for i in range(n)]
    demo = pd.DataFrame({"bmi": rng.normal(25, 3, n), "age": rng.normal(40, 5, n)}, index=ids)
    labels = np.r_[np.zeros(n_controls, int), np.ones(n_cases, int)]
    return Cohort(ids, rng.standard_normal((n, 6)), labels, demo)


def test_first_draw_proportional_to_rank():
    w = np.arange(1.0, 9.0)
    first = np.array([rank_weighted_draws(w, 1, np.random.default_rng((0, s)))[0] for s in range(10_000)])
    freq = np.bincount(first, minlength=8) / len(first)
    assert np.abs(freq - w / w.sum()).max() < 0.02


def test_inclusion_matches_exact_enumeration():
    c = tiny_cohort()
    spec = DownsampleSpec("controls", 0.25, "bmi")
    ctl = np.array(c.subject_ids)[:8]
    counts = dict.fromkeys(ctl, 0)
    n_runs = 4000
    for s in range(n_runs):
        sub = downsample(c, replace(spec, seed=(1, s)))
        for sid in sub.subject_ids:
            if sid in counts:
                counts[sid] += 1
    ranks = c.demographics.loc[ctl, "bmi"].rank().to_numpy()
    expect = exact_inclusion(ranks, 2)
    got = np.array([counts[sid] for sid in ctl]) / n_runs
    assert np.abs(got - expect).max() < 0.03


def test_keep_fraction_one_is_identity():
    c = tiny_cohort()
    assert downsample(c, DownsampleSpec("controls", 1.0)) is c


@given(st.floats(0.01, 1.0), st.integers(1, 200))
def test_keep_count(frac, n):
    k = keep_count(frac, n)
    assert 1 <= k <= n
    assert k >= frac * n - 1e-6 and k - 1 < frac * n


@given(st.integers(0, 10_000), st.sampled_from(["controls", "cases"]), st.floats(0.1, 1.0))
def test_downsampling_only_changes_membership(seed, target, frac):
    c = tiny_cohort()
    sub = downsample(c, DownsampleSpec(target, frac, "bmi", seed))
    idx = [c.subject_ids.index(s) for s in sub.subject_ids]
    assert np.array_equal(sub.shapes, c.shapes[idx])
    pd.testing.assert_frame_equal(sub.demographics, c.demographics.iloc[idx])
    other = "cases" if target == "controls" else "controls"
    assert sub.class_mask(other).sum() == c.class_mask(other).sum()
    assert sub.class_mask(target).sum() == keep_count(frac, c.class_mask(target).sum())


def test_downsample_deterministic_and_checked():
    c = tiny_cohort()
    a = downsample(c, DownsampleSpec(seed=5))
    b = downsample(c, DownsampleSpec(seed=5))
    assert a.subject_ids == b.subject_ids
    with pytest.raises(DataError, match="height"):
        downsample(c, DownsampleSpec(weight_column="height"))
    with pytest.raises(ConfigError):
        DownsampleSpec(keep_fraction=0.0)


def test_rank_ties_broken_by_id():
    c = tiny_cohort()
    demo = c.demographics.copy()
    demo["bmi"] = 25.0
    c2 = Cohort(c.subject_ids, c.shapes, c.labels, demo)
    a = downsample(c2, DownsampleSpec(seed=3))
    b = downsample(c2, DownsampleSpec(seed=3))
    assert a.subject_ids == b.subject_ids


# -- studies on a small synthetic cohort -------------------------------------------


@pytest.fixture(scope="module")
def small_imbalanced():
    cohort, _ = generate(imbalance_spec(0, n_controls=60, n_cases=30, resolution=3, variation_modes=10))
    return cohort


def test_stability_report_schema_and_determinism(small_imbalanced):
    cfgs = [PipelineConfig(dr_method="pca", pca_modes=5), PipelineConfig(dr_method="pca", pca_modes=5, adjust=True, confounders=CONFOUNDERS)]
    a = stability_experiment(small_imbalanced, cfgs, n_seeds=3)
    b = stability_experiment(small_imbalanced, cfgs, n_seeds=3)
    assert list(a.records.columns) == REPORT_COLUMNS
    assert len(a.records) == 2 + 3 * 2
    pd.testing.assert_frame_equal(a.records, b.records)
    dots = a.records[["dot_full", "dot_confounder_pattern"]].to_numpy()
    assert np.all((dots >= -1) & (dots <= 1))
    full = a.records[a.records["seed"] == -1]
    assert np.all(full["dot_full"] == 1.0)
    assert set(a.summary().index.get_level_values("arm")) == {"downsampled"}
    # kept controls: ceil(0.25 * 60)
    assert set(a.runs()["n_controls"]) == {15}


def test_uniform_downsampling_null(small_imbalanced):
    cfgs = [PipelineConfig(dr_method="pca", pca_modes=5), PipelineConfig(dr_method="pca", pca_modes=5, adjust=True, confounders=CONFOUNDERS)]
    rep = stability_experiment(small_imbalanced, cfgs, n_seeds=12, downsample_spec=DownsampleSpec(weight_column=None), confounder_pattern_column="bmi")
    q = {adj: rep.runs(adjust=adj)["dot_full"].quantile([0.25, 0.75]).to_numpy() for adj in (False, True)}
    # interquartile ranges overlap
    assert q[False][0] <= q[True][1] and q[True][0] <= q[False][1]


def test_deflation_study_arms(small_imbalanced):
    cfg = PipelineConfig(dr_method="pls", deflate=True, confounders=CONFOUNDERS)
    rep = deflation_population_study(small_imbalanced, cfg, n_seeds=2)
    runs = rep.runs()
    assert sorted(runs["arm"].unique()) == ["a", "b", "c"]
    assert set(runs[runs["arm"] == "c"]["deflate_train"]) == {"both"}
    assert set(runs[runs["arm"] == "a"]["n_cases"]) == {8}
    with pytest.raises(ConfigError, match="deflate"):
        deflation_population_study(small_imbalanced, PipelineConfig(), n_seeds=1)


def test_dummy_experiment_shape(small_imbalanced):
    out = dummy_variable_experiment(small_imbalanced, n_repeats=3, confounders=["age"])
    assert list(out.columns) == ["repeat", "training", "dot"]
    assert len(out) == 6
    again = dummy_variable_experiment(small_imbalanced, n_repeats=3, confounders=["age"])
    pd.testing.assert_frame_equal(out, again)
    with pytest.raises(ConfigError):
        dummy_variable_experiment(small_imbalanced, n_repeats=0)
    with pytest.raises(ConfigError, match="reserved"):
        dummy_variable_experiment(small_imbalanced, n_repeats=1, confounders=["dummy"])
