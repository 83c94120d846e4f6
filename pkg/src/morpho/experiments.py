"""Imbalance studies: rank-weighted downsampling, pattern stability over seeds,
deflation training-population arms and the dummy-variable demonstration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .cohort import Cohort
from .confound import confounder_pattern, deflation_fit
from .discriminant import PipelineConfig, fit_pipeline, measurement_response, pattern_similarity
from .errors import ConfigError, DataError, MorphoError
from .regression_shape import regression_fit
from .runtime import pmap

log = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "arm",
    "seed",
    "config",
    "dr_method",
    "pca_modes",
    "pls_modes",
    "adjust",
    "deflate",
    "deflate_train",
    "n_controls",
    "n_cases",
    "dot_full",
    "dot_confounder_pattern",
    "lv_edv_ratio",
    "rv_edv_ratio",
    "lv_mass_ratio",
    "error",
]


@dataclass(frozen=True)
class DownsampleSpec:
    """Keep ``ceil(keep_fraction * n)`` subjects of ``target_class``.

    With a ``weight_column`` the keep probability follows the rank of that
    column within the class; ``None`` samples uniformly.
    """

    target_class: str = "controls"
    keep_fraction: float = 0.25
    weight_column: str | None = "bmi"
    seed: object = 0

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError("keep_fraction must be in (0, 1]")


def rank_weighted_draws(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` successive draws without replacement, each proportional to the remaining weights."""
    w = np.asarray(weights, dtype=float).copy()
    if k > len(w):
        raise ConfigError(f"cannot draw {k} of {len(w)} items")
    out = np.empty(k, dtype=int)
    for i in range(k):
        p = w / w.sum()
        j = rng.choice(len(w), p=p)
        out[i] = j
        w[j] = 0.0
    return out


def keep_count(keep_fraction: float, n: int) -> int:
    return min(n, math.ceil(round(keep_fraction * n, 9)))


def downsample(cohort: Cohort, spec: DownsampleSpec) -> Cohort:
    """Subset of ``cohort`` with the target class thinned; other subjects untouched."""
    mask = cohort.class_mask(spec.target_class)
    idx = np.flatnonzero(mask)
    n = len(idx)
    k = keep_count(spec.keep_fraction, n)
    if k == n:
        return cohort
    if spec.weight_column is None:
        weights = np.ones(n)
    else:
        if spec.weight_column not in cohort.demographics.columns:
            raise DataError(f"weight column {spec.weight_column!r} not in demographics")
        values = cohort.demographics[spec.weight_column].to_numpy(dtype=float)[idx]
        if np.isnan(values).any():
            raise DataError(f"missing {spec.weight_column!r} values in the target class")
        ids = np.array(cohort.subject_ids)[idx]
        # ties broken by subject id
        order = np.lexsort((ids, values))
        weights = np.empty(n)
        weights[order] = np.arange(1, n + 1)
    drawn = rank_weighted_draws(weights, k, np.random.default_rng(spec.seed))
    keep = ~mask
    keep[idx[drawn]] = True
    return cohort.subset(keep)


@dataclass
class StabilityReport:
    records: pd.DataFrame

    def summary(self) -> pd.DataFrame:
        ok = self.records[(self.records["seed"] >= 0) & (self.records["error"] == "")]
        keys = ["arm", "config", "adjust", "deflate", "deflate_train"]
        return (
            ok.groupby(keys, sort=False)[["dot_full", "dot_confounder_pattern", "lv_mass_ratio"]]
            .quantile([0.25, 0.5, 0.75])
            .unstack()
        )

    def to_csv(self, path) -> None:
        self.records.to_csv(path, index=False, float_format="%.17g")

    def runs(self, **filters) -> pd.DataFrame:
        df = self.records[self.records["seed"] >= 0]
        for key, value in filters.items():
            df = df[df[key] == value]
        return df


def _row(arm, seed, cfg: PipelineConfig, cohort: Cohort, **values) -> dict:
    row = dict.fromkeys(REPORT_COLUMNS, np.nan)
    row.update(
        arm=arm,
        seed=seed,
        config=cfg.label,
        dr_method=cfg.dr_method,
        pca_modes=cfg.pca_modes,
        pls_modes=cfg.pls_modes,
        adjust=cfg.adjust,
        deflate=cfg.deflate,
        deflate_train=cfg.deflate_train if cfg.deflate else "",
        n_controls=cohort.n_controls,
        n_cases=cohort.n_cases,
        error="",
    )
    row.update(values)
    return row


def _evaluate(fitted, reference, confounder_pat, template) -> dict:
    out = {"dot_full": pattern_similarity(fitted.pattern, reference.pattern) if reference else 1.0}
    if confounder_pat is not None:
        out["dot_confounder_pattern"] = pattern_similarity(fitted.pattern.standardized, confounder_pat)
    if template is not None and template.region_map is not None:
        resp = measurement_response(fitted.pattern, template, [2.0]).iloc[0]
        out.update({k: float(resp[k]) for k in ("lv_edv_ratio", "rv_edv_ratio", "lv_mass_ratio")})
    return out


def confounder_regression_pattern(cohort: Cohort, column: str, train_class="controls", n_components=3) -> np.ndarray:
    """Whitened pattern of a PLS model predicting ``column`` from shape on one class."""
    mask = cohort.class_mask(train_class)
    values = cohort.demographics[column].to_numpy(dtype=float)[mask]
    return regression_fit(cohort.shapes[mask], values, n_components).pattern()


def stability_experiment(
    cohort: Cohort,
    configs,
    n_seeds: int = 100,
    downsample_spec: DownsampleSpec | None = None,
    master_seed: int = 0,
    confounder_pattern_column: str | None = None,
    arm: str = "downsampled",
) -> StabilityReport:
    """Fit every config on the full cohort, then on ``n_seeds`` downsampled cohorts.

    Seed ``s`` draws its subset from the stream ``(master_seed, s)``. Failed
    fits are recorded with their error message. Full-data rows carry seed -1.
    """
    spec = downsample_spec or DownsampleSpec()
    configs = list(configs)
    template = cohort.template
    pat_col = confounder_pattern_column or spec.weight_column
    conf_pat = None
    if pat_col is not None and pat_col in cohort.demographics.columns:
        conf_pat = confounder_regression_pattern(cohort, pat_col)

    full = {}
    rows = []
    for cfg in configs:
        full[cfg] = fit_pipeline(cohort, cfg)
        rows.append(_row("full", -1, cfg, cohort, **_evaluate(full[cfg], None, conf_pat, template)))

    def one_seed(s):
        sub = downsample(cohort, replace(spec, seed=(master_seed, s)))
        out = []
        for cfg in configs:
            try:
                fitted = fit_pipeline(sub, cfg)
                out.append(_row(arm, s, cfg, sub, **_evaluate(fitted, full[cfg], conf_pat, template)))
            except MorphoError as exc:
                log.warning("seed %d, %s: %s", s, cfg.label, exc)
                out.append(_row(arm, s, cfg, sub, error=str(exc)))
        return out

    for seed_rows in pmap(one_seed, range(n_seeds)):
        rows.extend(seed_rows)
    return StabilityReport(pd.DataFrame(rows, columns=REPORT_COLUMNS))


def deflation_population_study(
    cohort: Cohort,
    config: PipelineConfig,
    n_seeds: int = 100,
    keep_fraction: float = 0.25,
    weight_column: str = "bmi",
    master_seed: int = 0,
) -> StabilityReport:
    """Three deflation-training arms compared against the full-cohort deflated pattern.

    ``a``: the other class (cases) is downsampled, deflation trained on the
    intact controls. ``b``: controls are downsampled and deflation is trained
    on them. ``c``: controls are downsampled and deflation is trained on both
    classes.
    """
    if not config.deflate:
        raise ConfigError("deflation_population_study needs a config with deflate=True")
    ref_cfg = replace(config, deflate_train="controls")
    arms = [
        ("a", DownsampleSpec("cases", keep_fraction, weight_column), ref_cfg),
        ("b", DownsampleSpec("controls", keep_fraction, weight_column), ref_cfg),
        ("c", DownsampleSpec("controls", keep_fraction, weight_column), replace(config, deflate_train="both")),
    ]
    template = cohort.template
    conf_pat = None
    if weight_column in cohort.demographics.columns:
        conf_pat = confounder_regression_pattern(cohort, weight_column)
    reference = fit_pipeline(cohort, ref_cfg)
    rows = [_row("full", -1, ref_cfg, cohort, **_evaluate(reference, None, conf_pat, template))]

    def one_seed(s):
        out = []
        for name, spec, cfg in arms:
            sub = downsample(cohort, replace(spec, seed=(master_seed, s)))
            try:
                fitted = fit_pipeline(sub, cfg)
                out.append(_row(name, s, cfg, sub, **_evaluate(fitted, reference, conf_pat, template)))
            except MorphoError as exc:
                out.append(_row(name, s, cfg, sub, error=str(exc)))
        return out

    for seed_rows in pmap(one_seed, range(n_seeds)):
        rows.extend(seed_rows)
    return StabilityReport(pd.DataFrame(rows, columns=REPORT_COLUMNS))


DUMMY_COLUMN = "dummy"


def dummy_variable_experiment(
    cohort: Cohort,
    noise_sd: float = 0.5,
    n_repeats: int = 100,
    config: PipelineConfig | None = None,
    confounders=None,
    master_seed: int = 0,
) -> pd.DataFrame:
    """Dot product between a label-derived dummy confounder's shape pattern and the class pattern.

    Each repeat draws ``dummy = label + N(0, noise_sd^2)`` and fits deflation
    models on the controls only and on both classes with the dummy added to
    the confounders. Returns one row per (repeat, training population).
    """
    if n_repeats < 1:
        raise ConfigError("n_repeats must be >= 1")
    config = config or PipelineConfig()
    reference = fit_pipeline(cohort, config)
    base_conf = list(config.confounders if confounders is None else confounders)
    if DUMMY_COLUMN in base_conf:
        raise ConfigError(f"{DUMMY_COLUMN!r} is reserved for the generated variable")
    columns = base_conf + [DUMMY_COLUMN]

    def one_repeat(r):
        rng = np.random.default_rng((master_seed, r))
        demo = cohort.demographics.copy()
        demo[DUMMY_COLUMN] = cohort.labels + noise_sd * rng.standard_normal(len(cohort))
        c2 = replace(cohort, demographics=demo)
        out = []
        for training in ("controls", "both"):
            model = deflation_fit(c2, columns, training)
            pat = confounder_pattern(model, DUMMY_COLUMN, reference.pca, reference.pattern.whiten_modes)
            out.append(
                {
                    "repeat": r,
                    "training": training,
                    "dot": pattern_similarity(pat, reference.pattern.standardized),
                }
            )
        return out

    rows = [row for rep in pmap(one_repeat, range(n_repeats)) for row in rep]
    return pd.DataFrame(rows, columns=["repeat", "training", "dot"])
