"""Most-discriminating shape pattern between two classes.

Pipeline: optional confounding deflation, linear dimensionality reduction
(PCA, PLS or PCA followed by PLS), logistic regression on the reduced shape
features (optionally adjusted by confounders), back-projection of the shape
coefficients to the full space and PCA whitening of the result.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold

from .cohort import CASE, CONTROL, Cohort, Standardizer
from .confound import DeflationModel, deflate, deflation_fit
from .errors import ConfigError, DimensionMismatchError, FitError
from .linear import (
    DEFAULT_RIDGE,
    WHITEN_VARIANCE,
    LogisticModel,
    PcaModel,
    PlsModel,
    cross_entropy,
    logistic_fit,
    pca_fit,
    pca_whiten_direction,
    pls_dr_basis,
    pls_fit,
)
from .mesh import TriMesh, measure, unflatten

log = logging.getLogger(__name__)

DR_METHODS = ("pca", "pls", "pca+pls")


@dataclass(frozen=True)
class PipelineConfig:
    dr_method: str = "pca+pls"
    pca_modes: int = 20
    pls_modes: int = 3
    adjust: bool = False
    deflate: bool = False
    deflate_train: str = "controls"
    deflate_components: int | None = None
    confounders: tuple = ()
    ridge: float = DEFAULT_RIDGE
    cv_folds: int = 10
    seed: int = 0
    whiten_variance: float = WHITEN_VARIANCE

    def __post_init__(self):
        method = self.dr_method.lower().replace("_", "+")
        if method not in DR_METHODS:
            raise ConfigError(f"unknown dr_method {self.dr_method!r}; expected one of {DR_METHODS}")
        object.__setattr__(self, "dr_method", method)
        object.__setattr__(self, "confounders", tuple(self.confounders))
        if method == "pca+pls" and self.pls_modes > self.pca_modes:
            raise ConfigError("pca+pls requires pls_modes <= pca_modes")
        if (self.adjust or self.deflate) and not self.confounders:
            raise ConfigError("adjust/deflate need at least one confounder")
        if self.pca_modes < 1 or self.pls_modes < 1:
            raise ConfigError("mode counts must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if not 0 < self.whiten_variance <= 1:
            raise ConfigError("whiten_variance must be in (0, 1]")

    @property
    def label(self) -> str:
        if self.dr_method == "pca":
            return f"PCA{self.pca_modes}"
        if self.dr_method == "pls":
            return f"PLS{self.pls_modes}"
        return f"PCA{self.pca_modes}+PLS{self.pls_modes}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confounders"] = list(self.confounders)
        return d

    @classmethod
    def from_dict(cls, d) -> "PipelineConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown pipeline config keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class DiscriminativePattern:
    """Raw coefficients ``w_X``, whitened unit pattern, training score SD and mean shape.

    ``score_sd`` is the SD of the training shapes projected on the unit
    pattern, i.e. the scale of ``lambda`` in :meth:`representative_shape`.
    """

    raw_coeffs: np.ndarray
    standardized: np.ndarray
    score_sd: float
    mean_shape: np.ndarray
    whiten_modes: int = 0

    def score(self, shape) -> np.ndarray:
        return score(self, shape)

    def representative_shape(self, lam: float) -> np.ndarray:
        return representative_shape(self, lam)


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    config: PipelineConfig
    logistic: LogisticModel
    pattern: DiscriminativePattern
    pca: PcaModel  # full-rank PCA of the training shapes, used for whitening
    embedding: np.ndarray  # K x 3N, reduced features = (X - mean) @ K.T
    mean: np.ndarray
    pls: PlsModel | None = None
    pls_basis: np.ndarray | None = None
    deflation: DeflationModel | None = None
    adjust_standardizer: Standardizer | None = None
    sign: float = 1.0
    extra: dict = field(default_factory=dict)

    def features(self, cohort: Cohort) -> np.ndarray:
        if self.deflation is not None and not cohort.deflated:
            cohort = deflate(self.deflation, cohort)
        f = (cohort.shapes - self.mean) @ self.embedding.T
        if self.adjust_standardizer is not None:
            m = cohort.confounders(self.adjust_standardizer.columns)
            f = np.hstack([f, self.adjust_standardizer.transform(m)])
        return f

    def decision_function(self, cohort: Cohort) -> np.ndarray:
        return self.logistic.decision_function(self.features(cohort))

    def predict_proba(self, cohort: Cohort) -> np.ndarray:
        return self.logistic.predict_proba(self.features(cohort))

    def scores(self, cohort: Cohort) -> np.ndarray:
        if self.deflation is not None and not cohort.deflated:
            cohort = deflate(self.deflation, cohort)
        return score(self.pattern, cohort.shapes)


def backproject(w_red, pca: PcaModel | None = None, pls_basis=None) -> np.ndarray:
    """Map reduced-space coefficients back to shape space through the transposed embeddings."""
    w = np.asarray(w_red, dtype=float)
    if pls_basis is not None:
        b = np.asarray(pls_basis, dtype=float)
        if b.shape[0] != w.size:
            raise DimensionMismatchError(f"{w.size} coefficients for a {b.shape[0]}-vector PLS basis")
        w = b.T @ w
    if pca is not None:
        if pca.n_components != w.size:
            raise DimensionMismatchError(f"{w.size} coefficients for {pca.n_components} PCA modes")
        w = pca.components.T @ w
    if pca is None and pls_basis is None:
        raise DimensionMismatchError("backproject needs a PCA model or a PLS basis")
    return w


def score(pattern: DiscriminativePattern, shape) -> np.ndarray | float:
    """Remodelling score ``<w_X, x - mean>`` using the raw (unwhitened) coefficients."""
    x = np.asarray(shape, dtype=float)
    if x.shape[-1] != pattern.raw_coeffs.size:
        raise DimensionMismatchError(
            f"shape of length {x.shape[-1]} vs pattern of length {pattern.raw_coeffs.size}"
        )
    s = (x - pattern.mean_shape) @ pattern.raw_coeffs
    return float(s) if np.ndim(s) == 0 else s


def representative_shape(pattern: DiscriminativePattern, lam: float) -> np.ndarray:
    """``mean + lam * w_hat``; ``lam`` is clamped to three pattern SDs."""
    limit = 3.0 * pattern.score_sd
    if abs(lam) > limit:
        log.warning("lambda %.4g outside +-3 SD (%.4g); clamped", lam, limit)
        lam = float(np.clip(lam, -limit, limit))
    return pattern.mean_shape + lam * pattern.standardized


def pattern_similarity(a: DiscriminativePattern | np.ndarray, b: DiscriminativePattern | np.ndarray) -> float:
    wa = a.standardized if isinstance(a, DiscriminativePattern) else np.asarray(a, dtype=float)
    wb = b.standardized if isinstance(b, DiscriminativePattern) else np.asarray(b, dtype=float)
    if wa.shape != wb.shape:
        raise DimensionMismatchError(f"patterns of length {wa.size} and {wb.size} are not comparable")
    return float(np.clip(wa @ wb, -1.0, 1.0))


def whitened_scores(pattern: DiscriminativePattern | np.ndarray, pca: PcaModel, shapes, k_modes: int | None = None) -> np.ndarray:
    """Projections of the whitened shapes on a standardized pattern.

    Shapes are mapped to ``Lambda^(-1/2) P (x - mean)`` on the leading
    ``k_modes`` PCA modes, where their sample covariance is the identity, so
    the correlation of two patterns' whitened scores equals the dot product
    of the patterns (restricted to those modes).
    """
    w = pattern.standardized if isinstance(pattern, DiscriminativePattern) else np.asarray(pattern, dtype=float)
    if w.shape != pca.mean.shape:
        raise DimensionMismatchError(f"pattern of length {w.size} vs PCA dimension {pca.mean.size}")
    k = pca.modes_for_variance() if k_modes is None else k_modes
    z = pca.transform(shapes, k) / np.sqrt(pca.variances[:k])
    return z @ (pca.components[:k] @ w)


def fit_pipeline(cohort: Cohort, config: PipelineConfig) -> FittedPipeline:
    if cohort.n_cases == 0 or cohort.n_controls == 0:
        raise FitError("both classes must be present to fit a discriminant pipeline")
    deflation = None
    work = cohort
    if config.deflate:
        deflation = deflation_fit(
            cohort, config.confounders, config.deflate_train, config.deflate_components
        )
        work = deflate(deflation, cohort)

    x = work.shapes
    y = work.labels.astype(float)
    pca = pca_fit(x)
    mean = pca.mean
    xc = x - mean

    pls = basis = None
    if config.dr_method == "pca":
        dr_pca = pca.truncate(config.pca_modes)
        embedding = dr_pca.components
    elif config.dr_method == "pls":
        pls = pls_fit(xc, y, config.pls_modes)
        basis = pls_dr_basis(pls)
        dr_pca = None
        embedding = basis
    else:
        dr_pca = pca.truncate(config.pca_modes)
        s = xc @ dr_pca.components.T
        pls = pls_fit(s, y, config.pls_modes)
        basis = pls_dr_basis(pls)
        embedding = basis @ dr_pca.components
    features = xc @ embedding.T
    n_shape = features.shape[1]

    adjust_std = None
    if config.adjust:
        m = work.confounders(config.confounders)
        adjust_std = Standardizer.fit(m, config.confounders)
        features = np.hstack([features, adjust_std.transform(m)])

    logistic = logistic_fit(features, y, ridge=config.ridge, n_shape=n_shape)
    w_x = backproject(logistic.shape_coeffs, dr_pca, basis)
    k_whiten = pca.modes_for_variance(config.whiten_variance)
    w_hat = pca_whiten_direction(pca, w_x, k_whiten)

    # orient so that cases score positive on average
    sign = 1.0
    if xc[y == CASE].mean(axis=0) @ w_x < 0:
        sign = -1.0
        w_x, w_hat = -w_x, -w_hat
    proj = xc @ w_hat
    pattern = DiscriminativePattern(
        raw_coeffs=w_x,
        standardized=w_hat,
        score_sd=float(proj.std(ddof=1)),
        mean_shape=mean,
        whiten_modes=k_whiten,
    )
    return FittedPipeline(
        config=config,
        logistic=logistic,
        pattern=pattern,
        pca=pca,
        embedding=embedding,
        mean=mean,
        pls=pls,
        pls_basis=basis,
        deflation=deflation,
        adjust_standardizer=adjust_std,
        sign=sign,
    )


def _folds(labels, n_folds: int, seed: int):
    counts = np.bincount(labels, minlength=2)
    if n_folds < 2:
        raise ConfigError("cross-validation needs at least 2 folds")
    if n_folds > counts.min():
        raise ConfigError(f"{n_folds} folds but the smaller class has {counts.min()} subjects")
    skf = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    return list(skf.split(np.zeros(len(labels)), labels))


def out_of_fold_logits(cohort: Cohort, config: PipelineConfig) -> np.ndarray:
    """Validation logits from seeded stratified folds; every fit happens inside the training fold."""
    logits = np.empty(len(cohort))
    for train, test in _folds(cohort.labels, config.cv_folds, config.seed):
        tr = cohort.subset(train)
        if tr.n_cases == 0 or tr.n_controls == 0:
            raise FitError("a training fold contains a single class")
        fitted = fit_pipeline(tr, config)
        logits[test] = fitted.decision_function(cohort.subset(test))
    return logits


def cross_validate(cohort: Cohort, config: PipelineConfig) -> float:
    """Mean validation cross-entropy over all subjects."""
    return cross_entropy(cohort.labels, out_of_fold_logits(cohort, config))


def confounder_only_cv(cohort: Cohort, confounders, n_folds: int, seed: int, ridge=DEFAULT_RIDGE) -> float:
    """Cross-validated log-loss of a logistic model on the confounders alone."""
    logits = np.empty(len(cohort))
    for train, test in _folds(cohort.labels, n_folds, seed):
        m = cohort.confounders(confounders)
        std = Standardizer.fit(m[train], confounders)
        model = logistic_fit(std.transform(m[train]), cohort.labels[train], ridge=ridge)
        logits[test] = model.decision_function(std.transform(m[test]))
    return cross_entropy(cohort.labels, logits)


def measurement_response(pattern: DiscriminativePattern, template: TriMesh, sd_grid) -> pd.DataFrame:
    """Clinical measurements of ``mean + k * score_sd * w_hat`` over ``sd_grid``, with ratios to the mean."""
    base = measure(unflatten(pattern.mean_shape, template))
    rows = []
    for k in sd_grid:
        m = measure(unflatten(representative_shape(pattern, k * pattern.score_sd), template))
        rows.append(
            {
                "sd": float(k),
                "lambda": float(k * pattern.score_sd),
                **m.as_row(),
                "lv_edv_ratio": m.lv_edv / base.lv_edv,
                "rv_edv_ratio": m.rv_edv / base.rv_edv,
                "lv_mass_ratio": m.lv_mass / base.lv_mass if base.lv_mass else np.nan,
            }
        )
    return pd.DataFrame(rows)


__all__ = [
    "CASE",
    "CONTROL",
    "DR_METHODS",
    "DiscriminativePattern",
    "FittedPipeline",
    "PipelineConfig",
    "backproject",
    "confounder_only_cv",
    "cross_validate",
    "fit_pipeline",
    "measurement_response",
    "out_of_fold_logits",
    "pattern_similarity",
    "representative_shape",
    "score",
    "whitened_scores",
]
