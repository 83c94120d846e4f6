"""Confounding deflation: remove the shape variability predicted from confounders.

A PLS model predicting shape from standardized confounders is trained on one
designated subpopulation (controls by default). Every subject then keeps the
residual of that prediction plus the training mean shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, Standardizer
from .errors import ConfigError, DataError, FitError
from .linear import PcaModel, pca_whiten_direction, pls_fit


@dataclass(frozen=True, eq=False)
class DeflationModel:
    coeffs: np.ndarray  # m x 3N
    training_mean: np.ndarray
    standardizer: Standardizer
    training_subset: tuple
    n_components: int

    @property
    def confounders(self) -> tuple:
        return self.standardizer.columns

    def predict(self, confounder_values) -> np.ndarray:
        """Expected shape(s) for raw confounder values."""
        return self.training_mean + self.standardizer.transform(confounder_values) @ self.coeffs


def _training_mask(cohort: Cohort, training_subset) -> np.ndarray:
    if isinstance(training_subset, str):
        return cohort.class_mask(training_subset)
    sel = np.asarray(training_subset)
    if sel.dtype == bool:
        if sel.shape != (len(cohort),):
            raise ConfigError("boolean training subset has the wrong length")
        return sel
    wanted = {str(s) for s in sel}
    unknown = wanted - set(cohort.subject_ids)
    if unknown:
        raise DataError(f"training subset names unknown subjects {sorted(unknown)[:5]}")
    return np.array([s in wanted for s in cohort.subject_ids])


def deflation_fit(
    cohort: Cohort,
    confounders,
    training_subset="controls",
    n_components: int | None = None,
) -> DeflationModel:
    """Fit the confounder-to-shape PLS model on ``training_subset``.

    Confounders are standardized on the training subset; shapes are only
    centered. ``n_components`` defaults to the number of confounders.
    """
    if cohort.deflated:
        raise ConfigError("cohort is already deflated")
    confounders = list(confounders)
    if not confounders:
        raise ConfigError("deflation needs at least one confounder")
    mask = _training_mask(cohort, training_subset)
    if not mask.any():
        raise ConfigError("deflation training subset is empty")
    m_raw = cohort.confounders(confounders)[mask]
    std = Standardizer.fit(m_raw, confounders)
    ms = std.transform(m_raw)
    x = cohort.shapes[mask]
    mu = x.mean(axis=0)
    k = len(confounders) if n_components is None else n_components
    pls = pls_fit(ms, x - mu, k)
    return DeflationModel(
        coeffs=pls.coef,
        training_mean=mu,
        standardizer=std,
        training_subset=tuple(np.asarray(cohort.subject_ids)[mask]),
        n_components=pls.n_components,
    )


def deflate(model: DeflationModel, cohort: Cohort) -> Cohort:
    """Subtract the confounder-predicted deviation from every subject's shape.

    Only raw cohorts are accepted; applying a model twice would remove the
    prediction twice.
    """
    if cohort.deflated:
        raise ConfigError("cohort is already deflated; deflate consumes raw cohorts only")
    if cohort.shapes.shape[1] != model.coeffs.shape[1]:
        raise DataError("cohort shape dimension does not match the deflation model")
    ms = model.standardizer.transform(cohort.confounders(model.confounders))
    return cohort.with_shapes(cohort.shapes - ms @ model.coeffs, deflated=True)


def confounder_pattern(model: DeflationModel, confounder: str, pca: PcaModel, k_modes=None) -> np.ndarray:
    """Whitened unit shape pattern of one confounder's coefficient row."""
    if confounder not in model.confounders:
        raise DataError(f"confounder {confounder!r} not in deflation model {list(model.confounders)}")
    row = model.coeffs[model.confounders.index(confounder)]
    if not np.any(row):
        raise FitError(f"confounder {confounder!r} has an all-zero coefficient row")
    return pca_whiten_direction(pca, row, k_modes)
