"""Regression mode: predict a continuous variable from shape with PLS and build
the minimal-Mahalanobis shape that the model maps to a requested value."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.model_selection import KFold

from .errors import DataError, DimensionMismatchError, FitError
from .linear import WHITEN_VARIANCE, PcaModel, PlsModel, pca_fit, pca_whiten_direction, pls_fit

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ShapeRegressionModel:
    pls: PlsModel
    mean_shape: np.ndarray
    value_mean: float
    value_sd: float
    pca: PcaModel
    metric_modes: int

    @property
    def coeffs(self) -> np.ndarray:
        return self.pls.coef[:, 0]

    def predict(self, shapes) -> np.ndarray | float:
        x = np.asarray(shapes, dtype=float)
        if x.shape[-1] != self.mean_shape.size:
            raise DimensionMismatchError(f"shape length {x.shape[-1]} vs model {self.mean_shape.size}")
        out = self.value_mean + (x - self.mean_shape) @ self.coeffs
        return float(out) if np.ndim(out) == 0 else out

    def pattern(self) -> np.ndarray:
        """Whitened unit shape pattern of the regression coefficients."""
        return pca_whiten_direction(self.pca, self.coeffs, self.metric_modes)


def regression_fit(shapes, values, n_components: int = 3, metric_variance: float = WHITEN_VARIANCE) -> ShapeRegressionModel:
    x = np.asarray(shapes, dtype=float)
    y = np.asarray(values, dtype=float).reshape(-1)
    if len(x) != len(y):
        raise DimensionMismatchError(f"{len(x)} shapes vs {len(y)} values")
    if len(x) < n_components + 2:
        raise DataError(f"need at least {n_components + 2} subjects for {n_components} PLS components")
    if not np.all(np.isfinite(y)):
        raise DataError("target values contain missing or non-finite entries")
    if np.ptp(y) == 0:
        raise DataError("target values are constant")
    pls = pls_fit(x, y, n_components)
    pca = pca_fit(x)
    return ShapeRegressionModel(
        pls=pls,
        mean_shape=pls.x_mean,
        value_mean=float(pls.y_mean[0]),
        value_sd=float(y.std(ddof=1)),
        pca=pca,
        metric_modes=pca.modes_for_variance(metric_variance),
    )


def representative_for_value(model: ShapeRegressionModel, b: float) -> np.ndarray:
    """Shape closest to the mean in the PCA Mahalanobis metric among those predicted as ``b``.

    Closed form: ``mean + (b - c) * S w / (w^T S w)`` with ``S`` the PCA
    covariance on the metric modes and ``c`` the prediction at the mean.
    """
    if not np.isfinite(b):
        raise DataError("target value must be finite")
    if abs(b - model.value_mean) > 3 * model.value_sd:
        log.warning("target %.4g is more than 3 SD from the training mean %.4g", b, model.value_mean)
    w = model.coeffs
    sw = model.pca.covariance_sqrt_apply(w, model.metric_modes, power=1.0)
    denom = float(w @ sw)
    if denom <= 1e-14 * max(float(w @ w), 1e-300) * model.pca.variances[0]:
        raise FitError("regression coefficients are orthogonal to the observed shape variability")
    return model.mean_shape + (b - model.value_mean) * sw / denom


def regression_cv_r2(shapes, values, n_components: int = 3, n_folds: int = 5, seed: int = 0) -> float:
    """Out-of-fold coefficient of determination from seeded K-fold CV."""
    x = np.asarray(shapes, dtype=float)
    y = np.asarray(values, dtype=float).reshape(-1)
    pred = np.empty_like(y)
    for train, test in KFold(n_splits=n_folds, shuffle=True, random_state=seed).split(x):
        model = regression_fit(x[train], y[train], n_components)
        pred[test] = model.predict(x[test])
    return float(1.0 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2))
