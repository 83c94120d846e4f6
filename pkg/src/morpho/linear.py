"""Linear estimators: PCA with whitening, Wold's PLS, QR bases and ridge logistic regression."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, FitError

log = logging.getLogger(__name__)

WHITEN_VARIANCE = 0.99
DEFAULT_RIDGE = 1e-6


# -- PCA ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # K x D, orthonormal rows
    variances: np.ndarray  # K, descending
    total_variance: float

    @property
    def n_components(self) -> int:
        return len(self.variances)

    def transform(self, x, k: int | None = None) -> np.ndarray:
        k = self.n_components if k is None else k
        return (np.asarray(x, dtype=float) - self.mean) @ self.components[:k].T

    def inverse_transform(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        k = scores.shape[-1]
        return self.mean + scores @ self.components[:k]

    def truncate(self, k: int) -> "PcaModel":
        if not 1 <= k <= self.n_components:
            raise DimensionMismatchError(f"cannot keep {k} of {self.n_components} components")
        return PcaModel(self.mean, self.components[:k], self.variances[:k], self.total_variance)

    def modes_for_variance(self, fraction: float = WHITEN_VARIANCE) -> int:
        """Smallest number of leading modes explaining ``fraction`` of the total variance."""
        if self.total_variance <= 0:
            return 1
        cum = np.cumsum(self.variances) / self.total_variance
        k = int(np.searchsorted(cum, fraction - 1e-12) + 1)
        return min(k, self.n_components)

    def covariance_sqrt_apply(self, w, k: int | None = None, power: float = 0.5) -> np.ndarray:
        """``sum_k var_k**power p_k p_k^T w`` over the first ``k`` modes."""
        k = self.n_components if k is None else k
        p = self.components[:k]
        return (self.variances[:k] ** power * (p @ w)) @ p


def pca_fit(data, n_components: int | None = None) -> PcaModel:
    """Principal components of the rows of ``data`` via a thin SVD.

    ``n_components`` defaults to ``min(n - 1, D)``. Variances use the
    ``n - 1`` normalization.
    """
    x = np.asarray(data, dtype=float)
    n, d = x.shape
    max_k = min(n - 1, d)
    if n_components is None:
        n_components = max_k
    if not 1 <= n_components <= max_k:
        raise DimensionMismatchError(
            f"n_components={n_components} exceeds min(n_samples - 1, n_features) = {max_k}"
        )
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    vt = _fix_row_signs(vt[:n_components])
    var = s**2 / (n - 1)
    return PcaModel(mean, vt, var[:n_components], float(var.sum()))


def _fix_row_signs(rows: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each row made positive
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def pca_whiten_direction(model: PcaModel, w, k_modes: int | None = None) -> np.ndarray:
    """Unit vector along ``Sigma^(1/2) w`` with Sigma the PCA covariance on ``k_modes`` modes.

    ``k_modes`` defaults to the modes covering 99% of the variance.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != model.mean.shape:
        raise DimensionMismatchError(f"direction of length {w.size} vs PCA dimension {model.mean.size}")
    k = model.modes_for_variance() if k_modes is None else k_modes
    if not 1 <= k <= model.n_components:
        raise DimensionMismatchError(f"k_modes={k} outside 1..{model.n_components}")
    v = model.covariance_sqrt_apply(w, k)
    norm = np.linalg.norm(v)
    if norm == 0 or norm <= 1e-14 * np.linalg.norm(w) * np.sqrt(model.variances[0]):
        raise FitError("direction is orthogonal to every retained PCA mode")
    return v / norm


# -- PLS ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlsModel:
    """Wold PLS from an input block X (n x p) to a response block Y (n x q).

    ``x_weights`` (R x p) and ``y_weights`` (R x q) hold the unit singular
    vector pairs ``u^r``, ``v^r``; ``coef_parts`` the per-iteration rank-one
    coefficient matrices whose sum is ``coef`` (p x q).
    """

    x_weights: np.ndarray
    y_weights: np.ndarray
    x_loadings: np.ndarray
    y_loadings: np.ndarray
    coef_parts: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.x_weights)

    @property
    def coef(self) -> np.ndarray:
        if self.n_components == 0:
            return np.zeros((len(self.x_mean), len(self.y_mean)))
        return self.coef_parts.sum(axis=0)

    def predict(self, x) -> np.ndarray:
        return self.y_mean + (np.asarray(x, dtype=float) - self.x_mean) @ self.coef


def _leading_pair(c: np.ndarray):
    """Leading left/right singular vectors of ``c`` (p x q), sign-fixed on u."""
    if c.shape[0] <= c.shape[1]:
        # eigen-problem on the small side
        evals, evecs = np.linalg.eigh(c @ c.T)
        u = evecs[:, -1]
        sigma = np.sqrt(max(evals[-1], 0.0))
        v = (c.T @ u) / sigma if sigma > 0 else np.zeros(c.shape[1])
    else:
        evals, evecs = np.linalg.eigh(c.T @ c)
        v = evecs[:, -1]
        sigma = np.sqrt(max(evals[-1], 0.0))
        u = (c @ v) / sigma if sigma > 0 else np.zeros(c.shape[0])
    k = np.argmax(np.abs(u))
    if u[k] < 0:
        u, v = -u, -v
    return u, v, sigma


def pls_fit(x, y, n_components: int, center: bool = True, tol: float = 1e-10) -> PlsModel:
    """Wold's two-block PLS (regression mode).

    Per iteration: ``(u, v)`` is the leading singular pair of ``X_r^T Y_r``;
    scores ``t = X_r u``; both blocks are deflated by their OLS fit on ``t``.
    Coefficient parts are expressed against the undeflated input so that
    ``X @ coef`` reproduces the model's fitted response. Stops early, with a
    warning, when the cross-covariance vanishes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim == 1:
        x = x[:, None]
    if len(x) != len(y):
        raise DimensionMismatchError(f"X has {len(x)} rows, Y has {len(y)}")
    n, p = x.shape
    q = y.shape[1]
    if n_components < 0:
        raise DimensionMismatchError("n_components must be non-negative")
    x_mean = x.mean(axis=0) if center else np.zeros(p)
    y_mean = y.mean(axis=0) if center else np.zeros(q)
    xr = x - x_mean
    yr = y - y_mean
    scale = np.linalg.norm(xr) * np.linalg.norm(yr)

    us, vs, ps, cs, parts = [], [], [], [], []
    # rotation taking original X to the current scores: t = X @ w_star
    for r in range(n_components):
        cross = xr.T @ yr
        u, v, sigma = _leading_pair(cross)
        if scale == 0 or sigma <= tol * scale:
            if r < n_components:
                warnings.warn(
                    f"PLS stopped after {r} of {n_components} components: no cross-covariance left",
                    stacklevel=2,
                )
            break
        t = xr @ u
        tt = t @ t
        p_load = xr.T @ t / tt
        c_load = yr.T @ t / tt
        # w_star_r = u_r - sum_{s<r} w_star_s (p_s . u_r)
        w_star = u.copy()
        for ws, ps_ in zip(_w_stars(us, ps), ps):
            w_star -= ws * (ps_ @ u)
        xr = xr - np.outer(t, p_load)
        yr = yr - np.outer(t, c_load)
        us.append(u)
        vs.append(v)
        ps.append(p_load)
        cs.append(c_load)
        parts.append(np.outer(w_star, c_load))

    def stack(a, width):
        return np.array(a) if a else np.zeros((0, width))

    return PlsModel(
        x_weights=stack(us, p),
        y_weights=stack(vs, q),
        x_loadings=stack(ps, p),
        y_loadings=stack(cs, q),
        coef_parts=np.array(parts) if parts else np.zeros((0, p, q)),
        x_mean=x_mean,
        y_mean=y_mean,
    )


def _w_stars(us, ps):
    """Weights expressed against the undeflated input, W (P^T W)^-1, column by column."""
    out = []
    for u in us:
        w = u.copy()
        for ws, pl in zip(out, ps):
            w -= ws * (pl @ u)
        out.append(w)
    return out


def pls_x_scores(model: PlsModel, x) -> np.ndarray:
    stars = np.array(_w_stars(list(model.x_weights), list(model.x_loadings)))
    return (np.asarray(x, dtype=float) - model.x_mean) @ stars.T


def orthonormal_basis(vectors, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal rows spanning the rows of ``vectors`` (QR with rank check)."""
    a = np.atleast_2d(np.asarray(vectors, dtype=float))
    if a.shape[0] == 0:
        raise DimensionMismatchError("need at least one vector")
    q, r = np.linalg.qr(a.T)
    diag = np.abs(np.diag(r))
    keep = diag > tol * max(diag.max(), 1e-300)
    if not keep.all():
        warnings.warn(
            f"loading set is rank deficient; basis reduced to {int(keep.sum())} vectors",
            stacklevel=2,
        )
    q = q[:, keep] * np.sign(np.diag(r)[keep])
    return q.T


def pls_dr_basis(model: PlsModel) -> np.ndarray:
    if model.n_components < 1:
        raise FitError("PLS model has no components")
    return orthonormal_basis(model.x_weights)


# -- logistic regression -----------------------------------------------------


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy(labels, logits) -> float:
    """Mean negative log-likelihood of binary ``labels`` under ``sigmoid(logits)``."""
    y = np.asarray(labels, dtype=float)
    z = np.asarray(logits, dtype=float)
    return float(-np.mean(y * _log_sigmoid(z) + (1 - y) * _log_sigmoid(-z)))


def logistic_objective(params, features, labels, ridge):
    """Penalized mean cross-entropy and its gradient; ``params[0]`` is the unpenalized intercept."""
    b, w = params[0], params[1:]
    z = features @ w + b
    y = labels
    loss = cross_entropy(y, z) + 0.5 * ridge * (w @ w)
    r = sigmoid(z) - y
    n = len(y)
    grad = np.concatenate([[r.sum() / n], features.T @ r / n + ridge * w])
    return loss, grad


@dataclass(frozen=True, eq=False)
class LogisticModel:
    coef: np.ndarray
    intercept: float
    ridge: float
    n_shape: int
    history: list = field(default_factory=list, repr=False)
    grad_norm: float = 0.0

    @property
    def shape_coeffs(self) -> np.ndarray:
        return self.coef[: self.n_shape]

    @property
    def confounder_coeffs(self) -> np.ndarray:
        return self.coef[self.n_shape :]

    def decision_function(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.coef + self.intercept

    def predict_proba(self, features) -> np.ndarray:
        return sigmoid(self.decision_function(features))


def logistic_fit(
    features,
    labels,
    ridge: float = DEFAULT_RIDGE,
    n_shape: int | None = None,
    gtol: float = 1e-6,
    max_iter: int = 500,
) -> LogisticModel:
    """Ridge-penalized logistic regression by damped Newton with Armijo backtracking.

    Starts from zero coefficients. Converges when the gradient norm of the
    penalized objective is at most ``gtol``.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels, dtype=float)
    if len(x) != len(y):
        raise DimensionMismatchError(f"{len(x)} feature rows vs {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise FitError("labels must be 0/1")
    if y.min() == y.max():
        raise FitError("logistic regression needs both classes present")
    n, d = x.shape
    params = np.zeros(d + 1)
    design = np.hstack([np.ones((n, 1)), x])
    penalty = np.full(d + 1, ridge)
    penalty[0] = 0.0

    loss, grad = logistic_objective(params, x, y, ridge)
    history = [loss]
    for _ in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm <= gtol:
            break
        p = sigmoid(design @ params)
        s = p * (1 - p)
        hess = (design.T * s) @ design / n + np.diag(penalty)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = grad @ step
        if slope >= 0:
            step, slope = -grad, -(grad @ grad)
        alpha = 1.0
        while True:
            cand = params + alpha * step
            c_loss, c_grad = logistic_objective(cand, x, y, ridge)
            if c_loss <= loss + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-20:
                c_loss, c_grad, cand = loss, grad, params
                break
        if cand is params:
            break
        params, loss, grad = cand, c_loss, c_grad
        history.append(loss)
    gnorm = float(np.linalg.norm(grad))
    if ridge == 0:
        z = design @ params
        if z[y == 1].min() > z[y == 0].max():
            raise FitError("classes are completely separated, so the unpenalized fit diverges; set ridge > 0")
    if gnorm > gtol:
        if ridge == 0:
            raise FitError(
                "logistic regression diverged (data likely separable); set ridge > 0"
            )
        log.warning("logistic regression stopped with gradient norm %.3g", gnorm)
    return LogisticModel(
        coef=params[1:],
        intercept=float(params[0]),
        ridge=ridge,
        n_shape=d if n_shape is None else n_shape,
        history=history,
        grad_norm=gnorm,
    )
