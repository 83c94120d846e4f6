"""Rigid registration and generalized partial Procrustes alignment (no scaling)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShapeError, DimensionMismatchError
from .mesh import check_shape_vector

log = logging.getLogger(__name__)

GPA_TOL = 1e-7
GPA_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation`` applied to every landmark."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise DimensionMismatchError("rotation must be 3 x 3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-10) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be proper orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, shape) -> np.ndarray:
        pts = np.asarray(shape, dtype=float).reshape(-1, 3)
        return (pts @ self.rotation.T + self.translation).reshape(-1)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


def _check_nondegenerate(centered: np.ndarray, what: str):
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-10 * s[0]:
        raise DegenerateShapeError(f"{what} landmarks are coincident or collinear")


def _kabsch(moving: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Best proper rotation R for centered point stacks, minimizing ||moving R^T - target||.

    Works on a batch: ``moving`` and ``target`` are (..., N, 3).
    """
    h = np.swapaxes(moving, -1, -2) @ target
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(np.swapaxes(vt, -1, -2) @ np.swapaxes(u, -1, -2)))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones(u.shape[:-2] + (3,))
    fix[..., 2] = d
    return np.swapaxes(vt, -1, -2) @ (fix[..., :, None] * np.swapaxes(u, -1, -2))


def rigid_align(moving, target) -> tuple[RigidTransform, np.ndarray]:
    """Rigidly register ``moving`` onto ``target``; returns the transform and the moved shape.

    The closed-form least-squares solution of ``min ||R x_i + t - y_i||^2``
    over proper rotations. No scaling.
    """
    x = check_shape_vector(moving).reshape(-1, 3)
    y = check_shape_vector(target).reshape(-1, 3)
    if x.shape != y.shape:
        raise DimensionMismatchError(f"cannot align {len(x)} landmarks onto {len(y)}")
    if len(x) < 3:
        raise DegenerateShapeError("need at least 3 landmarks")
    cx, cy = x.mean(axis=0), y.mean(axis=0)
    _check_nondegenerate(x - cx, "moving")
    _check_nondegenerate(y - cy, "target")
    r = _kabsch(x - cx, y - cy)
    t = cy - r @ cx
    tf = RigidTransform(r, t)
    return tf, tf.apply(x)


@dataclass(frozen=True, eq=False)
class AtlasModel:
    mean_shape: np.ndarray
    transforms: list[RigidTransform]
    aligned: np.ndarray
    iterations_run: int
    converged: bool


def _register_all(points: np.ndarray, reference: np.ndarray):
    """Align every (N x 3) stack in ``points`` onto the centered ``reference``."""
    centroids = points.mean(axis=1, keepdims=True)
    rot = _kabsch(points - centroids, reference[None])
    aligned = np.einsum("nij,nkj->nki", rot, points - centroids)
    return rot, centroids[:, 0, :], aligned


def generalized_procrustes(shapes, tol: float = GPA_TOL, max_iter: int = GPA_MAX_ITER) -> AtlasModel:
    """Iteratively re-estimate the mean shape and rigidly register every shape to it.

    Starts from the first shape (centered) as the reference. Stops when the
    RMS per-landmark change of the mean drops below ``tol`` (mm). A run that
    hits ``max_iter`` is returned with ``converged=False`` and a warning.
    """
    x = np.asarray(shapes, dtype=float)
    if x.ndim != 2 or len(x) < 2:
        raise DimensionMismatchError("generalized_procrustes needs a matrix of at least 2 shapes")
    if x.shape[1] % 3:
        raise DimensionMismatchError(f"shape length {x.shape[1]} is not a multiple of 3")
    if not np.all(np.isfinite(x)):
        raise DimensionMismatchError("shapes contain non-finite coordinates")
    pts = x.reshape(len(x), -1, 3)
    for i, p in enumerate(pts):
        _check_nondegenerate(p - p.mean(axis=0), f"shape {i}")

    mean = pts[0] - pts[0].mean(axis=0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rot, centroids, aligned = _register_all(pts, mean)
        new_mean = aligned.mean(axis=0)
        change = np.sqrt(np.mean(np.sum((new_mean - mean) ** 2, axis=1)))
        mean = new_mean
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("generalized Procrustes did not converge in %d iterations", max_iter)

    # aligned shapes correspond to the last registration; the stored mean is their average
    transforms = [RigidTransform(r, -r @ c) for r, c in zip(rot, centroids)]
    return AtlasModel(
        mean_shape=aligned.mean(axis=0).reshape(-1),
        transforms=transforms,
        aligned=aligned.reshape(len(x), -1),
        iterations_run=it,
        converged=converged,
    )


def procrustes_distance(a, b) -> float:
    """Residual norm after optimally aligning ``a`` onto ``b``."""
    _, moved = rigid_align(a, b)
    return float(np.linalg.norm(moved - np.asarray(b, dtype=float)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
