"""Versioned JSON documents for fitted models.

Arrays are stored as nested row-major lists. Python's float repr is the
shortest string that round-trips, so loading reproduces every double exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cohort import Standardizer
from .confound import DeflationModel
from .discriminant import DiscriminativePattern, FittedPipeline, PipelineConfig
from .errors import DataError
from .linear import LogisticModel, PcaModel, PlsModel
from .mesh import TriMesh
from .regression_shape import ShapeRegressionModel

FORMAT_VERSION = 1


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _np(v, ndim=None):
    if v is None:
        return None
    a = np.array(v, dtype=float)
    if ndim == 2 and a.size == 0:
        a = a.reshape(0, 0)
    return a


def pca_to_dict(m: PcaModel) -> dict:
    return {
        "kind": "pca",
        "version": FORMAT_VERSION,
        "mean": _arr(m.mean),
        "components": _arr(m.components),
        "variances": _arr(m.variances),
        "total_variance": float(m.total_variance),
    }


def pca_from_dict(d) -> PcaModel:
    _expect(d, "pca")
    return PcaModel(_np(d["mean"]), _np(d["components"], 2), _np(d["variances"]), float(d["total_variance"]))


def pls_to_dict(m: PlsModel) -> dict:
    return {
        "kind": "pls",
        "version": FORMAT_VERSION,
        "x_weights": _arr(m.x_weights),
        "y_weights": _arr(m.y_weights),
        "x_loadings": _arr(m.x_loadings),
        "y_loadings": _arr(m.y_loadings),
        "coef_parts": _arr(m.coef_parts),
        "x_mean": _arr(m.x_mean),
        "y_mean": _arr(m.y_mean),
    }


def pls_from_dict(d) -> PlsModel:
    _expect(d, "pls")
    return PlsModel(
        x_weights=_np(d["x_weights"], 2),
        y_weights=_np(d["y_weights"], 2),
        x_loadings=_np(d["x_loadings"], 2),
        y_loadings=_np(d["y_loadings"], 2),
        coef_parts=np.array(d["coef_parts"], dtype=float),
        x_mean=_np(d["x_mean"]),
        y_mean=_np(d["y_mean"]),
    )


def template_to_dict(t: TriMesh) -> dict:
    return {
        "vertices": _arr(t.vertices),
        "faces": np.asarray(t.faces).tolist(),
        "region_map": None if t.region_map is None else [str(r) for r in t.region_map],
    }


def template_from_dict(d) -> TriMesh:
    regions = None if d.get("region_map") is None else np.array(d["region_map"], dtype=str)
    return TriMesh(_np(d["vertices"]), np.array(d["faces"], dtype=int), regions)


def deflation_to_dict(m: DeflationModel) -> dict:
    return {
        "kind": "deflation",
        "version": FORMAT_VERSION,
        "coeffs": _arr(m.coeffs),
        "training_mean": _arr(m.training_mean),
        "standardizer": m.standardizer.to_dict(),
        "training_subset": list(m.training_subset),
        "n_components": int(m.n_components),
    }


def deflation_from_dict(d) -> DeflationModel:
    _expect(d, "deflation")
    return DeflationModel(
        coeffs=_np(d["coeffs"], 2),
        training_mean=_np(d["training_mean"]),
        standardizer=Standardizer.from_dict(d["standardizer"]),
        training_subset=tuple(d["training_subset"]),
        n_components=int(d["n_components"]),
    )


def pipeline_to_dict(p: FittedPipeline, template: TriMesh | None = None) -> dict:
    pat = p.pattern
    lg = p.logistic
    return {
        "kind": "discriminant_pipeline",
        "version": FORMAT_VERSION,
        "config": p.config.to_dict(),
        "mean": _arr(p.mean),
        "embedding": _arr(p.embedding),
        "pca": pca_to_dict(p.pca),
        "pls": None if p.pls is None else pls_to_dict(p.pls),
        "pls_basis": _arr(p.pls_basis),
        "logistic": {
            "coef": _arr(lg.coef),
            "intercept": float(lg.intercept),
            "ridge": float(lg.ridge),
            "n_shape": int(lg.n_shape),
            "grad_norm": float(lg.grad_norm),
        },
        "pattern": {
            "raw_coeffs": _arr(pat.raw_coeffs),
            "standardized": _arr(pat.standardized),
            "score_sd": float(pat.score_sd),
            "mean_shape": _arr(pat.mean_shape),
            "whiten_modes": int(pat.whiten_modes),
        },
        "deflation": None if p.deflation is None else deflation_to_dict(p.deflation),
        "adjust_standardizer": None if p.adjust_standardizer is None else p.adjust_standardizer.to_dict(),
        "sign": float(p.sign),
        "template": None if template is None else template_to_dict(template),
    }


def pipeline_from_dict(d) -> tuple[FittedPipeline, TriMesh | None]:
    _expect(d, "discriminant_pipeline")
    lg = d["logistic"]
    pat = d["pattern"]
    pipeline = FittedPipeline(
        config=PipelineConfig.from_dict(d["config"]),
        logistic=LogisticModel(
            coef=_np(lg["coef"]),
            intercept=float(lg["intercept"]),
            ridge=float(lg["ridge"]),
            n_shape=int(lg["n_shape"]),
            grad_norm=float(lg["grad_norm"]),
        ),
        pattern=DiscriminativePattern(
            raw_coeffs=_np(pat["raw_coeffs"]),
            standardized=_np(pat["standardized"]),
            score_sd=float(pat["score_sd"]),
            mean_shape=_np(pat["mean_shape"]),
            whiten_modes=int(pat["whiten_modes"]),
        ),
        pca=pca_from_dict(d["pca"]),
        embedding=_np(d["embedding"], 2),
        mean=_np(d["mean"]),
        pls=None if d["pls"] is None else pls_from_dict(d["pls"]),
        pls_basis=_np(d["pls_basis"], 2),
        deflation=None if d["deflation"] is None else deflation_from_dict(d["deflation"]),
        adjust_standardizer=(
            None if d["adjust_standardizer"] is None else Standardizer.from_dict(d["adjust_standardizer"])
        ),
        sign=float(d["sign"]),
    )
    template = None if d.get("template") is None else template_from_dict(d["template"])
    return pipeline, template


def regression_to_dict(m: ShapeRegressionModel, template: TriMesh | None = None, metrics=None) -> dict:
    return {
        "kind": "shape_regression",
        "version": FORMAT_VERSION,
        "pls": pls_to_dict(m.pls),
        "mean_shape": _arr(m.mean_shape),
        "value_mean": float(m.value_mean),
        "value_sd": float(m.value_sd),
        "pca": pca_to_dict(m.pca),
        "metric_modes": int(m.metric_modes),
        "metrics": dict(metrics or {}),
        "template": None if template is None else template_to_dict(template),
    }


def regression_from_dict(d) -> tuple[ShapeRegressionModel, TriMesh | None]:
    _expect(d, "shape_regression")
    model = ShapeRegressionModel(
        pls=pls_from_dict(d["pls"]),
        mean_shape=_np(d["mean_shape"]),
        value_mean=float(d["value_mean"]),
        value_sd=float(d["value_sd"]),
        pca=pca_from_dict(d["pca"]),
        metric_modes=int(d["metric_modes"]),
    )
    template = None if d.get("template") is None else template_from_dict(d["template"])
    return model, template


def _expect(d, kind):
    if not isinstance(d, dict) or d.get("kind") != kind:
        got = d.get("kind") if isinstance(d, dict) else type(d).__name__
        raise DataError(f"expected a {kind!r} document, found {got!r}")
    if d.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported {kind} format version {d.get('version')!r}")


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, allow_nan=False) + "\n"


def save(doc: dict, path) -> None:
    Path(path).write_text(dumps(doc))


def load(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
