"""Cohorts: aligned shapes, binary class labels and a demographics table."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, DimensionMismatchError
from .mesh import TriMesh, load_corpus

CONTROL = 0
CASE = 1


@dataclass(frozen=True, eq=False)
class Cohort:
    """The analysis unit. Row ``i`` of ``shapes`` belongs to ``subject_ids[i]``.

    ``deflated`` marks shapes that already had a confounder prediction
    removed, so they are never deflated a second time.
    """

    subject_ids: tuple
    shapes: np.ndarray
    labels: np.ndarray
    demographics: pd.DataFrame
    template: TriMesh | None = None
    deflated: bool = False

    def __post_init__(self):
        ids = tuple(str(s) for s in self.subject_ids)
        shapes = np.asarray(self.shapes, dtype=float)
        labels = np.asarray(self.labels).astype(int)
        if shapes.ndim != 2 or len(shapes) != len(ids):
            raise DimensionMismatchError(f"{len(ids)} subject ids for shape matrix {shapes.shape}")
        if labels.shape != (len(ids),):
            raise DimensionMismatchError(f"{labels.size} labels for {len(ids)} subjects")
        if not np.isin(labels, (CONTROL, CASE)).all():
            raise DataError("class labels must be 0 (control) or 1 (case)")
        demo = self.demographics
        missing = [s for s in ids if s not in demo.index]
        if missing:
            raise DataError(f"demographics missing subjects {missing[:5]}")
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "demographics", demo.loc[list(ids)])

    def __len__(self) -> int:
        return len(self.subject_ids)

    @property
    def n_cases(self) -> int:
        return int(self.labels.sum())

    @property
    def n_controls(self) -> int:
        return len(self) - self.n_cases

    def subset(self, index) -> "Cohort":
        idx = np.asarray(index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return replace(
            self,
            subject_ids=tuple(self.subject_ids[i] for i in idx),
            shapes=self.shapes[idx],
            labels=self.labels[idx],
            demographics=self.demographics.iloc[idx],
        )

    def with_shapes(self, shapes, deflated: bool | None = None) -> "Cohort":
        return replace(
            self, shapes=shapes, deflated=self.deflated if deflated is None else deflated
        )

    def confounders(self, columns) -> np.ndarray:
        columns = list(columns)
        missing = [c for c in columns if c not in self.demographics.columns]
        if missing:
            raise DataError(f"confounder columns {missing} not in demographics")
        m = self.demographics[columns].to_numpy(dtype=float)
        if np.isnan(m).any():
            bad = [c for c, col in zip(columns, m.T) if np.isnan(col).any()]
            raise DataError(f"missing values in confounder columns {bad}")
        return m

    def class_mask(self, which: str) -> np.ndarray:
        """Boolean mask for ``controls``, ``cases`` or ``both``."""
        if which in ("controls", "control"):
            return self.labels == CONTROL
        if which in ("cases", "case"):
            return self.labels == CASE
        if which == "both":
            return np.ones(len(self), dtype=bool)
        raise DataError(f"unknown class selector {which!r}")


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Column means and SDs (ddof=1) used to standardize confounders."""

    columns: tuple
    means: np.ndarray
    sds: np.ndarray

    @classmethod
    def fit(cls, values, columns) -> "Standardizer":
        v = np.asarray(values, dtype=float)
        means = v.mean(axis=0)
        sds = v.std(axis=0, ddof=1) if len(v) > 1 else np.zeros(v.shape[1])
        flat = [c for c, s in zip(columns, sds) if not s > 0]
        if flat:
            raise DataError(f"confounder columns {flat} are constant on the training subset")
        return cls(tuple(columns), means, sds)

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.means) / self.sds

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "means": self.means.tolist(), "sds": self.sds.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(tuple(d["columns"]), np.array(d["means"], dtype=float), np.array(d["sds"], dtype=float))


def read_demographics(path, id_col: str = "subject_id") -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    if id_col not in df.columns:
        raise DataError(f"{path}: no {id_col!r} column")
    df[id_col] = df[id_col].astype(str)
    if df[id_col].duplicated().any():
        raise DataError(f"{path}: duplicate subject ids")
    return df.set_index(id_col)


def load_cohort(mesh_dir, demographics_csv, class_col: str, regions=None, id_col: str = "subject_id") -> Cohort:
    corpus = load_corpus(mesh_dir, regions)
    demo = read_demographics(demographics_csv, id_col)
    if class_col not in demo.columns:
        raise DataError(f"{demographics_csv}: no class column {class_col!r}")
    missing = [s for s in corpus.subject_ids if s not in demo.index]
    if missing:
        raise DataError(f"{demographics_csv}: no rows for meshes {missing[:5]}")
    labels = demo.loc[corpus.subject_ids, class_col].to_numpy()
    try:
        labels = labels.astype(float)
    except ValueError as exc:
        raise DataError(f"{demographics_csv}: class column {class_col!r} must be 0/1") from exc
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"{demographics_csv}: class column {class_col!r} must be 0/1")
    return Cohort(corpus.subject_ids, corpus.shapes, labels.astype(int), demo, corpus.template)
