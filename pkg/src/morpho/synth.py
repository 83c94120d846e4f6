"""Synthetic two-class cohorts with known class and confounder shape effects.

Every subject is generated as::

    template + y * m * sqrt(N) * g + b * sqrt(N) * g
             + sum_j slope_j * sqrt(N) * z_j * d_j
             + sum_k a_k * sqrt(N) * e_k + noise

with ``g``, ``d_j``, ``e_k`` unit 3N-vectors, ``y`` the class label, ``z_j``
the confounder standardized against the control distribution, ``b`` an
optional individual spread along ``g`` shared by both classes and ``a_k``
random amplitudes of smooth anatomical variation modes. Magnitudes, slopes and
spreads are therefore RMS per-vertex displacements in mm.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .cohort import CASE, CONTROL, Cohort
from .errors import ConfigError
from .mesh import (
    LV_ENDO,
    LV_EPI,
    RV,
    SEPTUM,
    TriMesh,
    boundary_edges,
    region_faces,
    signed_volume,
    uv_sphere,
    write_corpus,
    write_region_map,
)

LV_CENTER = np.array([0.0, 0.0, 0.0])
LV_ENDO_RADII = np.array([24.0, 24.0, 42.0])
LV_EPI_RADII = np.array([32.0, 32.0, 50.0])
RV_CENTER = np.array([34.0, 0.0, 4.0])
RV_RADII = np.array([20.0, 30.0, 38.0])


def make_template(resolution: int = 5) -> TriMesh:
    """Three closed ellipsoidal shells: LV endocardium, LV epicardium and the RV.

    The long axis is z with the base at +z. RV vertices facing the LV are
    labelled SEPTUM. Each shell has ``2 + (2r - 1) * 4r`` vertices.
    """
    if resolution < 2:
        raise ConfigError("template resolution must be >= 2")
    unit_v, unit_f = uv_sphere(2 * resolution, 4 * resolution)
    verts, faces, labels = [], [], []
    offset = 0
    for center, radii, label in (
        (LV_CENTER, LV_ENDO_RADII, LV_ENDO),
        (LV_CENTER, LV_EPI_RADII, LV_EPI),
        (RV_CENTER, RV_RADII, RV),
    ):
        v = unit_v * radii + center
        lab = np.full(len(v), label, dtype=object)
        if label == RV:
            lab[unit_v[:, 0] < -0.5] = SEPTUM
        verts.append(v)
        faces.append(unit_f + offset)
        labels.append(lab)
        offset += len(v)
    return TriMesh(np.vstack(verts), np.vstack(faces), np.concatenate(labels).astype(str))


# -- effect generators -------------------------------------------------------


def _radial(points, center):
    d = points - center
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _masks(template: TriMesh):
    r = template.region_map
    return r == LV_ENDO, r == LV_EPI, (r == RV) | (r == SEPTUM)


def _basal_weight(points):
    z = points[:, 2]
    return ((z - z.min()) / (z.max() - z.min())) ** 2


def generator_field(name: str, template: TriMesh) -> np.ndarray:
    """N x 3 displacement field of a named shape effect (arbitrary scale)."""
    p = template.vertices
    endo, epi, rv = _masks(template)
    lv = endo | epi
    field_ = np.zeros_like(p)
    if name == "dilate_lv":
        field_[lv] = _radial(p[lv], LV_CENTER)
    elif name == "dilate_rv":
        field_[rv] = _radial(p[rv], RV_CENTER)
    elif name == "dilate_ventricles":
        field_[lv] = _radial(p[lv], LV_CENTER)
        field_[rv] = _radial(p[rv], RV_CENTER)
    elif name == "dilate_rv_outflow":
        outflow = RV_CENTER + np.array([0.0, 0.7 * RV_RADII[1], 0.6 * RV_RADII[2]])
        w = np.exp(-np.sum((p[rv] - outflow) ** 2, axis=1) / (2 * 15.0**2))
        field_[rv] = w[:, None] * _radial(p[rv], RV_CENTER)
    elif name in ("thicken_lv", "thicken_lv_base"):
        field_[endo] = -_radial(p[endo], LV_CENTER)
        field_[epi] = _radial(p[epi], LV_CENTER)
        if name == "thicken_lv_base":
            field_ *= _basal_weight(p)[:, None]
    elif name == "scale":
        field_ = p - p.mean(axis=0)
    elif name == "elongate":
        field_[:, 2] = p[:, 2] - p[:, 2].mean()
    else:
        raise ConfigError(f"unknown effect generator {name!r}; known: {sorted(GENERATORS)}")
    return field_


GENERATORS = (
    "dilate_lv",
    "dilate_rv",
    "dilate_ventricles",
    "dilate_rv_outflow",
    "thicken_lv",
    "thicken_lv_base",
    "scale",
    "elongate",
)


def resolve_direction(spec, template: TriMesh) -> np.ndarray:
    """Unit 3N-vector from a generator name, a ``{name: weight}`` mix or an explicit vector."""
    if isinstance(spec, str):
        v = generator_field(spec, template).reshape(-1)
    elif isinstance(spec, dict):
        v = np.zeros(3 * template.n_vertices)
        for name, weight in spec.items():
            f = generator_field(name, template).reshape(-1)
            v += weight * f / np.linalg.norm(f)
    else:
        v = np.asarray(spec, dtype=float).reshape(-1)
        if v.size != 3 * template.n_vertices:
            raise ConfigError(f"explicit direction of length {v.size} for {template.n_vertices} vertices")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ConfigError("effect direction is zero")
    return v / norm


def smooth_modes(template: TriMesh, count: int, seed: int) -> np.ndarray:
    """``count`` random smooth radial deformation modes (orthonormal rows)."""
    rng = np.random.default_rng([seed, 7919])
    p = template.vertices
    endo, epi, rv = _masks(template)
    q = (p - p.mean(axis=0)) / np.abs(p - p.mean(axis=0)).max(axis=0)
    x, y, z = q.T
    basis = np.stack(
        [
            np.ones_like(x), x, y, z,
            x * y, y * z, x * z, x * x - y * y, 3 * z * z - 1,
            x**3, y**3, z**3, x * y * z, x * x * z, y * y * z, z * z * x, z * z * y,
        ],
        axis=1,
    )
    normals = np.zeros_like(p)
    normals[endo | epi] = _radial(p[endo | epi], LV_CENTER)
    normals[rv] = _radial(p[rv], RV_CENTER)
    if count > 3 * basis.shape[1]:
        raise ConfigError(f"at most {3 * basis.shape[1]} variation modes are available")
    raw = []
    for _ in range(count):
        f = np.zeros(len(p))
        for mask in (endo, epi, rv):
            f[mask] = basis[mask] @ rng.standard_normal(basis.shape[1])
        raw.append((f[:, None] * normals).reshape(-1))
    # orthonormal so that the amplitudes set the variance spectrum directly
    q, r = np.linalg.qr(np.array(raw).reshape(count, 3 * len(p)).T)
    return (q * np.sign(np.diag(r))).T


# -- specification -----------------------------------------------------------


@dataclass
class ClassEffect:
    direction: object = "dilate_ventricles"
    magnitude: float = 1.0
    spread: float = 0.0


@dataclass
class ConfounderEffect:
    column: str
    direction: object
    slope: float


@dataclass
class SynthSpec:
    """Parameters of a synthetic cohort.

    ``confounder_distributions`` maps a column to per-class distributions,
    e.g. ``{"age": {"controls": {"mean": 33, "sd": 4}, "cases": {...}}}``; a
    ``"p"`` key instead of mean/sd draws a 0/1 variable, and an optional
    ``"depends_on": {"bmi": 0.03}`` adds ``coef * (bmi - control mean)`` to
    the draw (columns are drawn in dict order). Variation mode ``k`` has
    amplitude ``variation_sd * (k + 1) ** -variation_decay``.
    """

    n_controls: int = 80
    n_cases: int = 80
    resolution: int = 5
    class_effect: ClassEffect = field(default_factory=ClassEffect)
    confounder_effects: list = field(default_factory=list)
    confounder_distributions: dict = field(default_factory=dict)
    noise_sd: float = 0.1
    variation_modes: int = 0
    variation_sd: float = 0.0
    variation_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.class_effect, dict):
            self.class_effect = ClassEffect(**self.class_effect)
        self.confounder_effects = [
            ConfounderEffect(**e) if isinstance(e, dict) else e for e in self.confounder_effects
        ]
        if self.n_controls < 1 or self.n_cases < 1:
            raise ConfigError("both classes need at least one subject")
        for e in self.confounder_effects:
            if e.column not in self.confounder_distributions:
                raise ConfigError(f"confounder effect on {e.column!r} has no distribution")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{path}: unknown synth spec keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class GroundTruth:
    class_direction: np.ndarray
    confounder_directions: dict
    variation_directions: np.ndarray
    reference: dict  # column -> (mean, sd) used to standardize confounders

    def to_dict(self) -> dict:
        return {
            "class_direction": self.class_direction.tolist(),
            "confounder_directions": {k: v.tolist() for k, v in self.confounder_directions.items()},
            "variation_directions": self.variation_directions.tolist(),
            "reference": {k: list(v) for k, v in self.reference.items()},
        }


def _dist_params(d: dict):
    if "p" in d:
        p = float(d["p"])
        return p, float(np.sqrt(p * (1 - p)))
    return float(d["mean"]), float(d["sd"])


def _draw(rng, d: dict, row: dict, reference: dict) -> float:
    if "p" in d:
        value = float(rng.random() < d["p"])
    else:
        value = float(d["mean"] + d["sd"] * rng.standard_normal())
    for col, coef in d.get("depends_on", {}).items():
        value += coef * (row[col] - reference[col][0])
    return value


def generate(spec: SynthSpec) -> tuple[Cohort, GroundTruth]:
    """Draw a cohort; each subject has its own random stream derived from the seed."""
    template = make_template(spec.resolution)
    n_vert = template.n_vertices
    amp = np.sqrt(n_vert)
    g = resolve_direction(spec.class_effect.direction, template)
    dirs = {e.column: resolve_direction(e.direction, template) for e in spec.confounder_effects}
    modes = smooth_modes(template, spec.variation_modes, spec.seed) if spec.variation_modes else np.zeros((0, g.size))

    mode_sd = spec.variation_sd * (np.arange(len(modes)) + 1.0) ** -spec.variation_decay
    columns = list(spec.confounder_distributions)
    reference = {}
    for col in columns:
        dist = spec.confounder_distributions[col]
        ref = dist.get("controls", dist)
        mean, sd = _dist_params(ref)
        reference[col] = (mean, sd if sd > 0 else 1.0)

    base = template.vertices.reshape(-1)
    ids, labels, shapes, rows = [], [], [], []
    groups = [(CONTROL, "controls", "ctl", spec.n_controls), (CASE, "cases", "cas", spec.n_cases)]
    index = 0
    for label, key, prefix, count in groups:
        for i in range(count):
            rng = np.random.default_rng([spec.seed, index])
            index += 1
            row = {}
            for col in columns:
                dist = spec.confounder_distributions[col]
                row[col] = _draw(rng, dist.get(key, dist), row, reference)
            x = base + label * spec.class_effect.magnitude * amp * g
            if spec.class_effect.spread:
                x = x + spec.class_effect.spread * amp * rng.standard_normal() * g
            for e in spec.confounder_effects:
                mean, sd = reference[e.column]
                x = x + e.slope * amp * (row[e.column] - mean) / sd * dirs[e.column]
            if len(modes):
                x = x + amp * (mode_sd * rng.standard_normal(len(modes))) @ modes
            if spec.noise_sd:
                x = x + spec.noise_sd * rng.standard_normal(x.size)
            sid = f"{prefix}{i:03d}"
            ids.append(sid)
            labels.append(label)
            shapes.append(x)
            rows.append({"subject_id": sid, "label": label, **row})

    shapes = np.array(shapes)
    _check_valid(shapes, template)
    demo = pd.DataFrame(rows).set_index("subject_id")
    cohort = Cohort(tuple(ids), shapes, np.array(labels), demo, template)
    truth = GroundTruth(g, dirs, modes, reference)
    return cohort, truth


def _check_valid(shapes: np.ndarray, template: TriMesh):
    """Reject cohorts where any region turns inside out or the LV wall inverts."""
    regions = {name: region_faces(template, name) for name in (LV_ENDO, LV_EPI)}
    regions["RV"] = region_faces(template, (RV, SEPTUM))
    vols = {}
    for name, faces in regions.items():
        assert len(boundary_edges(faces)) == 0
        vols[name] = np.array([signed_volume(x.reshape(-1, 3), faces) for x in shapes])
        if (vols[name] <= 0).any():
            raise ConfigError(f"effect magnitudes make region {name} self-intersect (non-positive volume)")
    if (vols[LV_EPI] <= vols[LV_ENDO]).any():
        raise ConfigError("effect magnitudes make the LV wall invert (epicardial volume <= endocardial)")


def write_synth(cohort: Cohort, truth: GroundTruth, out_dir) -> None:
    out = Path(out_dir)
    write_corpus(out / "meshes", cohort.subject_ids, cohort.shapes, cohort.template)
    write_region_map(out / "meshes" / "regions.txt", cohort.template.region_map)
    cohort.demographics.reset_index().to_csv(out / "demographics.csv", index=False, float_format="%.17g")
    (out / "ground_truth.json").write_text(json.dumps(truth.to_dict()))


def imbalance_spec(seed: int = 0, **overrides) -> SynthSpec:
    """Athlete-like scenario used for the confounding studies.

    Cases dilate both ventricles and thicken the basal LV wall; a BMI-like
    confounder thickens the whole LV (mass up) and BSA scales the heart.
    Cases have lower BMI and BSA than controls on average, so the confounder
    works against the mass part of the class effect.
    """
    params = dict(
        n_controls=80,
        n_cases=80,
        resolution=5,
        class_effect=ClassEffect(
            direction={"dilate_ventricles": 1.0, "thicken_lv_base": 0.6},
            magnitude=1.0,
        ),
        confounder_effects=[
            ConfounderEffect("bmi", {"thicken_lv": 1.0, "dilate_lv": 0.2}, 0.8),
            ConfounderEffect("bsa", "scale", 0.6),
            ConfounderEffect("age", "elongate", 0.2),
        ],
        confounder_distributions={
            "age": {"controls": {"mean": 33.4, "sd": 3.8}, "cases": {"mean": 35.4, "sd": 6.1}},
            "bsa": {"controls": {"mean": 1.86, "sd": 0.20}, "cases": {"mean": 1.78, "sd": 0.19}},
            "sex": {"controls": {"p": 0.44}, "cases": {"p": 0.48}},
            "bmi": {"controls": {"mean": 24.5, "sd": 3.5}, "cases": {"mean": 22.8, "sd": 2.5}},
        },
        noise_sd=0.3,
        variation_modes=30,
        variation_sd=0.5,
        seed=seed,
    )
    params.update(overrides)
    return SynthSpec(**params)
