"""Triangle meshes in point-to-point correspondence.

Meshes in a corpus share one connectivity, so a subject is fully described by
its vertex coordinates. ``flatten`` turns those into the point-distribution
vector ``(x0, y0, z0, x1, y1, z1, ...)`` used by every statistical step.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatchError, MeshError, OpenSurfaceError

log = logging.getLogger(__name__)

LV_ENDO = "LV_ENDO"
LV_EPI = "LV_EPI"
RV = "RV"
SEPTUM = "SEPTUM"
REGION_LABELS = (LV_ENDO, LV_EPI, RV, SEPTUM)

# g/mL
MYOCARDIAL_DENSITY = 1.05
MM3_PER_ML = 1000.0


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices (N x 3, mm), faces (F x 3) and an optional per-vertex region label."""

    vertices: np.ndarray
    faces: np.ndarray
    region_map: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be N x 3, got shape {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be F x 3, got shape {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("degenerate face with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.region_map is not None:
            r = np.asarray(self.region_map, dtype=str)
            if r.shape != (len(v),):
                raise MeshError(f"region map has {r.size} labels for {len(v)} vertices")
            object.__setattr__(self, "region_map", r)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.region_map)

    def same_connectivity(self, other: "TriMesh") -> bool:
        return self.n_vertices == other.n_vertices and np.array_equal(self.faces, other.faces)


def flatten(mesh: TriMesh) -> np.ndarray:
    return mesh.vertices.reshape(-1).copy()


def unflatten(vector, template: TriMesh) -> TriMesh:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size != 3 * template.n_vertices:
        raise DimensionMismatchError(
            f"shape vector of length {v.size} does not match template with "
            f"{template.n_vertices} vertices (expected {3 * template.n_vertices})"
        )
    return template.with_vertices(v.reshape(-1, 3))


def check_shape_vector(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size % 3:
        raise DimensionMismatchError(f"shape vector length {v.size} is not a multiple of 3")
    if not np.all(np.isfinite(v)):
        raise DataError("shape vector contains non-finite coordinates")
    return v


# -- volumes -----------------------------------------------------------------


def region_faces(mesh: TriMesh, labels) -> np.ndarray:
    """Faces whose three vertices all carry one of ``labels``."""
    if mesh.region_map is None:
        raise MeshError("mesh has no region map")
    labels = {labels} if isinstance(labels, str) else set(labels)
    inside = np.isin(mesh.region_map, sorted(labels))
    return mesh.faces[inside[mesh.faces].all(axis=1)]


def boundary_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges used by exactly one face."""
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts == 1]


def signed_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    """Divergence-theorem volume, positive for outward-oriented closed surfaces."""
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return float(np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0)


def closed_volume(mesh: TriMesh, labels) -> float:
    """Enclosed volume in mL of the region made of ``labels``.

    Raises OpenSurfaceError when the region submesh has boundary edges. An
    inward-oriented region is reported with a warning and its absolute value
    returned.
    """
    faces = region_faces(mesh, labels)
    if len(faces) == 0:
        raise OpenSurfaceError(f"region {labels!r} has no faces")
    n_open = len(boundary_edges(faces))
    if n_open:
        raise OpenSurfaceError(f"region {labels!r} is not closed ({n_open} boundary edges)")
    vol = signed_volume(mesh.vertices, faces)
    if vol < 0:
        log.warning("region %r is inward-oriented; flipping face orientation", labels)
        vol = signed_volume(mesh.vertices, faces[:, ::-1])
    return vol / MM3_PER_ML


@dataclass(frozen=True)
class MeasurementSet:
    lv_edv: float
    rv_edv: float
    lv_mass: float

    def as_row(self) -> dict:
        return {"lv_edv_ml": self.lv_edv, "rv_edv_ml": self.rv_edv, "lv_mass_g": self.lv_mass}


def measure(mesh: TriMesh) -> MeasurementSet:
    """LV/RV end-diastolic volumes and LV myocardial mass.

    The RV is closed by its septal interface, so its volume is taken over the
    RV and SEPTUM labels together.
    """
    endo = closed_volume(mesh, LV_ENDO)
    epi = closed_volume(mesh, LV_EPI)
    rv = closed_volume(mesh, (RV, SEPTUM))
    return MeasurementSet(lv_edv=endo, rv_edv=rv, lv_mass=(epi - endo) * MYOCARDIAL_DENSITY)


# -- primitive surfaces ------------------------------------------------------


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
    """Vertices and outward faces of a subdivided icosahedron."""
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return v, np.array(faces, dtype=np.int64)


def uv_sphere(n_rings: int, n_segments: int):
    """Unit sphere with poles on the z axis; outward faces.

    Vertex 0 is the south pole (z = -1), the last vertex the north pole.
    """
    if n_rings < 2 or n_segments < 3:
        raise MeshError("uv_sphere needs n_rings >= 2 and n_segments >= 3")
    theta = np.pi * np.arange(1, n_rings) / n_rings  # from south pole
    phi = 2 * np.pi * np.arange(n_segments) / n_segments
    z = -np.cos(theta)[:, None] * np.ones_like(phi)
    r = np.sin(theta)[:, None]
    ring = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1).reshape(-1, 3)
    verts = np.vstack([[0, 0, -1], ring, [0, 0, 1]])
    north = len(verts) - 1

    def idx(i, j):
        return 1 + i * n_segments + (j % n_segments)

    faces = []
    for j in range(n_segments):
        faces.append((0, idx(0, j + 1), idx(0, j)))
    for i in range(n_rings - 2):
        for j in range(n_segments):
            a, b = idx(i, j), idx(i, j + 1)
            c, d = idx(i + 1, j), idx(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    for j in range(n_segments):
        faces.append((north, idx(n_rings - 2, j), idx(n_rings - 2, j + 1)))
    return verts.astype(float), np.array(faces, dtype=np.int64)


def box(size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Axis-aligned box as 12 outward triangles."""
    sx, sy, sz = size
    ox, oy, oz = origin
    v = np.array(
        [[x, y, z] for z in (0, sz) for y in (0, sy) for x in (0, sx)], dtype=float
    ) + [ox, oy, oz]
    f = np.array(
        [
            [0, 2, 1], [1, 2, 3],  # z = 0
            [4, 5, 6], [5, 7, 6],  # z = sz
            [0, 1, 4], [1, 5, 4],  # y = 0
            [2, 6, 3], [3, 6, 7],  # y = sy
            [0, 4, 2], [2, 4, 6],  # x = 0
            [1, 3, 5], [3, 7, 5],  # x = sx
        ],
        dtype=np.int64,
    )
    return v, f


# -- file formats ------------------------------------------------------------


def _data_lines(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        lines = list(_data_lines(path.read_text()))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    if not lines or not lines[0].startswith("OFF"):
        raise DataError(f"{path}: missing OFF header")
    header = lines[0][3:].split() or lines[1].split()
    body = lines[1:] if lines[0][3:].split() else lines[2:]
    try:
        nv, nf = int(header[0]), int(header[1])
        verts = np.array([[float(x) for x in body[i].split()[:3]] for i in range(nv)])
        faces = []
        for line in body[nv : nv + nf]:
            tok = line.split()
            if int(tok[0]) != 3:
                raise DataError(f"{path}: only triangular faces are supported")
            faces.append([int(t) for t in tok[1:4]])
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed OFF body ({exc})") from exc
    return verts.reshape(nv, 3), np.array(faces, dtype=np.int64).reshape(nf, 3)


def write_off(path, vertices, faces) -> None:
    # repr() round-trips doubles exactly
    lines = ["OFF", f"{len(vertices)} {len(faces)} 0"]
    lines += [" ".join(repr(float(c)) for c in v) for v in vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_region_map(path) -> np.ndarray:
    path = Path(path)
    labels = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    bad = sorted(set(labels) - set(REGION_LABELS))
    if bad:
        raise DataError(f"{path}: unknown region labels {bad}")
    return np.array(labels, dtype=str)


def write_region_map(path, region_map) -> None:
    Path(path).write_text("\n".join(region_map) + "\n")


@dataclass
class MeshCorpus:
    """Meshes sharing one connectivity, keyed by subject id (the file stem)."""

    subject_ids: list[str]
    shapes: np.ndarray  # n x 3N
    template: TriMesh
    files: list[Path] = field(default_factory=list)


def find_region_map(directory) -> Path | None:
    directory = Path(directory)
    for candidate in (directory / "regions.txt", directory.parent / "regions.txt"):
        if candidate.exists():
            return candidate
    return None


def load_corpus(directory, regions=None) -> MeshCorpus:
    directory = Path(directory)
    files = sorted(directory.glob("*.off"))
    if not files:
        raise DataError(f"{directory}: no .off meshes found")
    region_map = None
    regions = Path(regions) if regions else find_region_map(directory)
    if regions is not None:
        region_map = read_region_map(regions)
    ids, shapes, template = [], [], None
    for f in files:
        v, faces = read_off(f)
        if template is None:
            try:
                template = TriMesh(v, faces, region_map)
            except MeshError as exc:
                raise type(exc)(f"{f}: {exc}") from exc
        elif len(v) != template.n_vertices or not np.array_equal(faces, template.faces):
            raise DataError(f"{f}: connectivity differs from {files[0].name}")
        ids.append(f.stem)
        shapes.append(v.reshape(-1))
    return MeshCorpus(ids, np.array(shapes), template, files)


def write_corpus(directory, subject_ids, shapes, template: TriMesh) -> None:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    for sid, x in zip(subject_ids, shapes):
        write_off(directory / f"{sid}.off", np.asarray(x).reshape(-1, 3), template.faces)
