"""Face scans: mesh containers, file I/O, and geometric preprocessing.

A scan frame is a triangle mesh plus six landmark anchors. Preprocessing
rotates each frame about the vertical axis through its centroid and then
crops it to a landmark-derived box, which is how the multi-view sequences
are produced.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateCropError,
    MeshFormatError,
    MeshParseError,
)

EXPRESSIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise")
ANCHORS = (
    "left_face_bound",
    "right_face_bound",
    "chin",
    "nose_tip",
    "left_eyebrow",
    "right_eyebrow",
)

DEFAULT_FOREHEAD_FRACTION = 1.0
DEFAULT_DEPTH_MARGIN = 1.2


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FaceMesh:
    """Triangle mesh with optional per-vertex RGB colors in [0, 1].

    Arrays are copied on construction and made read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    colors: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError(f"face index out of range for {len(v)} vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.colors is not None:
            c = _frozen(self.colors, np.float64).reshape(-1, 3)
            if len(c) != len(v):
                raise ValueError("colors must have one row per vertex")
            if np.any(c < 0) or np.any(c > 1):
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", c)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def luminance(self) -> np.ndarray:
        """Per-vertex Rec. 601 luma of the vertex colors."""
        if self.colors is None:
            raise AttributeError("mesh has no colors")
        return self.colors @ np.array([0.299, 0.587, 0.114])

    def subset(self, keep: np.ndarray) -> "FaceMesh":
        """Keep the vertices selected by a boolean mask.

        Faces touching a dropped vertex are dropped; the remaining faces are
        reindexed.
        """
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        faces = remap[self.faces] if len(self.faces) else self.faces
        faces = faces[np.all(faces >= 0, axis=1)] if len(faces) else faces
        colors = None if self.colors is None else self.colors[keep]
        return FaceMesh(self.vertices[keep], faces, colors)

    def same_as(self, other: "FaceMesh") -> bool:
        """Bit-exact equality of geometry, topology, and colors."""
        if (self.colors is None) != (other.colors is None):
            return False
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.faces, other.faces)
            and (self.colors is None or np.array_equal(self.colors, other.colors))
        )


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    left_face_bound: np.ndarray
    right_face_bound: np.ndarray
    chin: np.ndarray
    nose_tip: np.ndarray
    left_eyebrow: np.ndarray
    right_eyebrow: np.ndarray

    def __post_init__(self):
        for name in ANCHORS:
            p = _frozen(getattr(self, name), np.float64).reshape(3)
            if not np.all(np.isfinite(p)):
                raise ValueError(f"landmark {name} is not finite")
            object.__setattr__(self, name, p)

    @classmethod
    def from_array(cls, points) -> "LandmarkSet":
        points = np.asarray(points, dtype=np.float64).reshape(len(ANCHORS), 3)
        return cls(*points)

    def as_array(self) -> np.ndarray:
        return np.stack([getattr(self, name) for name in ANCHORS])

    @property
    def eyebrow_mid(self) -> np.ndarray:
        return 0.5 * (self.left_eyebrow + self.right_eyebrow)

    def same_as(self, other: "LandmarkSet") -> bool:
        return np.array_equal(self.as_array(), other.as_array())


@dataclass(frozen=True, eq=False)
class ScanSequence:
    """Ordered 3D frames of one subject performing one expression."""

    frames: tuple
    subject_id: str
    expression_label: int

    def __post_init__(self):
        frames = tuple((m, lm) for m, lm in self.frames)
        if not frames:
            raise ValueError("a scan sequence needs at least one frame")
        if not 1 <= int(self.expression_label) <= len(EXPRESSIONS):
            raise ValueError(f"expression label {self.expression_label} outside 1..6")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "expression_label", int(self.expression_label))

    def __len__(self):
        return len(self.frames)

    @property
    def meshes(self) -> list[FaceMesh]:
        return [m for m, _ in self.frames]

    @property
    def landmarks(self) -> list[LandmarkSet]:
        return [lm for _, lm in self.frames]

    @property
    def expression(self) -> str:
        return EXPRESSIONS[self.expression_label - 1]


@dataclass(frozen=True, eq=False)
class Dataset:
    sequences: tuple
    label_names: tuple = EXPRESSIONS

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    def __len__(self):
        return len(self.sequences)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.expression_label for s in self.sequences], dtype=np.int64)

    @property
    def subjects(self) -> list[str]:
        return [s.subject_id for s in self.sequences]


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_mesh(path, format: str | None = None) -> FaceMesh:
    """Read an OBJ or PLY mesh.

    ``format`` is ``"obj"`` or ``"ply"``; when omitted it is taken from the
    file suffix. OBJ vertex colors use the common ``v x y z r g b``
    extension. PLY may be ASCII or binary little-endian.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _load_ply(path)
    raise MeshFormatError(f"unsupported mesh format {fmt!r} for {path}")


def _obj_index(token: str, count: int, path, lineno) -> int:
    try:
        idx = int(token.split("/")[0])
    except ValueError:
        raise MeshParseError(f"bad face index {token!r}", path, lineno) from None
    if idx == 0:
        raise MeshParseError("face index 0 is invalid in OBJ", path, lineno)
    return idx - 1 if idx > 0 else count + idx


def _load_obj(path: Path) -> FaceMesh:
    verts, cols, faces, face_lines = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    values = [float(x) for x in parts[1:]]
                except ValueError:
                    raise MeshParseError("non-numeric vertex record", path, lineno) from None
                if len(values) not in (3, 4, 6, 7):
                    raise MeshParseError(f"vertex record has {len(values)} values", path, lineno)
                verts.append(values[:3])
                if len(values) >= 6:
                    cols.append(values[-3:])
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshParseError("face with fewer than 3 vertices", path, lineno)
                idx = [_obj_index(tok, len(verts), path, lineno) for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
                    face_lines.append(lineno)
    n = len(verts)
    for (a, b, c), lineno in zip(faces, face_lines):
        if not (0 <= a < n and 0 <= b < n and 0 <= c < n):
            raise MeshParseError(f"face references vertex outside 1..{n}", path, lineno)
    colors = None
    if cols:
        if len(cols) != n:
            raise MeshParseError("only some vertices carry colors", path, None)
        colors = np.asarray(cols, dtype=np.float64)
        if colors.max(initial=0.0) > 1.0:
            colors = colors / 255.0
    return FaceMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                    np.asarray(faces, dtype=np.int64).reshape(-1, 3), colors)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh, path):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise MeshParseError("missing 'ply' magic", path, 1)
    fmt = None
    elements = []  # [name, count, [(prop, dtype) or (prop, ('list', count_t, item_t))]]
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise MeshParseError("unterminated PLY header", path, lineno)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError("property before element", path, lineno)
            try:
                if parts[1] == "list":
                    elements[-1][2].append(
                        (parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except (KeyError, IndexError):
                raise MeshParseError(f"bad property line {raw!r}", path, lineno) from None
        elif parts[0] == "end_header":
            break
        else:
            raise MeshParseError(f"unexpected header keyword {parts[0]!r}", path, lineno)
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshFormatError(f"unsupported PLY encoding {fmt!r} in {path}")
    return fmt, elements, lineno


def _ply_colors(table: dict, n: int):
    names = [("red", "green", "blue"), ("r", "g", "b")]
    for r, g, b in names:
        if r in table and g in table and b in table:
            raw = [table[r], table[g], table[b]]
            cols = np.stack([np.asarray(c, dtype=np.float64) for c in raw], axis=1)
            if any(np.asarray(c).dtype.kind in "ui" for c in raw):
                cols = cols / 255.0
            return cols.reshape(n, 3)
    return None


def _load_ply(path: Path) -> FaceMesh:
    with open(path, "rb") as fh:
        fmt, elements, lineno = _parse_ply_header(fh, path)
        body = fh.read()
    if fmt == "ascii":
        return _ply_ascii(body, elements, lineno, path)
    return _ply_binary(body, elements, path)


def _ply_build(vertex_table, n_vertices, faces, path):
    try:
        verts = np.stack([np.asarray(vertex_table[k], dtype=np.float64) for k in "xyz"], axis=1)
    except KeyError:
        raise MeshParseError("vertex element lacks x/y/z", path, None) from None
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= n_vertices):
        raise MeshParseError(f"face references vertex outside 0..{n_vertices - 1}", path, None)
    return FaceMesh(verts.reshape(-1, 3), faces, _ply_colors(vertex_table, n_vertices))


def _ply_ascii(body: bytes, elements, header_lines, path):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    vertex_table, n_vertices, faces = {}, 0, []
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise MeshParseError(f"file ends inside element '{name}'", path, header_lines + pos + 1)
            rows.append((header_lines + pos + 1, lines[pos].split()))
            pos += 1
        if name == "vertex":
            n_vertices = count
            cols = {p: [] for p, _ in props}
            for lineno, tokens in rows:
                if len(tokens) < len(props):
                    raise MeshParseError("short vertex record", path, lineno)
                try:
                    for (p, dt), tok in zip(props, tokens):
                        cols[p].append(np.dtype(dt).type(float(tok)) if dt[0] == "f" else int(tok))
                except ValueError:
                    raise MeshParseError("non-numeric vertex record", path, lineno) from None
            vertex_table = {p: np.asarray(v, dtype=dt) for (p, dt), v in zip(props, cols.values())}
        elif name == "face":
            for lineno, tokens in rows:
                try:
                    k = int(tokens[0])
                    idx = [int(t) for t in tokens[1:1 + k]]
                except (ValueError, IndexError):
                    raise MeshParseError("bad face record", path, lineno) from None
                if len(idx) != k or k < 3:
                    raise MeshParseError("bad face record", path, lineno)
                if any(i < 0 or i >= n_vertices for i in idx):
                    raise MeshParseError(
                        f"face references vertex outside 0..{n_vertices - 1}", path, lineno)
                for j in range(1, k - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
    return _ply_build(vertex_table, n_vertices, faces, path)


def _ply_binary(body: bytes, elements, path):
    offset = 0
    vertex_table, n_vertices, faces = {}, 0, []
    for name, count, props in elements:
        scalar = all(not isinstance(dt, tuple) for _, dt in props)
        if scalar:
            dtype = np.dtype([(p, "<" + dt) for p, dt in props])
            need = dtype.itemsize * count
            if offset + need > len(body):
                raise MeshParseError(f"binary body truncated in element '{name}'", path, None)
            table = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            offset += need
            if name == "vertex":
                n_vertices = count
                vertex_table = {p: table[p] for p, _ in props}
            continue
        if len(props) != 1:
            raise MeshFormatError(f"mixed list/scalar element '{name}' not supported in {path}")
        _, (_, count_t, item_t) = props[0]
        ct, it = np.dtype("<" + count_t), np.dtype("<" + item_t)
        rows = []
        for _ in range(count):
            if offset + ct.itemsize > len(body):
                raise MeshParseError(f"binary body truncated in element '{name}'", path, None)
            k = int(np.frombuffer(body, dtype=ct, count=1, offset=offset)[0])
            offset += ct.itemsize
            if offset + k * it.itemsize > len(body):
                raise MeshParseError(f"binary body truncated in element '{name}'", path, None)
            rows.append(np.frombuffer(body, dtype=it, count=k, offset=offset).astype(np.int64))
            offset += k * it.itemsize
        if name == "face":
            for idx in rows:
                if len(idx) < 3:
                    raise MeshParseError("face with fewer than 3 vertices", path, None)
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
    return _ply_build(vertex_table, n_vertices, faces, path)


def save_obj(mesh: FaceMesh, path) -> None:
    """Write an OBJ; colors (if any) use the ``v x y z r g b`` extension."""
    lines = []
    for i, v in enumerate(mesh.vertices):
        rec = "v " + " ".join(repr(float(x)) for x in v)
        if mesh.colors is not None:
            c = mesh.colors[i]
            rec += " " + " ".join(repr(float(x)) for x in c)
        lines.append(rec)
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_ply(mesh: FaceMesh, path, binary: bool = False) -> None:
    """Write a PLY, ASCII or binary little-endian, colors as float properties."""
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {mesh.num_vertices}",
              "property double x", "property double y", "property double z"]
    if mesh.colors is not None:
        header += ["property double red", "property double green", "property double blue"]
    header += [f"element face {mesh.num_faces}", "property list uchar int vertex_indices",
               "end_header"]
    data = mesh.vertices if mesh.colors is None else np.hstack([mesh.vertices, mesh.colors])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
            rec = np.zeros(mesh.num_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = mesh.faces
            fh.write(rec.tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))
            for a, b, c in mesh.faces:
                fh.write(f"3 {a} {b} {c}\n".encode("ascii"))


def write_landmarks(landmarks: Sequence[LandmarkSet], path) -> None:
    """One ``frame anchor x y z`` record per line, frames numbered from 0."""
    lines = ["# facedyn landmarks v1", "# frame anchor x y z"]
    for t, lm in enumerate(landmarks):
        for name in ANCHORS:
            x, y, z = getattr(lm, name)
            lines.append(f"{t} {name} {float(x)!r} {float(y)!r} {float(z)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_landmarks(path) -> list[LandmarkSet]:
    records: dict[int, dict[str, list[float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 5 or parts[1] not in ANCHORS:
                raise MeshParseError("expected 'frame anchor x y z'", path, lineno)
            try:
                t = int(parts[0])
                xyz = [float(x) for x in parts[2:]]
            except ValueError:
                raise MeshParseError("non-numeric landmark record", path, lineno) from None
            records.setdefault(t, {})[parts[1]] = xyz
    out = []
    for t in range(len(records)):
        rec = records.get(t)
        if rec is None or len(rec) != len(ANCHORS):
            missing = sorted(set(ANCHORS) - set(rec or {}))
            raise MeshParseError(f"frame {t} is missing anchors {missing}", path, None)
        out.append(LandmarkSet(**rec))
    return out


_FRAME_RE = re.compile(r"frame_(\d+)\.(obj|ply)$")


def save_sequence(seq: ScanSequence, directory, format: str = "obj") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, mesh in enumerate(seq.meshes):
        target = directory / f"frame_{t:04d}.{format}"
        if format == "obj":
            save_obj(mesh, target)
        elif format == "ply":
            save_ply(mesh, target)
        else:
            raise MeshFormatError(f"unsupported mesh format {format!r}")
    write_landmarks(seq.landmarks, directory / "landmarks.txt")


def load_sequence(directory, subject_id: str, expression_label: int) -> ScanSequence:
    directory = Path(directory)
    frames = sorted(
        (int(m.group(1)), p) for p in directory.iterdir() if (m := _FRAME_RE.search(p.name))
    )
    if not frames:
        raise MeshParseError("no frame_XXXX.obj/ply files", directory, None)
    landmarks = read_landmarks(directory / "landmarks.txt")
    if len(landmarks) != len(frames):
        raise MeshParseError(
            f"{len(frames)} mesh frames but {len(landmarks)} landmark frames", directory, None)
    meshes = [load_mesh(p) for _, p in frames]
    return ScanSequence(tuple(zip(meshes, landmarks)), subject_id, expression_label)


def save_dataset(ds: Dataset, root, format: str = "obj") -> None:
    """Persist as ``root/<subject>/<expression>/frame_XXXX.<fmt>`` plus landmarks."""
    root = Path(root)
    for seq in ds.sequences:
        save_sequence(seq, root / seq.subject_id / seq.expression, format)


def load_dataset(root) -> Dataset:
    """Inverse of :func:`save_dataset`; subjects and expressions in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(root)
    seqs = []
    for subj in sorted(p for p in root.iterdir() if p.is_dir()):
        for label, name in enumerate(EXPRESSIONS, start=1):
            d = subj / name
            if d.is_dir():
                seqs.append(load_sequence(d, subj.name, label))
    if not seqs:
        raise MeshParseError("no <subject>/<expression> sequence directories", root, None)
    return Dataset(tuple(seqs))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def yaw_matrix(yaw_deg: float) -> np.ndarray:
    """Rotation about +y; positive yaw takes +x toward -z."""
    a = math.radians(yaw_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rotate_points(points: np.ndarray, yaw_deg: float, center: np.ndarray) -> np.ndarray:
    return (points - center) @ yaw_matrix(yaw_deg).T + center


def rotate_mesh(mesh: FaceMesh, yaw_deg: float) -> FaceMesh:
    """Rigidly rotate about the vertical axis through the mesh centroid."""
    if not math.isfinite(yaw_deg):
        raise ValueError("yaw must be finite")
    if yaw_deg == 0 or mesh.num_vertices == 0:
        return mesh
    verts = _rotate_points(mesh.vertices, yaw_deg, mesh.centroid)
    return FaceMesh(verts, mesh.faces, mesh.colors)


def rotate_landmarks(lm: LandmarkSet, yaw_deg: float, center) -> LandmarkSet:
    if yaw_deg == 0:
        return lm
    return LandmarkSet.from_array(_rotate_points(lm.as_array(), yaw_deg, np.asarray(center)))


def crop_box(lm: LandmarkSet, forehead_fraction: float = DEFAULT_FOREHEAD_FRACTION,
             depth_margin: float = DEFAULT_DEPTH_MARGIN) -> tuple[np.ndarray, np.ndarray]:
    """Closed axis-aligned box ``(lower, upper)`` implied by the landmarks.

    ``forehead_fraction`` and ``depth_margin`` are both in units of the
    eyebrow-midpoint to nose-tip distance.
    """
    if not 0 < forehead_fraction <= 2:
        raise ConfigurationError(f"forehead_fraction must be in (0, 2], got {forehead_fraction}")
    if depth_margin < 0:
        raise ConfigurationError("depth_margin must be non-negative")
    brow = lm.eyebrow_mid
    span = float(np.linalg.norm(brow - lm.nose_tip))
    lower = np.array([lm.left_face_bound[0], lm.chin[1], lm.nose_tip[2] - depth_margin * span])
    upper = np.array([lm.right_face_bound[0], brow[1] + forehead_fraction * span, np.inf])
    return lower, upper


def crop_face(mesh: FaceMesh, lm: LandmarkSet,
              forehead_fraction: float = DEFAULT_FOREHEAD_FRACTION,
              depth_margin: float = DEFAULT_DEPTH_MARGIN) -> FaceMesh:
    """Drop every vertex outside the landmark box; boundary vertices are kept."""
    lower, upper = crop_box(lm, forehead_fraction, depth_margin)
    v = mesh.vertices
    keep = np.all((v >= lower) & (v <= upper), axis=1)
    if not keep.any():
        raise DegenerateCropError("crop removed every vertex")
    if keep.all():
        return mesh
    return mesh.subset(keep)


def preprocess_frame(mesh: FaceMesh, lm: LandmarkSet, yaw_deg: float,
                     forehead_fraction: float = DEFAULT_FOREHEAD_FRACTION,
                     depth_margin: float = DEFAULT_DEPTH_MARGIN) -> tuple[FaceMesh, LandmarkSet]:
    center = mesh.centroid
    rotated = rotate_mesh(mesh, yaw_deg)
    rlm = rotate_landmarks(lm, yaw_deg, center)
    return crop_face(rotated, rlm, forehead_fraction, depth_margin), rlm


def preprocess_scan(seq: ScanSequence, yaw_deg: float,
                    forehead_fraction: float = DEFAULT_FOREHEAD_FRACTION,
                    depth_margin: float = DEFAULT_DEPTH_MARGIN) -> ScanSequence:
    """Rotate, then crop, every frame.

    Landmarks are carried through the same rigid rotation so the crop box
    is expressed in the rotated frame.
    """
    out = []
    for t, (mesh, lm) in enumerate(seq.frames):
        try:
            out.append(preprocess_frame(mesh, lm, yaw_deg, forehead_fraction, depth_margin))
        except DegenerateCropError as exc:
            raise DegenerateCropError(f"frame {t}: {exc}") from exc
    return ScanSequence(tuple(out), seq.subject_id, seq.expression_label)


def validate_angles(angles: Iterable[float]) -> tuple[float, ...]:
    angles = tuple(float(a) for a in angles)
    if not angles:
        raise ConfigurationError("at least one view angle is required")
    if len(set(angles)) != len(angles):
        raise ConfigurationError(f"duplicate view angles in {angles}")
    if not all(math.isfinite(a) for a in angles):
        raise ConfigurationError("view angles must be finite")
    return angles


def generate_views(seq: ScanSequence, angles: Iterable[float],
                   forehead_fraction: float = DEFAULT_FOREHEAD_FRACTION,
                   depth_margin: float = DEFAULT_DEPTH_MARGIN) -> dict[float, ScanSequence]:
    """One preprocessed sequence per yaw angle, in the given angle order."""
    return {a: preprocess_scan(seq, a, forehead_fraction, depth_margin)
            for a in validate_angles(angles)}


def views_equal(a: Mapping[float, ScanSequence], b: Mapping[float, ScanSequence]) -> bool:
    if list(a) != list(b):
        return False
    for k in a:
        if len(a[k]) != len(b[k]):
            return False
        for (m1, l1), (m2, l2) in zip(a[k].frames, b[k].frames):
            if not (m1.same_as(m2) and l1.same_as(l2)):
                return False
    return True
