"""Labeled synthetic 4D face data.

Each subject is a half-ellipsoid face shell with a nose, a random smooth
shape perturbation, and a painted luminance pattern (brows, eyes, lips).
Each expression clip moves class-specific facial regions along an
onset-to-apex ramp. Landmarks are tracked mesh vertices, so they always lie
on the surface.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .mesh import EXPRESSIONS, Dataset, FaceMesh, LandmarkSet, ScanSequence

# Face shell half-axes in mm.
HALF_WIDTH = 70.0
HALF_HEIGHT = 90.0
DEPTH = 55.0
GRID_STEP = 4.0

# (center as fraction of (half-width, half-height), sigma mm, apex displacement mm)
# Pairs are mirrored in x by _mirror.
Bump = tuple[tuple[float, float], float, tuple[float, float, float]]


def _mirror(bumps):
    out = []
    for (cx, cy), sigma, (dx, dy, dz) in bumps:
        out.append(((cx, cy), sigma, (dx, dy, dz)))
        if cx != 0:
            out.append(((-cx, cy), sigma, (-dx, dy, dz)))
    return tuple(out)


DEFAULT_PROFILES = {
    # anger: brows pulled down and together, lips pressed
    1: _mirror([((0.30, 0.32), 12.0, (-3.0, -7.0, -2.0)),
                ((0.0, -0.45), 13.0, (0.0, 1.0, -4.0))]),
    # disgust: nose wrinkle, upper lip raised
    2: _mirror([((0.13, 0.02), 9.0, (0.0, 3.0, 5.0)),
                ((0.0, -0.32), 10.0, (0.0, 5.0, 3.0))]),
    # fear: inner brows raised, mouth stretched, jaw slightly down
    3: _mirror([((0.14, 0.34), 10.0, (0.0, 6.0, 0.0)),
                ((0.28, -0.45), 10.0, (5.0, -2.0, 0.0)),
                ((0.0, -0.72), 18.0, (0.0, -3.0, 0.0))]),
    # happiness: mouth corners up and back, cheeks raised
    4: _mirror([((0.27, -0.42), 10.0, (3.0, 7.0, 2.0)),
                ((0.40, -0.15), 15.0, (0.0, 2.0, 6.0))]),
    # sadness: mouth corners down, inner brows up, chin raised
    5: _mirror([((0.27, -0.46), 10.0, (0.0, -6.0, 0.0)),
                ((0.12, 0.33), 8.0, (0.0, 4.0, 1.0)),
                ((0.0, -0.72), 12.0, (0.0, 2.0, 3.0))]),
    # surprise: brows raised high, jaw dropped
    6: _mirror([((0.30, 0.32), 16.0, (0.0, 9.0, 1.0)),
                ((0.0, -0.62), 22.0, (0.0, -11.0, -3.0))]),
}

LANDMARK_TARGETS = {
    "left_face_bound": (-0.88, 0.0),
    "right_face_bound": (0.88, 0.0),
    "chin": (0.0, -0.86),
    "nose_tip": (0.0, -0.05),
    "left_eyebrow": (-0.32, 0.32),
    "right_eyebrow": (0.32, 0.32),
}


@dataclass(frozen=True)
class SyntheticSpec:
    subjects: int = 12
    frames_per_clip: int = 32
    classes: int = 6
    noise_sigma: float = 0.0
    seed: int = 0
    grid_step: float = GRID_STEP
    class_deformation_profiles: dict = field(default_factory=lambda: DEFAULT_PROFILES)

    def __post_init__(self):
        if self.frames_per_clip < 2:
            raise ValueError("synthetic clips need at least two frames")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.classes != len(EXPRESSIONS):
            raise ValueError("exactly six expression classes are supported")
        if self.subjects < 1:
            raise ValueError("need at least one subject")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("class_deformation_profiles")
        return d


def amplitude(t: int, T: int) -> float:
    """Smoothstep onset-to-apex ramp; 0 at frame 1, 1 at frame T (1-based)."""
    s = (t - 1) / (T - 1)
    return s * s * (3.0 - 2.0 * s)


def _grid(step: float):
    xs = np.arange(-HALF_WIDTH, HALF_WIDTH + 1e-9, step)
    ys = np.arange(-HALF_HEIGHT, HALF_HEIGHT + 1e-9, step)
    gx, gy = np.meshgrid(xs, ys[::-1])  # row 0 = top of face
    inside = (gx / HALF_WIDTH) ** 2 + (gy / HALF_HEIGHT) ** 2 <= 0.995
    index = np.full(gx.shape, -1, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))
    faces = []
    rows, cols = gx.shape
    for i in range(rows - 1):
        for j in range(cols - 1):
            a, b, c, d = index[i, j], index[i, j + 1], index[i + 1, j], index[i + 1, j + 1]
            if min(a, b, c, d) >= 0:
                faces.append((a, c, b))
                faces.append((b, c, d))
    return gx[inside], gy[inside], np.asarray(faces, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class _Subject:
    xy: np.ndarray          # neutral (x, y), mm
    z: np.ndarray           # neutral depth
    faces: np.ndarray
    luminance: np.ndarray
    landmark_ids: dict
    intensity: float
    jitter: np.ndarray      # bump-center jitter, mm


def _gauss(xy, cx, cy, sigma):
    return np.exp(-((xy[:, 0] - cx) ** 2 + (xy[:, 1] - cy) ** 2) / (2.0 * sigma * sigma))


def _make_subject(spec: SyntheticSpec, index: int) -> _Subject:
    rng = np.random.default_rng([spec.seed, index, 0])
    gx, gy, faces = _grid(spec.grid_step)
    sx, sy, sz = rng.uniform(0.93, 1.07, size=3)
    xy = np.stack([gx * sx, gy * sy], axis=1)
    u, v = gx / HALF_WIDTH, gy / HALF_HEIGHT
    shell = DEPTH * sz * np.sqrt(np.clip(1.0 - u * u - v * v, 0.0, None))
    nose_h = rng.uniform(14.0, 22.0)
    nose = nose_h * np.exp(-((gx / 9.0) ** 2 + ((gy + 5.0) / 18.0) ** 2))
    identity = np.zeros_like(gx)
    for _ in range(4):
        cx, cy = rng.uniform(-0.7, 0.7) * HALF_WIDTH, rng.uniform(-0.7, 0.7) * HALF_HEIGHT
        identity += rng.normal(0.0, 2.5) * _gauss(np.stack([gx, gy], 1), cx, cy,
                                                  rng.uniform(15.0, 35.0))
    z = shell + nose + identity

    # Painted features live in neutral coordinates so they move with the skin.
    p = np.stack([gx, gy], axis=1)
    tone = 0.62 + rng.uniform(-0.08, 0.08)
    lum = tone + 0.10 * (shell / DEPTH - 0.5)
    for s in (-1, 1):
        lum -= 0.30 * np.exp(-(((gx - s * 0.30 * HALF_WIDTH) / 13.0) ** 2
                               + ((gy - 0.34 * HALF_HEIGHT) / 3.5) ** 2))   # brow
        lum -= 0.35 * _gauss(p, s * 0.33 * HALF_WIDTH, 0.18 * HALF_HEIGHT, 5.0)  # eye
        lum -= 0.15 * _gauss(p, s * 0.10 * HALF_WIDTH, -0.10 * HALF_HEIGHT, 3.0)  # nostril
    lum -= 0.28 * np.exp(-((gx / 18.0) ** 2 + ((gy + 0.45 * HALF_HEIGHT) / 4.0) ** 2))  # lips
    lum = np.clip(lum, 0.0, 1.0)

    ids = {}
    for name, (fx, fy) in LANDMARK_TARGETS.items():
        target = np.array([fx * HALF_WIDTH, fy * HALF_HEIGHT])
        ids[name] = int(np.argmin(np.sum((np.stack([gx, gy], 1) - target) ** 2, axis=1)))
    return _Subject(xy, z, faces, lum, ids, float(rng.uniform(0.8, 1.2)),
                    rng.normal(0.0, 2.0, size=2))


def _displacement(subject: _Subject, bumps) -> np.ndarray:
    grid_xy = subject.xy
    d = np.zeros((len(grid_xy), 3))
    for (fx, fy), sigma, disp in bumps:
        cx = fx * HALF_WIDTH + subject.jitter[0]
        cy = fy * HALF_HEIGHT + subject.jitter[1]
        d += _gauss(grid_xy, cx, cy, sigma)[:, None] * np.asarray(disp)
    return subject.intensity * d


def _sequence(spec: SyntheticSpec, subject: _Subject, index: int, label: int) -> ScanSequence:
    rng = np.random.default_rng([spec.seed, index, label])
    base = np.column_stack([subject.xy, subject.z])
    disp = _displacement(subject, spec.class_deformation_profiles[label])
    T = spec.frames_per_clip
    frames = []
    for t in range(1, T + 1):
        verts = base + amplitude(t, T) * disp
        lum = subject.luminance
        if spec.noise_sigma > 0:
            verts = verts + rng.normal(0.0, spec.noise_sigma * DEPTH, size=verts.shape)
            lum = np.clip(lum + rng.normal(0.0, spec.noise_sigma, size=lum.shape), 0.0, 1.0)
        mesh = FaceMesh(verts, subject.faces, np.repeat(lum[:, None], 3, axis=1))
        lm = LandmarkSet(**{k: verts[i] for k, i in subject.landmark_ids.items()})
        frames.append((mesh, lm))
    return ScanSequence(tuple(frames), f"S{index + 1:03d}", label)


def neutral_mesh(spec: SyntheticSpec, subject_index: int) -> FaceMesh:
    """The subject's undeformed, noise-free face."""
    s = _make_subject(spec, subject_index)
    return FaceMesh(np.column_stack([s.xy, s.z]), s.faces,
                    np.repeat(s.luminance[:, None], 3, axis=1))


def generate_dataset(spec: SyntheticSpec = SyntheticSpec()) -> Dataset:
    """subjects x 6 sequences, subject-major, labels 1..6 within each subject."""
    seqs = []
    for i in range(spec.subjects):
        subject = _make_subject(spec, i)
        for label in range(1, spec.classes + 1):
            seqs.append(_sequence(spec, subject, i, label))
    return Dataset(tuple(seqs))


def separation_ratio(features: np.ndarray, labels) -> float:
    """Mean between-class over mean within-class pairwise Euclidean distance.

    Defined as 0 when there are no between-class pairs, and inf when every
    within-class distance is zero.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    within, between = [], []
    for i, j in combinations(range(len(X)), 2):
        d = float(np.linalg.norm(X[i] - X[j]))
        (within if y[i] == y[j] else between).append(d)
    if not between:
        return 0.0
    w = float(np.mean(within)) if within else 0.0
    if w == 0.0:
        return float("inf")
    return float(np.mean(between)) / w


def class_separation(ds: Dataset, size: int = 64, angle: float = 0.0) -> float:
    """Separation of frontal cross-domain dynamic-image features by class."""
    from .pipeline import example_features

    feats = [example_features(seq, (angle,), size=size)[angle] for seq in ds.sequences]
    return separation_ratio(np.stack(feats), ds.labels)
