"""Orthographic z-buffer rendering of face meshes to K x K rasters."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .errors import MissingAttributeError, ShapeError, StageError
from .mesh import FaceMesh, ScanSequence

DOMAINS = ("texture", "depth", "enhanced_depth", "cross_domain")
DEFAULT_SIZE = 224
# Farthest covered depth maps here rather than to 0 so it stays distinct
# from a black background after 8-bit export.
DEPTH_FLOOR = 1.0 / 255.0


@dataclass(frozen=True, eq=False)
class DomainImage:
    """Square single-channel raster with values in [0, 1]."""

    pixels: np.ndarray
    domain: str

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.shape[0] != px.shape[1] or px.shape[0] < 1:
            raise ShapeError(f"expected a K x K raster, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise ValueError("pixels must be finite and within [0, 1]")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown image domain {self.domain!r}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class CameraSpec:
    """Orthographic window in mesh units, looking down -z from +z."""

    x_range: tuple[float, float] = (-100.0, 100.0)
    y_range: tuple[float, float] = (-100.0, 100.0)
    background_value: float = 0.0

    def __post_init__(self):
        if not self.x_range[1] > self.x_range[0] or not self.y_range[1] > self.y_range[0]:
            raise ValueError("camera extents must be strictly positive")
        if not 0.0 <= self.background_value <= 1.0:
            raise ValueError("background_value must lie in [0, 1]")

    @classmethod
    def square(cls, half_extent: float, center=(0.0, 0.0), background_value: float = 0.0):
        cx, cy = center
        return cls((cx - half_extent, cx + half_extent), (cy - half_extent, cy + half_extent),
                   background_value)

    def to_pixels(self, xy: np.ndarray, size: int) -> np.ndarray:
        """Map mesh x/y to continuous pixel coordinates (col, row).

        Pixel (i, j) has its center at (j + 0.5, i + 0.5); row 0 is the top
        of the window (largest y).
        """
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        u = (xy[:, 0] - x0) / (x1 - x0) * size
        v = (y1 - xy[:, 1]) / (y1 - y0) * size
        return np.stack([u, v], axis=1)


def rasterize(mesh: FaceMesh, cam: CameraSpec, size: int, attribute: np.ndarray | None = None):
    """Z-buffer rasterization of the mesh.

    Returns ``(zbuf, attr)``: the largest interpolated z at every pixel center
    (``-inf`` where no triangle covers it) and, if a per-vertex attribute is
    given, its barycentric interpolation from the winning triangle (NaN where
    uncovered). Coverage uses closed triangles.
    """
    if size < 1:
        raise ValueError("image size must be at least 1")
    npix = size * size
    zbuf = np.full(npix, -np.inf)
    abuf = np.full(npix, np.nan) if attribute is not None else None
    if mesh.num_faces == 0:
        return zbuf.reshape(size, size), None if abuf is None else abuf.reshape(size, size)

    uv = cam.to_pixels(mesh.vertices[:, :2], size)
    tri = uv[mesh.faces]  # (F, 3, 2)
    z = mesh.vertices[:, 2][mesh.faces]
    p0, p1, p2 = tri[:, 0], tri[:, 1], tri[:, 2]
    area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])

    lo = np.ceil(tri.min(axis=1) - 0.5).astype(np.int64)
    hi = np.floor(tri.max(axis=1) - 0.5).astype(np.int64)
    lo = np.clip(lo, 0, size - 1)
    hi = np.clip(hi, -1, size - 1)
    w = hi[:, 0] - lo[:, 0] + 1
    h = hi[:, 1] - lo[:, 1] + 1
    ok = (area != 0) & (w > 0) & (h > 0) & (tri.max(axis=1) >= 0.5).all(axis=1)
    ok &= (tri.min(axis=1) <= size - 0.5).all(axis=1)
    faces_idx = np.nonzero(ok)[0]
    if faces_idx.size == 0:
        return zbuf.reshape(size, size), None if abuf is None else abuf.reshape(size, size)
    w, h = w[faces_idx], h[faces_idx]
    counts = w * h
    fid = np.repeat(faces_idx, counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(counts.sum()) - np.repeat(starts, counts)
    ww = np.repeat(w, counts)
    col = lo[fid, 0] + local % ww
    row = lo[fid, 1] + local // ww
    px = col + 0.5
    py = row + 0.5

    a = area[fid]
    q0, q1, q2 = p0[fid], p1[fid], p2[fid]
    # Barycentric weight of each vertex = signed area of the opposite sub-triangle.
    b0 = ((q1[:, 0] - px) * (q2[:, 1] - py) - (q1[:, 1] - py) * (q2[:, 0] - px)) / a
    b1 = ((q2[:, 0] - px) * (q0[:, 1] - py) - (q2[:, 1] - py) * (q0[:, 0] - px)) / a
    b2 = 1.0 - b0 - b1
    inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
    if not inside.any():
        return zbuf.reshape(size, size), None if abuf is None else abuf.reshape(size, size)
    fid, b0, b1, b2 = fid[inside], b0[inside], b1[inside], b2[inside]
    pid = row[inside] * size + col[inside]
    zf = z[fid]
    zi = b0 * zf[:, 0] + b1 * zf[:, 1] + b2 * zf[:, 2]

    order = np.lexsort((zi, pid))
    pid_sorted = pid[order]
    last = np.ones(len(order), dtype=bool)
    last[:-1] = pid_sorted[1:] != pid_sorted[:-1]
    win = order[last]
    zbuf[pid[win]] = zi[win]
    if attribute is not None:
        af = np.asarray(attribute, dtype=np.float64)[mesh.faces[fid[win]]]
        abuf[pid[win]] = b0[win] * af[:, 0] + b1[win] * af[:, 1] + b2[win] * af[:, 2]
    return zbuf.reshape(size, size), None if abuf is None else abuf.reshape(size, size)


def normalize_depth(zbuf: np.ndarray, background_value: float = 0.0) -> np.ndarray:
    """Per-frame min/max normalization of covered depth into [DEPTH_FLOOR, 1].

    The nearest covered point maps to 1. A frame whose covered pixels share
    a single depth maps them all to 1.
    """
    covered = np.isfinite(zbuf)
    out = np.full(zbuf.shape, float(background_value))
    if not covered.any():
        return out
    zc = zbuf[covered]
    zmin, zmax = zc.min(), zc.max()
    if zmax > zmin:
        out[covered] = 1.0 - (1.0 - DEPTH_FLOOR) * ((zmax - zc) / (zmax - zmin))
    else:
        out[covered] = 1.0
    return out


def render_depth(mesh: FaceMesh, cam: CameraSpec, size: int = DEFAULT_SIZE) -> DomainImage:
    zbuf, _ = rasterize(mesh, cam, size)
    return DomainImage(normalize_depth(zbuf, cam.background_value), "depth")


def render_texture(mesh: FaceMesh, cam: CameraSpec, size: int = DEFAULT_SIZE) -> DomainImage:
    if mesh.colors is None:
        raise MissingAttributeError("texture rendering needs per-vertex colors")
    zbuf, lum = rasterize(mesh, cam, size, mesh.luminance())
    px = np.where(np.isfinite(zbuf), np.clip(lum, 0.0, 1.0), cam.background_value)
    return DomainImage(px, "texture")


def render_both(mesh: FaceMesh, cam: CameraSpec, size: int = DEFAULT_SIZE):
    """Texture and depth from a single rasterization pass."""
    if mesh.colors is None:
        raise MissingAttributeError("texture rendering needs per-vertex colors")
    zbuf, lum = rasterize(mesh, cam, size, mesh.luminance())
    covered = np.isfinite(zbuf)
    tex = np.where(covered, np.clip(np.nan_to_num(lum), 0.0, 1.0), cam.background_value)
    return DomainImage(tex, "texture"), DomainImage(normalize_depth(zbuf, cam.background_value), "depth")


def render_sequence(seq: ScanSequence, cam: CameraSpec, size: int = DEFAULT_SIZE):
    """Stacked ``(texture, depth)`` arrays of shape (T, K, K) for one sequence."""
    tex = np.empty((len(seq), size, size))
    dep = np.empty((len(seq), size, size))
    for t, mesh in enumerate(seq.meshes):
        try:
            a, b = render_both(mesh, cam, size)
        except Exception as exc:
            raise StageError("render", exc, frame=t) from exc
        tex[t], dep[t] = a.pixels, b.pixels
    return tex, dep


def render_views(views: Mapping[float, ScanSequence], cam: CameraSpec, size: int = DEFAULT_SIZE):
    """Map each view angle to its (texture, depth) image sequences."""
    from .imageops import ImageSequence

    out = {}
    for theta, seq in views.items():
        try:
            tex, dep = render_sequence(seq, cam, size)
        except StageError as exc:
            raise StageError("render", exc.cause, view=theta, frame=exc.frame) from exc
        out[theta] = (ImageSequence(tex, "texture"), ImageSequence(dep, "depth"))
    return out


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(pixels, path) -> None:
    """8-bit grayscale PNG with value round(pixel * 255)."""
    if isinstance(pixels, DomainImage):
        pixels = pixels.pixels
    Image.fromarray(to_uint8(np.asarray(pixels)), mode="L").save(Path(path), optimize=False)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def format_angle(theta: float) -> str:
    if float(theta).is_integer():
        return f"{int(theta):+d}"
    return f"{theta:+g}".replace(".", "p")


def image_filename(subject: str, expression: int, theta: float, t: int | None, domain: str,
                   suffix: str = "png") -> str:
    """``<subject>_e<label>_v<angle>[_t<frame>]_<domain>.<suffix>``."""
    frame = "" if t is None else f"_t{t:03d}"
    return f"{subject}_e{expression}_v{format_angle(theta)}{frame}_{domain}.{suffix}"
