"""Contrast-limited adaptive histogram equalization and cross-domain fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .render import DOMAINS, DomainImage

CLAHE_TILES = 8
CLAHE_CLIP_LIMIT = 2.0
CLAHE_BINS = 256
FUSION_DOMAINS = ("texture", "enhanced_depth", "depth")


@dataclass(frozen=True, eq=False)
class ImageSequence:
    """T frames of one domain, stored as a read-only (T, K, K) array."""

    frames: np.ndarray
    domain: str

    def __post_init__(self):
        a = np.asarray(self.frames, dtype=np.float64)
        if a.ndim != 3 or a.shape[0] < 1 or a.shape[1] != a.shape[2]:
            raise ShapeError(f"expected (T, K, K) frames with T >= 1, got {a.shape}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown image domain {self.domain!r}")
        if a.flags.writeable:
            a = a.copy()
            a.setflags(write=False)
        object.__setattr__(self, "frames", a)

    @classmethod
    def from_images(cls, images: Sequence[DomainImage]) -> "ImageSequence":
        if not images:
            raise ShapeError("empty image list")
        domains = {im.domain for im in images}
        sizes = {im.size for im in images}
        if len(domains) != 1 or len(sizes) != 1:
            raise ShapeError("frames must share one domain and one size")
        return cls(np.stack([im.pixels for im in images]), images[0].domain)

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, t: int) -> DomainImage:
        return DomainImage(self.frames[t], self.domain)

    @property
    def size(self) -> int:
        return self.frames.shape[1]

    def window(self, start: int, length: int) -> "ImageSequence":
        """Zero-based sub-clip; shares memory with this sequence."""
        return ImageSequence(self.frames[start:start + length], self.domain)


def _tile_luts(padded: np.ndarray, tiles: int, clip_limit: float, nbins: int) -> np.ndarray:
    """Per-tile lookup tables, shape (tiles, tiles, nbins)."""
    k = padded.shape[0] // tiles
    bins = np.minimum((padded * nbins).astype(np.int64), nbins - 1)
    blocks = bins.reshape(tiles, k, tiles, k).transpose(0, 2, 1, 3).reshape(tiles * tiles, k * k)
    npx = k * k
    hist = np.zeros((tiles * tiles, nbins))
    np.add.at(hist, (np.repeat(np.arange(tiles * tiles), npx), blocks.ravel()), 1.0)
    if math.isfinite(clip_limit):
        limit = clip_limit * npx / nbins
        excess = np.maximum(hist - limit, 0.0).sum(axis=1, keepdims=True)
        hist = np.minimum(hist, limit) + excess / nbins
    luts = np.cumsum(hist, axis=1) / npx
    # Flat tiles have no contrast to stretch; map them through identity.
    flat = blocks.min(axis=1) == blocks.max(axis=1)
    if flat.any():
        luts[flat] = np.nan
    return luts.reshape(tiles, tiles, nbins)


def clahe(pixels: np.ndarray, tiles: int = CLAHE_TILES, clip_limit: float = CLAHE_CLIP_LIMIT,
          nbins: int = CLAHE_BINS) -> np.ndarray:
    """CLAHE on a square [0, 1] array.

    ``clip_limit`` is in multiples of the uniform bin height; histogram mass
    above it is spread evenly over all bins. Each pixel blends the mappings of
    its four nearest tile centers bilinearly. A size not divisible by
    ``tiles`` is reflect-padded and cropped back.
    """
    img = np.asarray(pixels, dtype=np.float64)
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    if not clip_limit > 0:
        raise ValueError("clip_limit must be positive")
    size = img.shape[0]
    tiles = min(tiles, size)
    padded_size = -(-size // tiles) * tiles
    pad = padded_size - size
    padded = np.pad(img, ((0, pad), (0, pad)), mode="symmetric") if pad else img
    k = padded_size // tiles
    luts = _tile_luts(padded, tiles, clip_limit, nbins)

    bins = np.minimum((padded * nbins).astype(np.int64), nbins - 1)
    # Position of each pixel center in tile-center coordinates.
    pos = (np.arange(padded_size) + 0.5) / k - 0.5
    lo = np.clip(np.floor(pos).astype(np.int64), 0, tiles - 1)
    hi = np.clip(lo + 1, 0, tiles - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    frac[pos < 0] = 0.0

    r0, r1, fr = lo[:, None], hi[:, None], frac[:, None]
    c0, c1, fc = lo[None, :], hi[None, :], frac[None, :]

    def sample(ti, tj):
        v = luts[ti, tj, bins]
        return np.where(np.isnan(v), padded, v)

    out = ((1 - fr) * ((1 - fc) * sample(r0, c0) + fc * sample(r0, c1))
           + fr * ((1 - fc) * sample(r1, c0) + fc * sample(r1, c1)))
    return np.clip(out[:size, :size], 0.0, 1.0)


def clahe_enhance(img: DomainImage, tiles: int = CLAHE_TILES,
                  clip_limit: float = CLAHE_CLIP_LIMIT) -> DomainImage:
    """Enhanced-depth image from a depth image."""
    if img.domain != "depth":
        raise ValueError(f"CLAHE expects a depth image, got {img.domain!r}")
    return DomainImage(clahe(img.pixels, tiles, clip_limit), "enhanced_depth")


def clahe_sequence(seq: ImageSequence, tiles: int = CLAHE_TILES,
                   clip_limit: float = CLAHE_CLIP_LIMIT) -> ImageSequence:
    if seq.domain != "depth":
        raise ValueError(f"CLAHE expects depth frames, got {seq.domain!r}")
    return ImageSequence(np.stack([clahe(f, tiles, clip_limit) for f in seq.frames]),
                         "enhanced_depth")


def _fusion_weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("need one non-negative weight per input with a positive sum")
    return w / w.sum()


def fuse_arrays(arrays: Sequence[np.ndarray], weights=None) -> np.ndarray:
    """Weighted pixel-wise mean of equally shaped arrays."""
    if len(arrays) < 2:
        raise ValueError("cross-domain fusion needs at least two inputs")
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"inputs differ in shape: {sorted(shapes)}")
    w = _fusion_weights(len(arrays), weights)
    out = np.zeros(np.shape(arrays[0]))
    for wi, a in zip(w, arrays):
        out += wi * np.asarray(a, dtype=np.float64)
    return np.clip(out, 0.0, 1.0)


def cross_domain_fuse(domain_images: Sequence[DomainImage], weights=None) -> DomainImage:
    return DomainImage(fuse_arrays([im.pixels for im in domain_images], weights), "cross_domain")


def fuse_sequence(texture: ImageSequence, depth: ImageSequence, edepth: ImageSequence,
                  weights=None) -> ImageSequence:
    """Frame-wise fusion; ``weights`` follow the (texture, enhanced_depth, depth) order."""
    if not len(texture) == len(depth) == len(edepth):
        raise ShapeError(f"sequence lengths differ: {len(texture)}, {len(depth)}, {len(edepth)}")
    return ImageSequence(fuse_arrays([texture.frames, edepth.frames, depth.frames], weights),
                         "cross_domain")
