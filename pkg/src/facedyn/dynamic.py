"""Rank pooling of image sequences into dynamic images."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DomainError, RankDeficiencyError, ShapeError
from .imageops import ImageSequence
from .render import DomainImage


@dataclass(frozen=True, eq=False)
class RankPoolCoefficients:
    alphas: np.ndarray

    def __len__(self):
        return len(self.alphas)


@dataclass(frozen=True, eq=False)
class DynamicImage:
    """Signed, unnormalized K x K pooling result."""

    pixels: np.ndarray
    source_length: int
    domain: str = "cross_domain"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ShapeError(f"expected a K x K array, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("dynamic image pixels must be finite")
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def rank_pool_fractions(T: int) -> list[Fraction]:
    """Exact rational rank-pooling weights (use for small T only)."""
    if T < 1:
        raise DomainError("rank pooling needs at least one frame")
    harmonic = [Fraction(0)]
    for i in range(1, T + 1):
        harmonic.append(harmonic[-1] + Fraction(1, i))
    return [2 * (T - t + 1) - (T + 1) * (harmonic[T] - harmonic[t - 1]) for t in range(1, T + 1)]


@lru_cache(maxsize=256)
def _alphas(T: int) -> np.ndarray:
    # tail[t-1] = H_T - H_{t-1} = sum_{i=t}^{T} 1/i, summed from the small end.
    # Extended precision keeps |sum(alphas)| below 1e-10 up to T = 1e4 (x86).
    ld = np.longdouble
    tail = np.cumsum(ld(1) / np.arange(T, 0, -1, dtype=ld))[::-1]
    t = np.arange(1, T + 1, dtype=ld)
    a = (2 * (T - t + 1) - (T + 1) * tail).astype(np.float64)
    a.setflags(write=False)
    return a


def rank_pool_coefficients(T: int) -> RankPoolCoefficients:
    """alpha_t = 2(T - t + 1) - (T + 1)(H_T - H_{t-1}), t = 1..T."""
    if int(T) != T or T < 1:
        raise DomainError(f"rank pooling needs T >= 1, got {T}")
    return RankPoolCoefficients(_alphas(int(T)))


def pool_frames(frames: np.ndarray) -> np.ndarray:
    """Apply the closed-form weights along axis 0 of a (T, ...) stack."""
    frames = np.asarray(frames, dtype=np.float64)
    alphas = _alphas(frames.shape[0])
    # The weights sum to zero, so measuring frames from the first one changes
    # nothing in exact arithmetic and makes constant input pool to exactly 0.
    return np.tensordot(alphas, frames - frames[:1], axes=(0, 0))


def compute_dynamic_image(seq: ImageSequence) -> DynamicImage:
    return DynamicImage(pool_frames(seq.frames), len(seq), seq.domain)


def rank_pool_exact(seq, regularizer: float = 1e-3) -> DynamicImage:
    """Ranking-regression pooling used as an oracle for the closed form.

    Frames are replaced by their running means, then centered over time; the
    pooled image is the ridge solution u of sum_t (<u, v_t> - t)^2 + lambda |u|^2
    with centered targets. ``seq`` may be an ImageSequence or a (T, K, K) array.
    """
    frames = seq.frames if isinstance(seq, ImageSequence) else np.asarray(seq, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[:, None, None]
    T = frames.shape[0]
    if T < 2:
        raise DomainError("exact rank pooling needs at least two frames")
    if regularizer < 0:
        raise DomainError("regularizer must be non-negative")
    shape = frames.shape[1:]
    X = frames.reshape(T, -1)
    smoothed = np.cumsum(X, axis=0) / np.arange(1, T + 1)[:, None]
    Xc = smoothed - smoothed.mean(axis=0)
    r = np.arange(1, T + 1, dtype=np.float64)
    r -= r.mean()
    D = Xc.shape[1]
    if D < T:
        G = Xc.T @ Xc + regularizer * np.eye(D)
        rhs = Xc.T @ r
        if regularizer == 0 and np.linalg.matrix_rank(G) < D:
            raise RankDeficiencyError("normal system is singular; use a positive regularizer")
        u = np.linalg.solve(G, rhs)
    else:
        K = Xc @ Xc.T + regularizer * np.eye(T)
        if regularizer == 0 and np.linalg.matrix_rank(K) < T:
            raise RankDeficiencyError("normal system is singular; use a positive regularizer")
        u = Xc.T @ np.linalg.solve(K, r)
    return DynamicImage(u.reshape(shape) if shape else u.reshape(1, 1), T)


def normalize_for_display(di) -> DomainImage:
    """Affine map of [min, max] onto [0, 1]; a constant image maps to 0.5."""
    px = di.pixels if isinstance(di, DynamicImage) else np.asarray(di, dtype=np.float64)
    return DomainImage(normalize_array(px), "cross_domain")


def normalize_array(px: np.ndarray) -> np.ndarray:
    lo, hi = px.min(), px.max()
    if hi > lo:
        return np.clip((px - lo) / (hi - lo), 0.0, 1.0)
    return np.full(px.shape, 0.5)


_HEADER = struct.Struct("<II")


def save_dynamic_image(di: DynamicImage, path) -> None:
    """Little-endian: uint32 K, uint32 T, then K*K float32 row-major."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(di.size, di.source_length))
        fh.write(np.ascontiguousarray(di.pixels, dtype="<f4").tobytes())


def load_dynamic_image(path, domain: str = "cross_domain") -> DynamicImage:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    K, T = _HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != K * K:
        raise ValueError(f"{path}: expected {K * K} floats, found {body.size}")
    return DynamicImage(body.reshape(K, K).astype(np.float64), T, domain)
