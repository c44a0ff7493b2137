"""Training-free 4D augmentation.

The clip lattice is {original, magnified} x {forward, reversed} x
{identity, flip, rotations} x {pass-1 windows, pass-2 windows}, enumerated
per view in a fixed lexicographic order. Each clip records the transform
chain that produced it so it can be replayed exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Mapping

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, SequenceTooShortError, WindowTooLargeError
from .imageops import ImageSequence

SOURCES = ("original", "magnified")


@dataclass(frozen=True)
class AugmentationPlan:
    magnification_alpha: float = 4.0
    passband: tuple[float, float] = (0.4, 3.0)
    fps: float = 25.0
    inplane_rotations_deg: tuple[float, ...] = (-10.0, 10.0)
    include_flip: bool = True
    pass1: tuple[int, int] = (16, 2)
    pass2: tuple[int, int] | None = (8, 8)
    include_reversal: bool = True
    include_original: bool = True
    include_magnified: bool = True

    def __post_init__(self):
        object.__setattr__(self, "passband", tuple(float(x) for x in self.passband))
        object.__setattr__(self, "inplane_rotations_deg",
                           tuple(float(x) for x in self.inplane_rotations_deg))
        object.__setattr__(self, "pass1", tuple(int(x) for x in self.pass1))
        if self.pass2 is not None:
            object.__setattr__(self, "pass2", tuple(int(x) for x in self.pass2))
        self.validate()

    def validate(self) -> None:
        if self.magnification_alpha < 0:
            raise ConfigurationError("magnification_alpha must be >= 0")
        for name, p in (("pass1", self.pass1), ("pass2", self.pass2)):
            if p is not None and (len(p) != 2 or p[0] < 1 or p[1] < 1):
                raise ConfigurationError(f"{name} needs window >= 1 and stride >= 1, got {p}")
        if not (self.include_original or self.include_magnified):
            raise ConfigurationError("plan must include original or magnified clips")
        if len(set(self.inplane_rotations_deg)) != len(self.inplane_rotations_deg):
            raise ConfigurationError("duplicate in-plane rotation angles")
        if 0.0 in self.inplane_rotations_deg:
            raise ConfigurationError("a 0-degree rotation duplicates the identity clip")
        if self.include_magnified:
            _check_passband(self.passband, self.fps)

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(s for s, on in zip(SOURCES, (self.include_original, self.include_magnified)) if on)

    @property
    def directions(self) -> tuple[bool, ...]:
        return (False, True) if self.include_reversal else (False,)

    @property
    def spatial(self) -> tuple[str, ...]:
        out = ["identity"]
        if self.include_flip:
            out.append("flip")
        out.extend(rotation_name(d) for d in self.inplane_rotations_deg)
        return tuple(out)

    @property
    def passes(self) -> tuple[tuple[int, int], ...]:
        return (self.pass1,) if self.pass2 is None else (self.pass1, self.pass2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationPlan":
        d = dict(d)
        if d.get("pass2") is not None:
            d["pass2"] = tuple(d["pass2"])
        return cls(**d)


def rotation_name(deg: float) -> str:
    return f"rot{deg:+g}"


def _check_passband(passband, fps) -> None:
    low, high = passband
    if not fps > 0:
        raise ConfigurationError("fps must be positive")
    if not 0 <= low < high < fps / 2:
        raise ConfigurationError(f"passband must satisfy 0 <= low < high < fps/2, got {passband}")


def bandpass(frames: np.ndarray, passband, fps: float) -> np.ndarray:
    """Ideal (brick-wall) temporal bandpass of a (T, ...) stack; band edges inclusive."""
    T = frames.shape[0]
    spectrum = np.fft.rfft(frames, axis=0)
    freqs = np.fft.rfftfreq(T, d=1.0 / fps)
    keep = (freqs >= passband[0]) & (freqs <= passband[1])
    spectrum[~keep] = 0
    out = np.fft.irfft(spectrum, n=T, axis=0)
    if passband[0] > 0:
        # Pixels that never change have no band content; make that exact.
        out[:, np.ptp(frames, axis=0) == 0] = 0.0
    return out


def magnify_motion(seq: ImageSequence, alpha: float = 4.0, passband=(0.4, 3.0),
                   fps: float = 25.0) -> ImageSequence:
    """Linear Eulerian magnification: clip(frame + alpha * bandpass(frame), 0, 1)."""
    if len(seq) < 2:
        raise SequenceTooShortError("motion magnification needs at least two frames")
    _check_passband(passband, fps)
    if alpha == 0:
        return seq
    band = bandpass(seq.frames, passband, fps)
    return ImageSequence(np.clip(seq.frames + alpha * band, 0.0, 1.0), seq.domain)


def reverse_sequence(seq: ImageSequence) -> ImageSequence:
    return ImageSequence(seq.frames[::-1], seq.domain)


def flip_frames(seq: ImageSequence) -> ImageSequence:
    """Mirror every frame left-right."""
    return ImageSequence(seq.frames[:, :, ::-1], seq.domain)


def rotate_frames(seq: ImageSequence, deg: float) -> ImageSequence:
    """In-plane rotation about the image center, bilinear, zero fill."""
    if deg == 0:
        return seq
    out = ndimage.rotate(seq.frames, deg, axes=(2, 1), reshape=False, order=1,
                         mode="constant", cval=0.0, prefilter=False)
    return ImageSequence(np.clip(out, 0.0, 1.0), seq.domain)


def window_starts(T: int, window: int, stride: int) -> list[int]:
    """One-based start frames of every full window."""
    if window < 1 or stride < 1:
        raise ConfigurationError("window and stride must be >= 1")
    if window > T:
        raise WindowTooLargeError(f"window {window} exceeds sequence length {T}")
    return list(range(1, T - window + 2, stride))


@dataclass(frozen=True)
class ClipProvenance:
    """Everything needed to rebuild a clip from its source view."""

    example: int
    view: float
    source: str = "original"
    reversed: bool = False
    spatial: str = "identity"
    window_pass: int = 1
    start: int = 1
    length: int = 1

    def as_row(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class Clip:
    provenance: ClipProvenance
    sequences: dict  # domain -> ImageSequence
    label: int | None = None

    def __len__(self):
        return len(next(iter(self.sequences.values())))


@dataclass(eq=False)
class ClipSet:
    clips: list = field(default_factory=list)

    def __len__(self):
        return len(self.clips)

    def __iter__(self) -> Iterator[Clip]:
        return iter(self.clips)

    def provenance(self) -> list[ClipProvenance]:
        return [c.provenance for c in self.clips]


def window_sequence(seq: ImageSequence, window: int, stride: int, *, example: int = 0,
                    view: float = 0.0, window_pass: int = 1) -> ClipSet:
    starts = window_starts(len(seq), window, stride)
    return ClipSet([
        Clip(ClipProvenance(example, view, window_pass=window_pass, start=s, length=window),
             {seq.domain: seq.window(s - 1, window)})
        for s in starts
    ])


def expected_clip_count(plan: AugmentationPlan, n_views: int, T: int) -> int:
    n_windows = sum(len(window_starts(T, w, s)) for w, s in plan.passes)
    return (n_views * len(plan.sources) * len(plan.directions) * len(plan.spatial) * n_windows)


def _spatial(seq: ImageSequence, name: str) -> ImageSequence:
    if name == "identity":
        return seq
    if name == "flip":
        return flip_frames(seq)
    if name.startswith("rot"):
        return rotate_frames(seq, float(name[3:]))
    raise ValueError(f"unknown spatial transform {name!r}")


def _source(seq: ImageSequence, name: str, plan: AugmentationPlan) -> ImageSequence:
    if name == "original":
        return seq
    if name == "magnified":
        return magnify_motion(seq, plan.magnification_alpha, plan.passband, plan.fps)
    raise ValueError(f"unknown clip source {name!r}")


def transformed_sequences(domains: Mapping[str, ImageSequence], plan: AugmentationPlan):
    """Yield ``(source, reversed, spatial, {domain: seq})`` in lattice order.

    Magnification is applied before reversal, and both before the spatial
    transform.
    """
    for src in plan.sources:
        base = {d: _source(s, src, plan) for d, s in domains.items()}
        for rev in plan.directions:
            directed = {d: reverse_sequence(s) if rev else s for d, s in base.items()}
            for sp in plan.spatial:
                yield src, rev, sp, {d: _spatial(s, sp) for d, s in directed.items()}


def augment_example(views: Mapping[float, Mapping[str, ImageSequence]], plan: AugmentationPlan,
                    example: int = 0, label: int | None = None) -> ClipSet:
    """Every clip of one example, over all of its views."""
    clips = []
    for theta, domains in views.items():
        lengths = {len(s) for s in domains.values()}
        if len(lengths) != 1:
            raise ValueError(f"view {theta}: domain sequences differ in length")
        T = lengths.pop()
        windows = [(p, w, window_starts(T, w, s)) for p, (w, s) in enumerate(plan.passes, start=1)]
        for src, rev, sp, seqs in transformed_sequences(domains, plan):
            for p, w, starts in windows:
                for start in starts:
                    prov = ClipProvenance(example, theta, src, rev, sp, p, start, w)
                    clips.append(Clip(prov, {d: s.window(start - 1, w) for d, s in seqs.items()},
                                      label))
    return ClipSet(clips)


def augment_dataset(views, plan: AugmentationPlan, labels=None) -> ClipSet:
    """Augment one example (``{view: {domain: seq}}``) or a list of them.

    Clips inherit the label of the example they came from.
    """
    if isinstance(views, Mapping):
        return augment_example(views, plan, 0, None if labels is None else labels)
    out = ClipSet()
    for n, ex in enumerate(views):
        lab = None if labels is None else labels[n]
        out.clips.extend(augment_example(ex, plan, n, lab).clips)
    return out


def replay_clip(domains: Mapping[str, ImageSequence], prov: ClipProvenance,
                plan: AugmentationPlan) -> dict:
    """Rebuild one clip's sequences from its untransformed view."""
    out = {}
    for d, seq in domains.items():
        s = _source(seq, prov.source, plan)
        if prov.reversed:
            s = reverse_sequence(s)
        s = _spatial(s, prov.spatial)
        out[d] = s.window(prov.start - 1, prov.length)
    return out


def identity_plan(plan: AugmentationPlan) -> AugmentationPlan:
    """Same windows, no transforms: the clips an un-augmented example yields."""
    return replace(plan, include_original=True, include_magnified=False, include_reversal=False,
                   include_flip=False, inplane_rotations_deg=())


def write_clip_manifest(clips: ClipSet, path) -> None:
    """JSON-lines manifest, one provenance record (plus label) per clip."""
    with open(path, "w", encoding="utf-8") as fh:
        for c in clips:
            row = c.provenance.as_row()
            row["label"] = c.label
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_clip_manifest(path) -> list[tuple[ClipProvenance, int | None]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                label = row.pop("label", None)
                out.append((ClipProvenance(**row), label))
    return out

