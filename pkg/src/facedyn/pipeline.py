"""End-to-end experiment orchestration.

ingest -> preprocess -> render -> enhance/fuse -> pool -> augment ->
train -> collaborate -> report, with subject-independent k-fold CV and a
manifest that hashes every emitted file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .augmentation import AugmentationPlan, identity_plan, transformed_sequences, window_starts
from .classifier import FEATURE_SIDE, area_matrix, save_checkpoint, train
from .collaboration import (
    collaborate,
    evaluate,
    final_prediction,
    kfold_split,
    write_confusion_csv,
    write_fold_csv,
)
from .dynamic import DynamicImage, pool_frames, save_dynamic_image
from .errors import ConfigurationError, StageError
from .imageops import ImageSequence, clahe, fuse_arrays
from .mesh import (
    DEFAULT_DEPTH_MARGIN,
    DEFAULT_FOREHEAD_FRACTION,
    Dataset,
    ScanSequence,
    generate_views,
    load_dataset,
    validate_angles,
)
from .render import CameraSpec, image_filename, render_sequence, save_png
from .synthetic import SyntheticSpec, generate_dataset

log = logging.getLogger(__name__)

LEVELS = ("original", "evm_variants", "original_variants", "all")
SINGLE_DOMAINS = ("texture", "depth", "enhanced_depth")
# "full": each (example, view[, domain]) is scored on its whole clip.
# "windows": scored on the plan's identity-transform windows, probabilities averaged.
TEST_CLIPS = ("full", "windows")
# Execution-only fields: they never change an emitted byte, so they are left
# out of the manifest's config snapshot.
EXECUTION_FIELDS = ("output_dir", "cache_dir", "workers")


@dataclass
class PipelineConfig:
    data_root: str | None = None
    synthetic: dict = field(default_factory=lambda: SyntheticSpec().to_dict())
    angles: tuple = (-15.0, 0.0, 15.0)
    size: int = 224
    camera_half_extent: float = 100.0
    background_value: float = 0.0
    forehead_fraction: float = DEFAULT_FOREHEAD_FRACTION
    depth_margin: float = DEFAULT_DEPTH_MARGIN
    clahe_tiles: int = 8
    clahe_clip_limit: float = 2.0
    fusion_weights: tuple | None = None
    cross_domain: bool = True
    feature_magnitude: bool = True
    test_clips: str = "full"
    augmentation: dict = field(default_factory=lambda: AugmentationPlan().to_dict())
    augmentation_level: str = "all"
    lr: float = 0.1
    epochs: int = 200
    l2: float = 1e-3
    folds: int = 10
    seed: int = 0
    permute_labels: bool = False
    export_cdis: bool = True
    output_dir: str = "run"
    cache_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.angles = validate_angles(self.angles)
        if self.fusion_weights is not None:
            self.fusion_weights = tuple(float(w) for w in self.fusion_weights)
        self.validate()

    def validate(self) -> None:
        if self.size < 1:
            raise ConfigurationError("size must be >= 1")
        if self.camera_half_extent <= 0:
            raise ConfigurationError("camera_half_extent must be positive")
        if self.folds < 2:
            raise ConfigurationError("folds must be >= 2")
        if self.augmentation_level not in LEVELS:
            raise ConfigurationError(
                f"augmentation_level must be one of {LEVELS}, got {self.augmentation_level!r}")
        if self.test_clips not in TEST_CLIPS:
            raise ConfigurationError(f"test_clips must be one of {TEST_CLIPS}, got {self.test_clips!r}")
        if self.fusion_weights is not None and len(self.fusion_weights) != 3:
            raise ConfigurationError("fusion_weights needs three values (texture, enhanced_depth, depth)")
        if self.epochs < 0 or self.lr <= 0 or self.l2 < 0:
            raise ConfigurationError("need epochs >= 0, lr > 0, l2 >= 0")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        self.plan()
        if self.data_root is None:
            self.synthetic_spec()

    def plan(self) -> AugmentationPlan:
        return AugmentationPlan.from_dict(self.augmentation)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**self.synthetic)

    def camera(self) -> CameraSpec:
        return CameraSpec.square(self.camera_half_extent, background_value=self.background_value)

    def to_dict(self, include_execution: bool = True) -> dict:
        d = asdict(self)
        d["angles"] = list(self.angles)
        d["fusion_weights"] = None if self.fusion_weights is None else list(self.fusion_weights)
        d["augmentation"] = _jsonable(self.plan().to_dict())
        if not include_execution:
            for k in EXECUTION_FIELDS:
                d.pop(k)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "synthetic" in d:
            d["synthetic"] = {**SyntheticSpec().to_dict(), **d["synthetic"]}
        if "augmentation" in d:
            d["augmentation"] = {**AugmentationPlan().to_dict(), **d["augmentation"]}
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def preset_plan(level: str, base: AugmentationPlan, T: int) -> AugmentationPlan:
    """Training plan for one augmentation level, for a clip of T frames.

    ``original`` is the un-augmented clip as a single full-length window. The
    other levels keep the base plan's variants (reversal, flip, rotations,
    windowing) and choose which sources feed them. Windows longer than the
    clip are shortened to T.
    """
    if level == "original":
        return replace(identity_plan(base), pass1=(T, 1), pass2=None)
    if level == "evm_variants":
        plan = replace(base, include_original=False, include_magnified=True)
    elif level == "original_variants":
        plan = replace(base, include_original=True, include_magnified=False)
    elif level == "all":
        plan = replace(base, include_original=True, include_magnified=True)
    else:
        raise ConfigurationError(f"unknown augmentation level {level!r}")
    return fit_windows(plan, T)


def fit_windows(plan: AugmentationPlan, T: int) -> AugmentationPlan:
    p1 = (min(plan.pass1[0], T), plan.pass1[1])
    p2 = None if plan.pass2 is None else (min(plan.pass2[0], T), plan.pass2[1])
    return replace(plan, pass1=p1, pass2=p2)


# ---------------------------------------------------------------------------
# Representation: views -> domain image sequences
# ---------------------------------------------------------------------------


def render_example(seq: ScanSequence, config: PipelineConfig) -> dict:
    """``{view: {domain: ImageSequence}}`` for texture, depth, E-DPI and CD."""
    views = generate_views(seq, config.angles, config.forehead_fraction, config.depth_margin)
    cam = config.camera()
    out = {}
    for theta, view in views.items():
        try:
            tex, dep = render_sequence(view, cam, config.size)
        except StageError as exc:
            raise StageError("render", exc.cause, view=theta, frame=exc.frame) from exc
        edep = np.stack([clahe(f, config.clahe_tiles, config.clahe_clip_limit) for f in dep])
        cd = fuse_arrays([tex, edep, dep], config.fusion_weights)
        out[theta] = {
            "texture": ImageSequence(tex, "texture"),
            "depth": ImageSequence(dep, "depth"),
            "enhanced_depth": ImageSequence(edep, "enhanced_depth"),
            "cross_domain": ImageSequence(cd, "cross_domain"),
        }
    return out


def sequence_digest(seq: ScanSequence) -> str:
    h = hashlib.sha256()
    h.update(f"{seq.subject_id}|{seq.expression_label}|{len(seq)}".encode())
    for mesh, lm in seq.frames:
        h.update(mesh.vertices.tobytes())
        h.update(mesh.faces.tobytes())
        if mesh.colors is not None:
            h.update(mesh.colors.tobytes())
        h.update(lm.as_array().tobytes())
    return h.hexdigest()


RENDER_KEYS = ("angles", "size", "camera_half_extent", "background_value", "forehead_fraction",
               "depth_margin", "clahe_tiles", "clahe_clip_limit", "fusion_weights")


def render_cache_key(seq: ScanSequence, config: PipelineConfig) -> str:
    params = {k: getattr(config, k) for k in RENDER_KEYS}
    blob = json.dumps(_jsonable(params), sort_keys=True) + sequence_digest(seq) + __version__
    return hashlib.sha256(blob.encode()).hexdigest()


def cached_render(seq: ScanSequence, config: PipelineConfig) -> dict:
    if config.cache_dir is None:
        return render_example(seq, config)
    cache = Path(config.cache_dir)
    path = cache / f"render-{render_cache_key(seq, config)}.npz"
    if path.exists():
        with np.load(path) as data:
            out = {}
            for theta in config.angles:
                tag = _angle_tag(theta)
                out[theta] = {d: ImageSequence(data[f"{tag}:{d}"], d) for d in
                              ("texture", "depth", "enhanced_depth", "cross_domain")}
            return out
    out = render_example(seq, config)
    cache.mkdir(parents=True, exist_ok=True)
    arrays = {f"{_angle_tag(t)}:{d}": s.frames for t, doms in out.items() for d, s in doms.items()}
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return out


def _angle_tag(theta: float) -> str:
    return repr(float(theta))


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def featurize_batch(dis: np.ndarray, side: int = FEATURE_SIDE, magnitude: bool = False) -> np.ndarray:
    """Display-normalize and area-downsample a (n, K, K) stack -> (n, side*side).

    With ``magnitude`` the absolute dynamic image is used. A time-reversed
    clip pools to roughly the negated image, so magnitude features let a
    linear model give a clip and its reversal the same label.
    """
    dis = np.asarray(dis, dtype=np.float64)
    if magnitude:
        dis = np.abs(dis)
    lo = dis.min(axis=(1, 2), keepdims=True)
    hi = dis.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span[:, 0, 0] == 0
    norm = np.where(span > 0, (dis - lo) / np.where(span > 0, span, 1.0), 0.5)
    norm = np.clip(norm, 0.0, 1.0)
    norm[flat] = 0.5
    K = dis.shape[1]
    if K == side:
        return norm.reshape(len(dis), -1)
    A = area_matrix(K, side)
    return (A @ norm @ A.T).reshape(len(dis), -1)


def domains_for(rep: dict, cross_domain: bool) -> dict:
    """Select the per-view domain sequences a setting pools over."""
    keys = ("cross_domain",) if cross_domain else SINGLE_DOMAINS
    return {theta: {d: doms[d] for d in keys} for theta, doms in rep.items()}


def clip_features(views: dict, plan: AugmentationPlan, magnitude: bool = False):
    """Pool and featurize every clip of one example.

    Returns ``(features, units)``: float32 features (n_clips, d) and the
    collaboration unit of each clip, an index into ``[(view, domain), ...]``
    ordered view-major.
    """
    feats, units = [], []
    unit_index = {}
    for theta, doms in views.items():
        for d in doms:
            unit_index[(theta, d)] = len(unit_index)
    for theta, doms in views.items():
        T = len(next(iter(doms.values())))
        windows = [(w, window_starts(T, w, s)) for w, s in plan.passes]
        for _src, _rev, _sp, seqs in transformed_sequences(doms, plan):
            for d, seq in seqs.items():
                for w, starts in windows:
                    stack = np.stack([pool_frames(seq.frames[s - 1:s - 1 + w]) for s in starts])
                    feats.append(featurize_batch(stack, magnitude=magnitude).astype(np.float32))
                    units.extend([unit_index[(theta, d)]] * len(starts))
    return np.concatenate(feats), np.asarray(units, dtype=np.int64)


def example_features(seq: ScanSequence, angles: Iterable[float], size: int = 64,
                     config: PipelineConfig | None = None) -> dict:
    """Full-clip cross-domain dynamic-image feature per view."""
    base = config or PipelineConfig(folds=2)
    cfg = replace(base, angles=tuple(angles), size=size)
    rep = render_example(seq, cfg)
    return {theta: featurize_batch(pool_frames(doms["cross_domain"].frames)[None],
                                   magnitude=cfg.feature_magnitude)[0]
            for theta, doms in rep.items()}


@dataclass
class Setting:
    """One ablation cell: representation mode and augmentation level."""

    cross_domain: bool = True
    level: str = "all"

    @property
    def name(self) -> str:
        return f"{'cd' if self.cross_domain else 'nocd'}-{self.level}"


@dataclass
class ExampleFeatures:
    train_x: np.ndarray
    test_x: np.ndarray
    test_units: np.ndarray
    n_units: int


def setting_features(rep: dict, setting: Setting, base_plan: AugmentationPlan,
                     magnitude: bool = True, test_clips: str = "full") -> ExampleFeatures:
    views = domains_for(rep, setting.cross_domain)
    T = len(next(iter(next(iter(views.values())).values())))
    train_plan = preset_plan(setting.level, base_plan, T)
    if test_clips == "full":
        test_plan = preset_plan("original", base_plan, T)
    else:
        test_plan = identity_plan(train_plan)
    tx, _ = clip_features(views, train_plan, magnitude)
    ex, eu = clip_features(views, test_plan, magnitude)
    n_units = sum(len(doms) for doms in views.values())
    return ExampleFeatures(tx, ex, eu, n_units)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


class Manifest:
    """Append-only record of emitted files; written once at the end of a run."""

    def __init__(self, root: Path, config: PipelineConfig, command: str = "eval", extra=None):
        self.root = root
        self.config = config
        self.command = command
        self.extra = extra or {}
        self.stages: list[dict] = []
        self.timings: dict[str, float] = {}
        self._t0 = None
        self._current = None

    def stage(self, name: str):
        manifest = self

        class _Stage:
            def __enter__(self_inner):
                manifest._current = {"stage": name, "files": []}
                manifest._t0 = time.perf_counter()
                return self_inner

            def __exit__(self_inner, exc_type, exc, tb):
                manifest.timings[name] = round(time.perf_counter() - manifest._t0, 3)
                manifest.stages.append(manifest._current)
                manifest._current = None
                return False

        return _Stage()

    def add(self, path: Path) -> None:
        rel = path.relative_to(self.root).as_posix()
        self._current["files"].append({"path": rel, "sha256": file_sha256(path),
                                       "bytes": path.stat().st_size})

    def to_dict(self) -> dict:
        return {"format": "facedyn-manifest", "version": 1, "facedyn": __version__,
                "command": self.command, **self.extra,
                "config": self.config.to_dict(include_execution=False), "stages": self.stages}

    def write(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        # Timings vary run to run, so they live beside the manifest, not in it.
        (self.root / "timings.json").write_text(
            json.dumps(self.timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_data(config: PipelineConfig) -> Dataset:
    if config.data_root is not None:
        return load_dataset(config.data_root)
    return generate_dataset(config.synthetic_spec())


def _render_job(args):
    seq, config = args
    return cached_render(seq, config)


def render_all(ds: Dataset, config: PipelineConfig, consume) -> None:
    """Render every example and hand ``(n, rep)`` to ``consume`` in order.

    Representations are not retained, so memory stays bounded by one
    example (or one batch of ``workers`` examples).
    """
    jobs = ((seq, config) for seq in ds.sequences)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for n, rep in enumerate(pool.map(_render_job, jobs, chunksize=1)):
                consume(n, rep)
        return
    for n, job in enumerate(jobs):
        try:
            rep = _render_job(job)
        except StageError as exc:
            raise StageError(exc.stage, exc.cause, example=n, view=exc.view, frame=exc.frame) from exc
        except Exception as exc:
            raise StageError("render", exc, example=n) from exc
        consume(n, rep)


def export_cdis(rep: dict, seq: ScanSequence, out: Path, manifest: Manifest) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for theta, doms in rep.items():
        di = DynamicImage(pool_frames(doms["cross_domain"].frames), len(seq))
        png = out / image_filename(seq.subject_id, seq.expression_label, theta, None, "cdi")
        save_png(featurize_norm(di.pixels), png)
        manifest.add(png)
        raw = png.with_suffix(".bin")
        save_dynamic_image(di, raw)
        manifest.add(raw)


def featurize_norm(px: np.ndarray) -> np.ndarray:
    from .dynamic import normalize_array

    return normalize_array(px)


def cross_validate(feats: Sequence[ExampleFeatures], labels: np.ndarray, subjects: Sequence[str],
                   config: PipelineConfig, folds=None):
    """k-fold train/predict; returns per-example predictions and fold summaries."""
    folds = folds if folds is not None else kfold_split(subjects, config.folds, config.seed)
    n = len(labels)
    pred = np.zeros(n, dtype=np.int64)
    scores = [None] * n
    fold_acc, fold_sizes, models = [], [], []
    for f, (tr, te) in enumerate(folds):
        X = np.concatenate([feats[i].train_x for i in tr])
        y = np.concatenate([np.full(len(feats[i].train_x), labels[i]) for i in tr])
        model = train(X, y, lr=config.lr, epochs=config.epochs, l2=config.l2,
                      seed=config.seed * 1000 + f)
        models.append(model)
        for i in te:
            P = model.predict_proba(feats[i].test_x)
            unit_scores = np.stack([P[feats[i].test_units == u].mean(axis=0)
                                    for u in range(feats[i].n_units)])
            scores[i] = unit_scores
        S = np.stack([scores[i] for i in te])
        pred[te] = final_prediction(collaborate(S))
        fold_acc.append(float(np.mean(pred[te] == labels[te])))
        fold_sizes.append(len(te))
    return pred, np.stack(scores), fold_acc, fold_sizes, models, folds


def _labels(ds: Dataset, config: PipelineConfig) -> np.ndarray:
    labels = ds.labels
    if config.permute_labels:
        labels = np.random.default_rng([config.seed, 7]).permutation(labels)
    return labels


def _report(setting: Setting, config: PipelineConfig, labels, pred, fold_acc, fold_sizes,
            n_train_clips) -> dict:
    ev = evaluate(pred, labels)
    return {
        "setting": setting.name,
        "cross_domain": setting.cross_domain,
        "augmentation_level": setting.level,
        "angles": list(config.angles),
        "num_views": len(config.angles),
        "folds": config.folds,
        "fold_accuracies": fold_acc,
        "fold_sizes": fold_sizes,
        "mean_fold_accuracy": float(np.mean(fold_acc)),
        "accuracy": ev.accuracy,
        "confusion": ev.confusion.tolist(),
        "recall": ev.to_dict()["recall"],
        "num_examples": int(len(labels)),
        "train_clips_per_fold": n_train_clips,
        "permuted_labels": config.permute_labels,
    }


def _emit_setting(out: Path, report: dict, predictions, scores, labels, models,
                  manifest: Manifest, save_models: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    p = out / "report.json"
    write_json(report, p)
    manifest.add(p)
    p = out / "confusion.csv"
    write_confusion_csv(np.asarray(report["confusion"]), p)
    manifest.add(p)
    p = out / "folds.csv"
    write_fold_csv(report["fold_accuracies"], report["fold_sizes"], p)
    manifest.add(p)
    p = out / "predictions.csv"
    with open(p, "w", encoding="utf-8") as fh:
        fh.write("example,truth,prediction," + ",".join(f"p{l}" for l in range(1, 7)) + "\n")
        collab = collaborate(scores)
        for i, (t, pr) in enumerate(zip(labels, predictions)):
            fh.write(f"{i},{t},{pr}," + ",".join(f"{v:.6f}" for v in collab[i]) + "\n")
    manifest.add(p)
    if save_models:
        for f, m in enumerate(models):
            p = out / f"model_fold{f}.ckpt"
            save_checkpoint(m, p)
            manifest.add(p)


def run_settings(config: PipelineConfig, settings: Sequence[Setting], command: str = "eval"):
    """Shared-render evaluation of several settings with identical folds and seeds."""
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    extra = {"settings": [{"cross_domain": st.cross_domain, "augmentation_level": st.level}
                          for st in settings]}
    manifest = Manifest(root, config, command, extra)
    base_plan = config.plan()

    with manifest.stage("ingest"):
        ds = load_data(config)
        labels = _labels(ds, config)
        folds = kfold_split(ds.subjects, config.folds, config.seed)
        p = root / "config.json"
        write_json(config.to_dict(include_execution=False), p)
        manifest.add(p)
        p = root / "folds.json"
        write_json([{"train": tr.tolist(), "test": te.tolist()} for tr, te in folds], p)
        manifest.add(p)

    feats = {s.name: [None] * len(ds) for s in settings}
    with manifest.stage("render+pool+augment"):
        def consume(n, rep):
            if config.export_cdis:
                export_cdis(rep, ds.sequences[n], root / "cdi", manifest)
            for s in settings:
                try:
                    feats[s.name][n] = setting_features(rep, s, base_plan, config.feature_magnitude,
                                                        config.test_clips)
                except Exception as exc:
                    raise StageError("augment", exc, example=n) from exc
            log.info("example %d/%d done", n + 1, len(ds))

        render_all(ds, config, consume)

    reports = {}
    for s in settings:
        with manifest.stage(f"train+collaborate:{s.name}"):
            try:
                pred, scores, fold_acc, sizes, models, _ = cross_validate(
                    feats[s.name], labels, ds.subjects, config, folds)
            except Exception as exc:
                raise StageError("train", exc) from exc
            n_train = [int(sum(len(feats[s.name][i].train_x) for i in tr)) for tr, _ in folds]
            report = _report(s, config, labels, pred, fold_acc, sizes, n_train)
            out = root if len(settings) == 1 else root / "settings" / s.name
            _emit_setting(out, report, pred, scores, labels, models, manifest)
            reports[s.name] = report
    return reports, manifest


def run_pipeline(config: PipelineConfig):
    """One full experiment; returns ``(report, manifest)``."""
    setting = Setting(config.cross_domain, config.augmentation_level)
    reports, manifest = run_settings(config, [setting])
    manifest.write()
    return reports[setting.name], manifest


def run_ablation(config: PipelineConfig, cross_domain: Sequence[bool] = (True, False),
                 levels: Sequence[str] = ("original",)):
    """Every (cross_domain, level) combination under shared folds and seeds.

    The comparative report lists each setting's accuracy and its delta to the
    first setting.
    """
    settings = [Setting(cd, lv) for cd in cross_domain for lv in levels]
    if len({s.name for s in settings}) != len(settings):
        raise ConfigurationError("duplicate ablation settings")
    for lv in levels:
        if lv not in LEVELS:
            raise ConfigurationError(f"unknown augmentation level {lv!r}")
    reports, manifest = run_settings(config, settings, command="ablate")
    base = reports[settings[0].name]
    summary = {
        "baseline": settings[0].name,
        "settings": [
            {"setting": s.name, "cross_domain": s.cross_domain, "augmentation_level": s.level,
             "mean_fold_accuracy": reports[s.name]["mean_fold_accuracy"],
             "accuracy": reports[s.name]["accuracy"],
             "delta_mean_fold_accuracy": reports[s.name]["mean_fold_accuracy"]
             - base["mean_fold_accuracy"],
             "delta_accuracy": reports[s.name]["accuracy"] - base["accuracy"]}
            for s in settings
        ],
    }
    with manifest.stage("ablation-summary"):
        p = Path(config.output_dir) / "ablation.json"
        write_json(summary, p)
        manifest.add(p)
    manifest.write()
    return summary, reports, manifest


# ---------------------------------------------------------------------------
# Single-stage exports (the CLI's stage subcommands)
# ---------------------------------------------------------------------------


def _stage_run(config: PipelineConfig, command: str):
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(root, config, command)
    with manifest.stage("ingest"):
        ds = load_data(config)
        p = root / "config.json"
        write_json(config.to_dict(include_execution=False), p)
        manifest.add(p)
    return root, manifest, ds


def export_synthetic(config: PipelineConfig) -> Manifest:
    """Write the configured dataset in the on-disk mesh layout."""
    from .mesh import save_dataset

    root, manifest, ds = _stage_run(config, "synth")
    with manifest.stage("synth"):
        save_dataset(ds, root / "data")
        for f in sorted((root / "data").rglob("*")):
            if f.is_file():
                manifest.add(f)
    manifest.write()
    return manifest


def export_views(config: PipelineConfig) -> Manifest:
    """Rotated and cropped view sequences, one mesh directory per (example, view)."""
    from .mesh import save_sequence
    from .render import format_angle

    root, manifest, ds = _stage_run(config, "preprocess")
    with manifest.stage("preprocess"):
        for n, seq in enumerate(ds.sequences):
            try:
                views = generate_views(seq, config.angles, config.forehead_fraction,
                                       config.depth_margin)
            except StageError as exc:
                raise StageError("preprocess", exc.cause, example=n, frame=exc.frame) from exc
            except Exception as exc:
                raise StageError("preprocess", exc, example=n) from exc
            for theta, view in views.items():
                d = root / "views" / seq.subject_id / f"e{seq.expression_label}_v{format_angle(theta)}"
                save_sequence(view, d)
                for f in sorted(d.iterdir()):
                    manifest.add(f)
    manifest.write()
    return manifest


def export_frames(config: PipelineConfig) -> Manifest:
    """Per-frame PNGs of every domain: texture, depth, E-DPI and CD images."""
    root, manifest, ds = _stage_run(config, "render")
    with manifest.stage("render"):
        def consume(n, rep):
            seq = ds.sequences[n]
            out = root / "frames" / seq.subject_id
            out.mkdir(parents=True, exist_ok=True)
            for theta, doms in rep.items():
                for d, images in doms.items():
                    for t, frame in enumerate(images.frames, start=1):
                        png = out / image_filename(seq.subject_id, seq.expression_label, theta, t, d)
                        save_png(frame, png)
                        manifest.add(png)

        render_all(ds, config, consume)
    manifest.write()
    return manifest


def export_cdi_images(config: PipelineConfig) -> Manifest:
    """Cross-domain dynamic images (PNG + raw float binary) per example and view."""
    root, manifest, ds = _stage_run(config, "cdi")
    with manifest.stage("cdi"):
        render_all(ds, config, lambda n, rep: export_cdis(rep, ds.sequences[n], root / "cdi", manifest))
    manifest.write()
    return manifest


def export_clip_manifests(config: PipelineConfig) -> Manifest:
    """JSON-lines clip provenance for each example under the configured level."""
    from .augmentation import augment_example, write_clip_manifest

    root, manifest, ds = _stage_run(config, "augment")
    base = config.plan()
    counts = []
    with manifest.stage("augment"):
        out = root / "clips"
        out.mkdir(parents=True, exist_ok=True)

        def consume(n, rep):
            seq = ds.sequences[n]
            views = domains_for(rep, config.cross_domain)
            plan = preset_plan(config.augmentation_level, base, len(seq))
            try:
                clips = augment_example(views, plan, example=n, label=seq.expression_label)
            except Exception as exc:
                raise StageError("augment", exc, example=n) from exc
            p = out / f"{n:04d}_{seq.subject_id}_e{seq.expression_label}.jsonl"
            write_clip_manifest(clips, p)
            manifest.add(p)
            counts.append(len(clips))

        render_all(ds, config, consume)
        p = root / "clip_counts.json"
        write_json({"per_example": counts, "total": int(sum(counts))}, p)
        manifest.add(p)
    manifest.write()
    return manifest


def train_full(config: PipelineConfig) -> Manifest:
    """Fit one model on every example (no held-out fold) and save it."""
    setting = Setting(config.cross_domain, config.augmentation_level)
    root, manifest, ds = _stage_run(config, "train")
    labels = _labels(ds, config)
    base = config.plan()
    feats = [None] * len(ds)
    with manifest.stage("render+pool+augment"):
        def consume(n, rep):
            feats[n] = setting_features(rep, setting, base, config.feature_magnitude, config.test_clips)

        render_all(ds, config, consume)
    with manifest.stage("train"):
        X = np.concatenate([f.train_x for f in feats])
        y = np.concatenate([np.full(len(f.train_x), labels[i]) for i, f in enumerate(feats)])
        try:
            model = train(X, y, lr=config.lr, epochs=config.epochs, l2=config.l2,
                          seed=config.seed * 1000)
        except Exception as exc:
            raise StageError("train", exc) from exc
        model.metadata["setting"] = setting.name
        p = root / "model.ckpt"
        save_checkpoint(model, p)
        manifest.add(p)
    manifest.write()
    return manifest


STAGE_COMMANDS = {
    "synth": export_synthetic,
    "preprocess": export_views,
    "render": export_frames,
    "cdi": export_cdi_images,
    "augment": export_clip_manifests,
    "train": train_full,
}


def run_command(command: str, config: PipelineConfig, settings=None) -> Manifest:
    """Dispatch one CLI-level command; ``settings`` only applies to ``ablate``."""
    if command == "eval":
        return run_pipeline(config)[1]
    if command == "ablate":
        settings = settings or [{"cross_domain": cd, "augmentation_level": "original"}
                                for cd in (True, False)]
        cds = list(dict.fromkeys(st["cross_domain"] for st in settings))
        lvls = list(dict.fromkeys(st["augmentation_level"] for st in settings))
        return run_ablation(config, cds, lvls)[2]
    if command not in STAGE_COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}")
    return STAGE_COMMANDS[command](config)


def replay(manifest_path, output_dir=None, cache_dir=None) -> list[str]:
    """Re-run a manifest's command and config; return the paths whose bytes differ.

    The replayed run is written to ``output_dir`` (default: a sibling
    ``<run>-replay`` directory). An empty list means a faithful replay.
    """
    manifest_path = Path(manifest_path)
    recorded = json.loads(manifest_path.read_text(encoding="utf-8"))
    if recorded.get("format") != "facedyn-manifest":
        raise ConfigurationError(f"{manifest_path}: not a facedyn manifest")
    run_dir = manifest_path.parent
    out = Path(output_dir) if output_dir else run_dir.with_name(run_dir.name + "-replay")
    cfg = dict(recorded["config"])
    cfg.update(output_dir=str(out), cache_dir=cache_dir)
    config = PipelineConfig.from_dict(cfg)
    manifest = run_command(recorded.get("command", "eval"), config, recorded.get("settings"))
    new = {f["path"]: f["sha256"] for st in manifest.stages for f in st["files"]}
    old = {f["path"]: f["sha256"] for st in recorded["stages"] for f in st["files"]}
    diffs = sorted(p for p in set(new) | set(old) if new.get(p) != old.get(p))
    if (out / "manifest.json").read_bytes() != manifest_path.read_bytes():
        diffs.append("manifest.json")
    return diffs
