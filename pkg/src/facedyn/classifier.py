"""Multinomial logistic regression baseline over dynamic-image features.

This is the swappable classifier stage: anything exposing ``predict_proba``
over feature vectors can replace :class:`ClassifierModel` in the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dynamic import DynamicImage, normalize_array
from .errors import CoverageError, ShapeError

NUM_CLASSES = 6
FEATURE_SIDE = 28
CHECKPOINT_FORMAT = "facedyn-softmax"
CHECKPOINT_VERSION = 1


@lru_cache(maxsize=32)
def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging source cells by overlap length.

    Rows sum to one, so constant signals are preserved exactly.
    """
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    A = np.zeros((n_out, n_in))
    for i in range(n_out):
        a, b = edges_out[i], edges_out[i + 1]
        for j in range(int(np.floor(a)), min(int(np.ceil(b)), n_in)):
            A[i, j] = min(b, j + 1) - max(a, j)
    A /= A.sum(axis=1, keepdims=True)
    A.setflags(write=False)
    return A


def area_downsample(img: np.ndarray, side: int = FEATURE_SIDE) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] == side and img.shape[-2] == side:
        return img.copy()
    A = area_matrix(img.shape[-2], side)
    B = area_matrix(img.shape[-1], side)
    return A @ img @ B.T


def featurize(di, side: int = FEATURE_SIDE) -> np.ndarray:
    """Display-normalize, area-downsample to side x side, flatten."""
    px = di.pixels if isinstance(di, DynamicImage) else np.asarray(di, dtype=np.float64)
    return area_downsample(normalize_array(px), side).ravel()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean softmax cross-entropy plus (l2 / 2) * |W|^2, and its gradient.

    ``y`` holds zero-based class indices.
    """
    n = X.shape[0]
    P = softmax(X @ W.T + b)
    loss = -np.mean(np.log(P[np.arange(n), y] + 1e-300)) + 0.5 * l2 * np.sum(W * W)
    G = P
    G[np.arange(n), y] -= 1.0
    G /= n
    return loss, G.T @ X + l2 * W, G.sum(axis=0)


@dataclass(eq=False)
class ClassifierModel:
    weights: np.ndarray
    biases: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feature_mean) / self.feature_scale

    def logits(self, features) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ShapeError(f"feature dimension {X.shape[1]} != model dimension {self.dim}")
        return self._standardize(X) @ self.weights.T + self.biases

    def predict_proba(self, features) -> np.ndarray:
        """Class probabilities; one row per feature vector (a 1-D input gives one row)."""
        P = softmax(self.logits(features))
        return P[0] if np.ndim(features) == 1 else P


def predict_proba(model: ClassifierModel, feature) -> np.ndarray:
    return model.predict_proba(feature)


def train(features, labels, lr: float = 0.5, epochs: int = 200, l2: float = 1e-3,
          seed: int = 0) -> ClassifierModel:
    """Full-batch gradient descent; labels are 1..6.

    Features are standardized with training statistics that are stored in
    the model. The loss trace is kept in ``metadata['loss_trace']``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError("features must be (n, d) with one label per row")
    missing = sorted(set(range(1, NUM_CLASSES + 1)) - set(y.tolist()))
    if missing:
        raise CoverageError(f"no training examples for classes {missing}")
    if y.min() < 1 or y.max() > NUM_CLASSES:
        raise ValueError("labels must lie in 1..6")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Xs = (X - mean) / scale
    rng = np.random.default_rng(seed)
    W = 0.01 * rng.standard_normal((NUM_CLASSES, X.shape[1]))
    b = np.zeros(NUM_CLASSES)
    trace = []
    for _ in range(epochs):
        loss, gW, gb = loss_and_grad(W, b, Xs, y - 1, l2)
        trace.append(float(loss))
        W -= lr * gW
        b -= lr * gb
    trace.append(float(loss_and_grad(W, b, Xs, y - 1, l2)[0]))
    meta = {"seed": int(seed), "epochs": int(epochs), "lr": float(lr), "l2": float(l2),
            "n_train": int(len(y)), "loss_trace": trace}
    return ClassifierModel(W, b, mean, scale, meta)


def save_checkpoint(model: ClassifierModel, path) -> None:
    """JSON header line, then little-endian float64 W, b, mean, scale."""
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "classes": NUM_CLASSES, "dim": model.dim, "dtype": "<f8",
              "metadata": model.metadata}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for arr in (model.weights, model.biases, model.feature_mean, model.feature_scale):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ClassifierModel:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl])
    if header.get("format") != CHECKPOINT_FORMAT or "version" not in header:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    c, d = header["classes"], header["dim"]
    body = np.frombuffer(data, dtype="<f8", offset=nl + 1)
    if body.size != c * d + c + 2 * d:
        raise ValueError(f"{path}: weight block has {body.size} values, expected {c * d + c + 2 * d}")
    W = body[:c * d].reshape(c, d).copy()
    b = body[c * d:c * d + c].copy()
    mean = body[c * d + c:c * d + c + d].copy()
    scale = body[c * d + c + d:].copy()
    return ClassifierModel(W, b, mean, scale, header.get("metadata", {}))
