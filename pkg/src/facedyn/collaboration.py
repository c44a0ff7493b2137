"""Multi-view score collaboration, decisions, and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .mesh import EXPRESSIONS

NUM_CLASSES = 6


def collaborate(scores) -> np.ndarray:
    """Average class probabilities over views.

    ``scores`` has shape (N, V, 6): example, view, class. Returns (N, 6).
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 3 or S.shape[2] != NUM_CLASSES:
        raise ShapeError(f"expected (N, views, 6) scores, got {S.shape}")
    if S.shape[1] == 0:
        raise DomainError("collaboration needs at least one view")
    return S.mean(axis=1)


def final_prediction(C) -> np.ndarray:
    """1-based argmax per row; ties go to the lowest class index."""
    C = np.asarray(C, dtype=np.float64)
    return np.argmax(C, axis=-1) + 1


@dataclass
class EvaluationReport:
    accuracy: float
    confusion: np.ndarray  # rows: truth, columns: prediction
    recall: np.ndarray

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "recall": [None if np.isnan(r) else float(r) for r in self.recall]}


def evaluate(pred, truth) -> EvaluationReport:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError(f"{len(pred)} predictions for {len(truth)} labels")
    conf = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(conf, (truth - 1, pred - 1), 1)
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else float("nan")
    rows = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(rows > 0, np.diag(conf) / np.maximum(rows, 1), np.nan)
    return EvaluationReport(acc, conf, recall)


def kfold_split(subjects: Sequence[str], k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Subject-independent folds over sequence indices.

    ``subjects`` gives the subject id of every sequence (a Dataset's
    ``subjects`` list). Distinct subjects are shuffled with ``seed`` and dealt
    into k nearly equal groups; fold i tests group i.
    """
    if hasattr(subjects, "subjects"):
        subjects = subjects.subjects
    subjects = list(subjects)
    if k < 2:
        raise ConfigurationError("k-fold needs k >= 2")
    uniq = sorted(set(subjects))
    if len(uniq) < k:
        raise ConfigurationError(f"{len(uniq)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(uniq))
    groups = np.array_split(np.asarray(uniq, dtype=object)[order], k)
    subj = np.asarray(subjects, dtype=object)
    folds = []
    for g in groups:
        test = np.isin(subj, list(g))
        folds.append((np.nonzero(~test)[0], np.nonzero(test)[0]))
    return folds


def write_confusion_csv(conf: np.ndarray, path, names=EXPRESSIONS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth\\pred", *names])
        for name, row in zip(names, conf):
            w.writerow([name, *[int(x) for x in row]])


def read_confusion_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(x) for x in r[1:]] for r in rows], dtype=np.int64)


def write_fold_csv(fold_accuracies: Sequence[float], fold_sizes: Sequence[int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "n_test", "accuracy"])
        for i, (a, n) in enumerate(zip(fold_accuracies, fold_sizes)):
            w.writerow([i, n, f"{a:.6f}"])
