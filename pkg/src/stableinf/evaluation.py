"""AUC, accuracy and permutation importance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

IMPORTANCE_REPEATS = 30


def auc_arrays(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _aligned(a: dict, b: dict):
    if a.keys() != b.keys():
        missing = sorted(set(a) ^ set(b))[:5]
        raise DataError(f"score and label keys differ (e.g. {missing})")
    keys = sorted(a)
    return np.array([a[k] for k in keys], dtype=float), np.array([b[k] for k in keys])


def auc(scores: dict, labels: dict) -> float:
    s, y = _aligned(scores, labels)
    return auc_arrays(s, y)


def accuracy_arrays(probs, labels, threshold: float = 0.5) -> float:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    return float(np.mean((probs >= threshold).astype(int) == labels))


def accuracy(probs: dict, labels: dict, threshold: float = 0.5) -> float:
    p, y = _aligned(probs, labels)
    return accuracy_arrays(p, y, threshold)


def confusion(pred: np.ndarray, labels: np.ndarray) -> dict[str, int]:
    pred = np.asarray(pred).astype(int)
    labels = np.asarray(labels).astype(int)
    return {
        "tp": int(np.sum((pred == 1) & (labels == 1))),
        "fp": int(np.sum((pred == 1) & (labels == 0))),
        "tn": int(np.sum((pred == 0) & (labels == 0))),
        "fn": int(np.sum((pred == 0) & (labels == 1))),
    }


@dataclass
class EvalReport:
    auc: float
    accuracy: float
    threshold: float | None
    confusion: dict[str, int]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc, "accuracy": self.accuracy, "threshold": self.threshold,
            "confusion": self.confusion, "config": self.config,
        }


def evaluate_probs(probs, labels, threshold: float = 0.5, config: dict | None = None) -> EvalReport:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(int)
    return EvalReport(
        auc_arrays(probs, labels),
        accuracy_arrays(probs, labels, threshold),
        threshold,
        confusion((probs >= threshold).astype(int), labels),
        dict(config or {}),
    )


@dataclass
class ImportanceReport:
    importances: dict[str, tuple[float, float]]
    repeats: int
    seed: int
    base_auc: float

    def ranked(self) -> list[str]:
        return sorted(self.importances, key=lambda c: (-self.importances[c][0], c))

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats, "seed": self.seed, "base_auc": self.base_auc,
            "ranking": self.ranked(),
            "importances": {c: {"mean": m, "std": s} for c, (m, s) in sorted(self.importances.items())},
        }


def permutation_importance(model, X: np.ndarray, labels, columns=None, repeats: int = IMPORTANCE_REPEATS,
                           seed: int = 0) -> ImportanceReport:
    """Mean AUC drop when one column is shuffled, per column.

    Every column gets its own generator seeded from (seed, column index),
    so results do not depend on which other columns are evaluated.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    X = np.ascontiguousarray(X, dtype=float)
    labels = np.asarray(labels).astype(int)
    columns = list(columns if columns is not None else model.feature_names)
    base = auc_arrays(model.raw_scores(X), labels)
    used = model.used_features()
    out = {}
    for j, name in enumerate(columns):
        if j not in used:
            out[name] = (0.0, 0.0)
            continue
        rng = np.random.default_rng([seed, j])
        drops = np.empty(repeats)
        Xp = X.copy()
        for r in range(repeats):
            Xp[:, j] = X[rng.permutation(len(X)), j]
            drops[r] = base - auc_arrays(model.raw_scores(Xp), labels)
        out[name] = (float(drops.mean()), float(drops.std()))
    return ImportanceReport(out, repeats, seed, base)
