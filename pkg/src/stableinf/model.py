"""Gradient-boosted decision trees with logistic loss, grid search, and the score-ranking baseline.

Trees grow best-first (the leaf with the largest gain splits next) up to a
leaf budget and a depth limit, using exact greedy splits over sorted
feature values. Leaf values are Newton steps ``-G / (H + lambda)``; the
ensemble output is ``base + learning_rate * sum(leaf values)``.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureMatrix

SCHEMA_VERSION = 1
REG_LAMBDA = 1.0
MIN_CHILD_HESSIAN = 1e-3
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class HyperParamGrid:
    n_trees: tuple[int, ...] = (100, 300)
    learning_rate: tuple[float, ...] = (0.05, 0.1)
    max_depth: tuple[int, ...] = (3, 6)
    max_leaves: tuple[int, ...] = (15, 31)
    min_samples_leaf: tuple[int, ...] = (5, 20)

    def __post_init__(self):
        for name, values in asdict(self).items():
            if not values:
                raise ConfigError(f"hyper-parameter grid has no values for {name}")
            object.__setattr__(self, name, tuple(values))

    def points(self) -> list[dict]:
        keys = ("n_trees", "learning_rate", "max_depth", "max_leaves", "min_samples_leaf")
        return [dict(zip(keys, combo)) for combo in itertools.product(*(getattr(self, k) for k in keys))]

    @classmethod
    def single(cls, params: dict) -> "HyperParamGrid":
        return cls(**{k: (v,) for k, v in params.items()})


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train fraction must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ConfigError("need at least 2 cross-validation folds")


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True, nogil=True)
def _logloss_sum(raw, y, rows, delta):
    total = 0.0
    for i in rows:
        z = raw[i] + delta
        # log(1 + e^z) - y z, computed stably
        if z > 0:
            total += z + math.log1p(math.exp(-z)) - y[i] * z
        else:
            total += math.log1p(math.exp(z)) - y[i] * z
    return total


@numba.njit(cache=True, nogil=True)
def _best_split(vals, seg, s, e, g, h, G, H, min_leaf, lam):
    """Best (gain, feature, threshold, left size) for rows seg[:, s:e]; gain 0 means no split."""
    F = vals.shape[0]
    parent = G * G / (H + lam)
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    best_nl = 0
    target = 1e-12 + parent
    lo = s + min_leaf - 1
    hi = e - min_leaf - 1
    if lo > hi:
        return best_gain, best_f, best_thr, best_nl
    for f in range(F):
        segf = seg[f]
        valf = vals[f]
        GL = 0.0
        HL = 0.0
        for i in range(s, lo):
            r = segf[i]
            GL += g[r]
            HL += h[r]
        for i in range(lo, hi + 1):
            r = segf[i]
            GL += g[r]
            HL += h[r]
            x0 = valf[i]
            x1 = valf[i + 1]
            if x0 == x1:
                continue
            HR = H - HL
            if HL < MIN_CHILD_HESSIAN or HR < MIN_CHILD_HESSIAN:
                continue
            GR = G - GL
            bl = HL + lam
            br = HR + lam
            # division-free prefilter, loose enough never to reject a true improvement
            if GL * GL * br + GR * GR * bl <= target * bl * br * (1.0 - 1e-9):
                continue
            gain = GL * GL / bl + GR * GR / br - parent
            if gain > best_gain + 1e-12:
                best_gain = gain
                target = gain + 1e-12 + parent
                best_f = f
                thr = 0.5 * (x0 + x1)
                if not (x0 < thr):
                    thr = x1
                best_thr = thr
                best_nl = i - s + 1
    return best_gain, best_f, best_thr, best_nl


@numba.njit(cache=True, nogil=True)
def _fit_tree(sorted_vals, sorted_idx, g, h, y, raw, lr, max_depth, max_leaves, min_leaf, lam,
              feat, thr, left, right, value):
    """Grow one tree into the node arrays; returns the node count.

    Every node owns the same index range in each feature's sorted row
    list; splitting stably partitions that range in all features, unless
    neither child can be split again.
    """
    F, n = sorted_idx.shape
    seg = sorted_idx.copy()
    vals = sorted_vals.copy()
    members = sorted_idx[0].copy()
    tmp_i = np.empty(n, np.int32)
    tmp_v = np.empty(n)
    go_left_i = np.zeros(g.shape[0], np.int32)

    max_nodes = 2 * max_leaves - 1
    # per-node bookkeeping
    l_start = np.zeros(max_nodes, np.int64)
    l_end = np.zeros(max_nodes, np.int64)
    l_depth = np.zeros(max_nodes, np.int64)
    l_gain = np.zeros(max_nodes)
    l_f = np.full(max_nodes, -1, np.int64)
    l_thr = np.zeros(max_nodes)
    l_nl = np.zeros(max_nodes, np.int64)
    l_G = np.zeros(max_nodes)
    l_H = np.zeros(max_nodes)
    is_leaf = np.zeros(max_nodes, np.bool_)

    for k in range(max_nodes):
        feat[k] = -1
        left[k] = -1
        right[k] = -1
        value[k] = 0.0
        thr[k] = 0.0

    G = 0.0
    H = 0.0
    for r in range(g.shape[0]):
        G += g[r]
        H += h[r]
    n_nodes = 1
    l_end[0] = n
    l_G[0] = G
    l_H[0] = H
    is_leaf[0] = True
    if max_depth != 0:
        res = _best_split(vals, seg, 0, n, g, h, G, H, min_leaf, lam)
        l_gain[0] = res[0]
        l_f[0] = res[1]
        l_thr[0] = res[2]
        l_nl[0] = res[3]
    n_leaves = 1

    while n_leaves < max_leaves:
        pick = -1
        best = 0.0
        for k in range(n_nodes):
            if is_leaf[k] and l_f[k] >= 0 and l_gain[k] > best:
                best = l_gain[k]
                pick = k
        if pick < 0:
            break
        s = l_start[pick]
        e = l_end[pick]
        f = l_f[pick]
        nl = l_nl[pick]
        segf = seg[f]
        for i in range(s, e):
            go_left_i[segf[i]] = 1 if i < s + nl else 0
        GL = 0.0
        HL = 0.0
        for i in range(s, s + nl):
            GL += g[segf[i]]
            HL += h[segf[i]]
        a = s
        b = 0
        for i in range(s, e):
            r = members[i]
            gl = go_left_i[r]
            members[a] = r
            tmp_i[b] = r
            a += gl
            b += 1 - gl
        for i in range(b):
            members[a + i] = tmp_i[i]

        child_depth = l_depth[pick] + 1
        more = n_leaves + 1 < max_leaves and (max_depth <= 0 or child_depth < max_depth)
        for ff in range(F):
            if ff == f or not (more and (nl >= 2 * min_leaf or e - s - nl >= 2 * min_leaf)):
                continue
            a = s
            b = 0
            segff = seg[ff]
            valff = vals[ff]
            # branch-free stable partition; writes to position a never pass the read position i
            for i in range(s, e):
                r = segff[i]
                v = valff[i]
                gl = go_left_i[r]
                segff[a] = r
                valff[a] = v
                tmp_i[b] = r
                tmp_v[b] = v
                a += gl
                b += 1 - gl
            for i in range(b):
                segff[a + i] = tmp_i[i]
                valff[a + i] = tmp_v[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        is_leaf[pick] = False
        feat[pick] = f
        thr[pick] = l_thr[pick]
        left[pick] = lc
        right[pick] = rc
        l_start[lc] = s
        l_end[lc] = s + nl
        l_G[lc] = GL
        l_H[lc] = HL
        l_start[rc] = s + nl
        l_end[rc] = e
        l_G[rc] = l_G[pick] - GL
        l_H[rc] = l_H[pick] - HL
        for c in (lc, rc):
            is_leaf[c] = True
            l_depth[c] = child_depth
            if not more or l_end[c] - l_start[c] < 2 * min_leaf:
                continue
            res = _best_split(vals, seg, l_start[c], l_end[c], g, h, l_G[c], l_H[c], min_leaf, lam)
            l_gain[c] = res[0]
            l_f[c] = res[1]
            l_thr[c] = res[2]
            l_nl[c] = res[3]
        n_leaves += 1

    # Newton leaf values, halved until the leaf's own loss does not increase
    for k in range(n_nodes):
        if not is_leaf[k]:
            continue
        w = -l_G[k] / (l_H[k] + lam)
        rows = members[l_start[k]:l_end[k]]
        before = _logloss_sum(raw, y, rows, 0.0)
        accepted = False
        for _ in range(_MAX_HALVINGS):
            if _logloss_sum(raw, y, rows, lr * w) <= before:
                accepted = True
                break
            w *= 0.5
        value[k] = w if accepted else 0.0
    return n_nodes


@numba.njit(cache=True, nogil=True)
def _predict_raw(X, feat, thr, left, right, value, n_trees, base, lr):
    out = np.full(X.shape[0], base)
    for i in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            k = 0
            while feat[t, k] >= 0:
                if X[i, feat[t, k]] < thr[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            acc += value[t, k]
        out[i] += lr * acc
    return out


@numba.njit(cache=True, nogil=True)
def _boost(X, sorted_vals, sorted_idx, y, base, n_trees, lr, max_depth, max_leaves, min_leaf, lam,
           feat, thr, left, right, value, n_nodes, losses):
    n = X.shape[0]
    raw = np.full(n, base)
    all_rows = np.arange(n)
    losses[0] = _logloss_sum(raw, y, all_rows, 0.0) / n
    g = np.empty(n)
    h = np.empty(n)
    for t in range(n_trees):
        for i in range(n):
            p = 1.0 / (1.0 + math.exp(-raw[i]))
            g[i] = p - y[i]
            h[i] = p * (1.0 - p)
        n_nodes[t] = _fit_tree(sorted_vals, sorted_idx, g, h, y, raw, lr, max_depth, max_leaves,
                               min_leaf, lam, feat[t], thr[t], left[t], right[t], value[t])
        for i in range(n):
            k = 0
            while feat[t, k] >= 0:
                if X[i, feat[t, k]] < thr[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            raw[i] += lr * value[t, k]
        losses[t + 1] = _logloss_sum(raw, y, all_rows, 0.0) / n


# ---------------------------------------------------------------- model


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


@dataclass
class GBDTModel:
    feature_names: list[str]
    base_score: float
    learning_rate: float
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    params: dict = field(default_factory=dict)
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return self.feat.shape[0]

    def truncated(self, n_trees: int) -> "GBDTModel":
        return GBDTModel(
            list(self.feature_names), self.base_score, self.learning_rate,
            self.feat[:n_trees], self.thr[:n_trees], self.left[:n_trees],
            self.right[:n_trees], self.value[:n_trees],
            {**self.params, "n_trees": n_trees}, self.train_loss[: n_trees + 1],
        )

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if self.n_trees == 0:
            return np.full(X.shape[0], self.base_score)
        return _predict_raw(X, self.feat, self.thr, self.left, self.right, self.value,
                            self.n_trees, self.base_score, self.learning_rate)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feat.ravel() if f >= 0}

    # JSON layout: one node list per tree; internal nodes carry feature/threshold/children
    def to_dict(self) -> dict:
        trees = []
        for t in range(self.n_trees):
            nodes = []
            k_max = int(np.max(np.r_[self.left[t], self.right[t], 0])) + 1
            for k in range(k_max):
                if self.feat[t, k] >= 0:
                    nodes.append({
                        "feature": int(self.feat[t, k]), "threshold": float(self.thr[t, k]),
                        "left": int(self.left[t, k]), "right": int(self.right[t, k]),
                    })
                else:
                    nodes.append({"value": float(self.value[t, k])})
            trees.append(nodes)
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_names": list(self.feature_names),
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "params": self.params,
            "trees": trees,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBDTModel":
        trees = d["trees"]
        width = max([len(t) for t in trees], default=1)
        T = len(trees)
        feat = np.full((T, width), -1, np.int64)
        thr = np.zeros((T, width))
        left = np.full((T, width), -1, np.int64)
        right = np.full((T, width), -1, np.int64)
        value = np.zeros((T, width))
        for t, nodes in enumerate(trees):
            for k, node in enumerate(nodes):
                if "value" in node:
                    value[t, k] = node["value"]
                else:
                    feat[t, k] = node["feature"]
                    thr[t, k] = node["threshold"]
                    left[t, k] = node["left"]
                    right[t, k] = node["right"]
        return cls(list(d["feature_names"]), float(d["base_score"]), float(d["learning_rate"]),
                   feat, thr, left, right, value, dict(d.get("params", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GBDTModel":
        path = Path(path)
        if not path.exists():
            raise DataError(f"model file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def fit(X: np.ndarray, y: np.ndarray, feature_names, n_trees=100, learning_rate=0.1,
        max_depth=6, max_leaves=31, min_samples_leaf=20, reg_lambda=REG_LAMBDA) -> GBDTModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DataError("training labels contain a single class")
    if max_leaves < 2:
        raise ConfigError("max_leaves must be at least 2")
    prior = y.mean()
    base = math.log(prior / (1 - prior))
    sorted_idx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int32)
    sorted_vals = np.ascontiguousarray(np.take_along_axis(X.T, sorted_idx, axis=1))
    width = 2 * max_leaves - 1
    feat = np.full((n_trees, width), -1, np.int64)
    thr = np.zeros((n_trees, width))
    left = np.full((n_trees, width), -1, np.int64)
    right = np.full((n_trees, width), -1, np.int64)
    value = np.zeros((n_trees, width))
    n_nodes = np.zeros(n_trees, np.int64)
    losses = np.zeros(n_trees + 1)
    _boost(X, sorted_vals, sorted_idx, y, base, n_trees, float(learning_rate), int(max_depth), int(max_leaves),
           int(min_samples_leaf), float(reg_lambda), feat, thr, left, right, value, n_nodes, losses)
    params = dict(n_trees=n_trees, learning_rate=learning_rate, max_depth=max_depth,
                  max_leaves=max_leaves, min_samples_leaf=min_samples_leaf, reg_lambda=reg_lambda)
    return GBDTModel(list(feature_names), base, float(learning_rate), feat, thr, left, right,
                     value, params, losses.tolist())


def check_columns(model: GBDTModel, matrix: FeatureMatrix) -> None:
    if list(matrix.columns) != list(model.feature_names):
        missing = [c for c in model.feature_names if c not in matrix.columns]
        extra = [c for c in matrix.columns if c not in model.feature_names]
        raise DataError(f"feature columns do not match the model: missing {missing}, extra {extra}"
                        + ("" if missing or extra else " (order differs)"))


def predict_proba(model: GBDTModel, matrix: FeatureMatrix) -> dict[str, float]:
    check_columns(model, matrix)
    p = sigmoid(model.raw_scores(matrix.X))
    return dict(zip(matrix.users, p.tolist()))


# ---------------------------------------------------------------- training protocol


def stratified_split(y: np.ndarray, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_fraction * len(idx)))
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is dealt round-robin after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


@dataclass
class TrainingReport:
    best_params: dict
    cv_results: list[dict]
    test_auc: float | None
    test_accuracy: float | None
    n_train: int
    n_test: int
    train_users: list[str]
    test_users: list[str]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "best_params": self.best_params,
            "cv_results": self.cv_results,
            "test_auc": self.test_auc,
            "test_accuracy": self.test_accuracy,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "train_users": self.train_users,
            "test_users": self.test_users,
        }


def _effective(depth: int, leaves: int, min_leaf: int, n_rows: int) -> int:
    # a tree never has more than 2**depth or n_rows // min_leaf leaves; larger caps grow the same tree
    cap = max(n_rows // max(min_leaf, 1), 2)
    if depth > 0:
        cap = min(cap, 2 ** depth)
    return min(leaves, cap)


def cross_validate(X, y, grid: HyperParamGrid, folds: np.ndarray, feature_names, workers: int = 1) -> list[dict]:
    """Mean fold AUC for every grid point.

    Points differing only in tree count share one fit: the larger ensemble's
    prefix is the smaller one.  Points whose leaf cap cannot bind at their
    depth share one fit too.
    """
    from .evaluation import auc_arrays

    k = int(folds.max()) + 1
    max_trees = max(grid.n_trees)
    combos = list(itertools.product(grid.learning_rate, grid.max_depth, grid.max_leaves, grid.min_samples_leaf))
    n_rows = min(int(np.sum(folds != f)) for f in range(k))
    keys = sorted({(lr, d, _effective(d, lv, ml, n_rows), ml) for lr, d, lv, ml in combos})

    def run(task):
        (lr, depth, leaves, min_leaf), f = task
        tr, va = folds != f, folds == f
        model = fit(X[tr], y[tr], feature_names, max_trees, lr, depth, leaves, min_leaf)
        return [auc_arrays(model.truncated(t).raw_scores(X[va]), y[va]) for t in grid.n_trees]

    tasks = [(key, f) for key in keys for f in range(k)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, tasks))
    else:
        outs = [run(t) for t in tasks]
    by_task = dict(zip(tasks, outs))

    results = []
    for lr, depth, leaves, min_leaf in combos:
        key = (lr, depth, _effective(depth, leaves, min_leaf, n_rows), min_leaf)
        for i, t in enumerate(grid.n_trees):
            fold_aucs = [by_task[(key, f)][i] for f in range(k)]
            results.append({
                "n_trees": t, "learning_rate": lr, "max_depth": depth, "max_leaves": leaves,
                "min_samples_leaf": min_leaf, "cv_auc": float(np.mean(fold_aucs)),
                "fold_aucs": [float(a) for a in fold_aucs],
            })
    return results


def select_best(results: list[dict]) -> dict:
    """Highest mean CV AUC; ties go to fewer trees, then the lower learning rate."""
    best = min(
        enumerate(results),
        key=lambda ir: (-round(ir[1]["cv_auc"], 12), ir[1]["n_trees"], ir[1]["learning_rate"], ir[0]),
    )[1]
    return {k: best[k] for k in ("n_trees", "learning_rate", "max_depth", "max_leaves", "min_samples_leaf")}


def train(matrix: FeatureMatrix, grid: HyperParamGrid | None = None, split: SplitSpec | None = None,
          split_labels: np.ndarray | None = None, workers: int = 1) -> tuple[GBDTModel, TrainingReport]:
    """Stratified train/test split, grid search by k-fold CV AUC, refit on the training part.

    ``split_labels`` stratifies the split on different labels than the
    training target (the m-sweep keeps one split across labeling periods).
    """
    from .evaluation import accuracy_arrays, auc_arrays

    grid = grid or HyperParamGrid()
    split = split or SplitSpec()
    if matrix.y is None:
        raise DataError("feature matrix has no labels")
    y = matrix.y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise DataError("labels contain a single class; cannot train a classifier")
    strat = y if split_labels is None else np.asarray(split_labels, dtype=np.int64)
    tr, te = stratified_split(strat, split.train_fraction, split.seed)
    X_tr, y_tr = matrix.X[tr], y[tr]
    for cls in (0, 1):
        if np.sum(y_tr == cls) < split.cv_folds:
            raise DataError(f"class {cls} has fewer training rows than CV folds")
    folds = stratified_folds(y_tr, split.cv_folds, split.seed + 1)
    cv = cross_validate(X_tr, y_tr, grid, folds, matrix.columns, workers)
    best = select_best(cv)
    model = fit(X_tr, y_tr, matrix.columns, **best)

    test_auc = test_acc = None
    if len(te) and len(np.unique(y[te])) == 2:
        raw = model.raw_scores(matrix.X[te])
        test_auc = auc_arrays(raw, y[te])
        test_acc = accuracy_arrays(sigmoid(raw), y[te])
    report = TrainingReport(
        best, cv, test_auc, test_acc, len(tr), len(te),
        [matrix.users[i] for i in tr], [matrix.users[i] for i in te],
    )
    return model, report


def baseline_classify(scores: dict[str, float], true_positive_count: int):
    """Label the top-k users by score as stable; returns (labels, ranking)."""
    if true_positive_count > len(scores) or true_positive_count < 0:
        raise ValueError(f"cannot pick {true_positive_count} of {len(scores)} users")
    ranking = sorted(scores, key=lambda u: (-scores[u], u))
    top = set(ranking[:true_positive_count])
    return {u: int(u in top) for u in ranking}, ranking
