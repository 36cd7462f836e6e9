"""Experiment runners: main classification task, score baseline, m/n sweeps, persistence curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .evaluation import EvalReport, auc_arrays, confusion, evaluate_probs, permutation_importance
from .features import (
    KIND_CATEGORY, SCORE_FEATURE, FeatureMatrix, aggregate_feature, build_feature_matrix, column_name,
)
from .ingest import MonthId
from .labeling import persistence_curve, stable_labels
from .model import (
    GBDTModel, HyperParamGrid, SplitSpec, TrainingReport, baseline_classify, check_columns, fit, sigmoid,
    stratified_split, train,
)

M_VALUES = (2, 3, 4, 5, 6)
N_VALUES = (1, 2, 3, 4)
TEST_M = 6


@dataclass
class TaskResult:
    matrix: FeatureMatrix
    model: GBDTModel
    report: TrainingReport

    def test_rows(self) -> np.ndarray:
        index = {u: i for i, u in enumerate(self.matrix.users)}
        return np.array([index[u] for u in self.report.test_users], dtype=np.int64)

    def train_rows(self) -> np.ndarray:
        index = {u: i for i, u in enumerate(self.matrix.users)}
        return np.array([index[u] for u in self.report.train_users], dtype=np.int64)


def config_echo(matrix: FeatureMatrix, seed: int, feature_set: str) -> dict:
    meta = matrix.meta
    return {"kind": meta["kind"], "m": meta["m"], "n": meta["n"], "categories": meta["categories"],
            "feature_set": feature_set, "seed": seed}


def run_task(matrix: FeatureMatrix, grid: HyperParamGrid, split: SplitSpec, workers: int = 1) -> TaskResult:
    model, report = train(matrix, grid, split, workers=workers)
    return TaskResult(matrix, model, report)


def evaluate_task(result: TaskResult, feature_set: str, seed: int) -> EvalReport:
    te = result.test_rows()
    y = result.matrix.y[te]
    probs = sigmoid(result.model.raw_scores(result.matrix.X[te]))
    return evaluate_probs(probs, y, config=config_echo(result.matrix, seed, feature_set))


def cross_cohort_eval(model: GBDTModel, matrix: FeatureMatrix, feature_set: str, seed: int) -> EvalReport:
    """Score a later cohort with a model trained on an earlier one."""
    check_columns(model, matrix)
    probs = sigmoid(model.raw_scores(matrix.X))
    return evaluate_probs(probs, matrix.y, config=config_echo(matrix, seed, feature_set))


def baseline_eval(matrix: FeatureMatrix, test_users: list[str], seed: int) -> EvalReport:
    """Rank the test users by their reference-month score; top-k stable, k = true stable count."""
    kind = matrix.meta["kind"]
    col = column_name(SCORE_FEATURE[kind], 0)
    index = {u: i for i, u in enumerate(matrix.users)}
    rows = np.array([index[u] for u in test_users], dtype=np.int64)
    scores = matrix.column(col)[rows]
    y = matrix.y[rows]
    hard, _ = baseline_classify(dict(zip(test_users, scores.tolist())), int(y.sum()))
    pred = np.array([hard[u] for u in test_users])
    echo = config_echo(matrix, seed, "baseline")
    echo["categories"] = [KIND_CATEGORY[kind]]
    return EvalReport(auc_arrays(scores, y), float(np.mean(pred == y)), None, confusion(pred, y), echo)


def importance(result: TaskResult, on: str = "test", repeats: int = 30, seed: int = 0):
    rows = result.test_rows() if on == "test" else result.train_rows()
    if on not in ("test", "train"):
        raise ValueError("importance rows must be 'test' or 'train'")
    return permutation_importance(result.model, result.matrix.X[rows], result.matrix.y[rows],
                                  result.matrix.columns, repeats, seed)


def _fit_params(params: dict) -> dict:
    keys = ("n_trees", "learning_rate", "max_depth", "max_leaves", "min_samples_leaf")
    return {k: params[k] for k in keys}


def m_sweep(study, ref: MonthId, kind: str, params: dict[str, dict], split: SplitSpec, n: int = 4,
            m_values=M_VALUES, test_m: int = TEST_M) -> list[dict]:
    """Train with m-month labels, score against test_m-month labels on one fixed split.

    ``params`` maps a feature-set name to the hyper-parameters used for it.
    """
    for k in range(max(max(m_values), test_m)):
        study.require_month(ref.shift(k), f"m-sweep up to m={max(m_values)}")
    sets = study.influencer_sets(kind, [ref.shift(k) for k in range(max(max(m_values), test_m))])
    rows = []
    for fs, p in params.items():
        base = build_feature_matrix(study, ref, n, kind, fs, m=test_m)
        y_test = base.y
        tr, te = stratified_split(y_test, split.train_fraction, split.seed)
        for m in m_values:
            lab = stable_labels(sets, ref, m)
            y_m = np.array([lab[u] for u in base.users], dtype=np.int64)
            if len(np.unique(y_m[tr])) < 2:
                raise DataError(f"m={m} training labels for {kind} contain one class")
            model = fit(base.X[tr], y_m[tr], base.columns, **_fit_params(p))
            auc = auc_arrays(model.raw_scores(base.X[te]), y_test[te])
            rows.append({"kind": kind, "feature_set": fs, "m": m, "auc": auc,
                         "n_positive_train": int(y_m[tr].sum())})
    return rows


def n_sweep(study, ref: MonthId, kind: str, params: dict[str, dict], split: SplitSpec, m: int = TEST_M,
            n_values=N_VALUES) -> list[dict]:
    """Per n: all features, per-month score only, and the n-month score sum.

    The summed variant reuses the score-only hyper-parameters.
    """
    for k in range(max(n_values)):
        study.require_month(ref.shift(-k), f"n-sweep up to n={max(n_values)}")
    rows = []
    for n in n_values:
        variants = [(fs, build_feature_matrix(study, ref, n, kind, fs, m=m), p) for fs, p in params.items()]
        if "score-only" in params:
            variants.append(("score-only-aggregated", aggregate_feature(study, ref, n, kind, m), params["score-only"]))
        for name, mat, p in variants:
            tr, te = stratified_split(mat.y, split.train_fraction, split.seed)
            model = fit(mat.X[tr], mat.y[tr], mat.columns, **_fit_params(p))
            auc = auc_arrays(model.raw_scores(mat.X[te]), mat.y[te])
            rows.append({"kind": kind, "variant": name, "n": n, "auc": auc, "n_columns": len(mat.columns)})
    return rows


def persistence_report(study, kind: str, ref: MonthId, prior_hs=(0, 1, 2, 3), horizon: int = 6) -> list[dict]:
    """Persistence curves for cohorts with 0..h months of prior influence; skipped when months are missing."""
    sets = study.influencer_sets(kind)
    out = []
    for h in prior_hs:
        needed = [ref.shift(k) for k in range(-h, horizon)]
        if any(mo not in sets.sets for mo in needed):
            continue
        cohort = set(sets[ref])
        for i in range(1, h + 1):
            cohort &= sets[ref.shift(-i)]
        out.append({"kind": kind, "ref": str(ref), "prior_h": h, "cohort": len(cohort),
                    "curve": persistence_curve(sets, ref, h, horizon) if cohort else []})
    return out


def plot_triples(persistence=(), importances=None, m_rows=(), n_rows=()) -> list[tuple]:
    """(x, y, series) rows for the retention, importance, m-sweep and n-sweep figures."""
    out = []
    for rec in persistence:
        for k, p in enumerate(rec["curve"], 1):
            out.append(("persistence", k, p, f"{rec['kind']}/prior_h={rec['prior_h']}"))
    for kind, rep in (importances or {}).items():
        for name in rep.ranked():
            out.append(("importance", name, rep.importances[name][0], kind))
    for r in m_rows:
        out.append(("m_sweep", r["m"], r["auc"], f"{r['kind']}/{r['feature_set']}"))
    for r in n_rows:
        out.append(("n_sweep", r["n"], r["auc"], f"{r['kind']}/{r['variant']}"))
    return out
