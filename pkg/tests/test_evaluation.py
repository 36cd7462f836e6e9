import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stableinf.errors import DataError
from stableinf import experiments as ex
from stableinf.evaluation import accuracy, auc, auc_arrays, confusion, evaluate_probs, permutation_importance
from stableinf.features import build_feature_matrix
from stableinf.ingest import load_follow_snapshots, load_retweet_events
from stableinf.model import GBDTModel, HyperParamGrid, SplitSpec, baseline_classify, fit, train
from stableinf.study import Study
from stableinf.synth import SynthConfig, generate


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert auc_arrays([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_arrays([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75
    assert auc_arrays([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5


def test_auc_single_class():
    with pytest.raises(DataError):
        auc_arrays([0.1, 0.2], [1, 1])


def test_auc_dict_form():
    assert auc({"a": 0.9, "b": 0.1}, {"b": 0, "a": 1}) == 1.0
    with pytest.raises(DataError):
        auc({"a": 0.9}, {"b": 1})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 1)), min_size=2, max_size=50))
def test_auc_matches_pairwise(rows):
    scores = [s / 4 for s, _ in rows]
    labels = [y for _, y in rows]
    if len(set(labels)) < 2:
        return
    got = auc_arrays(scores, labels)
    assert abs(got - pairwise_auc(scores, labels)) <= 1e-12
    # rank statistic: invariant under monotone maps, complements under negation
    assert auc_arrays(np.exp(scores), labels) == got
    assert abs(auc_arrays([-s for s in scores], labels) + got - 1.0) <= 1e-12


def test_accuracy_examples():
    assert accuracy({"a": 0.9, "b": 0.2}, {"a": 1, "b": 0}) == 1.0
    assert accuracy({"a": 0.9, "b": 0.2, "c": 0.6, "d": 0.1}, {"a": 1, "b": 0, "c": 0, "d": 0}) == 0.75
    with pytest.raises(DataError):
        accuracy({"a": 0.9}, {"b": 1})


def test_baseline_accuracy_from_confusion():
    scores = {"a": 5, "b": 4, "c": 3, "d": 2, "e": 1}
    truth = {"a": 1, "b": 0, "c": 1, "d": 0, "e": 0}
    hard, _ = baseline_classify(scores, sum(truth.values()))
    users = sorted(scores)
    c = confusion(np.array([hard[u] for u in users]), np.array([truth[u] for u in users]))
    assert accuracy({u: float(hard[u]) for u in users}, truth) == (c["tp"] + c["tn"]) / 5


def test_eval_report_fields():
    rep = evaluate_probs([0.9, 0.6, 0.4, 0.1], [1, 0, 1, 0], config={"kind": "spreader"})
    d = rep.to_dict()
    assert d["auc"] == 0.75 and d["accuracy"] == 0.5 and d["threshold"] == 0.5
    assert d["confusion"] == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}
    assert (d["confusion"]["tp"] + d["confusion"]["tn"]) / 4 == d["accuracy"]


def stump(feature, n_features):
    d = {"feature_names": [f"f{j}" for j in range(n_features)], "base_score": 0.0, "learning_rate": 1.0,
         "trees": [[{"feature": feature, "threshold": 0.0, "left": 1, "right": 2}, {"value": -1.0}, {"value": 1.0}]]}
    return GBDTModel.from_dict(d)


def test_importance_single_stump():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    X[:, 2] = 1.0
    y = (X[:, 1] > 0).astype(int)
    rep = permutation_importance(stump(1, 3), X, y, repeats=30, seed=1)
    assert rep.importances["f0"] == (0.0, 0.0)
    assert rep.importances["f2"] == (0.0, 0.0)
    assert rep.importances["f1"][0] > 0.3
    assert rep.ranked()[0] == "f1"


def test_importance_constant_column_zero_even_if_used():
    X = np.ones((50, 1))
    y = np.r_[np.ones(25), np.zeros(25)].astype(int)
    rep = permutation_importance(stump(0, 1), X, y, repeats=5, seed=0)
    assert rep.importances["f0"] == (0.0, 0.0)


def test_importance_repeats_validated():
    with pytest.raises(ValueError):
        permutation_importance(stump(0, 1), np.zeros((4, 1)), [0, 1, 0, 1], repeats=0)


def test_noise_feature_importance_small():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(600, 2))
        y = (X[:, 0] + 0.3 * rng.normal(size=600) > 0).astype(int)
        model = fit(X[:300], y[:300], ["sig", "noise"], n_trees=40, learning_rate=0.1, max_depth=3,
                    max_leaves=8, min_samples_leaf=10)
        mean, sd = permutation_importance(model, X[300:], y[300:], repeats=30, seed=seed).importances["noise"]
        hits += abs(mean) < 2 * sd or (mean == 0 and sd == 0)
    assert hits >= 9


def test_importance_deterministic_and_column_independent():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 3))
    y = (X[:, 0] - X[:, 2] > 0).astype(int)
    model = fit(X, y, ["a", "b", "c"], n_trees=20, learning_rate=0.1, max_depth=2, max_leaves=4, min_samples_leaf=5)
    a = permutation_importance(model, X, y, repeats=7, seed=5)
    b = permutation_importance(model, X, y, repeats=7, seed=5)
    assert a.importances == b.importances


def test_per_month_beats_aggregate_on_trend():
    """Stability driven by the score trend: the summed score hides it."""
    wins = 0
    grid = dict(n_trees=60, learning_rate=0.1, max_depth=3, max_leaves=8, min_samples_leaf=5)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = 400
        level = rng.gamma(4.0, 5.0, n)
        slope = rng.normal(0, 3.0, n)
        months = np.stack([rng.poisson(np.maximum(level + slope * (k - 3), 0.5)) for k in range(4)], 1)
        y = (slope + rng.normal(0, 1.0, n) > 0).astype(int)
        agg = months.sum(1, keepdims=True).astype(float)
        tr, te = np.arange(280), np.arange(280, n)
        per = fit(months[tr].astype(float), y[tr], list("abcd"), **grid)
        tot = fit(agg[tr], y[tr], ["sum"], **grid)
        wins += auc_arrays(per.raw_scores(months[te]), y[te]) > auc_arrays(tot.raw_scores(agg[te]), y[te])
    assert wins >= 16


GRID = HyperParamGrid.single(dict(n_trees=40, learning_rate=0.1, max_depth=3, max_leaves=8, min_samples_leaf=5))


def test_m_sweep_endpoint_equals_main(small_study):
    ref = small_study.months[3]
    split = SplitSpec(seed=2)
    mat = build_feature_matrix(small_study, ref, 4, "spreader", "all", 6)
    res = ex.run_task(mat, GRID, split)
    rows = ex.m_sweep(small_study, ref, "spreader", {"all": res.report.best_params}, split, m_values=(3, 6))
    at6 = [r for r in rows if r["m"] == 6][0]
    assert at6["auc"] == res.report.test_auc == ex.evaluate_task(res, "all", 0).auc
    assert [r["m"] for r in rows] == [3, 6]


def test_n_sweep_single_month_equivalence(small_study):
    ref = small_study.months[3]
    params = {"score-only": GRID.points()[0]}
    rows = ex.n_sweep(small_study, ref, "broker", params, SplitSpec(seed=1), n_values=(1, 2))
    n1 = {r["variant"]: r["auc"] for r in rows if r["n"] == 1}
    assert n1["score-only"] == n1["score-only-aggregated"]
    assert ex.n_sweep(small_study, ref, "broker", params, SplitSpec(seed=1), n_values=(1, 2)) == rows


def test_sweeps_need_months(small_study):
    ref = small_study.months[-3]
    with pytest.raises(DataError):
        ex.m_sweep(small_study, ref, "spreader", {"all": GRID.points()[0]}, SplitSpec())
    with pytest.raises(DataError):
        ex.n_sweep(small_study, small_study.months[1], "spreader", {"all": GRID.points()[0]}, SplitSpec())


def test_baseline_eval_echo(small_study):
    ref = small_study.months[3]
    mat = build_feature_matrix(small_study, ref, 4, "broker", "all", 6)
    res = ex.run_task(mat, GRID, SplitSpec(seed=0))
    rep = ex.baseline_eval(mat, res.report.test_users, 0)
    assert rep.config["categories"] == ["BR"] and rep.threshold is None
    assert 0.0 <= rep.auc <= 1.0


@pytest.mark.slow
def test_m_sweep_flat_for_short_persistence(tmp_path):
    # latent influence with a 3-month e-folding time: every m past the horizon ranks users alike
    curves = []
    for seed in range(20):
        generate(SynthConfig(n_users=2000, seed=seed, rho=math.exp(-1 / 3)), tmp_path)
        study = Study(load_retweet_events(tmp_path / "events.jsonl").events,
                      load_follow_snapshots(tmp_path / "follows").snapshots)
        rows = ex.m_sweep(study, study.months[3], "spreader", {"all": GRID.points()[0]}, SplitSpec(seed=seed))
        curves.append([r["auc"] for r in rows])
    mean = np.mean(curves, axis=0)
    assert mean.max() - mean.min() < 0.05
