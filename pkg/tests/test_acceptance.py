"""Acceptance criteria 1-10, each at its stated tolerance; one pass/fail line per criterion."""

import itertools
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp

from stableinf import experiments as ex
from stableinf.config import PipelineConfig, derive_seed
from stableinf.errors import DataError
from stableinf.evaluation import auc_arrays
from stableinf.features import build_feature_matrix
from stableinf.graph import community_labels, from_edges, pagerank_array
from stableinf.ingest import EventTable, RetweetEvent, TimeWindow, load_follow_snapshots, load_retweet_events, slice_events
from stableinf.labeling import persistence_curve, stable_labels
from stableinf.leiden import leiden
from stableinf.model import HyperParamGrid, SplitSpec, train
from stableinf.scoring import score_all, unique_user_rate
from stableinf.study import Study
from stableinf.synth import SynthConfig, generate

from test_evaluation import pairwise_auc
from test_graph import dense_pagerank
from test_model import matrix, separable
from test_scoring import brute_scores

SEEDS = range(20)


def test_1_score_oracle(acceptance_log):
    rng = np.random.default_rng(2024)
    elapsed, mismatches = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(0, 201))
        seen, events = set(), []
        for t, r, ts in zip(rng.integers(0, 25, n), rng.integers(0, 30, n), rng.integers(0, 500, n)):
            a = t % 7
            if a == r or (t, r) in seen:
                continue
            seen.add((t, r))
            events.append(RetweetEvent(f"p{t}", f"u{a}", f"u{r}", int(ts)))
        start = time.perf_counter()
        table = score_all(slice_events(EventTable.from_events(events), TimeWindow(0, 500)))
        elapsed += time.perf_counter() - start
        spreader, broker = brute_scores(events)
        mismatches += table.spreader != spreader or table.broker != broker
    ok = mismatches == 0 and elapsed < 5.0
    assert acceptance_log(1, ok, f"{mismatches} mismatching slices of 100, score_all total {elapsed:.2f}s (< 5s)")


def test_2_fixture_f1(acceptance_log, f1_slice):
    table = score_all(f1_slice)
    spreader = {u: table.spreader[u] for u in ("A", "B")}
    broker = {u: table.broker[u] for u in ("B", "C", "D")}
    rate = unique_user_rate(f1_slice, "A")
    ok = spreader == {"A": 4, "B": 2} and broker == {"B": 2, "C": 1, "D": 1} and rate == 0.75
    assert acceptance_log(2, ok, f"spreader {spreader}, broker {broker}, unique user rate A = {rate}")


def test_3_pagerank(acceptance_log):
    rng = np.random.default_rng(3)
    worst_err = worst_sum = 0.0
    names = [f"n{i:02d}" for i in range(30)]
    for _ in range(50):
        raw = {(int(u), int(v)) for u, v in rng.integers(0, 30, (int(rng.integers(10, 150)), 2)) if u != v}
        got, _, _ = pagerank_array(from_edges([(names[u], names[v]) for u, v in raw], "rt", universe=names))
        worst_err = max(worst_err, float(np.abs(got - dense_pagerank(30, raw)).max()))
        worst_sum = max(worst_sum, abs(float(got.sum()) - 1.0))
    cycle, _, _ = pagerank_array(from_edges([("a", "b"), ("b", "a")], "rt"))
    cycle_err = float(np.abs(cycle - 0.5).max())
    ok = worst_err <= 1e-8 and worst_sum <= 1e-9 and cycle_err <= 1e-10
    assert acceptance_log(3, ok, f"max |oracle diff| {worst_err:.1e} (<= 1e-8), max |sum-1| {worst_sum:.1e}, "
                                 f"cycle error {cycle_err:.1e}")


def test_4_leiden(acceptance_log):
    rng = np.random.default_rng(4)
    identical = 0
    for seed in range(20):
        upper = np.triu(rng.random((80, 80)) < 0.06, 1)
        A = sp.csr_matrix((upper | upper.T).astype(float))
        identical += np.array_equal(leiden(A, seed=seed), leiden(A, seed=seed))
    edges = [(f"a{i}", f"a{j}") for i, j in itertools.combinations(range(10), 2)]
    edges += [(f"b{i}", f"b{j}") for i, j in itertools.combinations(range(10), 2)]
    net = from_edges(edges, "follow")
    recovered = 0
    for seed in range(20):
        labels = community_labels(net, seed=seed)
        recovered += sorted(np.bincount(labels).tolist()) == [10, 10] and len(set(labels[:10])) == 1
    ok = identical == 20 and recovered == 20
    assert acceptance_log(4, ok, f"bit-identical reruns {identical}/20, cliques recovered {recovered}/20")


@pytest.fixture(scope="module")
def default_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("default")
    start = time.perf_counter()
    generate(SynthConfig(), root / "data")
    return root, time.perf_counter() - start


def test_5_labeling(acceptance_log, default_data):
    root, _ = default_data
    loaded = load_retweet_events(root / "data" / "events.jsonl")
    study = Study(loaded.events, load_follow_snapshots(root / "data" / "follows").snapshots)
    bad_sizes = subset_fail = curve_fail = 0
    for kind in ("spreader", "broker"):
        sets = study.influencer_sets(kind)
        for month in study.months:
            bad_sizes += len(sets[month]) != math.floor(0.1 * len(study.scores(month)))
        for ref in study.months[:-5]:
            labels = stable_labels(sets, ref, 6)
            subset_fail += not {u for u, y in labels.items() if y} <= sets[ref]
            for h in range(min(4, study.months.index(ref) + 1)):
                try:
                    curve = persistence_curve(sets, ref, h, 6)
                except DataError:
                    continue
                curve_fail += any(b > a for a, b in zip(curve, curve[1:]))
    ok = bad_sizes == subset_fail == curve_fail == 0
    assert acceptance_log(5, ok, f"set-size violations {bad_sizes}, stable-not-subset {subset_fail}, "
                                 f"increasing curves {curve_fail}")


def test_6_classifier_sanity(acceptance_log):
    grid = HyperParamGrid.single(dict(n_trees=100, learning_rate=0.1, max_depth=3, max_leaves=15, min_samples_leaf=5))
    X, y = separable(0)
    model, report = train(matrix(X, y), grid, SplitSpec(seed=0))
    losses = [model.train_loss]
    null_aucs = []
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        Xn = rng.normal(size=(1000, 4))
        yn = rng.permutation(np.r_[np.ones(500), np.zeros(500)].astype(int))
        m, r = train(matrix(Xn, yn), grid, SplitSpec(seed=seed))
        null_aucs.append(r.test_auc)
        losses.append(m.train_loss)
    monotone = all(np.all(np.diff(l) <= 1e-12) for l in losses)
    in_band = sum(0.4 <= a <= 0.6 for a in null_aucs)
    ok = report.test_auc >= 0.99 and in_band == 20 and monotone
    assert acceptance_log(6, ok, f"separable AUC {report.test_auc:.4f} (>= 0.99), shuffled AUC in [0.4, 0.6] "
                                 f"{in_band}/20 (range {min(null_aucs):.3f}-{max(null_aucs):.3f}), "
                                 f"loss non-increasing {monotone}")


def test_7_auc_oracle(acceptance_log):
    rng = np.random.default_rng(7)
    worst = 0.0
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        scores = rng.integers(0, 10, n) / 3.0 if checked % 2 else rng.normal(size=n)
        worst = max(worst, abs(auc_arrays(scores, labels) - pairwise_auc(scores.tolist(), labels.tolist())))
        checked += 1
    assert acceptance_log(7, worst <= 1e-12, f"max |rank AUC - pairwise AUC| {worst:.1e} over 1000 sets")


def _seed_run(seed, workdir):
    generate(SynthConfig(seed=seed), workdir)
    loaded = load_retweet_events(workdir / "events.jsonl")
    study = Study(loaded.events, load_follow_snapshots(workdir / "follows").snapshots)
    cfg = PipelineConfig(seed=seed)
    ref = study.months[3]
    grid, split = cfg.hyper_grid(), cfg.split_spec()
    res = {(k, fs): ex.run_task(build_feature_matrix(study, ref, 4, k, fs, 6), grid, split)
           for k, fs in (("spreader", "all"), ("broker", "all"), ("broker", "broker-score-only"))}
    auc = {key: ex.evaluate_task(r, key[1], seed).auc for key, r in res.items()}
    sp_all = res["spreader", "all"]
    base = ex.baseline_eval(sp_all.matrix, sp_all.report.test_users, seed).auc
    imp = ex.importance(sp_all, "test", 30, derive_seed(seed, "importance/spreader"))
    sweeps = {k: ex.m_sweep(study, ref, k, {"all": res[k, "all"].report.best_params}, split)
              for k in ("spreader", "broker")}
    return {
        "a": auc["spreader", "all"] > base,
        "b": abs(auc["broker", "broker-score-only"] - auc["broker", "all"]) <= 0.05,
        "c": imp.ranked()[0] == "rt_count__t-0",
        "top": imp.ranked()[0],
        "auc": {"spreader_all": auc["spreader", "all"], "spreader_baseline": base,
                "broker_all": auc["broker", "all"], "broker_score_only": auc["broker", "broker-score-only"]},
        "m_auc": {k: [r["auc"] for r in rows] for k, rows in sweeps.items()},
    }


@pytest.mark.slow
def test_8_synthetic_reproduction(acceptance_log, tmp_path):
    runs = [_seed_run(seed, tmp_path / f"s{seed}") for seed in SEEDS]
    a, b, c = (sum(r[k] for r in runs) for k in "abc")
    ranges = {}
    for kind in ("spreader", "broker"):
        curve = np.mean([r["m_auc"][kind] for r in runs], axis=0)
        ranges[kind] = float(curve.max() - curve.min())
    per_seed = sum(all(max(v) - min(v) < 0.08 for v in r["m_auc"].values()) for r in runs)
    d = all(v < 0.08 for v in ranges.values())
    ok = a >= 16 and b >= 16 and c >= 16 and d
    tops = sorted({r["top"] for r in runs if not r["c"]})
    assert acceptance_log(8, ok, f"(a) {a}/20, (b) {b}/20, (c) {c}/20 [other top features: {tops}], "
                                 f"(d) mean m-sweep range spreader {ranges['spreader']:.3f} broker "
                                 f"{ranges['broker']:.3f} (< 0.08; per-seed both < 0.08 in {per_seed}/20)")


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "stableinf.cli", *args], capture_output=True, text=True)


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """Time synth plus the full pipeline in a child process, then run the pipeline once more."""
    root = tmp_path_factory.mktemp("e2e")
    script = (
        "import resource, sys, time\n"
        "from stableinf.cli import main\n"
        "t = time.perf_counter()\n"
        f"assert main(['synth', '--data-dir', r'{root / 'data'}']) == 0\n"
        f"assert main(['run', '--data-dir', r'{root / 'data'}', '--out-dir', r'{root / 'a'}', '--plot-data']) == 0\n"
        "print('ELAPSED', time.perf_counter() - t, 'RSS_KB', resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)\n"
    )
    first = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True)
    second = _cli("run", "--data-dir", str(root / "data"), "--out-dir", str(root / "b"), "--plot-data")
    return root, first, second


def test_9_runtime_and_memory(acceptance_log, pipeline_runs):
    root, first, _ = pipeline_runs
    assert first.returncode == 0, first.stderr
    fields = first.stdout.split("ELAPSED")[-1].split()
    elapsed, rss_mb = float(fields[0]), int(fields[2]) / 1024
    ok = elapsed < 120 and rss_mb < 2048
    assert acceptance_log(9, ok, f"synth + full pipeline {elapsed:.1f}s (< 120s), peak RSS {rss_mb:.0f} MB "
                                 f"(< 2048 MB), measured on this machine's single core")


def test_10_determinism(acceptance_log, pipeline_runs):
    root, first, second = pipeline_runs
    assert first.returncode == 0 and second.returncode == 0, second.stderr
    a = {p.relative_to(root / "a"): p.read_bytes() for p in (root / "a").rglob("*") if p.is_file()}
    b = {p.relative_to(root / "b"): p.read_bytes() for p in (root / "b").rglob("*") if p.is_file()}
    reports = [p for p in a if "reports" in p.parts]
    differing = sorted(str(p) for p in set(a) | set(b) if a.get(p) != b.get(p))
    ok = not differing and len(reports) > 0
    assert acceptance_log(10, ok, f"{len(a)} artifacts ({len(reports)} reports) compared, "
                                  f"{len(differing)} differ {differing[:3]}")
