"""Stage runners over a versioned artifact directory ``<out>/<run-id>/``.

A stage never runs its upstream stages; when an input artifact is missing
it raises ``DataError`` naming the file and the command that makes it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path

from . import experiments as ex
from . import graph
from .config import SCHEMA_VERSION, PipelineConfig, derive_seed
from .errors import ConfigError, DataError
from .features import FeatureMatrix, build_feature_matrix
from .ingest import MonthId, WindowKind, load_follow_snapshots, load_retweet_events
from .labeling import stable_labels, write_curve_csv, write_labels_csv
from .model import GBDTModel, TrainingReport, check_columns, train
from .study import Study

logger = logging.getLogger(__name__)

SUBDIRS = ("scores", "networks", "features", "models", "reports")
SWEEP_SETS = ("all", "score-only")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = cfg.run_dir()
        self._study: Study | None = None
        self.written: list[Path] = []

    # ---------------------------------------------------------------- plumbing

    def study(self) -> Study:
        if self._study is None:
            cfg = self.cfg
            loaded = load_retweet_events(cfg.events_path())
            follows = load_follow_snapshots(cfg.follows_path())
            for msg in follows.warnings:
                logger.warning(msg)
            self._study = Study(loaded.events, follows.snapshots, fraction=cfg.fraction,
                                community_seed=derive_seed(cfg.seed, "community"))
        return self._study

    def train_ref(self) -> MonthId:
        if self.cfg.train_ref:
            return MonthId.parse(self.cfg.train_ref)
        months = self.study().months
        need = max(self.cfg.n, max(self.cfg.n_values))
        if len(months) < need:
            raise DataError(f"data spans {len(months)} months; the {need}-month lookback needs more")
        return months[need - 1]

    def refs(self) -> list[MonthId]:
        refs = [self.train_ref()]
        if self.cfg.eval_ref:
            refs.append(MonthId.parse(self.cfg.eval_ref))
        return refs

    def path(self, sub: str, name: str) -> Path:
        return self.root / sub / name

    def require(self, path: Path, command: str) -> Path:
        if not path.exists():
            raise DataError(f"missing artifact {path}; run `stableinf {command}` first")
        return path

    def _out(self, sub: str, name: str) -> Path:
        p = self.path(sub, name)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def tag(self, kind: str, fs: str, ref: MonthId, n: int | None = None, m: int | None = None) -> str:
        n = self.cfg.n if n is None else n
        m = self.cfg.m if m is None else m
        return f"{kind}__{fs}__{ref}__n{n}__m{m}"

    def update_manifest(self) -> Path:
        path = self.root / "manifest.json"
        self.root.mkdir(parents=True, exist_ok=True)
        artifacts = {}
        for sub in SUBDIRS:
            d = self.root / sub
            if not d.is_dir():
                continue
            for f in sorted(d.iterdir()):
                artifacts[f"{sub}/{f.name}"] = {"schema_version": SCHEMA_VERSION,
                                                 "sha256": hashlib.sha256(f.read_bytes()).hexdigest()}
        config = self.cfg.to_dict()
        # where the run lives and how many threads built it do not change its content
        config.pop("workers")
        config.pop("out_dir")
        write_json(path, {"schema_version": SCHEMA_VERSION, "run_id": self.cfg.run_id(),
                          "config": config, "artifacts": artifacts})
        return path

    # ---------------------------------------------------------------- stages

    def score(self) -> dict:
        """Monthly score tables for every month; half-month tables, networks and metrics around the refs."""
        st = self.study()
        for month in st.months:
            st.scores(month).to_csv(self._out("scores", f"scores_{month}.csv"))
        lookback = max(self.cfg.n, max(self.cfg.n_values))
        net_months = set()
        for ref in self.refs():
            st.require_month(ref, "scoring the reference month")
            for kind in (WindowKind.FIRST_HALF, WindowKind.SECOND_HALF):
                st.scores(ref, kind).to_csv(self._out("scores", f"scores_{ref}_{kind.value}.csv"))
            net_months.update(ref.shift(-k) for k in range(lookback) if ref.shift(-k) in st.months)
        for month in sorted(net_months):
            for flavor in ("follow", "rt"):
                if flavor == "follow" and month not in st.follows:
                    logger.warning("no follow snapshot for %s; follow metrics skipped", month)
                    continue
                st.network(month, flavor).to_csv(self._out("networks", f"{flavor}_{month}.csv"))
                metrics = st.node_metrics(month, flavor)
                rows = [(u, name, repr(float(v)), str(month))
                        for name in ("in_degree", "pagerank", "community_size")
                        for u, v in sorted(metrics[name].items())]
                graph.write_metrics_csv(self._out("networks", f"metrics_{flavor}_{month}.csv"), rows)
        return {"months": len(st.months), "network_months": len(net_months)}

    def _require_scores(self, months) -> None:
        for month in months:
            self.require(self.path("scores", f"scores_{month}.csv"), "score")

    def label(self) -> dict:
        st = self.study()
        self._require_scores(st.months)
        out = {}
        for kind in self.cfg.kinds:
            for ref in self.refs():
                months = [ref.shift(k) for k in range(self.cfg.m)]
                for month in months:
                    st.require_month(month, f"{self.cfg.m}-month labels for {ref}")
                labels = stable_labels(st.influencer_sets(kind, months), ref, self.cfg.m)
                write_labels_csv(self._out("reports", f"labels__{kind}__{ref}__m{self.cfg.m}.csv"),
                                 [(u, kind, str(ref), self.cfg.m, lab) for u, lab in sorted(labels.items())])
                out[f"{kind}/{ref}"] = {"influencers": len(labels), "stable": sum(labels.values())}
            ref = self.train_ref()
            horizon = min(6, len([mo for mo in st.months if mo >= ref]))
            recs = ex.persistence_report(st, kind, ref, horizon=horizon)
            write_json(self._out("reports", f"persistence__{kind}.json"),
                       {"schema_version": SCHEMA_VERSION, "curves": recs})
            if recs:
                write_curve_csv(self._out("reports", f"persistence__{kind}.csv"), recs[0]["curve"])
        return out

    def features(self) -> dict:
        st = self.study()
        out = {}
        for ref in self.refs():
            self._require_scores([ref.shift(-k) for k in range(self.cfg.n)])
            for kind in self.cfg.kinds:
                self.require(self.path("reports", f"labels__{kind}__{ref}__m{self.cfg.m}.csv"), "label")
                for fs in self.cfg.feature_sets:
                    mat = build_feature_matrix(st, ref, self.cfg.n, kind, fs, self.cfg.m, self.cfg.both_change_rates)
                    mat.to_csv(self._out("features", self.tag(kind, fs, ref) + ".csv"))
                    self.written.append(self.path("features", self.tag(kind, fs, ref) + ".json"))
                    out[self.tag(kind, fs, ref)] = list(mat.X.shape)
        return out

    def _matrix(self, kind: str, fs: str, ref: MonthId) -> FeatureMatrix:
        return FeatureMatrix.from_csv(self.require(self.path("features", self.tag(kind, fs, ref) + ".csv"), "features"))

    def train(self) -> dict:
        ref = self.train_ref()
        out = {}
        for kind in self.cfg.kinds:
            for fs in self.cfg.feature_sets:
                mat = self._matrix(kind, fs, ref)
                model, report = train(mat, self.cfg.hyper_grid(), self.cfg.split_spec(), workers=self.cfg.workers)
                tag = self.tag(kind, fs, ref)
                model.save(self._out("models", tag + ".json"))
                write_json(self._out("reports", f"train__{tag}.json"), report.to_dict())
                out[tag] = {"cv_best": report.best_params, "test_auc": report.test_auc}
        return out

    def _trained(self, kind: str, fs: str):
        ref = self.train_ref()
        tag = self.tag(kind, fs, ref)
        mat = self._matrix(kind, fs, ref)
        model = GBDTModel.load(self.require(self.path("models", tag + ".json"), "train"))
        rep = read_json(self.require(self.path("reports", f"train__{tag}.json"), "train"))
        rep.pop("schema_version", None)
        check_columns(model, mat)
        return ex.TaskResult(mat, model, TrainingReport(**rep))

    def evaluate(self) -> dict:
        ref = self.train_ref()
        out = {}
        for kind in self.cfg.kinds:
            for fs in self.cfg.feature_sets:
                res = self._trained(kind, fs)
                rep = ex.evaluate_task(res, fs, self.cfg.seed).to_dict()
                if self.cfg.eval_ref:
                    eref = MonthId.parse(self.cfg.eval_ref)
                    emat = self._matrix(kind, fs, eref)
                    cross = ex.cross_cohort_eval(res.model, emat, fs, self.cfg.seed)
                    rep["cross_cohort"] = {"ref": str(eref), **cross.to_dict()}
                rep["schema_version"] = SCHEMA_VERSION
                tag = self.tag(kind, fs, ref)
                write_json(self._out("reports", f"eval__{tag}.json"), rep)
                out[tag] = rep["auc"]
            # the baseline needs only the reference-month score and the held-out users
            res = self._trained(kind, self.cfg.feature_sets[0])
            base = ex.baseline_eval(res.matrix, res.report.test_users, self.cfg.seed).to_dict()
            base["schema_version"] = SCHEMA_VERSION
            write_json(self._out("reports", f"baseline__{kind}__{ref}__n{self.cfg.n}__m{self.cfg.m}.json"), base)
            out[f"{kind}__baseline"] = base["auc"]
        return out

    def importance(self, feature_set: str = "all") -> dict:
        out = {}
        for kind in self.cfg.kinds:
            res = self._trained(kind, feature_set)
            seed = derive_seed(self.cfg.seed, f"importance/{kind}")
            rep = ex.importance(res, self.cfg.importance_rows, self.cfg.importance_repeats, seed)
            d = {"schema_version": SCHEMA_VERSION, "rows": self.cfg.importance_rows, **rep.to_dict()}
            tag = self.tag(kind, feature_set, self.train_ref())
            write_json(self._out("reports", f"importance__{tag}.json"), d)
            out[kind] = rep.ranked()[:3]
        return out

    def sweep_sets(self) -> list[str]:
        return [fs for fs in SWEEP_SETS if fs in self.cfg.feature_sets]

    def _tuned(self, kind: str) -> dict[str, dict]:
        ref = self.train_ref()
        params = {}
        if not self.sweep_sets():
            raise ConfigError(f"sweeps need one of {list(SWEEP_SETS)} among the feature sets")
        for fs in self.sweep_sets():
            path = self.require(self.path("reports", f"train__{self.tag(kind, fs, ref)}.json"), "train")
            params[fs] = read_json(path)["best_params"]
        return params

    def sweep(self, what: str = "both") -> dict:
        st = self.study()
        ref = self.train_ref()
        split = self.cfg.split_spec()
        out = {}
        for kind in self.cfg.kinds:
            params = self._tuned(kind)
            if what in ("m", "both"):
                rows = ex.m_sweep(st, ref, kind, params, split, self.cfg.n, self.cfg.m_values, self.cfg.m)
                self._sweep_files(f"m_sweep__{kind}", rows, ["kind", "feature_set", "m", "auc", "n_positive_train"])
                out[f"m/{kind}"] = _spread(rows, "feature_set")
            if what in ("n", "both"):
                rows = ex.n_sweep(st, ref, kind, params, split, self.cfg.m, self.cfg.n_values)
                self._sweep_files(f"n_sweep__{kind}", rows, ["kind", "variant", "n", "auc", "n_columns"])
                out[f"n/{kind}"] = _spread(rows, "variant")
        return out

    def _sweep_files(self, stem: str, rows: list[dict], header: list[str]) -> None:
        write_json(self._out("reports", stem + ".json"), {"schema_version": SCHEMA_VERSION, "rows": rows})
        _write_rows(self._out("reports", stem + ".csv"), header,
                    [[repr(r[h]) if isinstance(r[h], float) else r[h] for h in header] for r in rows])

    def plot_data(self) -> Path:
        """(figure, x, y, series) rows gathered from whatever reports exist."""
        rep = self.root / "reports"
        rows = []
        for kind in self.cfg.kinds:
            p = rep / f"persistence__{kind}.json"
            if p.exists():
                rows += ex.plot_triples(persistence=read_json(p)["curves"])
            p = rep / f"importance__{self.tag(kind, 'all', self.train_ref())}.json"
            if p.exists():
                imp = read_json(p)
                rows += [("importance", name, imp["importances"][name]["mean"], kind) for name in imp["ranking"]]
            for stem, key in (("m_sweep", "m_rows"), ("n_sweep", "n_rows")):
                p = rep / f"{stem}__{kind}.json"
                if p.exists():
                    rows += ex.plot_triples(**{key: read_json(p)["rows"]})
        out = self._out("reports", "plot_data.csv")
        _write_rows(out, ["figure", "x", "y", "series"],
                    [[f, x, repr(float(y)), s] for f, x, y, s in rows])
        return out

    def run_all(self) -> dict:
        summary = {
            "score": self.score(), "label": self.label(), "features": self.features(),
            "train": self.train(), "eval": self.evaluate(),
        }
        if "all" in self.cfg.feature_sets:
            summary["importance"] = self.importance()
        if self.sweep_sets():
            summary["sweep"] = self.sweep()
        if self.cfg.plot_data:
            self.plot_data()
        return summary


def _spread(rows: list[dict], key: str) -> dict:
    out = {}
    for r in rows:
        out.setdefault(r[key], []).append(r["auc"])
    return {k: {"min": min(v), "max": max(v)} for k, v in out.items()}
