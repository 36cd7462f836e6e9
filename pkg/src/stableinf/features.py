"""Per-user feature matrices over an n-month lookback ending at a reference month."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .ingest import MonthId
from .labeling import stable_labels
from .scoring import change_rate

SCHEMA_VERSION = 1
CATEGORIES = ("Follow", "RT", "BR")

# (column stem, category, source) in the order features are laid out
MONTHLY_FEATURES = (
    ("follower_count", "Follow", ("follow", "in_degree")),
    ("pagerank_follow", "Follow", ("follow", "pagerank")),
    ("community_size_follow", "Follow", ("follow", "community_size")),
    ("rt_count", "RT", ("values", "rt_count")),
    ("rter_count", "RT", ("rt", "in_degree")),
    ("pagerank_rt", "RT", ("rt", "pagerank")),
    ("community_size_rt", "RT", ("rt", "community_size")),
    ("unique_user_rate", "RT", ("values", "unique_user_rate")),
    ("broker_score", "BR", ("values", "broker_score")),
)
SCORE_FEATURE = {"spreader": "rt_count", "broker": "broker_score"}
CHANGE_RATE = {"spreader": ("spreader_change_rate", "RT"), "broker": ("broker_change_rate", "BR")}
KIND_CATEGORY = {"spreader": "RT", "broker": "BR"}

# named feature sets: (categories, score_only)
FEATURE_SETS = {
    "all": (CATEGORIES, False),
    "follow": (("Follow",), False),
    "rt": (("RT",), False),
    "br": (("BR",), False),
    "score-only": (None, True),
    "rt-counts-only": (("RT",), True),
    "broker-score-only": (("BR",), True),
}


def column_name(stem: str, offset: int) -> str:
    return f"{stem}__t-{offset}"


@dataclass
class FeatureMatrix:
    users: list[str]
    columns: list[str]
    X: np.ndarray
    y: np.ndarray | None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.users)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def labels(self) -> dict[str, int]:
        return dict(zip(self.users, self.y.tolist()))

    def subset_rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return FeatureMatrix(
            [self.users[i] for i in idx], list(self.columns), self.X[idx],
            None if self.y is None else self.y[idx], dict(self.meta),
        )

    def select_columns(self, names) -> "FeatureMatrix":
        idx = [self.columns.index(c) for c in names]
        return FeatureMatrix(list(self.users), list(names), self.X[:, idx], self.y, dict(self.meta))

    def to_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "label", *self.columns])
            for i, u in enumerate(self.users):
                label = "" if self.y is None else int(self.y[i])
                w.writerow([u, label, *(repr(float(v)) for v in self.X[i])])
        meta = {"schema_version": SCHEMA_VERSION, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        path = Path(path)
        if not path.exists():
            raise DataError(f"feature matrix not found: {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["user", "label"]:
                raise DataError(f"{path}: header must start with user,label")
            users, labels, rows = [], [], []
            for row in reader:
                users.append(row[0])
                labels.append(row[1])
                rows.append([float(v) for v in row[2:]])
        y = None if any(lab == "" for lab in labels) else np.array([int(v) for v in labels])
        X = np.array(rows, dtype=float).reshape(len(users), len(header) - 2)
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        meta.pop("schema_version", None)
        return cls(users, header[2:], X, y, meta)


def resolve_feature_set(name_or_categories, kind: str) -> tuple[tuple[str, ...], bool]:
    """Map a feature-set name (or an explicit category list) to (categories, score_only)."""
    if isinstance(name_or_categories, str):
        if name_or_categories not in FEATURE_SETS:
            raise ConfigError(
                f"unknown feature set {name_or_categories!r}; choose from {sorted(FEATURE_SETS)}"
            )
        cats, score_only = FEATURE_SETS[name_or_categories]
        if score_only:
            own = (KIND_CATEGORY[kind],)
            if cats is not None and tuple(cats) != own:
                raise ConfigError(f"{name_or_categories} does not apply to the {kind} task")
            cats = own
        return tuple(cats), score_only
    cats = tuple(c for c in CATEGORIES if c in set(name_or_categories))
    unknown = set(name_or_categories) - set(CATEGORIES)
    if unknown or not cats:
        raise ConfigError(f"bad category filter {sorted(name_or_categories)}")
    return cats, False


def _lookup(study, month: MonthId, source) -> dict[str, float]:
    what, key = source
    if what == "values":
        return study.user_values(month, key)
    return study.node_metrics(month, what)[key]


def _check_months(study, ref: MonthId, n: int) -> list[MonthId]:
    if n < 1:
        raise ConfigError("lookback n must be at least 1")
    months = [ref.shift(-k) for k in range(n)]
    for month in months:
        study.require_month(month, f"features for reference month {ref}")
    return months


def _rows_and_labels(study, ref: MonthId, kind: str, m: int | None):
    users = sorted(study.influencer_set(ref, kind))
    if not users:
        raise DataError(f"no {kind} influencers in {ref}")
    if m is None:
        return users, None
    for k in range(m):
        study.require_month(ref.shift(k), f"{m}-month labels for {ref}")
    labels = stable_labels(study.influencer_sets(kind, [ref.shift(k) for k in range(m)]), ref, m)
    return users, np.array([labels[u] for u in users], dtype=np.int64)


def build_feature_matrix(
    study,
    ref: MonthId,
    n: int = 4,
    kind: str = "spreader",
    categories="all",
    m: int | None = 6,
    both_change_rates: bool = False,
) -> FeatureMatrix:
    """Rows are the reference month's influencers of ``kind``; labels mark stable (1) vs temporal (0).

    ``categories`` is a feature-set name (see ``FEATURE_SETS``) or an
    iterable of category tags.  Users missing from a month read as 0.
    """
    if kind not in SCORE_FEATURE:
        raise ConfigError(f"unknown influencer kind {kind!r}")
    cats, score_only = resolve_feature_set(categories, kind)
    months = _check_months(study, ref, n)
    users, y = _rows_and_labels(study, ref, kind, m)

    columns, blocks, tags = [], [], []

    def add(stem, cat, values_by_offset):
        for off, values in enumerate(values_by_offset):
            columns.append(column_name(stem, off))
            tags.append(cat)
            blocks.append([values.get(u, 0.0) for u in users])

    rate_kinds = [k for k in ("spreader", "broker") if both_change_rates or k == kind]
    for stem, cat, source in MONTHLY_FEATURES:
        if score_only and stem != SCORE_FEATURE[kind]:
            continue
        if cat in cats:
            add(stem, cat, [_lookup(study, mo, source) for mo in months])
        if score_only:
            continue
        # change rates sit with their category, after unique_user_rate / broker_score
        if stem in ("unique_user_rate", "broker_score"):
            for rk in rate_kinds:
                rstem, rcat = CHANGE_RATE[rk]
                if rcat == cat and cat in cats:
                    first, second = study.half_month_scores(ref, rk)
                    columns.append(column_name(rstem, 0))
                    tags.append(rcat)
                    blocks.append([change_rate(first.get(u, 0), second.get(u, 0)) for u in users])

    X = np.array(blocks, dtype=float).T.reshape(len(users), len(columns))
    meta = {
        "ref": str(ref), "n": n, "m": m, "kind": kind,
        "categories": list(cats), "score_only": score_only,
        "both_change_rates": both_change_rates, "mode": "per-month",
        "column_categories": tags,
    }
    return FeatureMatrix(users, columns, X, y, meta)


def aggregate_feature(study, ref: MonthId, n: int = 4, kind: str = "spreader", m: int | None = 6) -> FeatureMatrix:
    """One column: the kind's influence score summed over the n months ending at ``ref``."""
    if kind not in SCORE_FEATURE:
        raise ConfigError(f"unknown influencer kind {kind!r}")
    months = _check_months(study, ref, n)
    users, y = _rows_and_labels(study, ref, kind, m)
    stem = SCORE_FEATURE[kind]
    per_month = [study.user_values(mo, stem) for mo in months]
    X = np.array([[sum(v.get(u, 0) for v in per_month)] for u in users], dtype=float).reshape(len(users), 1)
    meta = {
        "ref": str(ref), "n": n, "m": m, "kind": kind,
        "categories": [KIND_CATEGORY[kind]], "score_only": True,
        "both_change_rates": False, "mode": "aggregated",
        "column_categories": [KIND_CATEGORY[kind]],
    }
    return FeatureMatrix(users, [f"{stem}__sum-{n}"], X, y, meta)
