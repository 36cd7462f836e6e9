"""Monthly top-fraction influencer sets, stable/temporal labels, persistence curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

from .errors import DataError
from .ingest import MonthId
from .scoring import ScoreTable

TOP_FRACTION = 0.10


class StabilityLabel(str, Enum):
    STABLE = "stable"
    TEMPORAL = "temporal"
    OTHER = "other"


@dataclass
class InfluencerSets:
    kind: str
    sets: dict[MonthId, frozenset[str]]

    def __getitem__(self, month: MonthId) -> frozenset[str]:
        try:
            return self.sets[month]
        except KeyError:
            raise DataError(f"no {self.kind} influencer set for month {month}") from None

    def months(self) -> list[MonthId]:
        return sorted(self.sets)


def rank_users(scores: dict[str, float]) -> list[str]:
    """Users by score descending, ties broken by user id ascending."""
    return sorted(scores, key=lambda u: (-scores[u], u))


def top_influencers(table: ScoreTable, kind: str, fraction: float = TOP_FRACTION) -> frozenset[str]:
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    scores = table.column(kind)
    # guard against 0.1 * 30 = 3.0000000000000004 style float error
    k = math.floor(fraction * len(scores) + 1e-9)
    return frozenset(rank_users(scores)[:k])


def influencer_sets(tables: dict[MonthId, ScoreTable], kind: str, fraction: float = TOP_FRACTION) -> InfluencerSets:
    return InfluencerSets(kind, {m: top_influencers(t, kind, fraction) for m, t in tables.items()})


def stability_label(sets: InfluencerSets, user: str, ref: MonthId, m: int) -> StabilityLabel:
    if m < 1:
        raise ValueError("m must be at least 1")
    months = [ref.shift(i) for i in range(m)]
    for month in months:
        if month not in sets.sets:
            raise DataError(f"labeling window needs month {month}, which has no influencer set")
    if user not in sets.sets[ref]:
        return StabilityLabel.OTHER
    if all(user in sets.sets[month] for month in months):
        return StabilityLabel.STABLE
    return StabilityLabel.TEMPORAL


def stable_labels(sets: InfluencerSets, ref: MonthId, m: int) -> dict[str, int]:
    """1 for stable, 0 for temporal, over the reference month's influencers."""
    return {
        u: int(stability_label(sets, u, ref, m) is StabilityLabel.STABLE)
        for u in sorted(sets[ref])
    }


def persistence_curve(sets: InfluencerSets, ref: MonthId, prior_h: int = 0, horizon: int = 6) -> list[float]:
    """Share of the cohort still in the influencer set after k consecutive months, k = 1..horizon.

    The cohort is everyone in the set for the ``prior_h`` months before ``ref``
    and in ``ref`` itself.
    """
    if prior_h < 0 or horizon < 1:
        raise ValueError("prior_h must be >= 0 and horizon >= 1")
    cohort = set(sets[ref])
    for i in range(1, prior_h + 1):
        cohort &= sets[ref.shift(-i)]
    if not cohort:
        raise DataError(f"empty {sets.kind} cohort at {ref} with {prior_h} prior months")
    curve = []
    alive = set(cohort)
    for k in range(horizon):
        alive &= sets[ref.shift(k)]
        curve.append(len(alive) / len(cohort))
    return curve


def write_labels_csv(path, rows) -> None:
    """rows: iterable of (user, kind, ref_month, m, label)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "kind", "ref_month", "m", "label"])
        for row in rows:
            w.writerow(row)


def write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "proportion"])
        for k, p in enumerate(curve, 1):
            w.writerow([k, repr(p)])
