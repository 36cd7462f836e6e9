"""Lazy per-month cache of slices, score tables, networks and node metrics."""

from __future__ import annotations

import numpy as np

from . import graph
from .errors import DataError
from .ingest import EventSlice, EventTable, FollowSnapshot, MonthId, WindowKind, month_of, month_range
from .labeling import TOP_FRACTION, InfluencerSets, top_influencers
from .scoring import ScoreTable, score_all, score_arrays, unique_retweeter_counts


class Study:
    """Everything the feature builder needs, computed on first use.

    ``months`` defaults to the calendar months spanned by the retweet events.
    """

    def __init__(
        self,
        events: EventTable,
        follows: dict[MonthId, FollowSnapshot] | None = None,
        months: list[MonthId] | None = None,
        fraction: float = TOP_FRACTION,
        community_seed: int = 0,
        damping: float = graph.DAMPING,
        pagerank_tol: float = graph.PAGERANK_TOL,
        pagerank_max_iter: int = graph.PAGERANK_MAX_ITER,
    ):
        self.events = events
        self.follows = dict(follows or {})
        if months is None:
            span = events.span()
            months = [] if span is None else month_range(month_of(span[0]), month_of(span[1]))
        self.months = sorted(months)
        self.fraction = fraction
        self.community_seed = community_seed
        self.pagerank_params = dict(damping=damping, tol=pagerank_tol, max_iter=pagerank_max_iter)
        self._cache: dict = {}

    def require_month(self, month: MonthId, what: str = "data") -> None:
        if month not in self.months:
            first = self.months[0] if self.months else None
            last = self.months[-1] if self.months else None
            raise DataError(f"{what} needs month {month}, outside the data span {first}..{last}")

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def slice(self, month: MonthId, kind: WindowKind | str = WindowKind.FULL) -> EventSlice:
        self.require_month(month)
        kind = WindowKind(kind)
        return self._memo(("slice", month, kind), lambda: EventSlice(self.events, month.window(kind)))

    def score_arrays(self, month: MonthId, kind: WindowKind | str = WindowKind.FULL):
        kind = WindowKind(kind)
        return self._memo(("score_arrays", month, kind), lambda: score_arrays(self.slice(month, kind)))

    def scores(self, month: MonthId, kind: WindowKind | str = WindowKind.FULL) -> ScoreTable:
        kind = WindowKind(kind)
        return self._memo(("scores", month, kind), lambda: score_all(self.slice(month, kind)))

    def unique_counts(self, month: MonthId) -> np.ndarray:
        return self._memo(("uniq", month), lambda: unique_retweeter_counts(self.slice(month)))

    def influencer_set(self, month: MonthId, kind: str) -> frozenset[str]:
        return self._memo(
            ("top", month, kind), lambda: top_influencers(self.scores(month), kind, self.fraction)
        )

    def influencer_sets(self, kind: str, months=None) -> InfluencerSets:
        months = self.months if months is None else months
        return InfluencerSets(kind, {m: self.influencer_set(m, kind) for m in months})

    def network(self, month: MonthId, flavor: str) -> graph.Network:
        def build():
            if flavor == "rt":
                return graph.build_rt_network(self.slice(month), month)
            if flavor == "follow":
                if month not in self.follows:
                    raise DataError(f"no follow snapshot for month {month}")
                return graph.build_follow_network(self.follows[month])
            raise ValueError(f"unknown network flavor {flavor!r}")

        self.require_month(month)
        return self._memo(("net", month, flavor), build)

    def node_metrics(self, month: MonthId, flavor: str) -> dict[str, dict[str, float]]:
        """in-degree, PageRank and community size keyed by user id."""

        def build():
            net = self.network(month, flavor)
            pr, _, _ = graph.pagerank_array(net, **self.pagerank_params)
            labels = graph.community_labels(net, seed=self.community_seed)
            sizes = np.bincount(labels)[labels] if len(labels) else np.zeros(0, np.int64)
            deg = graph.in_degree_array(net)
            nodes = net.nodes
            return {
                "in_degree": dict(zip(nodes, deg.tolist())),
                "pagerank": dict(zip(nodes, pr.tolist())),
                "community_size": dict(zip(nodes, sizes.tolist())),
            }

        return self._memo(("metrics", month, flavor), build)

    def user_values(self, month: MonthId, what: str) -> dict[str, float]:
        """Per-user score-derived values for a full month: rt_count, broker_score, unique_user_rate."""

        def build():
            spreader, broker, active = self.score_arrays(month)
            users = self.events.users
            ids = np.flatnonzero(active)
            if what == "rt_count":
                vals = spreader[ids]
            elif what == "broker_score":
                vals = broker[ids]
            elif what == "unique_user_rate":
                uniq = self.unique_counts(month)[ids]
                sp_ = spreader[ids]
                vals = np.divide(uniq, sp_, out=np.zeros(len(ids)), where=sp_ > 0)
            else:
                raise ValueError(what)
            return dict(zip(users[ids].tolist(), vals.tolist()))

        return self._memo(("values", month, what), build)

    def half_month_scores(self, month: MonthId, kind: str) -> tuple[dict[str, int], dict[str, int]]:
        first = self.scores(month, WindowKind.FIRST_HALF).column(kind)
        second = self.scores(month, WindowKind.SECOND_HALF).column(kind)
        return first, second
