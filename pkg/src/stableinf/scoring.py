"""Spreader and broker scores, change rate, and unique user rate.

The per-user functions walk the cascade index directly and are the readable
reference. ``score_all`` computes every user at once from the sorted event
arrays and is what the pipeline uses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import EventSlice, TimeWindow

SCORE_KINDS = ("spreader", "broker")


@dataclass
class ScoreTable:
    window: TimeWindow
    spreader: dict[str, int]
    broker: dict[str, int]

    def users(self) -> list[str]:
        return sorted(self.spreader)

    def column(self, kind: str) -> dict[str, int]:
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown influence kind {kind!r}")
        return self.spreader if kind == "spreader" else self.broker

    def __len__(self) -> int:
        return len(self.spreader)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "window_start", "window_kind", "spreader", "broker"])
            for u in self.users():
                w.writerow([u, self.window.start, self.window.kind.value, self.spreader[u], self.broker[u]])

    @classmethod
    def from_csv(cls, path, window: TimeWindow) -> "ScoreTable":
        spreader, broker = {}, {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                spreader[row["user"]] = int(row["spreader"])
                broker[row["user"]] = int(row["broker"])
        return cls(window, spreader, broker)


def spreader_score(sl: EventSlice, u: str) -> int:
    """Retweets received in the window by all of ``u``'s tweets."""
    index = sl.cascade_index
    return sum(len(index[p]) for p in sl.tweets_by_author.get(u, ()))


def broker_score(sl: EventSlice, u: str) -> int:
    """Retweets that came strictly after ``u``'s own retweet of the same tweet."""
    total = 0
    for cascade in sl.cascade_index.values():
        mine = [ts for r, ts in cascade if r == u]
        if mine:
            t0 = mine[0]
            total += sum(1 for _, ts in cascade if ts > t0)
    return total


def change_rate(score_first: int, score_second: int) -> float:
    """Log ratio of second-half to first-half score, add-one smoothed."""
    return math.log((score_second + 1) / (score_first + 1))


def unique_user_rate(sl: EventSlice, u: str) -> float:
    total = spreader_score(sl, u)
    if total == 0:
        return 0.0
    index = sl.cascade_index
    fans = {r for p in sl.tweets_by_author.get(u, ()) for r, _ in index[p]}
    return len(fans) / total


def _later_counts(tweet: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """For events sorted by (tweet, ts): how many events of the same tweet are strictly later."""
    n = len(ts)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.arange(n)
    new_tweet = np.r_[True, tweet[1:] != tweet[:-1]]
    new_group = new_tweet | np.r_[True, ts[1:] != ts[:-1]]
    # last index of each event's tweet run and of its (tweet, ts) run
    tweet_last = np.r_[idx[new_tweet][1:] - 1, n - 1]
    group_last = np.r_[idx[new_group][1:] - 1, n - 1]
    t_id = np.cumsum(new_tweet) - 1
    g_id = np.cumsum(new_group) - 1
    return tweet_last[t_id] - group_last[g_id]


def score_arrays(sl: EventSlice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spreader and broker score per interned user id, plus the active-user mask."""
    n_users = len(sl.table.users)
    spreader = np.bincount(sl.author, minlength=n_users)
    later = _later_counts(sl.tweet, sl.ts)
    broker = np.bincount(sl.retweeter, weights=later, minlength=n_users).astype(np.int64)
    active = np.zeros(n_users, dtype=bool)
    active[sl.author] = True
    active[sl.retweeter] = True
    return spreader, broker, active


def unique_retweeter_counts(sl: EventSlice) -> np.ndarray:
    """Distinct retweeters per author, indexed by interned user id."""
    n_users = len(sl.table.users)
    if not len(sl):
        return np.zeros(n_users, dtype=np.int64)
    pairs = np.unique(sl.author * n_users + sl.retweeter)
    return np.bincount(pairs // n_users, minlength=n_users)


def unique_user_rates(sl: EventSlice) -> dict[str, float]:
    spreader, _, active = score_arrays(sl)
    uniq = unique_retweeter_counts(sl)
    users = sl.table.users
    out = {}
    for i in np.flatnonzero(active).tolist():
        out[users[i]] = uniq[i] / spreader[i] if spreader[i] else 0.0
    return out


def score_all(sl: EventSlice) -> ScoreTable:
    spreader, broker, active = score_arrays(sl)
    users = sl.table.users
    ids = np.flatnonzero(active).tolist()
    return ScoreTable(
        sl.window,
        {users[i]: int(spreader[i]) for i in ids},
        {users[i]: int(broker[i]) for i in ids},
    )


def write_score_tables(tables, path) -> None:
    """Several windows into one CSV, one block of rows per window."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "window_start", "window_kind", "spreader", "broker"])
        for table in tables:
            for u in table.users():
                w.writerow([u, table.window.start, table.window.kind.value, table.spreader[u], table.broker[u]])
