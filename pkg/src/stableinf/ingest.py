"""Loading retweet logs and follow snapshots, and slicing events into time windows."""

from __future__ import annotations

import calendar
import csv
import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ("tweet_id", "author", "retweeter", "ts_ms")
FOLLOW_COLUMNS = ("follower", "followee")
_FOLLOW_FILE = re.compile(r"^follows_(\d{4})-(\d{2})\.csv$")
_HALF_MONTH_DAY = 15


@dataclass(frozen=True, order=True)
class MonthId:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "MonthId":
        m = re.fullmatch(r"(\d{4})-(\d{1,2})", text.strip())
        if not m:
            raise ValueError(f"not a YYYY-MM month: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    def shift(self, k: int) -> "MonthId":
        idx = self.year * 12 + (self.month - 1) + k
        return MonthId(idx // 12, idx % 12 + 1)

    def next(self) -> "MonthId":
        return self.shift(1)

    def prev(self) -> "MonthId":
        return self.shift(-1)

    def index(self) -> int:
        """Months since year 0; differences give month distances."""
        return self.year * 12 + self.month - 1

    def start_ms(self) -> int:
        return calendar.timegm((self.year, self.month, 1, 0, 0, 0)) * 1000

    def end_ms(self) -> int:
        return self.next().start_ms()

    def window(self, kind: "WindowKind | str" = "full-month") -> "TimeWindow":
        kind = WindowKind(kind)
        mid = self.start_ms() + _HALF_MONTH_DAY * 86_400_000
        if kind is WindowKind.FULL:
            return TimeWindow(self.start_ms(), self.end_ms(), kind)
        if kind is WindowKind.FIRST_HALF:
            return TimeWindow(self.start_ms(), mid, kind)
        return TimeWindow(mid, self.end_ms(), kind)


def month_range(first: MonthId, last: MonthId) -> list[MonthId]:
    return [first.shift(k) for k in range(last.index() - first.index() + 1)]


def month_of(ts_ms: int) -> MonthId:
    d = dt.datetime.fromtimestamp(ts_ms / 1000, tz=dt.timezone.utc)
    return MonthId(d.year, d.month)


class WindowKind(str, Enum):
    FULL = "full-month"
    FIRST_HALF = "first-half"
    SECOND_HALF = "second-half"


@dataclass(frozen=True)
class TimeWindow:
    start: int
    end: int
    kind: WindowKind = WindowKind.FULL

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty window [{self.start}, {self.end})")
        object.__setattr__(self, "kind", WindowKind(self.kind))

    def __contains__(self, ts: int) -> bool:
        return self.start <= ts < self.end


@dataclass(frozen=True)
class RetweetEvent:
    tweet_id: str
    author: str
    retweeter: str
    timestamp: int


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    author: str
    posted_at: int


@dataclass(frozen=True)
class FollowSnapshot:
    month: MonthId
    edges: frozenset[tuple[str, str]]


class EventTable:
    """Deduplicated retweet events in columnar form.

    Users and tweets are interned in lexicographic order so integer ids
    compare the same way the string ids do. Events are stored sorted by
    (timestamp, tweet, retweeter), which makes a time window a contiguous
    index range.
    """

    def __init__(self, users, tweets, tweet_author, tweet, retweeter, ts):
        self.users = np.asarray(users, dtype=object)
        self.tweets = np.asarray(tweets, dtype=object)
        self.tweet_author = np.asarray(tweet_author, dtype=np.int64)
        order = np.lexsort((retweeter, tweet, ts))
        self.tweet = np.asarray(tweet, dtype=np.int64)[order]
        self.retweeter = np.asarray(retweeter, dtype=np.int64)[order]
        self.ts = np.asarray(ts, dtype=np.int64)[order]
        self.user_index = {u: i for i, u in enumerate(self.users)}

    def __len__(self) -> int:
        return len(self.ts)

    def __iter__(self) -> Iterator[RetweetEvent]:
        users, tweets, ta = self.users, self.tweets, self.tweet_author
        for t, r, ts in zip(self.tweet.tolist(), self.retweeter.tolist(), self.ts.tolist()):
            yield RetweetEvent(tweets[t], users[ta[t]], users[r], ts)

    def span(self) -> tuple[int, int] | None:
        if not len(self):
            return None
        return int(self.ts[0]), int(self.ts[-1])

    @classmethod
    def from_events(cls, events) -> "EventTable":
        """Build from RetweetEvent objects; assumes they are already clean."""
        events = list(events)
        tids = [e.tweet_id for e in events]
        authors = [e.author for e in events]
        rts = [e.retweeter for e in events]
        ts = [e.timestamp for e in events]
        table, _, _ = _intern(tids, authors, rts, ts)
        return table


@dataclass
class LoadedEvents:
    events: EventTable
    tweets: list[TweetRecord]
    dropped_self: int = 0
    dropped_duplicate: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_self + self.dropped_duplicate


def _codes(values: list[str]):
    """Sorted distinct values (object array) and each value's index into them."""
    uniq = sorted(set(values))
    index = {v: i for i, v in enumerate(uniq)}
    codes = np.fromiter((index[v] for v in values), dtype=np.int64, count=len(values))
    return np.array(uniq, dtype=object), codes


def _intern(tids, authors, rts, ts):
    """Intern string ids, drop self-retweets and duplicate (tweet, retweeter) pairs."""
    n = len(tids)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return EventTable([], [], empty, empty, empty, empty), 0, 0
    ts = np.asarray(ts, dtype=np.int64)
    tweets, tweet_idx = _codes(tids)
    users, user_idx = _codes(authors + rts)
    author_idx, rt_idx = user_idx[:n], user_idx[n:]

    tweet_author = np.full(len(tweets), -1, dtype=np.int64)
    tweet_author[tweet_idx] = author_idx
    if np.any(tweet_author[tweet_idx] != author_idx):
        bad = np.flatnonzero(tweet_author[tweet_idx] != author_idx)[0]
        raise DataError(f"tweet {tids[bad]!r} appears with more than one author")

    keep = author_idx != rt_idx
    dropped_self = int(n - keep.sum())
    tweet_idx, rt_idx, ts = tweet_idx[keep], rt_idx[keep], ts[keep]

    # earliest retweet wins for each (tweet, retweeter)
    order = np.lexsort((ts, rt_idx, tweet_idx))
    tweet_idx, rt_idx, ts = tweet_idx[order], rt_idx[order], ts[order]
    first = np.ones(len(ts), dtype=bool)
    first[1:] = (tweet_idx[1:] != tweet_idx[:-1]) | (rt_idx[1:] != rt_idx[:-1])
    dropped_dup = int(len(ts) - first.sum())
    tweet_idx, rt_idx, ts = tweet_idx[first], rt_idx[first], ts[first]

    # tweets/users that only occurred in dropped rows disappear from the tables
    live_tweets = np.unique(tweet_idx)
    live_users = np.unique(np.concatenate([tweet_author[live_tweets], rt_idx]))
    user_map = np.full(len(users), -1, dtype=np.int64)
    user_map[live_users] = np.arange(len(live_users))
    tweet_map = np.full(len(tweets), -1, dtype=np.int64)
    tweet_map[live_tweets] = np.arange(len(live_tweets))
    table = EventTable(
        users[live_users],
        tweets[live_tweets],
        user_map[tweet_author[live_tweets]],
        tweet_map[tweet_idx],
        user_map[rt_idx],
        ts,
    )
    return table, dropped_self, dropped_dup


def _require(obj: dict, key: str, lineno: int, kind):
    if key not in obj:
        raise DataError(f"line {lineno}: missing field {key!r}")
    val = obj[key]
    if kind is str:
        if not isinstance(val, str) or not val:
            raise DataError(f"line {lineno}: field {key!r} must be a non-empty string")
        return val
    if isinstance(val, bool) or not isinstance(val, int):
        raise DataError(f"line {lineno}: field {key!r} must be an integer")
    if val < 0:
        raise DataError(f"line {lineno}: negative timestamp {val}")
    return val


def _read_jsonl(path: Path):
    tids, authors, rts, ts = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            try:
                t, a, r, s = obj["tweet_id"], obj["author"], obj["retweeter"], obj["ts_ms"]
                ok = (type(t) is str and type(a) is str and type(r) is str and type(s) is int
                      and t and a and r and s >= 0)
            except KeyError:
                ok = False
            if not ok:
                # slow path, for the error message
                t = _require(obj, "tweet_id", lineno, str)
                a = _require(obj, "author", lineno, str)
                r = _require(obj, "retweeter", lineno, str)
                s = _require(obj, "ts_ms", lineno, int)
            tids.append(t)
            authors.append(a)
            rts.append(r)
            ts.append(s)
    return tids, authors, rts, ts


def _read_csv(path: Path):
    tids, authors, rts, ts = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return tids, authors, rts, ts
        header = [h.strip() for h in header]
        missing = [c for c in EVENT_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        cols = [header.index(c) for c in EVENT_COLUMNS]
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                rec = {c: row[i] for c, i in zip(EVENT_COLUMNS, cols)}
                rec["ts_ms"] = int(rec["ts_ms"])
            except (IndexError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
            tids.append(_require(rec, "tweet_id", lineno, str))
            authors.append(_require(rec, "author", lineno, str))
            rts.append(_require(rec, "retweeter", lineno, str))
            ts.append(_require(rec, "ts_ms", lineno, int))
    return tids, authors, rts, ts


def load_retweet_events(path, format: str | None = None) -> LoadedEvents:
    """Read a retweet log (``jsonl`` or ``csv``) and return clean, deduplicated events.

    Self-retweets and repeated (tweet_id, retweeter) rows are dropped; the
    earliest copy of a repeated row is kept.  Tweet records are synthesized
    from the events: the author plus the earliest retweet timestamp.
    """
    path = Path(path)
    if format is None:
        format = path.suffix.lstrip(".").lower()
    if format not in ("jsonl", "csv"):
        raise ConfigError(f"unknown event format {format!r} (expected jsonl or csv)")
    if not path.exists():
        raise DataError(f"event file not found: {path}")
    reader = _read_jsonl if format == "jsonl" else _read_csv
    tids, authors, rts, ts = reader(path)
    table, n_self, n_dup = _intern(tids, authors, rts, ts)
    if n_self or n_dup:
        logger.info("dropped %d self-retweets and %d duplicate retweets", n_self, n_dup)

    first_ts = np.full(len(table.tweets), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first_ts, table.tweet, table.ts)
    tweets = [
        TweetRecord(t, table.users[a], int(p))
        for t, a, p in zip(table.tweets, table.tweet_author, first_ts)
    ]
    return LoadedEvents(table, tweets, n_self, n_dup)


@dataclass
class FollowData:
    snapshots: dict[MonthId, FollowSnapshot]
    warnings: list[str] = field(default_factory=list)


def load_follow_snapshots(directory) -> FollowData:
    """Load ``follows_YYYY-MM.csv`` files; a gap in the month sequence is only a warning."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"follow snapshot directory not found: {directory}")
    snapshots: dict[MonthId, FollowSnapshot] = {}
    for path in sorted(directory.iterdir()):
        m = _FOLLOW_FILE.match(path.name)
        if not m:
            continue
        month = MonthId(int(m.group(1)), int(m.group(2)))
        edges = set()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if header[:2] != list(FOLLOW_COLUMNS):
                raise DataError(f"{path}: expected header 'follower,followee'")
            for lineno, row in enumerate(reader, 2):
                if not row:
                    continue
                if len(row) != 2 or not row[0] or not row[1]:
                    raise DataError(f"{path}:{lineno}: unparseable edge {row!r}")
                if row[0] != row[1]:
                    edges.add((row[0], row[1]))
        snapshots[month] = FollowSnapshot(month, frozenset(edges))

    warnings = []
    months = sorted(snapshots)
    for a, b in zip(months, months[1:]):
        if b != a.next():
            msg = f"follow snapshots skip from {a} to {b}"
            logger.warning(msg)
            warnings.append(msg)
    return FollowData(snapshots, warnings)


class EventSlice:
    """The events of one time window.

    ``cascade_index`` and ``tweets_by_author`` are built lazily from the
    columnar arrays; vectorized scorers read the arrays directly.
    """

    def __init__(self, table: EventTable, window: TimeWindow):
        self.table = table
        self.window = window
        lo, hi = np.searchsorted(table.ts, [window.start, window.end], side="left")
        # cascade order: tweet, then timestamp, then retweeter
        tw, rt, ts = table.tweet[lo:hi], table.retweeter[lo:hi], table.ts[lo:hi]
        order = np.lexsort((rt, ts, tw))
        self.tweet = tw[order]
        self.retweeter = rt[order]
        self.ts = ts[order]
        self.author = table.tweet_author[self.tweet]

    def __len__(self) -> int:
        return len(self.ts)

    @cached_property
    def cascade_index(self) -> dict[str, list[tuple[str, int]]]:
        users, tweets = self.table.users, self.table.tweets
        index: dict[str, list[tuple[str, int]]] = {}
        for t, r, ts in zip(self.tweet.tolist(), self.retweeter.tolist(), self.ts.tolist()):
            index.setdefault(tweets[t], []).append((users[r], ts))
        return index

    @cached_property
    def tweets_by_author(self) -> dict[str, list[str]]:
        users, tweets = self.table.users, self.table.tweets
        out: dict[str, list[str]] = {}
        for t in np.unique(self.tweet).tolist():
            out.setdefault(users[self.table.tweet_author[t]], []).append(tweets[t])
        return out

    def active_user_ids(self) -> np.ndarray:
        """Interned ids of users who authored a retweeted tweet or retweeted something."""
        return np.union1d(self.author, self.retweeter)

    def events(self) -> list[RetweetEvent]:
        users, tweets = self.table.users, self.table.tweets
        return [
            RetweetEvent(tweets[t], users[a], users[r], ts)
            for t, a, r, ts in zip(
                self.tweet.tolist(), self.author.tolist(), self.retweeter.tolist(), self.ts.tolist()
            )
        ]


def slice_events(events: EventTable, window: TimeWindow) -> EventSlice:
    return EventSlice(events, window)
