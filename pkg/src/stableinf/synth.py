"""Synthetic retweet logs and follow snapshots with planted stable and temporal influencers.

Every user carries two latent levels per month: ``x`` drives how often
their tweets are retweeted, ``y`` how active and how early they are as a
retweeter.  Planted-stable users sit high on an AR(1) path while temporal
users get occasional spikes that decay.  The follow graph is grown by
fitness-weighted preferential attachment and rewired a little every month.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, StableInfError
from .ingest import MonthId, month_range

CLASSES = ("stable", "temporal", "background")
MIN_MONTHS = 13


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 5000
    n_months: int = 13
    start: str = "2021-10"
    seed: int = 0
    stable_fraction: float = 0.045
    temporal_fraction: float = 0.10
    rho: float = 0.9
    spike_prob: float = 0.05
    spike_size: float = 2.0
    spike_decay: float = 0.5
    base_rate: float = 1.2          # log of the background retweet rate
    latent_sd: float = 0.95         # stationary sd of the AR(1) component
    mean_sd: float = 0.4            # spread of the users' long-run mean levels
    noise_sd: float = 0.0           # month-level shock that does not persist
    drift_sd: float = 0.0           # monthly random-walk step of the long-run mean
    stable_boost: float = 2.8
    stable_broker_boost: float = 2.8
    tweets_per_cascade: float = 5.0  # mean retweets per tweet before power-law allocation
    cascade_alpha: float = 1.5       # Pareto shape of tweet popularity weights
    cascade_cap: int = 300
    fan_share: float = 0.3           # share of retweets coming from the author's followers
    stable_fan_share: float = 0.6
    attach_edges: int = 6            # follow edges per arriving user
    fitness_weight: float = 1.0
    churn: float = 0.02              # share of follow edges rewired each month
    delay_hours: float = 12.0
    count_dispersion: float = 1.0   # 1 = Poisson monthly totals, 0 = rounded expectation

    def validate(self) -> None:
        for name in ("stable_fraction", "temporal_fraction", "rho", "spike_prob", "spike_decay",
                     "fan_share", "stable_fan_share", "churn", "count_dispersion"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"synth {name} must lie in [0, 1], got {v}")
        if self.stable_fraction + self.temporal_fraction > 1.0:
            raise ConfigError("stable and temporal fractions exceed 1")
        if self.n_months < MIN_MONTHS:
            raise ConfigError(f"synth needs at least {MIN_MONTHS} months, got {self.n_months}")
        if self.n_users < 20:
            raise ConfigError("synth needs at least 20 users")
        if self.cascade_cap < 1 or self.attach_edges < 1 or self.cascade_alpha <= 0:
            raise ConfigError("cascade cap, attach edges and cascade alpha must be positive")
        if min(self.latent_sd, self.mean_sd, self.noise_sd, self.drift_sd) < 0:
            raise ConfigError("synth spreads (latent_sd, mean_sd, noise_sd, drift_sd) must be non-negative")
        MonthId.parse(self.start)

    def months(self) -> list[MonthId]:
        first = MonthId.parse(self.start)
        return month_range(first, first.shift(self.n_months - 1))


_BURN_IN = 12


def user_id(i: int) -> str:
    return f"u{i:05d}"


class _Latent:
    """Monthly latent levels for all users (one instance per latent)."""

    def __init__(self, cfg: SynthConfig, mean: np.ndarray, spiky: np.ndarray, rng):
        self.cfg = cfg
        self.mean = mean
        self.spiky = spiky
        self.rng = rng
        n = len(mean)
        self.z = rng.normal(size=n) * cfg.latent_sd
        self.spike = np.zeros(n)
        # let spikes reach their stationary level so the first month is not special
        for _ in range(_BURN_IN):
            self.step(drift=False)

    def step(self, drift: bool = True) -> np.ndarray:
        cfg, rng = self.cfg, self.rng
        n = len(self.mean)
        if drift and cfg.drift_sd > 0:
            self.mean = self.mean + rng.normal(size=n) * cfg.drift_sd
        noise = rng.normal(size=n) * cfg.latent_sd * math.sqrt(1.0 - cfg.rho ** 2)
        self.z = cfg.rho * self.z + noise
        self.spike *= cfg.spike_decay
        hit = self.spiky & (rng.random(n) < cfg.spike_prob)
        self.spike[hit] += cfg.spike_size * (0.75 + 0.5 * rng.random(int(hit.sum())))
        return self.mean + self.z + self.spike + rng.normal(size=n) * cfg.noise_sd


def _follow_graph(cfg: SynthConfig, fitness: np.ndarray, rng) -> np.ndarray:
    """Fitness-weighted preferential attachment; rows are (follower, followee)."""
    n, k = cfg.n_users, cfg.attach_edges
    order = rng.permutation(n)
    indeg = np.zeros(n)
    edges = []
    seed_size = k + 1
    for a in range(seed_size):
        for b in range(seed_size):
            if a != b:
                edges.append((order[a], order[b]))
                indeg[order[b]] += 1
    for pos in range(seed_size, n):
        u = order[pos]
        pool = order[:pos]
        w = (indeg[pool] + 1.0) * fitness[pool]
        picks = rng.choice(pool, size=min(k, pos), replace=False, p=w / w.sum())
        for v in picks:
            edges.append((u, v))
            indeg[v] += 1
    return np.array(edges, dtype=np.int64)


def _rewire(edges: np.ndarray, cfg: SynthConfig, fitness: np.ndarray, rng) -> np.ndarray:
    n_drop = int(round(cfg.churn * len(edges)))
    if n_drop == 0:
        return edges
    keep = np.ones(len(edges), bool)
    keep[rng.choice(len(edges), n_drop, replace=False)] = False
    kept = edges[keep]
    indeg = np.bincount(kept[:, 1], minlength=cfg.n_users).astype(float)
    w = (indeg + 1.0) * fitness
    src = rng.integers(0, cfg.n_users, n_drop)
    dst = rng.choice(cfg.n_users, n_drop, p=w / w.sum())
    new = np.column_stack([src, dst])
    new = new[new[:, 0] != new[:, 1]]
    out = np.unique(np.vstack([kept, new]), axis=0)
    return out


def _cascade_sizes(totals: np.ndarray, cfg: SynthConfig, rng):
    """Split each author's monthly retweet total over tweets with power-law weights."""
    authors, sizes = [], []
    for a in np.flatnonzero(totals):
        r = int(totals[a])
        k = min(r, 1 + rng.poisson(r / cfg.tweets_per_cascade))
        w = rng.pareto(cfg.cascade_alpha, k) + 1.0
        s = rng.multinomial(r, w / w.sum())
        s = np.minimum(s[s > 0], cfg.cascade_cap)
        authors.extend([a] * len(s))
        sizes.extend(s.tolist())
    return np.array(authors, np.int64), np.array(sizes, np.int64)


def _month_events(cfg, month: MonthId, x, y, fan_share, followers, rng):
    """Retweet events of one month as (tweet index, author, retweeter, ts) arrays."""
    n = cfg.n_users
    lam = np.exp(cfg.base_rate + x)
    d = cfg.count_dispersion
    totals = rng.poisson(d * lam) + np.floor((1.0 - d) * lam + rng.random(len(lam))).astype(np.int64)
    tw_author, tw_size = _cascade_sizes(totals, cfg, rng)
    slot_tweet = np.repeat(np.arange(len(tw_size)), tw_size)
    slot_author = tw_author[slot_tweet]

    # retweeters: an author's follower, or anyone weighted by retweeting activity
    indptr, fol = followers
    deg = np.diff(indptr)[slot_author]
    use_fan = (rng.random(len(slot_tweet)) < fan_share[slot_author]) & (deg > 0)
    rter = np.empty(len(slot_tweet), np.int64)
    pick = indptr[slot_author[use_fan]] + (rng.random(int(use_fan.sum())) * deg[use_fan]).astype(np.int64)
    rter[use_fan] = fol[pick]
    act = np.exp(y)
    rter[~use_fan] = rng.choice(n, int((~use_fan).sum()), p=act / act.sum())

    ok = rter != slot_author
    slot_tweet, slot_author, rter = slot_tweet[ok], slot_author[ok], rter[ok]
    _, first = np.unique(slot_tweet * n + rter, return_index=True)
    first.sort()
    slot_tweet, slot_author, rter = slot_tweet[first], slot_author[first], rter[first]

    # eager retweeters (high y) come early in a cascade
    span = month.end_ms() - month.start_ms()
    post = rng.random(len(tw_size)) * span * 0.9
    delay = rng.exponential(size=len(rter)) * np.exp(-y[rter]) * cfg.delay_hours * 3.6e6
    room = span - 2.0 - post[slot_tweet]
    offset = post[slot_tweet] + room * -np.expm1(-delay / room)
    order = np.lexsort((np.arange(len(offset)), offset))
    ts = np.floor(offset[order]).astype(np.int64)
    if len(ts) > span:
        raise StableInfError(f"too many events to give distinct timestamps in {month}")
    # strictly increasing milliseconds inside the month keep every timestamp distinct
    ar = np.arange(len(ts))
    ts = np.minimum(np.maximum.accumulate(ts - ar), span - len(ts)) + ar
    return slot_tweet[order], slot_author[order], rter[order], ts + month.start_ms()


def _csr_followers(edges: np.ndarray, n: int):
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    e = edges[order]
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(e[:, 1], minlength=n), out=indptr[1:])
    return indptr, e[:, 0].copy()


def generate(cfg: SynthConfig, out_dir) -> dict:
    """Write events.jsonl, follows/follows_YYYY-MM.csv and ground_truth.csv; returns a summary."""
    cfg.validate()
    out = Path(out_dir)
    (out / "follows").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_users

    n_stable = int(round(cfg.stable_fraction * n))
    n_temporal = int(round(cfg.temporal_fraction * n))
    cls = np.full(n, 2, np.int64)
    perm = rng.permutation(n)
    cls[perm[:n_stable]] = 0
    cls[perm[n_stable:n_stable + n_temporal]] = 1

    mu = rng.normal(0.0, cfg.mean_sd, n)
    mu[cls == 0] = cfg.stable_boost + rng.normal(0.0, 0.3, n_stable)
    nu = rng.normal(0.0, cfg.mean_sd, n)
    nu[cls == 0] += cfg.stable_broker_boost
    # per-user loyalty: the share of retweets that come from the author's own followers
    mean_fan = np.where(cls == 0, cfg.stable_fan_share, cfg.fan_share)
    fan_share = rng.beta(2.0 * mean_fan + 1e-9, 2.0 * (1.0 - mean_fan) + 1e-9)
    spiky = cls == 1
    spread = _Latent(cfg, mu, spiky, rng)
    broker = _Latent(cfg, nu, spiky, rng)

    fitness = np.exp(cfg.fitness_weight * 0.5 * mu)
    edges = _follow_graph(cfg, fitness, rng)

    n_events = 0
    tweet_base = 0
    names = np.array([user_id(i) for i in range(n)])
    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        for i, month in enumerate(cfg.months()):
            if i:
                edges = _rewire(edges, cfg, fitness, rng)
            _write_follows(out / "follows" / f"follows_{month}.csv", edges, names)
            x, y = spread.step(), broker.step()
            tw, au, rt, ts = _month_events(cfg, month, x, y, fan_share, _csr_followers(edges, n), rng)
            for t, a, r, s in zip((tw + tweet_base).tolist(), names[au].tolist(), names[rt].tolist(), ts.tolist()):
                fh.write(json.dumps({"tweet_id": f"t{t:08d}", "author": a, "retweeter": r, "ts_ms": s}) + "\n")
            tweet_base += int(tw.max()) + 1 if len(tw) else 0
            n_events += len(ts)

    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "class"])
        for i in range(n):
            w.writerow([names[i], CLASSES[cls[i]]])

    summary = {"n_users": n, "n_months": cfg.n_months, "n_events": n_events,
               "n_stable": n_stable, "n_temporal": n_temporal, "config": asdict(cfg)}
    (out / "synth.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _write_follows(path: Path, edges: np.ndarray, names: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["follower", "followee"])
        w.writerows(zip(names[edges[:, 0]].tolist(), names[edges[:, 1]].tolist()))


def read_ground_truth(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["user"]: row["class"] for row in csv.DictReader(fh)}
