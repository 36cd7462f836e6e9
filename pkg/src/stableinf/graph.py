"""Monthly follow and RT networks and their node metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ingest import EventSlice, FollowSnapshot, MonthId
from .leiden import leiden

DAMPING = 0.85
PAGERANK_TOL = 1e-10
PAGERANK_MAX_ITER = 100


@dataclass(frozen=True)
class Network:
    """Directed, unweighted, self-loop free graph over lexicographically sorted nodes."""

    nodes: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    flavor: str
    month: MonthId | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> set[tuple[str, str]]:
        return {(self.nodes[s], self.nodes[d]) for s, d in zip(self.src.tolist(), self.dst.tolist())}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source", "target"])
            for s, d in zip(self.src.tolist(), self.dst.tolist()):
                w.writerow([self.nodes[s], self.nodes[d]])


@dataclass
class NodeMetric:
    name: str
    values: dict[str, float]
    params: dict = field(default_factory=dict)
    converged: bool = True

    def __getitem__(self, user: str) -> float:
        return self.values[user]

    def get(self, user: str, default: float = 0.0) -> float:
        return self.values.get(user, default)


def from_edges(edges, flavor: str, month: MonthId | None = None, universe=()) -> Network:
    edges = {(u, v) for u, v in edges if u != v}
    nodes = sorted({x for e in edges for x in e} | set(universe))
    pos = {u: i for i, u in enumerate(nodes)}
    pairs = sorted((pos[u], pos[v]) for u, v in edges)
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    return Network(tuple(nodes), src, dst, flavor, month)


def build_follow_network(snapshot: FollowSnapshot, universe=()) -> Network:
    return from_edges(snapshot.edges, "follow", snapshot.month, universe)


def build_rt_network(sl: EventSlice, month: MonthId | None = None) -> Network:
    """Edge retweeter -> author whenever the retweeter reposted the author at least once."""
    n_users = len(sl.table.users)
    if not len(sl):
        return Network((), np.zeros(0, np.int64), np.zeros(0, np.int64), "rt", month)
    pairs = np.unique(sl.retweeter * n_users + sl.author)
    src_g, dst_g = pairs // n_users, pairs % n_users
    node_ids = np.union1d(src_g, dst_g)
    # interned ids are already in lexicographic user order
    remap = np.full(n_users, -1, dtype=np.int64)
    remap[node_ids] = np.arange(len(node_ids))
    nodes = tuple(sl.table.users[node_ids].tolist())
    src, dst = remap[src_g], remap[dst_g]
    order = np.lexsort((dst, src))
    return Network(nodes, src[order], dst[order], "rt", month)


def in_degree_array(net: Network) -> np.ndarray:
    return np.bincount(net.dst, minlength=net.n_nodes)


def in_degree(net: Network) -> NodeMetric:
    deg = in_degree_array(net)
    return NodeMetric("in_degree", dict(zip(net.nodes, deg.tolist())))


def pagerank_array(net: Network, damping=DAMPING, tol=PAGERANK_TOL, max_iter=PAGERANK_MAX_ITER):
    """Power iteration; returns (scores, iterations, converged)."""
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = net.n_nodes
    if n == 0:
        return np.zeros(0), 0, True
    out_deg = np.bincount(net.src, minlength=n).astype(float)
    dangling = out_deg == 0
    # M[v, u] = 1/out(u) for edge u -> v
    weights = 1.0 / out_deg[net.src]
    M = sp.csr_matrix((weights, (net.dst, net.src)), shape=(n, n))
    r = np.full(n, 1.0 / n)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        dangling_mass = r[dangling].sum()
        nxt = damping * (M @ r + dangling_mass / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        delta = np.abs(nxt - r).sum()
        r = nxt
        if delta < tol:
            converged = True
            break
    return r, it, converged


def pagerank(net: Network, damping=DAMPING, tol=PAGERANK_TOL, max_iter=PAGERANK_MAX_ITER) -> NodeMetric:
    r, it, converged = pagerank_array(net, damping, tol, max_iter)
    return NodeMetric(
        "pagerank",
        dict(zip(net.nodes, r.tolist())),
        {"damping": damping, "tol": tol, "max_iter": max_iter, "iterations": it},
        converged,
    )


def undirected_csr(net: Network) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency: an edge in either direction becomes one undirected edge."""
    n = net.n_nodes
    A = sp.coo_matrix((np.ones(net.n_edges), (net.src, net.dst)), shape=(n, n)).tocsr()
    A = A + A.T
    A.data[:] = 1.0
    A.sort_indices()
    return A


def community_labels(net: Network, seed: int = 0, resolution: float = 1.0, trace=None) -> np.ndarray:
    return leiden(undirected_csr(net), resolution=resolution, seed=seed, trace=trace)


def community_sizes(net: Network, seed: int = 0, resolution: float = 1.0) -> NodeMetric:
    labels = community_labels(net, seed, resolution)
    sizes = np.bincount(labels)[labels] if len(labels) else np.zeros(0, np.int64)
    return NodeMetric(
        "community_size",
        dict(zip(net.nodes, sizes.tolist())),
        {"seed": seed, "resolution": resolution},
    )


def write_metrics_csv(path, rows) -> None:
    """rows: iterable of (user, metric, value, month)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "metric", "value", "month"])
        for row in rows:
            w.writerow(row)
