"""Leiden community detection for modularity on undirected weighted graphs.

Follows the three-phase scheme of fast local moving, refinement into
well-connected sub-clusters, and aggregation of the refined partition
(the aggregate network starts from the unrefined partition). Inner loops
are compiled with numba; aggregation uses scipy sparse products.
"""

from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp

THETA = 0.01
MAX_LEVELS = 50


@numba.njit(cache=True)
def _move_nodes_fast(indptr, indices, data, node_w, comm, order, gamma, two_m):
    n = node_w.shape[0]
    comm_w = np.zeros(n)
    comm_size = np.zeros(n, np.int64)
    for v in range(n):
        comm_w[comm[v]] += node_w[v]
        comm_size[comm[v]] += 1
    empties = np.empty(n, np.int64)
    n_empty = 0
    for c in range(n - 1, -1, -1):
        if comm_size[c] == 0:
            empties[n_empty] = c
            n_empty += 1

    queue = order.copy()
    in_queue = np.ones(n, np.bool_)
    head = 0
    size = n
    neigh_w = np.zeros(n)
    mark = np.zeros(n, np.bool_)
    touched = np.empty(n, np.int64)
    changed = False

    while size > 0:
        v = queue[head]
        head = (head + 1) % n
        size -= 1
        in_queue[v] = False

        cv = comm[v]
        kv = node_w[v]
        nt = 1
        touched[0] = cv
        mark[cv] = True
        for j in range(indptr[v], indptr[v + 1]):
            c = comm[indices[j]]
            if not mark[c]:
                mark[c] = True
                touched[nt] = c
                nt += 1
            neigh_w[c] += data[j]

        comm_w[cv] -= kv
        comm_size[cv] -= 1
        best = cv
        best_gain = neigh_w[cv] - gamma * kv * comm_w[cv] / two_m
        for i in range(1, nt):
            c = touched[i]
            gain = neigh_w[c] - gamma * kv * comm_w[c] / two_m
            if gain > best_gain:
                best_gain = gain
                best = c
        if best_gain < 0.0 and comm_size[cv] > 0:
            # an empty community scores exactly zero
            best = empties[n_empty - 1]
            n_empty -= 1
            best_gain = 0.0

        for i in range(nt):
            c = touched[i]
            neigh_w[c] = 0.0
            mark[c] = False

        comm_w[best] += kv
        comm_size[best] += 1
        if best != cv:
            comm[v] = best
            changed = True
            if comm_size[cv] == 0:
                empties[n_empty] = cv
                n_empty += 1
            for j in range(indptr[v], indptr[v + 1]):
                u = indices[j]
                if not in_queue[u] and comm[u] != best:
                    queue[(head + size) % n] = u
                    size += 1
                    in_queue[u] = True
    return changed


@numba.njit(cache=True)
def _refine(indptr, indices, data, node_w, comm, order, gamma, two_m, theta, seed):
    np.random.seed(seed)
    n = node_w.shape[0]
    ref = np.arange(n)
    ref_w = node_w.copy()
    ref_size = np.ones(n, np.int64)
    comm_total = np.zeros(n)
    for v in range(n):
        comm_total[comm[v]] += node_w[v]
    # ext[s]: weight between cluster s and the rest of its community
    ext = np.zeros(n)
    for v in range(n):
        for j in range(indptr[v], indptr[v + 1]):
            if comm[indices[j]] == comm[v]:
                ext[v] += data[j]

    neigh_w = np.zeros(n)
    mark = np.zeros(n, np.bool_)
    touched = np.empty(n, np.int64)
    probs = np.empty(n)

    for v in order:
        if ref_size[ref[v]] != 1:
            continue
        kv = node_w[v]
        ctot = comm_total[comm[v]]
        if ext[v] < gamma * kv * (ctot - kv) / two_m:
            continue
        nt = 0
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            if comm[u] != comm[v]:
                continue
            s = ref[u]
            if not mark[s]:
                mark[s] = True
                touched[nt] = s
                nt += 1
            neigh_w[s] += data[j]

        # candidate 0 is staying put (gain 0)
        best_gain = 0.0
        m = 0
        for i in range(nt):
            s = touched[i]
            if ext[s] < gamma * ref_w[s] * (ctot - ref_w[s]) / two_m:
                continue
            gain = neigh_w[s] - gamma * kv * ref_w[s] / two_m
            if gain >= 0.0:
                touched[m] = s
                probs[m] = gain
                m += 1
                if gain > best_gain:
                    best_gain = gain
        total = np.exp((0.0 - best_gain) / theta)
        for i in range(m):
            probs[i] = np.exp((probs[i] - best_gain) / theta)
            total += probs[i]
        r = np.random.random() * total
        acc = np.exp((0.0 - best_gain) / theta)
        chosen = -1
        if r >= acc:
            for i in range(m):
                acc += probs[i]
                if r < acc:
                    chosen = touched[i]
                    break
            if chosen == -1 and m > 0:
                chosen = touched[m - 1]

        if chosen != -1:
            w_vs = neigh_w[chosen]
            ext[chosen] = ext[chosen] + ext[v] - 2.0 * w_vs
            ref_w[chosen] += kv
            ref_size[chosen] += 1
            ref_size[v] = 0
            ref[v] = chosen

        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            s = ref[u]
            neigh_w[s] = 0.0
            mark[s] = False
    return ref


def _renumber(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..k-1 in order of first appearance."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv.ravel()]


def _aggregate(A: sp.csr_matrix, node_w: np.ndarray, groups: np.ndarray):
    k = int(groups.max()) + 1 if len(groups) else 0
    S = sp.csr_matrix((np.ones(len(groups)), (np.arange(len(groups)), groups)), shape=(len(groups), k))
    B = (S.T @ A @ S).tocsr()
    B.setdiag(0)
    B.eliminate_zeros()
    B.sort_indices()
    return B, np.bincount(groups, weights=node_w, minlength=k)


def modularity(A: sp.csr_matrix, labels, resolution: float = 1.0) -> float:
    """Newman modularity of a partition of a symmetric adjacency matrix."""
    A = sp.csr_matrix(A)
    labels = np.asarray(labels)
    k = np.asarray(A.sum(axis=1)).ravel()
    two_m = k.sum()
    if two_m == 0:
        return 0.0
    coo = A.tocoo()
    internal = coo.data[labels[coo.row] == labels[coo.col]].sum()
    K = np.bincount(labels, weights=k)
    return float(internal / two_m - resolution * np.sum((K / two_m) ** 2))


def leiden(A, resolution: float = 1.0, seed: int = 0, theta: float = THETA, trace=None) -> np.ndarray:
    """Community label per node of the symmetric adjacency ``A``.

    ``trace``, if a list, receives one dict per level with the level's
    adjacency, its (unrefined) partition and the refined partition.
    """
    A = sp.csr_matrix(A, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, np.int64)
    A.setdiag(0)
    A.eliminate_zeros()
    A.sort_indices()
    node_w = np.asarray(A.sum(axis=1)).ravel()
    two_m = node_w.sum()
    if two_m == 0:
        return np.arange(n)

    rng = np.random.default_rng(seed)
    membership = np.arange(n)
    comm = np.arange(n)
    for level in range(MAX_LEVELS):
        m = A.shape[0]
        order = rng.permutation(m)
        _move_nodes_fast(A.indptr, A.indices, A.data, node_w, comm, order, resolution, two_m)
        comm = _renumber(comm)
        n_comm = int(comm.max()) + 1
        if n_comm == m:
            if trace is not None:
                trace.append({"level": level, "adjacency": A, "partition": comm.copy(), "refined": np.arange(m)})
            break
        ref = _refine(
            A.indptr, A.indices, A.data, node_w, comm, rng.permutation(m),
            resolution, two_m, theta, int(rng.integers(2**31 - 1)),
        )
        ref = _renumber(ref)
        if trace is not None:
            trace.append({"level": level, "adjacency": A, "partition": comm.copy(), "refined": ref.copy()})
        if int(ref.max()) + 1 == m:
            # refinement made no progress; collapse on the unrefined partition
            ref = comm
        A, node_w = _aggregate(A, node_w, ref)
        membership = ref[membership]
        new_comm = np.empty(A.shape[0], np.int64)
        new_comm[ref] = comm
        comm = new_comm
    return _renumber(comm[membership])
