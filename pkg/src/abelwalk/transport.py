"""Dense transportation simplex (MODI / stepping-stone method).

Solves the balanced transportation problem

    min <C, X>  s.t.  X 1 = a,  X^T 1 = b,  X >= 0

exactly up to floating-point rounding.  Bases are spanning trees of the
complete bipartite row/column graph.  Problems here are desk-sized (a few
hundred atoms per side), so the dense reduced-cost matrix is recomputed every
pivot.
"""
from __future__ import annotations

from collections import deque

import numpy as np


class TransportError(RuntimeError):
    pass


def _initial_tree(a, b, C):
    """Least-cost greedy allocation completed to a spanning tree."""
    m, n = C.shape
    ra = a.astype(float).copy()
    rb = b.astype(float).copy()
    scale = max(a.sum(), 1e-300)
    dust = 1e-15 * scale
    row_done = np.zeros(m, bool)
    col_done = np.zeros(n, bool)
    edges = []
    for k in np.argsort(C, axis=None, kind="stable"):
        i, j = divmod(int(k), n)
        if row_done[i] or col_done[j]:
            continue
        x = min(ra[i], rb[j])
        edges.append((i, j))
        ra[i] -= x
        rb[j] -= x
        if ra[i] <= dust:
            row_done[i] = True
        if rb[j] <= dust:
            col_done[j] = True
        if row_done.all() or col_done.all():
            break
    # the greedy edges form a forest; connect it with cheapest zero-flow edges
    parent = list(range(m + n))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    tree = []
    for i, j in edges:
        ri, rj = find(i), find(m + j)
        if ri != rj:
            parent[ri] = rj
            tree.append((i, j))
    if len(tree) < m + n - 1:
        for k in np.argsort(C, axis=None, kind="stable"):
            i, j = divmod(int(k), n)
            ri, rj = find(i), find(m + j)
            if ri != rj:
                parent[ri] = rj
                tree.append((i, j))
                if len(tree) == m + n - 1:
                    break
    return tree


def _adjacency(m, n, tree):
    adj = [[] for _ in range(m + n)]
    for i, j in tree:
        adj[i].append(m + j)
        adj[m + j].append(i)
    return adj


def _tree_flows(a, b, tree):
    """Unique basic solution on a spanning tree, by peeling leaves."""
    m, n = len(a), len(b)
    rem = np.concatenate([a, b]).astype(float)
    adj = [set(s) for s in _adjacency(m, n, tree)]
    flow = {}
    leaves = deque(u for u in range(m + n) if len(adj[u]) == 1)
    while leaves:
        u = leaves.popleft()
        if len(adj[u]) != 1:
            continue
        (v,) = adj[u]
        x = rem[u]
        e = (u, v - m) if u < m else (v, u - m)
        flow[e] = x
        rem[v] -= x
        rem[u] = 0.0
        adj[u].clear()
        adj[v].discard(u)
        if len(adj[v]) == 1:
            leaves.append(v)
    return flow


def _potentials(C, m, n, adj):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([0])
    seen = {0}
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if nb in seen:
                continue
            seen.add(nb)
            if node < m:
                v[nb - m] = C[node, nb - m] - u[node]
            else:
                u[nb] = C[nb, node - m] - v[node - m]
            queue.append(nb)
    return u, v


def _tree_path(adj, start, goal):
    """Node path from ``start`` to ``goal`` in the basis tree."""
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return path[::-1]


def solve_transport(a, b, C, max_iter: int | None = None):
    """Return ``(flows, cost)`` with ``flows`` a dense ``(m, n)`` optimal plan.

    ``a`` and ``b`` must have equal sums (callers rescale tiny mismatches).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if (len(a), len(b)) != (m, n):
        raise TransportError("marginals do not match the cost matrix shape")
    if np.any(a < 0) or np.any(b < 0):
        raise TransportError("negative marginal")
    if m == 1 or n == 1:
        X = b[None, :].copy() if m == 1 else a[:, None].copy()
        return X, float(np.sum(X * C))

    tree = _initial_tree(a, b, C)
    flow = _tree_flows(a, b, tree)
    tol = 1e-12 * (1.0 + float(np.abs(C).max()))
    max_iter = max_iter or 50 * (m + n) ** 2
    degenerate_run = 0
    for _ in range(max_iter):
        adj = _adjacency(m, n, flow.keys())
        u, v = _potentials(C, m, n, adj)
        red = C - u[:, None] - v[None, :]
        for (i, j) in flow:
            red[i, j] = 0.0
        if degenerate_run > m + n:
            # Bland's rule once pivots stall, to rule out cycling
            neg = np.flatnonzero(red.ravel() < -tol)
            if neg.size == 0:
                break
            k = int(neg[0])
        else:
            k = int(np.argmin(red))
            if red.flat[k] >= -tol:
                break
        i, j = divmod(k, n)
        path = _tree_path(adj, m + j, i)
        # edges along the path alternate -, +, -, ... starting next to column j
        edges = []
        for p, q in zip(path, path[1:]):
            edges.append((q, p - m) if p >= m else (p, q - m))
        minus = edges[0::2]
        plus = edges[1::2]
        theta = min(flow[e] for e in minus)
        leaving = min((e for e in minus if flow[e] <= theta), key=lambda e: (e[0], e[1]))
        for e in minus:
            flow[e] -= theta
        for e in plus:
            flow[e] += theta
        del flow[leaving]
        flow[(i, j)] = theta
        degenerate_run = degenerate_run + 1 if theta <= 0 else 0
    else:
        raise TransportError("transportation simplex did not converge")

    # recompute the basic solution from scratch to shed accumulated rounding
    flow = _tree_flows(a, b, list(flow.keys()))
    X = np.zeros((m, n))
    for (i, j), x in flow.items():
        X[i, j] = max(x, 0.0)
    return X, float(np.sum(X * C))
