"""Dense min-cost assignment and a small min-cost flow, both deterministic.

The assignment solver is the classic shortest-augmenting-path scheme with row
and column potentials; ties always resolve to the lowest column index, which
the matchers rely on for reproducible output. The flow solver handles arc
lower bounds through the usual excess/deficit transformation and is used for
ratio-capped full matching.
"""

from __future__ import annotations

import heapq

import numpy as np

from . import errors


def min_cost_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Assign every row to a distinct column minimizing total cost.

    ``cost`` is (n_rows, n_cols) with n_rows <= n_cols; +inf entries are
    forbidden. Returns (col_of_row, total_cost). Raises Infeasible when no
    finite assignment exists.
    """
    a = np.asarray(cost, dtype=float)
    nr, nc = a.shape
    if nr > nc:
        raise errors.InvalidArgument("assignment needs n_rows <= n_cols")
    if nr == 0:
        return np.empty(0, dtype=int), 0.0

    INF = np.inf
    u = np.zeros(nr)            # row potentials
    v = np.zeros(nc + 1)        # column potentials, last is the virtual start
    row_of = np.full(nc + 1, -1)  # matched row per column

    for i in range(nr):
        row_of[nc] = i
        j0 = nc
        minv = np.full(nc, INF)
        way = np.full(nc, nc)
        used = np.zeros(nc + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            cur = a[i0] - u[i0] - v[:nc]
            better = (cur < minv) & ~used[:nc]
            minv[better] = cur[better]
            way[better] = j0
            scan = np.where(used[:nc], INF, minv)
            j1 = int(np.argmin(scan))
            delta = scan[j1]
            if not np.isfinite(delta):
                raise errors.Infeasible("no finite-cost assignment exists")
            mask = used[:nc]
            matched_rows = row_of[:nc][mask]
            u[matched_rows] += delta
            u[i] += delta  # virtual start column is always in the used set
            v[:nc][mask] -= delta
            minv[~mask] -= delta
            j0 = j1
            if row_of[j0] == -1:
                break
        # augment along the alternating path
        while j0 != nc:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    col_of = np.full(nr, -1)
    for j in range(nc):
        if row_of[j] >= 0:
            col_of[row_of[j]] = j
    total = float(a[np.arange(nr), col_of].sum())
    return col_of, total


class MinCostFlow:
    """Successive-shortest-path min-cost flow with nonnegative arc costs."""

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self.head: list[list[int]] = [[] for _ in range(n_nodes)]
        self.to: list[int] = []
        self.cap: list[float] = []
        self.cost: list[float] = []

    def add_arc(self, u: int, v: int, cap: float, cost: float) -> int:
        idx = len(self.to)
        self.head[u].append(idx)
        self.to.append(v)
        self.cap.append(cap)
        self.cost.append(cost)
        self.head[v].append(idx + 1)
        self.to.append(u)
        self.cap.append(0.0)
        self.cost.append(-cost)
        return idx

    def flow_on(self, arc: int) -> float:
        return self.cap[arc + 1] if arc % 2 == 0 else self.cap[arc]

    def solve(self, s: int, t: int, amount: float) -> float:
        """Push ``amount`` units from s to t; returns total cost.

        Raises Infeasible when the demand cannot be met.
        """
        potential = np.zeros(self.n)
        pushed = 0.0
        total = 0.0
        while pushed < amount - 1e-9:
            dist = np.full(self.n, np.inf)
            dist[s] = 0.0
            prev_arc = np.full(self.n, -1)
            heap = [(0.0, s)]
            while heap:
                d, node = heapq.heappop(heap)
                if d > dist[node] + 1e-12:
                    continue
                for arc in self.head[node]:
                    if self.cap[arc] <= 1e-9:
                        continue
                    nxt = self.to[arc]
                    nd = d + self.cost[arc] + potential[node] - potential[nxt]
                    if nd < dist[nxt] - 1e-12:
                        dist[nxt] = nd
                        prev_arc[nxt] = arc
                        heapq.heappush(heap, (nd, nxt))
            if not np.isfinite(dist[t]):
                raise errors.Infeasible("flow demand cannot be satisfied")
            finite = np.isfinite(dist)
            potential[finite] += dist[finite]

            # bottleneck along the augmenting path
            push = amount - pushed
            node = t
            while node != s:
                arc = prev_arc[node]
                push = min(push, self.cap[arc])
                node = self.to[arc ^ 1]
            node = t
            while node != s:
                arc = prev_arc[node]
                self.cap[arc] -= push
                self.cap[arc ^ 1] += push
                total += push * self.cost[arc]
                node = self.to[arc ^ 1]
            pushed += push
        return total


def degree_bounded_edge_cover(d: np.ndarray,
                              row_bounds: tuple[int, int],
                              col_bounds: tuple[int, int]) -> list[tuple[int, int]]:
    """Min-cost bipartite edge set with per-vertex degree bounds.

    ``d`` is (n_rows, n_cols) with +inf for absent edges; each row degree must
    land in ``row_bounds`` and each column degree in ``col_bounds`` (inclusive,
    lower bounds >= 1). Returns the chosen (row, col) pairs.
    """
    nr, nc = d.shape
    rlo, rhi = row_bounds
    clo, chi = col_bounds
    if rlo < 1 or clo < 1 or rhi < rlo or chi < clo:
        raise errors.Infeasible(f"degree bounds unsatisfiable: {row_bounds}, {col_bounds}")

    # nodes: 0=s, 1=t, 2=S*, 3=T*, rows 4.., cols 4+nr..
    S, T, SS, TT = 0, 1, 2, 3
    row0, col0 = 4, 4 + nr
    flow = MinCostFlow(4 + nr + nc)
    excess = np.zeros(4 + nr + nc)

    def add_bounded(u, v, lo, hi, cost):
        if hi > lo:
            flow.add_arc(u, v, hi - lo, cost)
        excess[v] += lo
        excess[u] -= lo

    for i in range(nr):
        add_bounded(S, row0 + i, rlo, rhi, 0.0)
    for j in range(nc):
        add_bounded(col0 + j, T, clo, chi, 0.0)
    edge_arcs = {}
    for i in range(nr):
        for j in range(nc):
            if np.isfinite(d[i, j]):
                edge_arcs[(i, j)] = flow.add_arc(row0 + i, col0 + j, 1.0, float(d[i, j]))
    if not edge_arcs:
        raise errors.Infeasible("no finite distances")
    flow.add_arc(T, S, float(nr * nc + nr + nc), 0.0)

    demand = 0.0
    for node in range(4 + nr + nc):
        if excess[node] > 0:
            flow.add_arc(SS, node, excess[node], 0.0)
            demand += excess[node]
        elif excess[node] < 0:
            flow.add_arc(node, TT, -excess[node], 0.0)
    flow.solve(SS, TT, demand)

    chosen = [(i, j) for (i, j), arc in edge_arcs.items()
              if flow.flow_on(arc) > 0.5]
    chosen.sort()
    return chosen
