"""Exact minimum-cost bipartite assignment (Hungarian / Kuhn-Munkres).

Shortest-augmenting-path formulation with row and column potentials,
O(n^3). Rectangular inputs are zero-padded to square and padded pairs are
dropped from the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NumericError, as_matrix


@dataclass(frozen=True)
class MatchAssignment:
    pairs: tuple[tuple[int, int], ...]
    unmatched_queries: tuple[int, ...]

    def total(self, cost) -> float:
        cost = np.asarray(cost, dtype=np.float64)
        return float(sum(cost[i, j] for i, j in self.pairs))


def _solve_square(cost: np.ndarray) -> np.ndarray:
    """Return ``col_of_row`` minimising the total cost of a square matrix."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # p[j]: row (1-based) assigned to column j; column 0 is a virtual source
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def linear_assignment(cost, maximize: bool = False) -> list[tuple[int, int]]:
    """Optimal injective assignment on a possibly rectangular matrix.

    Returns ``(row, col)`` pairs for real (non-padded) rows and columns,
    sorted by row.
    """
    cost = as_matrix(cost, "cost")
    if np.isnan(cost).any():
        raise NumericError("assignment cost contains NaN")
    if not np.isfinite(cost).all():
        raise NumericError("assignment cost must be finite")
    n, m = cost.shape
    k = max(n, m)
    if k == 0:
        return []
    square = np.zeros((k, k))
    square[:n, :m] = -cost if maximize else cost
    cols = _solve_square(square)
    return [(i, int(cols[i])) for i in range(n) if cols[i] < m]


def hungarian_match(cost) -> MatchAssignment:
    """Minimum-cost matching of queries (rows) to ground-truth entities (columns)."""
    cost = as_matrix(cost, "cost")
    pairs = linear_assignment(cost)
    matched = {i for i, _ in pairs}
    return MatchAssignment(tuple(pairs), tuple(i for i in range(cost.shape[0]) if i not in matched))
