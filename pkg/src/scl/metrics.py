"""Clustering accuracy (Hungarian-matched) and normalized mutual information."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def _potentials(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """O(k^3) shortest augmenting path Kuhn-Munkres.

    Returns (row_to_col, u, v) with u_i + v_j <= cost_ij and equality on the
    matching.
    """
    k = cost.shape[0]
    inf = np.inf
    u = np.zeros(k + 1)
    v = np.zeros(k + 1)
    match = np.zeros(k + 1, dtype=int)  # match[j] = row (1-based) assigned to column j
    way = np.zeros(k + 1, dtype=int)
    for i in range(1, k + 1):
        match[0] = i
        j0 = 0
        minv = np.full(k + 1, inf)
        used = np.zeros(k + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    row_to_col = np.empty(k, dtype=int)
    for j in range(1, k + 1):
        row_to_col[match[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _augment_to(tight: np.ndarray, assign: np.ndarray, row: int, col: int) -> np.ndarray | None:
    """Try to re-route a perfect matching so that ``row`` takes ``col``.

    Only rows after ``row`` may move, and only along tight edges.
    """
    k = len(assign)
    owner = np.empty(k, dtype=int)
    owner[assign] = np.arange(k)
    target = assign[row]
    start = owner[col]
    # BFS from the displaced row for a path of tight edges ending at the column ``row`` frees
    prev = {start: None}
    queue = [start]
    found = None
    while queue and found is None:
        r = queue.pop(0)
        for c in np.flatnonzero(tight[r]):
            if c == col:
                continue
            if c == target:
                found = (r, c)
                break
            nxt = owner[c]
            if nxt > row and nxt not in prev:
                prev[nxt] = (r, c)
                queue.append(nxt)
    if found is None:
        return None
    new = assign.copy()
    r, c = found
    while True:
        new[r] = c
        step = prev[r]
        if step is None:
            break
        r, c = step
    new[row] = col
    return new


def hungarian_assignment(cost) -> np.ndarray:
    """Permutation ``sigma`` minimizing sum_i cost[i, sigma[i]].

    Among optimal permutations the lexicographically smallest is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"assignment needs a square cost matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix must be finite")
    k = cost.shape[0]
    if k == 0:
        return np.zeros(0, dtype=int)
    assign, u, v = _potentials(cost)
    # every optimal permutation uses only edges with zero reduced cost
    reduced = cost - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    tight = reduced <= tol
    tight[np.arange(k), assign] = True
    for i in range(k):
        for j in np.flatnonzero(tight[i]):
            if j >= assign[i]:
                break
            if j in assign[:i]:
                continue
            rerouted = _augment_to(tight, assign, i, j)
            if rerouted is not None:
                assign = rerouted
                break
    return assign


def contingency(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts table (pred labels x truth labels) plus the label values of each axis."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"label vectors must be 1-D and equally long, got {pred.shape} and {truth.shape}")
    if pred.size == 0:
        raise ContractError("label vectors are empty")
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    table = np.zeros((len(p_vals), len(t_vals)), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table, p_vals, t_vals


def clustering_accuracy(pred, truth) -> float:
    table, _, _ = contingency(pred, truth)
    k = max(table.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[: table.shape[0], : table.shape[1]] = table
    sigma = hungarian_assignment(-square)
    matched = int(square[np.arange(k), sigma].sum())
    return matched / int(table.sum())


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies (nats)."""
    table, _, _ = contingency(pred, truth)
    n = int(table.sum())
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return max(mi, 0.0) / ((h_pred + h_true) / 2.0)
