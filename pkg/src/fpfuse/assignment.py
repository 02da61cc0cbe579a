"""Exact minimum-cost one-to-one assignment and minutiae correspondence.

The solver finds a maximal pairing (``min(n, m)`` pairs) of globally minimal
total cost.  ``+inf`` entries mark forbidden pairs; if they block every
maximal pairing the solve fails.  Among equally cheap optima the
lexicographically smallest row-sorted pair sequence is returned, so results
are reproducible across runs and platforms.

Correspondence between two minutiae sets scores each candidate pair with a
weighted sum of the positional L2 distance, the circular orientation
distance and the embedding L2 distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .templates import Minutia, TWO_PI


class InfeasibleAssignmentError(ValueError):
    """No maximal one-to-one pairing avoids the forbidden (+inf) entries."""


@dataclass(frozen=True)
class CostMatrix:
    """Dense n x m cost matrix; ``+inf`` marks a forbidden pair."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {arr.shape}")
        if np.isnan(arr).any():
            raise ValueError("cost matrix contains NaN")
        if np.isneginf(arr).any():
            raise ValueError("cost matrix contains -inf")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class Assignment:
    """Row-sorted one-to-one pairs and their exact total cost."""

    pairs: Tuple[Tuple[int, int], ...]
    total_cost: float


@dataclass(frozen=True)
class CorrespondenceWeights:
    """Weights of the location / orientation / embedding distance terms."""

    w_loc: float = 1.0
    w_ori: float = 57.2958  # ~1 per degree, comparable to 1 per pixel
    w_emb: float = 20.0

    def __post_init__(self):
        if self.w_loc < 0 or self.w_ori < 0 or self.w_emb < 0:
            raise ValueError("correspondence weights must be nonnegative")
        if self.w_loc == 0 and self.w_ori == 0 and self.w_emb == 0:
            raise ValueError("correspondence weights must not all be zero")


def angular_distance(a, b):
    """Circular distance between angles in radians, in [0, pi].  Vectorized."""
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    diff = np.mod(diff, TWO_PI)
    out = np.minimum(diff, TWO_PI - diff)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Solver

_TIE_TOL_SCALE = 1e-9


def _augmenting_path_solve(cost: np.ndarray):
    """Match every row of ``cost`` (n <= m required) to a distinct column.

    Shortest augmenting paths with potentials, O(n * m^2).  Returns
    ``(col_of_row, row_of_col, u, v)`` where the potentials satisfy
    ``cost[i, j] - u[i] - v[j] >= 0`` with equality on matched pairs,
    and ``v <= 0`` with ``v == 0`` on unmatched columns.
    """
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m)
    col_of_row = np.full(n, -1, dtype=np.int64)
    row_of_col = np.full(m, -1, dtype=np.int64)
    for start in range(n):
        minv = cost[start] - u[start] - v  # tentative distance to each column
        way = np.full(m, -1, dtype=np.int64)  # previous column on the cheapest known path
        used = np.zeros(m, dtype=bool)
        scanned: List[int] = []
        while True:
            cand = np.where(used, np.inf, minv)
            j = int(np.argmin(cand))
            dist = cand[j]
            if not np.isfinite(dist):
                raise InfeasibleAssignmentError(
                    f"row {start} cannot be matched: forbidden entries block every maximal pairing")
            used[j] = True
            if row_of_col[j] < 0:
                sink, total = j, dist
                break
            scanned.append(j)
            i = row_of_col[j]
            relaxed = dist + cost[i] - u[i] - v
            better = ~used & (relaxed < minv)
            minv = np.where(better, relaxed, minv)
            way = np.where(better, j, way)
        # Dual update keeps reduced costs nonnegative and the path tight.
        u[start] += total
        for j in scanned:
            u[row_of_col[j]] += total - minv[j]
            v[j] += minv[j] - total
        # Augment along the recorded path.
        j = sink
        while True:
            pcol = way[j]
            i = start if pcol == -1 else row_of_col[pcol]
            row_of_col[j] = i
            col_of_row[i] = j
            if pcol == -1:
                break
            j = pcol
    return col_of_row, row_of_col, u, v


def _is_unique_optimum(cost, col_of_row, u, v, tol) -> bool:
    """True when every off-solution entry has strictly positive reduced cost.

    Under that condition any other maximal pairing costs strictly more, so
    the solution is the unique optimum and already canonical.
    """
    red = cost - u[:, None] - v[None, :]
    red[np.arange(cost.shape[0]), col_of_row] = np.inf
    return bool((red > tol).all())


def _kuhn_augment(adj, start_row, row_of_col, col_of_row, banned_rows, banned_cols):
    """Try to re-match ``start_row`` via an alternating path in ``adj``.

    Mutates the matching arrays on success.  Banned rows/columns are
    treated as absent.
    """
    s = adj.shape[0]
    visited_cols = np.zeros(s, dtype=bool)
    parent_col = np.full(s, -1, dtype=np.int64)
    col_entered_from_row = np.full(s, -1, dtype=np.int64)
    stack = [start_row]
    entered_from = {start_row: -1}
    while stack:
        r = stack.pop()
        cols = np.flatnonzero(adj[r] & ~visited_cols & ~banned_cols)
        for c in cols:
            visited_cols[c] = True
            col_entered_from_row[c] = r
            parent_col[c] = entered_from[r]
            r2 = row_of_col[c]
            if r2 < 0:
                # Free column: flip the path.
                j = c
                while True:
                    i = col_entered_from_row[j]
                    pj = parent_col[j]
                    row_of_col[j] = i
                    col_of_row[i] = j
                    if pj == -1:
                        return True
                    j = pj
            if not banned_rows[r2] and r2 not in entered_from:
                entered_from[r2] = c
                stack.append(r2)
    return False


def _canonical_pairs(cost: np.ndarray, tol: float) -> List[Tuple[int, int]]:
    """Lexicographically smallest optimal maximal pairing.

    Pads to a square matrix with zero-cost dummy rows/columns (a dummy
    column stands for "row unmatched"), solves once for optimal potentials,
    then greedily fixes each real row to its smallest usable column inside
    the tight subgraph.  On a square matrix every perfect matching made of
    tight edges is optimal, so feasibility checks reduce to bipartite
    matching.
    """
    n, m = cost.shape
    s = max(n, m)
    sq = np.zeros((s, s))
    sq[:n, :m] = cost
    col_of_row, row_of_col, u, v = _augmenting_path_solve(sq)
    with np.errstate(invalid="ignore"):
        red = sq - u[:, None] - v[None, :]
    tight = np.nan_to_num(red, nan=np.inf, posinf=np.inf) <= tol
    banned_rows = np.zeros(s, dtype=bool)
    banned_cols = np.zeros(s, dtype=bool)
    pairs: List[Tuple[int, int]] = []
    for r in range(n):
        real_candidates = [c for c in np.flatnonzero(tight[r, :m]) if not banned_cols[c]]
        dummy_candidates = [c for c in np.flatnonzero(tight[r, m:]) + m if not banned_cols[c]]
        chosen = -1
        for c in real_candidates + dummy_candidates:
            if col_of_row[r] == c:
                chosen = c
                break
            # Reroute: free row r's current column and column c's current row,
            # then check the displaced row can still be matched elsewhere.
            c0 = col_of_row[r]
            r2 = row_of_col[c]
            snapshot = (col_of_row.copy(), row_of_col.copy())
            row_of_col[c0] = -1
            col_of_row[r] = c
            row_of_col[c] = r
            col_of_row[r2] = -1
            banned_rows[r] = True
            banned_cols[c] = True
            ok = _kuhn_augment(tight, r2, row_of_col, col_of_row, banned_rows, banned_cols)
            banned_rows[r] = False
            banned_cols[c] = False
            if ok:
                chosen = c
                break
            col_of_row, row_of_col = snapshot
        if chosen < 0:  # cannot happen: current matching is itself tight
            chosen = col_of_row[r]
        banned_rows[r] = True
        banned_cols[chosen] = True
        if chosen < m:
            pairs.append((r, int(chosen)))
    return pairs


def solve_assignment(c: CostMatrix | np.ndarray | Sequence[Sequence[float]]) -> Assignment:
    """Minimum-cost maximal one-to-one pairing of rows to columns.

    Ties between optimal pairings break toward the lexicographically
    smallest row-sorted pair sequence.  Raises
    :class:`InfeasibleAssignmentError` when forbidden entries block every
    maximal pairing.
    """
    if not isinstance(c, CostMatrix):
        c = CostMatrix(np.asarray(c, dtype=np.float64))
    cost = c.entries
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment((), 0.0)
    finite = cost[np.isfinite(cost)]
    tol = _TIE_TOL_SCALE * (1.0 + (float(np.abs(finite).max()) if finite.size else 0.0))
    if n <= m:
        col_of_row, _, u, v = _augmenting_path_solve(cost)
        pairs = [(i, int(col_of_row[i])) for i in range(n)]
        unique = _is_unique_optimum(cost.copy(), col_of_row, u, v, tol)
    else:
        row_of_col, _, u, v = _augmenting_path_solve(cost.T)
        pairs = sorted((int(row_of_col[j]), j) for j in range(m))
        unique = _is_unique_optimum(cost.T.copy(), row_of_col, u, v, tol)
    if not unique:
        pairs = _canonical_pairs(cost, tol)
    total = math.fsum(cost[i, j] for i, j in pairs)
    return Assignment(tuple(pairs), total)


# ---------------------------------------------------------------------------
# Minutiae correspondence

def minutia_cost(p: Minutia, g: Minutia, w: CorrespondenceWeights = CorrespondenceWeights(),
                 circular_orientation: bool = True) -> float:
    """Weighted dissimilarity of two minutiae (location, orientation, embedding)."""
    if p.embedding.shape[0] != g.embedding.shape[0]:
        raise ValueError(
            f"embedding dimension mismatch: {p.embedding.shape[0]} != {g.embedding.shape[0]}")
    loc = math.hypot(p.x - g.x, p.y - g.y)
    if circular_orientation:
        ori = angular_distance(p.theta, g.theta)
    else:
        ori = abs(float(p.theta) - float(g.theta))
    emb = float(np.linalg.norm(np.asarray(p.embedding, dtype=np.float64)
                               - np.asarray(g.embedding, dtype=np.float64)))
    return w.w_loc * loc + w.w_ori * ori + w.w_emb * emb


def correspondence_cost_matrix(pred_pos, pred_ori, pred_emb, gt_pos, gt_ori, gt_emb,
                               w: CorrespondenceWeights = CorrespondenceWeights(),
                               circular_orientation: bool = True) -> np.ndarray:
    """Pairwise minutia costs between two sets given as arrays."""
    pred_pos = np.asarray(pred_pos, dtype=np.float64)
    gt_pos = np.asarray(gt_pos, dtype=np.float64)
    pred_emb = np.asarray(pred_emb, dtype=np.float64)
    gt_emb = np.asarray(gt_emb, dtype=np.float64)
    if pred_emb.shape[1] != gt_emb.shape[1]:
        raise ValueError(
            f"embedding dimension mismatch: {pred_emb.shape[1]} != {gt_emb.shape[1]}")
    diff = pred_pos[:, None, :] - gt_pos[None, :, :]
    loc = np.sqrt((diff ** 2).sum(axis=2))
    po = np.asarray(pred_ori, dtype=np.float64)[:, None]
    go = np.asarray(gt_ori, dtype=np.float64)[None, :]
    if circular_orientation:
        ori = angular_distance(po, go)
    else:
        ori = np.abs(po - go)
    ediff = pred_emb[:, None, :] - gt_emb[None, :, :]
    emb = np.sqrt((ediff ** 2).sum(axis=2))
    return w.w_loc * loc + w.w_ori * ori + w.w_emb * emb


def correspond_minutiae(pred: Sequence[Minutia], gt: Sequence[Minutia],
                        w: CorrespondenceWeights = CorrespondenceWeights(),
                        circular_orientation: bool = True) -> Assignment:
    """Optimal one-to-one correspondence between two minutiae sets."""
    if not pred or not gt:
        return Assignment((), 0.0)
    if pred[0].embedding.shape[0] != gt[0].embedding.shape[0]:
        raise ValueError("embedding dimension mismatch between the two sets")
    pred_pos = np.array([(m.x, m.y) for m in pred])
    gt_pos = np.array([(m.x, m.y) for m in gt])
    pred_ori = np.array([m.theta for m in pred])
    gt_ori = np.array([m.theta for m in gt])
    pred_emb = np.stack([m.embedding for m in pred])
    gt_emb = np.stack([m.embedding for m in gt])
    cost = correspondence_cost_matrix(pred_pos, pred_ori, pred_emb,
                                      gt_pos, gt_ori, gt_emb, w, circular_orientation)
    return solve_assignment(cost)
