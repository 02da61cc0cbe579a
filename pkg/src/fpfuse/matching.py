"""Global and local matchers over two templates.

Global matching is a dot product of the unit global embeddings, clamped to
[0, 1].  Local matching pairs minutiae one-to-one: candidate pairs above an
embedding-cosine floor are filtered for geometric consistency under a rigid
alignment seeded from the best candidate, and the survivors are assigned to
maximize the sum of cosine similarities.  The raw local score is that sum,
unbounded above; ``work_units`` counts candidate evaluations and is the
matching-cost proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .assignment import angular_distance, solve_assignment
from .templates import Template

# Cosines within one part in 1e12 of 1 are snapped to exactly 1 so that a
# self match scores exactly the minutiae count.
_COS_SNAP = 1e-12


@dataclass(frozen=True)
class LocalMatchConfig:
    """Knobs of the local matcher."""

    emb_sim_floor: float = 0.3
    geo_tolerance_px: float = 20.0
    ori_tolerance_rad: float = 0.35
    max_minutiae_used: Optional[int] = None
    seed_candidates: int = 1      # >1 tries that many top-cosine alignment seeds
    symmetric: bool = False       # average match(a,b) and match(b,a)

    def __post_init__(self):
        if not -1.0 <= self.emb_sim_floor <= 1.0:
            raise ValueError("emb_sim_floor must lie in [-1, 1]")
        if self.geo_tolerance_px < 0 or self.ori_tolerance_rad < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.max_minutiae_used is not None and self.max_minutiae_used <= 0:
            raise ValueError("max_minutiae_used must be positive or None")
        if self.seed_candidates < 1:
            raise ValueError("seed_candidates must be >= 1")


@dataclass(frozen=True)
class LocalMatchResult:
    score: float
    matched_pairs: Tuple[Tuple[int, int, float], ...]
    work_units: int


def global_match(a: Template, b: Template) -> float:
    """Similarity of the global embeddings, in [0, 1]."""
    if a.global_dim != b.global_dim:
        raise ValueError(f"global dimension mismatch: {a.global_dim} != {b.global_dim}")
    dot = float(np.dot(np.asarray(a.global_embedding, dtype=np.float64),
                       np.asarray(b.global_embedding, dtype=np.float64)))
    return min(1.0, max(0.0, dot))


def _cosine_matrix(emb_a: np.ndarray, emb_b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(emb_a, axis=1)
    nb = np.linalg.norm(emb_b, axis=1)
    denom = np.outer(na, nb)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = (emb_a @ emb_b.T) / denom
    cos[~np.isfinite(cos)] = -np.inf
    np.clip(cos, -1.0, 1.0, out=cos)
    cos[cos > 1.0 - _COS_SNAP] = 1.0
    return cos


def _best_pairing(cos: np.ndarray, survivors: np.ndarray):
    """Max-cosine one-to-one subset of the survivor pairs.

    Rows may stay unmatched via zero-cost dummy columns, so pairs with
    negative cosine are never forced in.
    """
    rows = np.flatnonzero(survivors.any(axis=1))
    cols = np.flatnonzero(survivors.any(axis=0))
    if rows.size == 0:
        return 0.0, ()
    sub = np.full((rows.size, cols.size + rows.size), np.inf)
    sub_cos = cos[np.ix_(rows, cols)]
    sub_mask = survivors[np.ix_(rows, cols)]
    sub[:, :cols.size] = np.where(sub_mask, -sub_cos, np.inf)
    sub[:, cols.size:] = 0.0
    result = solve_assignment(sub)
    pairs = []
    for r, c in result.pairs:
        if c < cols.size:
            ia, jb = int(rows[r]), int(cols[c])
            pairs.append((ia, jb, float(cos[ia, jb])))
    score = math.fsum(p[2] for p in pairs)
    return score, tuple(sorted(pairs))


def _match_one_direction(pos_a, ori_a, emb_a, pos_b, ori_b, emb_b, cfg: LocalMatchConfig):
    na, nb = pos_a.shape[0], pos_b.shape[0]
    work = na * nb
    if work == 0:
        return 0.0, (), work
    cos = _cosine_matrix(emb_a, emb_b)
    candidates = cos >= cfg.emb_sim_floor
    if not candidates.any():
        return 0.0, (), work
    masked = np.where(candidates, cos, -np.inf)
    order = np.argsort(-masked, axis=None, kind="stable")
    n_seeds = min(cfg.seed_candidates, int(candidates.sum()))
    best_score, best_pairs = -1.0, ()
    for seed_flat in order[:n_seeds]:
        i, j = np.unravel_index(int(seed_flat), cos.shape)
        rot = float(ori_b[j] - ori_a[i])
        c, s = math.cos(rot), math.sin(rot)
        rot_mat = np.array([[c, -s], [s, c]])
        projected = pos_a @ rot_mat.T + (pos_b[j] - rot_mat @ pos_a[i])
        diff = projected[:, None, :] - pos_b[None, :, :]
        geo_ok = (diff ** 2).sum(axis=2) <= cfg.geo_tolerance_px ** 2
        ori_ok = angular_distance(ori_a[:, None] + rot, ori_b[None, :]) <= cfg.ori_tolerance_rad
        score, pairs = _best_pairing(cos, candidates & geo_ok & ori_ok)
        if score > best_score:
            best_score, best_pairs = score, pairs
    return max(best_score, 0.0), best_pairs, work


def local_match(a: Template, b: Template, cfg: LocalMatchConfig = LocalMatchConfig()) -> LocalMatchResult:
    """Pair minutiae one-to-one and score the match by summed cosines.

    Steps: truncate each side to ``max_minutiae_used`` (template order),
    collect candidate pairs above the cosine floor, estimate one rigid
    alignment from the highest-cosine candidate, drop candidates that are
    geometrically inconsistent with it, then pick the one-to-one pairing
    that maximizes the cosine sum.  Degenerate inputs score 0.
    """
    if a.minutiae and b.minutiae and a.minutia_dim != b.minutia_dim:
        raise ValueError(f"minutia dimension mismatch: {a.minutia_dim} != {b.minutia_dim}")
    pos_a, ori_a, emb_a = a.minutiae_arrays()
    pos_b, ori_b, emb_b = b.minutiae_arrays()
    k = cfg.max_minutiae_used
    if k is not None:
        pos_a, ori_a, emb_a = pos_a[:k], ori_a[:k], emb_a[:k]
        pos_b, ori_b, emb_b = pos_b[:k], ori_b[:k], emb_b[:k]
    score, pairs, work = _match_one_direction(pos_a, ori_a, emb_a, pos_b, ori_b, emb_b, cfg)
    if cfg.symmetric:
        back_score, _, back_work = _match_one_direction(pos_b, ori_b, emb_b, pos_a, ori_a, emb_a, cfg)
        score = 0.5 * (score + back_score)
        work += back_work
    return LocalMatchResult(score=score, matched_pairs=pairs, work_units=work)


def match_work(result: LocalMatchResult) -> int:
    """Candidate evaluations performed by a local match (matching-cost proxy)."""
    return result.work_units
