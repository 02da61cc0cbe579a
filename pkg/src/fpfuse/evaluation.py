"""Verification-protocol enumeration, score metrics and minutiae quality.

Pairs follow the standard verification protocol: genuine comparisons are
all impression pairs within a subject; impostor comparisons take one
canonical impression per subject across all subject pairs, giving
``S*I*(I-1)/2`` genuine and ``S*(S-1)/2`` impostor comparisons.

Score metrics use the decision rule ``score >= threshold -> genuine`` on a
grid of the distinct observed scores plus +inf, which keeps every reported
operating point realizable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import CorrespondenceWeights, correspondence_cost_matrix, solve_assignment
from .matching import LocalMatchConfig, global_match, local_match
from .pipeline import (GATE_CONFIDENT_GENUINE, GATE_CONFIDENT_IMPOSTOR,
                       GATE_LOCAL_EVALUATED, PipelineConfig,
                       SKIP_GENUINE_LOCAL, SKIP_IMPOSTOR_LOCAL)
from .templates import Corpus, Minutia, Template

PairKey = Tuple[Tuple[str, int], Tuple[str, int]]


@dataclass(frozen=True)
class Protocol:
    """Subject/impression counts of an evaluation corpus."""

    subjects: int
    impressions: int

    def __post_init__(self):
        if self.subjects < 1 or self.impressions < 1:
            raise ValueError("protocol needs at least one subject and one impression")

    @property
    def genuine_count(self) -> int:
        return self.subjects * (self.impressions * (self.impressions - 1)) // 2

    @property
    def impostor_count(self) -> int:
        return self.subjects * (self.subjects - 1) // 2

    @classmethod
    def parse(cls, text: str) -> "Protocol":
        try:
            s, i = text.lower().split("x")
            return cls(subjects=int(s), impressions=int(i))
        except (ValueError, AttributeError) as exc:
            raise ValueError(f"protocol must look like '100x8', got {text!r}") from exc


def enumerate_pairs(protocol: Protocol, corpus: Optional[Corpus] = None,
                    impostor_mode: str = "first_impression") -> Tuple[List[PairKey], List[PairKey]]:
    """Deterministic genuine and impostor pair lists (subject-major order)."""
    if impostor_mode not in ("first_impression", "all_pairs"):
        raise ValueError(f"unknown impostor_mode {impostor_mode!r}")
    if corpus is not None:
        ids = corpus.subject_ids
        if len(ids) != protocol.subjects:
            raise ValueError(f"corpus has {len(ids)} subjects, protocol expects {protocol.subjects}")
        for sid in ids:
            have = len(corpus.subjects[sid])
            if have != protocol.impressions:
                raise ValueError(
                    f"ragged corpus: subject {sid} has {have} impressions, expected {protocol.impressions}")
    else:
        width = max(3, len(str(protocol.subjects - 1)))
        ids = [f"{i:0{width}d}" for i in range(protocol.subjects)]
    genuine: List[PairKey] = []
    for sid in ids:
        for i in range(protocol.impressions):
            for j in range(i + 1, protocol.impressions):
                genuine.append(((sid, i), (sid, j)))
    impostor: List[PairKey] = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            if impostor_mode == "first_impression":
                impostor.append(((ids[a], 0), (ids[b], 0)))
            else:
                for i in range(protocol.impressions):
                    for j in range(protocol.impressions):
                        impostor.append(((ids[a], i), (ids[b], j)))
    return genuine, impostor


# ---------------------------------------------------------------------------
# Score metrics

@dataclass(frozen=True)
class RocPoint:
    threshold: float
    far: float
    frr: float


def _score_grid(genuine: np.ndarray, impostor: np.ndarray) -> np.ndarray:
    return np.concatenate([np.unique(np.concatenate([genuine, impostor])), [np.inf]])


def _far_frr(genuine: np.ndarray, impostor: np.ndarray, thresholds: np.ndarray):
    # score >= threshold -> accept
    g = np.sort(genuine)
    i = np.sort(impostor)
    far = 1.0 - np.searchsorted(i, thresholds, side="left") / i.size
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    return far, frr


def _as_scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} score list is empty")
    return arr


def frr_at_far(genuine_scores, impostor_scores, far_target: float) -> Tuple[float, float]:
    """FRR at the loosest threshold whose FAR still meets the target.

    Returns ``(frr, threshold)`` where the threshold is the smallest grid
    value with ``FAR(threshold) <= far_target``.
    """
    if not 0.0 <= far_target <= 1.0:
        raise ValueError("far_target must lie in [0, 1]")
    genuine = _as_scores(genuine_scores, "genuine")
    impostor = _as_scores(impostor_scores, "impostor")
    grid = _score_grid(genuine, impostor)
    far, frr = _far_frr(genuine, impostor, grid)
    ok = np.flatnonzero(far <= far_target)
    idx = int(ok[0])  # far is non-increasing in the threshold, so ok is never empty
    return float(frr[idx]), float(grid[idx])


def roc_curve(genuine_scores, impostor_scores) -> List[RocPoint]:
    """One operating point per distinct observed score (plus +inf)."""
    genuine = _as_scores(genuine_scores, "genuine")
    impostor = _as_scores(impostor_scores, "impostor")
    grid = _score_grid(genuine, impostor)
    far, frr = _far_frr(genuine, impostor, grid)
    return [RocPoint(float(t), float(fa), float(fr)) for t, fa, fr in zip(grid, far, frr)]


def eer(genuine_scores, impostor_scores) -> float:
    """Operating point where FAR and FRR meet (linear interpolation)."""
    genuine = _as_scores(genuine_scores, "genuine")
    impostor = _as_scores(impostor_scores, "impostor")
    grid = _score_grid(genuine, impostor)
    far, frr = _far_frr(genuine, impostor, grid)
    diff = far - frr
    sign_change = np.flatnonzero((diff[:-1] > 0) & (diff[1:] <= 0))
    if sign_change.size:
        k = int(sign_change[0])
        denom = diff[k] - diff[k + 1]
        alpha = diff[k] / denom if denom > 0 else 0.0
        return float(far[k] + alpha * (far[k + 1] - far[k]))
    k = int(np.argmin(np.abs(diff)))
    return float(0.5 * (far[k] + frr[k]))


# ---------------------------------------------------------------------------
# Minutiae quality

@dataclass(frozen=True)
class MinutiaeQuality:
    paired: int
    missed: int
    spurious: int
    goodness_index: float
    avg_positional_error_px: float


def minutiae_quality(pred: Sequence[Minutia], gt: Sequence[Minutia],
                     dist_threshold_px: float = 20.0) -> MinutiaeQuality:
    """Detection quality of a predicted minutiae set against a reference.

    Pairs by optimal location-only correspondence, accepts pairs within the
    distance threshold, and scores ``(paired - missed - spurious) / |gt|``.
    An empty reference yields a goodness index of 0.
    """
    paired = 0
    errors: List[float] = []
    if pred and gt:
        pred_pos = np.array([(m.x, m.y) for m in pred], dtype=np.float64)
        gt_pos = np.array([(m.x, m.y) for m in gt], dtype=np.float64)
        diff = pred_pos[:, None, :] - gt_pos[None, :, :]
        cost = np.sqrt((diff ** 2).sum(axis=2))
        for r, c in solve_assignment(cost).pairs:
            d = float(cost[r, c])
            if d <= dist_threshold_px:
                paired += 1
                errors.append(d)
    missed = len(gt) - paired
    spurious = len(pred) - paired
    gi = (paired - missed - spurious) / len(gt) if gt else 0.0
    avg_err = float(np.mean(errors)) if errors else 0.0
    return MinutiaeQuality(paired=paired, missed=missed, spurious=spurious,
                           goodness_index=gi, avg_positional_error_px=avg_err)


def aggregate_minutiae_quality(corpus: Corpus, references: Corpus,
                               dist_threshold_px: float = 20.0) -> MinutiaeQuality:
    """Pool per-impression quality counts across a corpus."""
    paired = missed = spurious = 0
    weighted_err = 0.0
    for sid in corpus.subject_ids:
        for k, t in enumerate(corpus.subjects[sid]):
            q = minutiae_quality(t.minutiae, references.subjects[sid][k].minutiae,
                                 dist_threshold_px)
            paired += q.paired
            missed += q.missed
            spurious += q.spurious
            weighted_err += q.avg_positional_error_px * q.paired
    total_gt = paired + missed
    gi = (paired - missed - spurious) / total_gt if total_gt else 0.0
    avg_err = weighted_err / paired if paired else 0.0
    return MinutiaeQuality(paired=paired, missed=missed, spurious=spurious,
                           goodness_index=gi, avg_positional_error_px=avg_err)


# ---------------------------------------------------------------------------
# Corpus scoring

@dataclass(frozen=True)
class ChannelScores:
    """Raw per-pair channel scores, computed once and reusable across configs."""

    pairs: Tuple[PairKey, ...]
    s_g_raw: np.ndarray
    s_l_raw: np.ndarray
    work_units: np.ndarray


# Shared scoring context for forked workers; set just before the pool spawns
# so children inherit the corpus without pickling it per chunk.
_SCORING_CONTEXT: dict = {}


def _score_chunk(pairs, corpus: Corpus, local_cfg: LocalMatchConfig):
    s_g = np.empty(len(pairs))
    s_l = np.empty(len(pairs))
    work = np.empty(len(pairs), dtype=np.int64)
    for idx, ((sid_a, imp_a), (sid_b, imp_b)) in enumerate(pairs):
        a = corpus.template(sid_a, imp_a)
        b = corpus.template(sid_b, imp_b)
        s_g[idx] = global_match(a, b)
        local = local_match(a, b, local_cfg)
        s_l[idx] = local.score
        work[idx] = local.work_units
    return s_g, s_l, work


def _score_chunk_from_context(pairs):
    return _score_chunk(pairs, _SCORING_CONTEXT["corpus"], _SCORING_CONTEXT["local_cfg"])


def score_pairs(corpus: Corpus, pairs: Sequence[PairKey],
                local_cfg: LocalMatchConfig = LocalMatchConfig(),
                jobs: int = 1) -> ChannelScores:
    """Raw global and local scores for every pair (local always evaluated).

    With ``jobs > 1`` the pair list is chunked across worker processes;
    chunks are reassembled in order, so results do not depend on the worker
    count.
    """
    pairs = list(pairs)
    if jobs <= 1 or len(pairs) < 2 * jobs:
        s_g, s_l, work = _score_chunk(pairs, corpus, local_cfg)
    else:
        import multiprocessing as mp
        bounds = np.linspace(0, len(pairs), jobs * 4 + 1).astype(int)
        chunks = [pairs[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        _SCORING_CONTEXT["corpus"] = corpus
        _SCORING_CONTEXT["local_cfg"] = local_cfg
        try:
            ctx = mp.get_context("fork")
            with ctx.Pool(jobs) as pool:
                parts = pool.map(_score_chunk_from_context, chunks)
        finally:
            _SCORING_CONTEXT.clear()
        s_g = np.concatenate([p[0] for p in parts])
        s_l = np.concatenate([p[1] for p in parts])
        work = np.concatenate([p[2] for p in parts])
    return ChannelScores(pairs=tuple(pairs), s_g_raw=s_g, s_l_raw=s_l, work_units=work)


@dataclass(frozen=True)
class PipelineScores:
    """Final scores and gate bookkeeping for one pipeline configuration."""

    final: np.ndarray
    gates: np.ndarray            # int codes: 0 genuine-gate, 1 impostor-gate, 2 local
    work_units: np.ndarray

    @property
    def gate_stats(self) -> Dict[str, int]:
        return {
            GATE_CONFIDENT_GENUINE: int((self.gates == 0).sum()),
            GATE_CONFIDENT_IMPOSTOR: int((self.gates == 1).sum()),
            GATE_LOCAL_EVALUATED: int((self.gates == 2).sum()),
        }


def apply_pipeline(scores: ChannelScores, cfg: PipelineConfig,
                   channel: str = "fused") -> PipelineScores:
    """Derive a pipeline's final scores from precomputed raw channel scores.

    ``channel`` picks the fused pipeline or a single-channel baseline
    ("global" or "local"); single-channel baselines ignore gating.
    Numerically identical to running ``infer_pair`` per pair.
    """
    s_g = scores.s_g_raw
    norm_g = cfg.global_normalizer()
    norm_l = cfg.local_normalizer()
    s_g_norm = np.clip(np.asarray(norm_g(s_g), dtype=np.float64), 0.0, 1.0)
    s_l_norm = np.clip(np.asarray(norm_l(scores.s_l_raw), dtype=np.float64), 0.0, 1.0)
    if channel == "global":
        return PipelineScores(final=s_g_norm, gates=np.full(s_g.size, 2, dtype=np.int64),
                              work_units=np.zeros(s_g.size, dtype=np.int64))
    if channel == "local":
        return PipelineScores(final=s_l_norm, gates=np.full(s_g.size, 2, dtype=np.int64),
                              work_units=scores.work_units.copy())
    if channel != "fused":
        raise ValueError(f"unknown channel {channel!r}")
    above = s_g > cfg.theta_t
    below = s_g < cfg.theta_f
    gates = np.where(above, 0, np.where(below, 1, 2)).astype(np.int64)
    s_l_eff = np.where(above, SKIP_GENUINE_LOCAL, np.where(below, SKIP_IMPOSTOR_LOCAL, s_l_norm))
    if cfg.fusion == "mean":
        final = 0.5 * (s_g_norm + s_l_eff)
    else:
        final = np.maximum(s_g_norm, s_l_eff)
    work = np.where(gates == 2, scores.work_units, 0)
    return PipelineScores(final=final, gates=gates, work_units=work)


@dataclass(frozen=True)
class EvalReport:
    """Everything the evaluation protocol reports for one pipeline run."""

    genuine_count: int
    impostor_count: int
    frr_at_far: Dict[str, float]
    thresholds: Dict[str, float]
    eer: float
    roc: List[RocPoint]
    gate_stats: Dict[str, int]
    work_units_total: int
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray
    minutiae_quality: Optional[MinutiaeQuality] = None

    def to_dict(self) -> dict:
        doc = {
            "counts": {"genuine": self.genuine_count, "impostor": self.impostor_count},
            "frr_at_far": dict(self.frr_at_far),
            "thresholds": dict(self.thresholds),
            "eer": self.eer,
            "roc": [{"thr": p.threshold, "far": p.far, "frr": p.frr} for p in self.roc],
            "gate_stats": dict(self.gate_stats),
            "work_units_total": self.work_units_total,
            "minutiae_quality": None,
        }
        if self.minutiae_quality is not None:
            q = self.minutiae_quality
            doc["minutiae_quality"] = {
                "paired": q.paired, "missed": q.missed, "spurious": q.spurious,
                "goodness_index": q.goodness_index,
                "avg_positional_error_px": q.avg_positional_error_px,
            }
        return doc


def evaluate_scores(genuine: np.ndarray, impostor: np.ndarray,
                    gate_stats: Dict[str, int], work_total: int,
                    far_targets: Sequence[float] = (0.001, 0.01),
                    quality: Optional[MinutiaeQuality] = None) -> EvalReport:
    frr_map = {}
    thr_map = {}
    for target in far_targets:
        frr, thr = frr_at_far(genuine, impostor, target)
        key = f"{target:g}"
        frr_map[key] = frr
        thr_map[key] = thr
    return EvalReport(
        genuine_count=int(genuine.size),
        impostor_count=int(impostor.size),
        frr_at_far=frr_map,
        thresholds=thr_map,
        eer=eer(genuine, impostor),
        roc=roc_curve(genuine, impostor),
        gate_stats=gate_stats,
        work_units_total=int(work_total),
        genuine_scores=genuine,
        impostor_scores=impostor,
        minutiae_quality=quality,
    )


def evaluate_corpus(corpus: Corpus, protocol: Protocol, cfg: PipelineConfig,
                    references: Optional[Corpus] = None, jobs: int = 1,
                    far_targets: Sequence[float] = (0.001, 0.01),
                    channel: str = "fused") -> EvalReport:
    """Score every protocol pair through the configured pipeline."""
    genuine_pairs, impostor_pairs = enumerate_pairs(protocol, corpus)
    n_gen = len(genuine_pairs)
    raw = score_pairs(corpus, genuine_pairs + impostor_pairs, cfg.local, jobs=jobs)
    derived = apply_pipeline(raw, cfg, channel=channel)
    quality = None
    if references is not None:
        quality = aggregate_minutiae_quality(corpus, references)
    return evaluate_scores(
        genuine=derived.final[:n_gen],
        impostor=derived.final[n_gen:],
        gate_stats=derived.gate_stats,
        work_total=int(derived.work_units.sum()),
        far_targets=far_targets,
        quality=quality,
    )
