"""Seeded synthetic corpus generator.

Identities are random points in embedding space with random minutiae;
impressions apply a rigid transform plus per-field jitter, dropout and
spurious additions.  Two mutually exclusive failure modes can be injected:
subject clusters that share a near-identical global embedding (high global
similarity between different identities) and distorted impressions whose
local features are heavily corrupted while the global embedding survives.

Every random draw comes from a counter-based generator keyed by
``(seed, subject, impression, field)``, so corpora are bit-reproducible
regardless of generation order or parallelism.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .templates import (Corpus, Minutia, Template, canonicalize_angle,
                        write_corpus)

# Field tags for RNG stream keys.
_F_GLOBAL = 0
_F_MINUTIAE = 1
_F_TRANSFORM = 2
_F_JITTER = 3
_F_DROP = 4
_F_SPURIOUS = 5
_F_COLLIDE = 6
_F_DISTORT = 7
_F_WEAK = 8
_IDENTITY_IMPRESSION = 0xFFFF  # impression slot for per-identity streams


@dataclass(frozen=True)
class SynthSpec:
    """All generator knobs.  Probabilities in [0, 1], spreads >= 0."""

    seed: int = 0
    subjects: int = 10
    impressions: int = 4
    global_dim: int = 192
    minutia_dim: int = 64
    minutiae_per_identity: int = 50
    image_size: Tuple[int, int] = (384, 384)
    # Impression noise.
    rotation_range_rad: float = 0.1
    translation_range_px: float = 10.0
    position_jitter_px: float = 1.5
    orientation_jitter_rad: float = 0.02
    embedding_jitter: float = 0.04
    global_jitter: float = 0.013
    drop_probability: float = 0.05
    spurious_rate: float = 2.0
    # Weak captures: non-enrollment impressions (k >= 1) whose global
    # embedding is much noisier while the minutiae stay clean.  Models
    # low-quality acquisitions; enrollment impressions are quality-gated.
    weak_global_rate: float = 0.0
    weak_global_jitter: float = 0.045
    # Failure injection.
    global_collision_rate: float = 0.0
    collision_offset: float = 0.012
    collision_similarity_floor: float = 0.9
    distortion_rate: float = 0.0
    distortion_drop_fraction: float = 0.5
    distortion_embedding_jitter: float = 0.6
    distortion_jitter_scale: float = 4.0

    def __post_init__(self):
        for name in ("drop_probability", "global_collision_rate", "distortion_rate",
                     "distortion_drop_fraction", "weak_global_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} must lie in [0, 1]")
        for name in ("rotation_range_rad", "translation_range_px", "position_jitter_px",
                     "orientation_jitter_rad", "embedding_jitter", "global_jitter",
                     "weak_global_jitter", "spurious_rate", "collision_offset",
                     "distortion_embedding_jitter", "distortion_jitter_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.subjects < 1 or self.impressions < 1:
            raise ValueError("need at least one subject and one impression")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["image_size"] = list(self.image_size)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        if "image_size" in doc:
            h, w = doc["image_size"]
            doc["image_size"] = (int(h), int(w))
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _rng(spec_seed: int, subject: int, impression: int, field_tag: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(spec_seed) & (2 ** 64 - 1),
                                 spawn_key=(subject, impression, field_tag))
    return np.random.Generator(np.random.Philox(seq))


def _unit(vec: np.ndarray) -> np.ndarray:
    return np.asarray(vec, dtype=np.float64) / np.linalg.norm(vec)


@dataclass(frozen=True)
class Identity:
    """Latent identity: a global direction plus a canonical minutiae set."""

    subject_index: int
    global_direction: np.ndarray          # unit, (d_g,)
    positions: np.ndarray                 # (L, 2) pixels
    orientations: np.ndarray              # (L,) radians in [0, 2pi)
    embeddings: np.ndarray                # (L, d_m) unit rows


def generate_identity(spec: SynthSpec, subject_index: int) -> Identity:
    """Deterministic latent identity for ``(spec.seed, subject_index)``."""
    rng = _rng(spec.seed, subject_index, _IDENTITY_IMPRESSION, _F_GLOBAL)
    direction = _unit(rng.normal(size=spec.global_dim))
    rng = _rng(spec.seed, subject_index, _IDENTITY_IMPRESSION, _F_MINUTIAE)
    n = spec.minutiae_per_identity
    h, w = spec.image_size
    positions = np.column_stack([rng.uniform(0.0, w, size=n), rng.uniform(0.0, h, size=n)])
    orientations = rng.uniform(0.0, 2.0 * math.pi, size=n)
    embeddings = rng.normal(size=(n, spec.minutia_dim))
    if n:
        embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
    return Identity(subject_index=subject_index, global_direction=direction,
                    positions=positions, orientations=orientations, embeddings=embeddings)


def _apply_collisions(spec: SynthSpec, identities: List[Identity]):
    """Group subjects into clusters sharing a global direction.

    The number of collided impostor subject-pairs approximates
    ``global_collision_rate * C(S, 2)``; a cluster of k subjects realizes
    C(k, 2) collided pairs (pairwise copying without clusters would leak
    extra near-identical pairs through transitivity).
    """
    s = spec.subjects
    target = round(spec.global_collision_rate * s * (s - 1) / 2)
    if target < 1:
        return identities, []
    order_rng = _rng(spec.seed, 0, _IDENTITY_IMPRESSION, _F_COLLIDE)
    pool = list(order_rng.permutation(s))
    clusters: List[List[int]] = []
    remaining = target
    while remaining >= 1 and len(pool) >= 2:
        k = int((1 + math.isqrt(1 + 8 * remaining)) // 2)
        k = max(2, min(k, len(pool)))
        clusters.append(sorted(int(x) for x in pool[:k]))
        pool = pool[k:]
        remaining -= k * (k - 1) // 2
    collided_pairs: List[Tuple[int, int]] = []
    out = list(identities)
    for cluster in clusters:
        center = identities[cluster[0]].global_direction
        for subject in cluster:
            noise_rng = _rng(spec.seed, subject, _IDENTITY_IMPRESSION, _F_COLLIDE)
            direction = _unit(center + noise_rng.normal(scale=spec.collision_offset,
                                                        size=spec.global_dim))
            out[subject] = replace(identities[subject], global_direction=direction)
        for i, a in enumerate(cluster):
            for b in cluster[i + 1:]:
                collided_pairs.append((a, b))
    return out, sorted(collided_pairs)


def generate_impression(identity: Identity, spec: SynthSpec, impression_index: int,
                        distorted: bool = False) -> Template:
    """One noisy observation of an identity; deterministic per (seed, subject, k)."""
    subject = identity.subject_index
    h, w = spec.image_size
    cx, cy = w / 2.0, h / 2.0

    scale = spec.distortion_jitter_scale if distorted else 1.0
    pos_jitter = spec.position_jitter_px * scale
    ori_jitter = spec.orientation_jitter_rad * scale
    emb_jitter = spec.distortion_embedding_jitter if distorted else spec.embedding_jitter

    rng = _rng(spec.seed, subject, impression_index, _F_TRANSFORM)
    rot = rng.uniform(-spec.rotation_range_rad, spec.rotation_range_rad)
    tx = rng.uniform(-spec.translation_range_px, spec.translation_range_px)
    ty = rng.uniform(-spec.translation_range_px, spec.translation_range_px)
    n = identity.positions.shape[0]
    if rot == 0.0:  # exact path: avoids center/uncenter rounding at zero noise
        positions = identity.positions + (tx, ty)
    else:
        c, s = math.cos(rot), math.sin(rot)
        rot_mat = np.array([[c, -s], [s, c]])
        centered = identity.positions - (cx, cy)
        positions = centered @ rot_mat.T + (cx + tx, cy + ty)
    orientations = identity.orientations + rot

    rng = _rng(spec.seed, subject, impression_index, _F_DROP)
    if n:
        if distorted:
            n_drop = int(round(spec.distortion_drop_fraction * n))
            dropped = np.zeros(n, dtype=bool)
            dropped[rng.permutation(n)[:n_drop]] = True
        else:
            dropped = rng.random(n) < spec.drop_probability
    else:
        dropped = np.zeros(0, dtype=bool)

    global_jitter = spec.global_jitter
    if spec.weak_global_rate > 0.0 and impression_index >= 1:
        weak_rng = _rng(spec.seed, subject, impression_index, _F_WEAK)
        if weak_rng.random() < spec.weak_global_rate:
            global_jitter = spec.weak_global_jitter

    rng = _rng(spec.seed, subject, impression_index, _F_JITTER)
    positions = positions + rng.normal(scale=pos_jitter, size=(n, 2)) if n else positions
    orientations = orientations + rng.normal(scale=ori_jitter, size=n) if n else orientations
    embeddings = identity.embeddings + rng.normal(scale=emb_jitter, size=(n, spec.minutia_dim)) \
        if n else identity.embeddings
    global_embedding = _unit(identity.global_direction
                             + rng.normal(scale=global_jitter, size=spec.global_dim))

    keep = ~dropped
    if n:
        in_frame = ((positions[:, 0] >= 0.0) & (positions[:, 0] <= w)
                    & (positions[:, 1] >= 0.0) & (positions[:, 1] <= h))
        keep &= in_frame
    minutiae = []
    for i in np.flatnonzero(keep):
        minutiae.append(Minutia(
            x=positions[i, 0], y=positions[i, 1],
            theta=canonicalize_angle(orientations[i]),
            embedding=_unit(embeddings[i]),
        ))

    rng = _rng(spec.seed, subject, impression_index, _F_SPURIOUS)
    n_spurious = int(rng.poisson(spec.spurious_rate)) if spec.spurious_rate > 0 else 0
    for _ in range(n_spurious):
        emb = _unit(rng.normal(size=spec.minutia_dim))
        minutiae.append(Minutia(
            x=rng.uniform(0.0, w), y=rng.uniform(0.0, h),
            theta=rng.uniform(0.0, 2.0 * math.pi),
            embedding=emb,
        ))

    return Template(
        global_embedding=global_embedding.astype(np.float32),
        minutiae=tuple(minutiae),
        image_size=spec.image_size,
        source_id=f"subject_{subject:03d}/impression_{impression_index}",
    )


def _reference_template(identity: Identity, spec: SynthSpec, impression_index: int) -> Template:
    """Noise-free transformed minutiae: what a perfect extractor would report."""
    subject = identity.subject_index
    h, w = spec.image_size
    cx, cy = w / 2.0, h / 2.0
    rng = _rng(spec.seed, subject, impression_index, _F_TRANSFORM)
    rot = rng.uniform(-spec.rotation_range_rad, spec.rotation_range_rad)
    tx = rng.uniform(-spec.translation_range_px, spec.translation_range_px)
    ty = rng.uniform(-spec.translation_range_px, spec.translation_range_px)
    if rot == 0.0:
        positions = identity.positions + (tx, ty)
    else:
        c, s = math.cos(rot), math.sin(rot)
        rot_mat = np.array([[c, -s], [s, c]])
        centered = identity.positions - (cx, cy)
        positions = centered @ rot_mat.T + (cx + tx, cy + ty)
    orientations = identity.orientations + rot
    minutiae = []
    for i in range(positions.shape[0]):
        x, y = positions[i]
        if 0.0 <= x <= w and 0.0 <= y <= h:
            minutiae.append(Minutia(x=x, y=y, theta=canonicalize_angle(orientations[i]),
                                    embedding=identity.embeddings[i]))
    return Template(
        global_embedding=identity.global_direction.astype(np.float32),
        minutiae=tuple(minutiae),
        image_size=spec.image_size,
        source_id=f"ref/subject_{subject:03d}/impression_{impression_index}",
    )


@dataclass(frozen=True)
class InjectionManifest:
    """Ground truth of the injected failure modes."""

    collided_subject_pairs: Tuple[Tuple[str, str], ...]
    distorted_impressions: Tuple[Tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "collided_subject_pairs": [list(p) for p in self.collided_subject_pairs],
            "distorted_impressions": [[s, k] for s, k in self.distorted_impressions],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InjectionManifest":
        return cls(
            collided_subject_pairs=tuple((str(a), str(b))
                                         for a, b in doc["collided_subject_pairs"]),
            distorted_impressions=tuple((str(s), int(k))
                                        for s, k in doc["distorted_impressions"]),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "InjectionManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CorpusBundle:
    corpus: Corpus
    manifest: InjectionManifest
    references: Corpus


def _subject_id(index: int) -> str:
    return f"{index:03d}"


def generate_corpus(spec: SynthSpec) -> CorpusBundle:
    """Full corpus plus injection manifest and per-impression references."""
    identities = [generate_identity(spec, i) for i in range(spec.subjects)]
    identities, collided = _apply_collisions(spec, identities)

    distorted: List[Tuple[str, int]] = []
    subjects: Dict[str, Tuple[Template, ...]] = {}
    refs: Dict[str, Tuple[Template, ...]] = {}
    for idx in range(spec.subjects):
        sid = _subject_id(idx)
        impressions = []
        ref_impressions = []
        for k in range(spec.impressions):
            hit = False
            if spec.distortion_rate > 0.0:
                gate_rng = _rng(spec.seed, idx, k, _F_DISTORT)
                hit = bool(gate_rng.random() < spec.distortion_rate)
            if hit:
                distorted.append((sid, k))
            impressions.append(generate_impression(identities[idx], spec, k, distorted=hit))
            ref_impressions.append(_reference_template(identities[idx], spec, k))
        subjects[sid] = tuple(impressions)
        refs[sid] = tuple(ref_impressions)

    manifest = InjectionManifest(
        collided_subject_pairs=tuple((_subject_id(a), _subject_id(b)) for a, b in collided),
        distorted_impressions=tuple(distorted),
    )
    return CorpusBundle(corpus=Corpus(subjects), manifest=manifest, references=Corpus(refs))


def write_bundle(bundle: CorpusBundle, out_dir: str | Path, spec: Optional[SynthSpec] = None,
                 include_references: bool = True) -> None:
    """Write corpus, manifest.json and (optionally) refs/ under ``out_dir``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    write_corpus(bundle.corpus, root)
    doc = bundle.manifest.to_dict()
    if spec is not None:
        doc["spec"] = spec.to_dict()
    (root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    if include_references:
        write_corpus(bundle.references, root / "refs")
