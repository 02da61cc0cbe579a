"""Score normalization, fusion and the thresholding-gated pair inference.

The global score is cheap and already lives in [0, 1]; the raw local score
is an unbounded sum of cosines.  Normalization brings both onto a common
scale before fusing.  Gating skips local matching entirely when the global
score alone is decisive: above ``theta_t`` the pair is a confident genuine,
below ``theta_f`` a confident impostor, and only scores inside the band pay
for a local match.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .matching import LocalMatchConfig, global_match, local_match
from .templates import Template

GATE_CONFIDENT_GENUINE = "confident_genuine"
GATE_CONFIDENT_IMPOSTOR = "confident_impostor"
GATE_LOCAL_EVALUATED = "local_evaluated"

# Substituted local scores when gating skips the local matcher: saturate the
# fused score toward the confident decision.
SKIP_GENUINE_LOCAL = 1.0
SKIP_IMPOSTOR_LOCAL = 0.0

WIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class DoubleSigmoidParams:
    """Two-piece logistic map: 0.5 at ``center``, edge widths per side."""

    center: float
    left_width: float
    right_width: float

    def __post_init__(self):
        if self.left_width <= 0 or self.right_width <= 0:
            raise ValueError("double sigmoid widths must be positive")


def double_sigmoid(s, p: DoubleSigmoidParams):
    """Map scores into (0, 1), strictly increasing, 0.5 at the center."""
    s = np.asarray(s, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("double_sigmoid requires finite scores")
    width = np.where(s < p.center, p.left_width, p.right_width)
    z = np.clip(-2.0 * (s - p.center) / width, -700.0, 700.0)
    out = 1.0 / (1.0 + np.exp(z))
    return float(out) if out.ndim == 0 else out


def minmax_norm(s, observed_min: float, observed_max: float):
    """Affine map of [min, max] onto [0, 1], clamped outside."""
    if not observed_max > observed_min:
        raise ValueError("minmax_norm requires observed_max > observed_min")
    s = np.asarray(s, dtype=np.float64)
    out = np.clip((s - observed_min) / (observed_max - observed_min), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def zscore_norm(s, mean: float, std: float):
    """Standard score; unbounded."""
    if not std > 0:
        raise ValueError("zscore_norm requires std > 0")
    s = np.asarray(s, dtype=np.float64)
    out = (s - mean) / std
    return float(out) if out.ndim == 0 else out


def tanh_norm(s, mean: float, std: float):
    """Hampel-style robust map into (0, 1)."""
    if not std > 0:
        raise ValueError("tanh_norm requires std > 0")
    s = np.asarray(s, dtype=np.float64)
    out = 0.5 * (np.tanh(0.01 * (s - mean) / std) + 1.0)
    return float(out) if out.ndim == 0 else out


def fit_double_sigmoid(scores_genuine, scores_impostor,
                       width_floor: float = WIDTH_FLOOR) -> DoubleSigmoidParams:
    """Place the center midway between the class means on a hold-out split."""
    genuine = np.asarray(scores_genuine, dtype=np.float64)
    impostor = np.asarray(scores_impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("fit_double_sigmoid requires non-empty score lists")
    g_mean = float(genuine.mean())
    i_mean = float(impostor.mean())
    center = 0.5 * (g_mean + i_mean)
    return DoubleSigmoidParams(
        center=center,
        left_width=max(width_floor, center - i_mean),
        right_width=max(width_floor, g_mean - center),
    )


FUSION_RULES = ("mean", "max")


def fuse(a: float, b: float, rule: str = "mean") -> float:
    """Combine two normalized scores in [0, 1]."""
    if rule not in FUSION_RULES:
        raise ValueError(f"unknown fusion rule {rule!r}; expected one of {FUSION_RULES}")
    for name, value in (("a", a), ("b", b)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"fuse input {name}={value} outside [0, 1]")
    return 0.5 * (a + b) if rule == "mean" else max(a, b)


@dataclass(frozen=True)
class ThresholdConfig:
    """Gate band: local matching runs only when theta_f <= s_g <= theta_t."""

    theta_t: float = 0.75
    theta_f: float = 0.15

    def __post_init__(self):
        if self.theta_f > self.theta_t:
            raise ValueError("theta_f must not exceed theta_t")

    @classmethod
    def disabled(cls) -> "ThresholdConfig":
        # theta_t > 1 and theta_f < 0 keep every pair inside the band.
        return cls(theta_t=2.0, theta_f=-1.0)

    @property
    def gap(self) -> float:
        return self.theta_t - self.theta_f


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one gated pair comparison."""

    s_g_raw: float
    s_l_raw: Optional[float]
    s_g_norm: float
    s_l_effective: float
    s_final: float
    gate: str
    work_units: int

    def to_dict(self) -> dict:
        return {
            "s_g_raw": self.s_g_raw,
            "s_l_raw": self.s_l_raw,
            "s_g_norm": self.s_g_norm,
            "s_l_effective": self.s_l_effective,
            "s_final": self.s_final,
            "gate": self.gate,
            "work_units": self.work_units,
        }


def identity_norm(s):
    return s


def infer_pair(a: Template, b: Template,
               thr: ThresholdConfig = ThresholdConfig(),
               norm_g: Callable = identity_norm,
               norm_l: Callable = identity_norm,
               rule: str = "mean",
               local_cfg: LocalMatchConfig = LocalMatchConfig()) -> MatchResult:
    """Gated global+local comparison of two templates.

    Normalized channel values are clamped to [0, 1] before fusion so that
    unbounded normalizers cannot push the final score out of range.
    """
    s_g_raw = global_match(a, b)
    if s_g_raw > thr.theta_t:
        gate, s_l_raw, s_l_effective, work = GATE_CONFIDENT_GENUINE, None, SKIP_GENUINE_LOCAL, 0
    elif s_g_raw < thr.theta_f:
        gate, s_l_raw, s_l_effective, work = GATE_CONFIDENT_IMPOSTOR, None, SKIP_IMPOSTOR_LOCAL, 0
    else:
        local = local_match(a, b, local_cfg)
        gate, s_l_raw, work = GATE_LOCAL_EVALUATED, local.score, local.work_units
        s_l_effective = min(1.0, max(0.0, float(norm_l(local.score))))
    s_g_norm = min(1.0, max(0.0, float(norm_g(s_g_raw))))
    s_final = fuse(s_g_norm, s_l_effective, rule)
    return MatchResult(s_g_raw=s_g_raw, s_l_raw=s_l_raw, s_g_norm=s_g_norm,
                       s_l_effective=s_l_effective, s_final=s_final,
                       gate=gate, work_units=work)


# ---------------------------------------------------------------------------
# Configurable normalizers and the pipeline config file

NORM_KINDS = ("identity", "double_sigmoid", "minmax", "zscore", "tanh")


def make_normalizer(kind: str, params: Optional[dict] = None) -> Callable:
    """Build a score-normalizing callable from a config entry."""
    params = params or {}
    if kind == "identity":
        return identity_norm
    if kind == "double_sigmoid":
        p = DoubleSigmoidParams(center=float(params["center"]),
                                left_width=float(params["left_width"]),
                                right_width=float(params["right_width"]))
        return lambda s: double_sigmoid(s, p)
    if kind == "minmax":
        lo, hi = float(params["min"]), float(params["max"])
        return lambda s: minmax_norm(s, lo, hi)
    if kind == "zscore":
        mean, std = float(params["mean"]), float(params["std"])
        return lambda s: zscore_norm(s, mean, std)
    if kind == "tanh":
        mean, std = float(params["mean"]), float(params["std"])
        return lambda s: tanh_norm(s, mean, std)
    raise ValueError(f"unknown normalizer kind {kind!r}; expected one of {NORM_KINDS}")


@dataclass(frozen=True)
class PipelineConfig:
    """Full inference configuration, mirroring the JSON config file."""

    theta_t: float = 0.75
    theta_f: float = 0.15
    fusion: str = "mean"
    norm_kind: str = "identity"
    norm_params: dict = field(default_factory=dict)
    apply_norm_to_global: bool = False
    local: LocalMatchConfig = field(default_factory=LocalMatchConfig)

    def __post_init__(self):
        if self.fusion not in FUSION_RULES:
            raise ValueError(f"unknown fusion rule {self.fusion!r}")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"unknown normalizer kind {self.norm_kind!r}")

    @property
    def thresholds(self) -> ThresholdConfig:
        return ThresholdConfig(theta_t=self.theta_t, theta_f=self.theta_f)

    def local_normalizer(self) -> Callable:
        return make_normalizer(self.norm_kind, self.norm_params)

    def global_normalizer(self) -> Callable:
        if self.apply_norm_to_global:
            return make_normalizer(self.norm_kind, self.norm_params)
        return identity_norm

    def with_thresholds(self, theta_t: float, theta_f: float) -> "PipelineConfig":
        return replace(self, theta_t=theta_t, theta_f=theta_f)

    def with_max_minutiae(self, k: Optional[int]) -> "PipelineConfig":
        return replace(self, local=replace(self.local, max_minutiae_used=k))

    def to_dict(self) -> dict:
        return {
            "theta_t": self.theta_t,
            "theta_f": self.theta_f,
            "fusion": self.fusion,
            "norm": {
                "kind": self.norm_kind,
                "params": dict(self.norm_params),
                "apply_to_global": self.apply_norm_to_global,
            },
            "local": {
                "emb_sim_floor": self.local.emb_sim_floor,
                "geo_tolerance_px": self.local.geo_tolerance_px,
                "ori_tolerance_rad": self.local.ori_tolerance_rad,
                "max_minutiae": self.local.max_minutiae_used,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        norm = doc.get("norm", {}) or {}
        local = doc.get("local", {}) or {}
        local_cfg = LocalMatchConfig(
            emb_sim_floor=float(local.get("emb_sim_floor", 0.3)),
            geo_tolerance_px=float(local.get("geo_tolerance_px", 20.0)),
            ori_tolerance_rad=float(local.get("ori_tolerance_rad", 0.35)),
            max_minutiae_used=(None if local.get("max_minutiae") is None
                               else int(local["max_minutiae"])),
        )
        return cls(
            theta_t=float(doc.get("theta_t", 0.75)),
            theta_f=float(doc.get("theta_f", 0.15)),
            fusion=str(doc.get("fusion", "mean")),
            norm_kind=str(norm.get("kind", "identity")),
            norm_params=dict(norm.get("params", {}) or {}),
            apply_norm_to_global=bool(norm.get("apply_to_global", False)),
            local=local_cfg,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def infer_pair_with_config(a: Template, b: Template, cfg: PipelineConfig) -> MatchResult:
    return infer_pair(a, b, thr=cfg.thresholds,
                      norm_g=cfg.global_normalizer(),
                      norm_l=cfg.local_normalizer(),
                      rule=cfg.fusion, local_cfg=cfg.local)
