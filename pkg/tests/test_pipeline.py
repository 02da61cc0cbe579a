import json
import math

import numpy as np
import pytest

from fpfuse import (DoubleSigmoidParams, LocalMatchConfig, PipelineConfig,
                    ThresholdConfig, double_sigmoid, fit_double_sigmoid, fuse,
                    infer_pair, infer_pair_with_config, make_normalizer,
                    minmax_norm, tanh_norm, zscore_norm)
from fpfuse.pipeline import (GATE_CONFIDENT_GENUINE, GATE_CONFIDENT_IMPOSTOR,
                             GATE_LOCAL_EVALUATED, identity_norm)

from conftest import basis_template, make_template


# ---------------------------------------------------------------------------
# double sigmoid

def test_double_sigmoid_center():
    p = DoubleSigmoidParams(center=3.0, left_width=2.0, right_width=5.0)
    assert double_sigmoid(3.0, p) == pytest.approx(0.5, abs=1e-12)


def test_double_sigmoid_limits():
    p = DoubleSigmoidParams(center=0.0, left_width=1.0, right_width=1.0)
    assert double_sigmoid(-20.0, p) < 1e-6
    assert double_sigmoid(20.0, p) > 1.0 - 1e-6


def test_double_sigmoid_known_value():
    p = DoubleSigmoidParams(center=2.0, left_width=1.0, right_width=4.0)
    assert double_sigmoid(2.0 + 4.0, p) == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-12)
    assert double_sigmoid(6.0, p) == pytest.approx(0.8807970779778823, abs=1e-12)


def test_double_sigmoid_strictly_increasing():
    p = DoubleSigmoidParams(center=1.0, left_width=0.5, right_width=2.0)
    grid = np.linspace(-9.0, 11.0, 4001)
    out = double_sigmoid(grid, p)
    assert (np.diff(out) > 0).all()
    assert ((out > 0) & (out < 1)).all()


def test_double_sigmoid_rejects_nonfinite():
    p = DoubleSigmoidParams(center=0.0, left_width=1.0, right_width=1.0)
    with pytest.raises(ValueError):
        double_sigmoid(float("nan"), p)


def test_double_sigmoid_params_validation():
    with pytest.raises(ValueError):
        DoubleSigmoidParams(center=0.0, left_width=0.0, right_width=1.0)


# ---------------------------------------------------------------------------
# other normalizations

def test_minmax_examples():
    assert minmax_norm(0.45, 0.2, 0.7) == pytest.approx(0.5)
    assert minmax_norm(0.1, 0.2, 0.7) == 0.0
    assert minmax_norm(0.9, 0.2, 0.7) == 1.0
    with pytest.raises(ValueError):
        minmax_norm(0.5, 0.7, 0.7)


def test_zscore_and_tanh_centering():
    assert zscore_norm(5.0, 5.0, 2.0) == 0.0
    assert tanh_norm(5.0, 5.0, 2.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        zscore_norm(1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        tanh_norm(1.0, 0.0, -1.0)


def test_normalizations_preserve_rank_order():
    rng = np.random.default_rng(23)
    scores = rng.normal(10.0, 4.0, size=300)
    p = fit_double_sigmoid(scores + 8, scores - 8)
    variants = {
        "double_sigmoid": double_sigmoid(scores, p),
        "zscore": zscore_norm(scores, 10.0, 4.0),
        "tanh": tanh_norm(scores, 10.0, 4.0),
    }
    base_order = np.argsort(scores)
    for name, mapped in variants.items():
        assert np.array_equal(np.argsort(mapped), base_order), name
    # minmax preserves order away from the clamp
    mapped = minmax_norm(scores, np.quantile(scores, 0.1), np.quantile(scores, 0.9))
    inside = (scores > np.quantile(scores, 0.1)) & (scores < np.quantile(scores, 0.9))
    sub = scores[inside]
    assert np.array_equal(np.argsort(minmax_norm(sub, sub.min() - 1, sub.max() + 1)),
                          np.argsort(sub))


# ---------------------------------------------------------------------------
# fusion

def test_fuse_rules():
    assert fuse(0.4, 0.6, "mean") == pytest.approx(0.5)
    assert fuse(0.4, 0.6, "max") == 0.6
    for rule in ("mean", "max"):
        assert fuse(0.37, 0.37, rule) == pytest.approx(0.37)


def test_fuse_validates_inputs():
    with pytest.raises(ValueError):
        fuse(1.2, 0.5, "mean")
    with pytest.raises(ValueError):
        fuse(0.5, -0.1, "max")
    with pytest.raises(ValueError):
        fuse(0.5, 0.5, "median")


# ---------------------------------------------------------------------------
# fit

def test_fit_double_sigmoid_midpoint():
    p = fit_double_sigmoid([10.0, 10.0], [2.0, 2.0])
    assert p.center == pytest.approx(6.0)
    assert p.left_width == pytest.approx(4.0)
    assert p.right_width == pytest.approx(4.0)


def test_fit_double_sigmoid_degenerate():
    p = fit_double_sigmoid([5.0, 5.0], [5.0, 5.0])
    assert p.left_width == pytest.approx(1e-6)
    assert p.right_width == pytest.approx(1e-6)


def test_fit_double_sigmoid_empty():
    with pytest.raises(ValueError):
        fit_double_sigmoid([], [1.0])


# ---------------------------------------------------------------------------
# gated inference

def test_identical_templates_gate_genuine():
    t = basis_template()
    r = infer_pair(t, t, ThresholdConfig(0.75, 0.15))
    assert r.gate == GATE_CONFIDENT_GENUINE
    assert r.s_l_raw is None
    assert r.s_l_effective == 1.0
    assert r.s_final == pytest.approx(1.0, abs=1e-6)
    assert r.work_units == 0


def test_orthogonal_templates_gate_impostor():
    r = infer_pair(basis_template(axis=0), basis_template(axis=1),
                   ThresholdConfig(0.75, 0.15))
    assert r.gate == GATE_CONFIDENT_IMPOSTOR
    assert r.s_l_effective == 0.0
    assert r.s_final == 0.0


def test_midband_runs_local():
    half = math.sqrt(0.5)
    a = make_template([1.0, 0.0, 0.0, 0.0])
    b = make_template([0.5, math.sqrt(0.75), 0.0, 0.0])  # dot = 0.5
    r = infer_pair(a, b, ThresholdConfig(0.75, 0.15),
                   norm_l=lambda s: 0.9, rule="mean")
    assert r.gate == GATE_LOCAL_EVALUATED
    assert r.s_g_raw == pytest.approx(0.5, abs=1e-6)
    assert r.s_l_raw is not None
    assert r.s_final == pytest.approx(0.7, abs=1e-6)


def test_gate_partition_boundaries():
    from fpfuse import Template
    thr = ThresholdConfig(0.75, 0.15)
    a = make_template([1.0, 0.0])
    # a = (1, 0) makes the dot product exactly b's first component; 0.75 is
    # an exact float32, so the boundary case is inclusive (local runs)
    for dot, gate in ((0.75, GATE_LOCAL_EVALUATED),
                      (0.76, GATE_CONFIDENT_GENUINE),
                      (0.5, GATE_LOCAL_EVALUATED),
                      (0.15625, GATE_LOCAL_EVALUATED),  # exact f32, > theta_f
                      (0.1, GATE_CONFIDENT_IMPOSTOR)):
        b = Template(global_embedding=[dot, math.sqrt(max(0.0, 1 - dot * dot))],
                     minutiae=(), image_size=(384, 384))
        r = infer_pair(a, b, thr)
        assert r.gate == gate, dot


def test_disabled_gate_equals_ungated(small_bundle):
    corpus = small_bundle.corpus
    thr = ThresholdConfig.disabled()
    ids = corpus.subject_ids
    norm_l = make_normalizer("double_sigmoid",
                             {"center": 20.0, "left_width": 18.0, "right_width": 18.0})
    cfg = LocalMatchConfig()
    from fpfuse import global_match, local_match
    for a, b in [(corpus.template(ids[0], 0), corpus.template(ids[0], 1)),
                 (corpus.template(ids[0], 0), corpus.template(ids[1], 0))]:
        r = infer_pair(a, b, thr, norm_l=norm_l, local_cfg=cfg)
        assert r.gate == GATE_LOCAL_EVALUATED
        expected = 0.5 * (min(1.0, max(0.0, global_match(a, b)))
                          + min(1.0, max(0.0, norm_l(local_match(a, b, cfg).score))))
        assert r.s_final == expected


def test_unbounded_normalizer_clamped():
    a = make_template([1.0, 0.0])
    b = make_template([0.5, math.sqrt(0.75)])
    r = infer_pair(a, b, ThresholdConfig(0.75, 0.15), norm_l=lambda s: 5.0)
    assert r.s_l_effective == 1.0
    assert 0.0 <= r.s_final <= 1.0


def test_threshold_validation():
    with pytest.raises(ValueError):
        ThresholdConfig(theta_t=0.1, theta_f=0.5)
    ThresholdConfig(theta_t=0.5, theta_f=0.5)  # equality allowed


# ---------------------------------------------------------------------------
# config round trip

def test_pipeline_config_round_trip(tmp_path):
    cfg = PipelineConfig(
        theta_t=0.8, theta_f=0.1, fusion="max",
        norm_kind="double_sigmoid",
        norm_params={"center": 19.0, "left_width": 17.0, "right_width": 18.0},
        local=LocalMatchConfig(emb_sim_floor=0.25, geo_tolerance_px=15.0,
                               ori_tolerance_rad=0.3, max_minutiae_used=40),
    )
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = PipelineConfig.from_file(path)
    assert back == cfg


def test_pipeline_config_defaults():
    cfg = PipelineConfig.from_dict({})
    assert cfg.theta_t == 0.75 and cfg.theta_f == 0.15
    assert cfg.fusion == "mean" and cfg.norm_kind == "identity"
    assert cfg.local.max_minutiae_used is None


def test_pipeline_config_rejects_unknown():
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"fusion": "geometric"})
    with pytest.raises(ValueError):
        make_normalizer("rank", {})


def test_infer_with_config_matches_manual(small_bundle):
    corpus = small_bundle.corpus
    ids = corpus.subject_ids
    cfg = PipelineConfig(norm_kind="tanh", norm_params={"mean": 20.0, "std": 10.0})
    a, b = corpus.template(ids[0], 0), corpus.template(ids[0], 1)
    r1 = infer_pair_with_config(a, b, cfg)
    r2 = infer_pair(a, b, cfg.thresholds, identity_norm, cfg.local_normalizer(),
                    cfg.fusion, cfg.local)
    assert r1 == r2
