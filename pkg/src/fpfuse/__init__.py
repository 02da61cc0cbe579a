"""Fingerprint template matching, score fusion and evaluation toolkit.

The pipeline compares two templates by fusing a cheap global-embedding
similarity with a minutiae-level local match, optionally skipping the local
stage when the global score alone is decisive.  The package also ships the
training-loss reference formulas, a verification-protocol evaluator and a
seeded synthetic corpus generator used by the test and demo suites.
"""

from .assignment import (Assignment, CorrespondenceWeights, CostMatrix,
                         InfeasibleAssignmentError, angular_distance,
                         correspond_minutiae, minutia_cost, solve_assignment)
from .evaluation import (ChannelScores, EvalReport, MinutiaeQuality, Protocol,
                         RocPoint, aggregate_minutiae_quality, apply_pipeline,
                         eer, enumerate_pairs, evaluate_corpus, frr_at_far,
                         minutiae_quality, roc_curve, score_pairs)
from .losses import (GroundTruthRecord, LossBreakdown, LossWeights,
                     PredictionRecord, mse, mse_gradient, reorder_ground_truth,
                     total_loss)
from .matching import (LocalMatchConfig, LocalMatchResult, global_match,
                       local_match, match_work)
from .pipeline import (DoubleSigmoidParams, MatchResult, PipelineConfig,
                       ThresholdConfig, double_sigmoid, fit_double_sigmoid,
                       fuse, infer_pair, infer_pair_with_config,
                       make_normalizer, minmax_norm, tanh_norm, zscore_norm)
from .synth import (CorpusBundle, Identity, InjectionManifest, SynthSpec,
                    generate_corpus, generate_identity, generate_impression,
                    write_bundle)
from .templates import (Corpus, DecodeError, Minutia, Template, Violation,
                        canonicalize_angle, read_corpus, read_template,
                        validate, write_corpus, write_template)

__version__ = "0.1.0"

__all__ = [
    "Assignment", "ChannelScores", "Corpus", "CorpusBundle",
    "CorrespondenceWeights", "CostMatrix", "DecodeError",
    "DoubleSigmoidParams", "EvalReport", "GroundTruthRecord", "Identity",
    "InfeasibleAssignmentError", "InjectionManifest", "LocalMatchConfig",
    "LocalMatchResult", "LossBreakdown", "LossWeights", "MatchResult",
    "Minutia", "MinutiaeQuality", "PipelineConfig", "PredictionRecord",
    "Protocol", "RocPoint", "SynthSpec", "Template", "ThresholdConfig",
    "Violation", "aggregate_minutiae_quality", "angular_distance",
    "apply_pipeline", "canonicalize_angle", "correspond_minutiae",
    "double_sigmoid", "eer", "enumerate_pairs", "evaluate_corpus",
    "fit_double_sigmoid", "frr_at_far", "fuse", "generate_corpus",
    "generate_identity", "generate_impression", "global_match", "infer_pair",
    "infer_pair_with_config", "local_match", "make_normalizer", "match_work",
    "minmax_norm", "minutia_cost", "minutiae_quality", "mse", "mse_gradient",
    "read_corpus", "read_template", "reorder_ground_truth", "roc_curve",
    "score_pairs", "solve_assignment", "tanh_norm", "total_loss", "validate",
    "write_bundle", "write_corpus", "write_template", "zscore_norm",
]
