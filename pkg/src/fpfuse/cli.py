"""Command-line surface: synth, match, eval, bench, losses.

All outputs are machine-readable JSON (CSV for raw scores); ``--pretty``
renders human tables instead.  Exit code 0 on success, 2 on usage or data
errors.  ``FPFUSE_SEED`` overrides the generator seed from the spec file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .evaluation import (Protocol, apply_pipeline, enumerate_pairs,
                         evaluate_scores, aggregate_minutiae_quality,
                         frr_at_far, score_pairs)
from .losses import GroundTruthRecord, LossWeights, PredictionRecord, total_loss
from .pipeline import PipelineConfig, ThresholdConfig, infer_pair_with_config
from .synth import SynthSpec, generate_corpus, write_bundle
from .templates import read_corpus, read_template


class CliError(Exception):
    """User-facing failure; maps to exit code 2."""


def corpus_checksum(root: Path) -> str:
    """SHA-256 over every template file's bytes, in canonical path order."""
    digest = hashlib.sha256()
    for path in sorted(root.glob("subject_*/impression_*.fpt")):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.from_file(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"bad pipeline config {path}: {exc}") from exc


def _emit(doc, pretty: bool, rows_key: Optional[str] = None):
    if not pretty:
        print(json.dumps(doc, sort_keys=True))
        return
    if rows_key and isinstance(doc, dict) and doc.get(rows_key):
        rows = doc[rows_key]
        cols = list(rows[0])
        widths = {c: max(len(c), *(len(_cell(r.get(c))) for r in rows)) for c in cols}
        print("  ".join(c.ljust(widths[c]) for c in cols))
        for r in rows:
            print("  ".join(_cell(r.get(c)).ljust(widths[c]) for c in cols))
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(args) -> int:
    try:
        spec = SynthSpec.from_file(args.spec) if args.spec else SynthSpec()
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"bad synth spec: {exc}") from exc
    env_seed = os.environ.get("FPFUSE_SEED")
    if env_seed is not None:
        try:
            spec = replace(spec, seed=int(env_seed))
        except ValueError as exc:
            raise CliError(f"FPFUSE_SEED must be an integer, got {env_seed!r}") from exc
    out = Path(args.out)
    bundle = generate_corpus(spec)
    write_bundle(bundle, out, spec=spec, include_references=not args.no_refs)
    checksum = corpus_checksum(out)
    _emit({"out": str(out), "templates": bundle.corpus.template_count,
           "subjects": spec.subjects, "impressions": spec.impressions,
           "checksum": checksum}, args.pretty)
    return 0


def cmd_match(args) -> int:
    cfg = _load_config(args.config)
    try:
        a = read_template(Path(args.a).read_bytes())
        b = read_template(Path(args.b).read_bytes())
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read template: {exc}") from exc
    try:
        result = infer_pair_with_config(a, b, cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _emit(result.to_dict(), args.pretty)
    return 0


def _load_eval_inputs(args):
    try:
        corpus = read_corpus(args.corpus)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read corpus {args.corpus}: {exc}") from exc
    try:
        protocol = Protocol.parse(args.protocol) if args.protocol else Protocol(
            subjects=len(corpus.subject_ids),
            impressions=len(corpus.subjects[corpus.subject_ids[0]]))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return corpus, protocol


def cmd_eval(args) -> int:
    corpus, protocol = _load_eval_inputs(args)
    cfg = _load_config(args.config)
    refs = None
    refs_dir = Path(args.refs) if args.refs else Path(args.corpus) / "refs"
    if refs_dir.is_dir():
        refs = read_corpus(refs_dir)
    try:
        genuine_pairs, impostor_pairs = enumerate_pairs(protocol, corpus)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    n_gen = len(genuine_pairs)
    raw = score_pairs(corpus, genuine_pairs + impostor_pairs, cfg.local, jobs=args.jobs)
    derived = apply_pipeline(raw, cfg)
    quality = aggregate_minutiae_quality(corpus, refs) if refs is not None else None
    report = evaluate_scores(derived.final[:n_gen], derived.final[n_gen:],
                             derived.gate_stats, int(derived.work_units.sum()),
                             quality=quality)
    doc = report.to_dict()
    doc["config"] = cfg.to_dict()
    doc["protocol"] = {"subjects": protocol.subjects, "impressions": protocol.impressions}
    payload = json.dumps(doc, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload)
    roc_path = args.roc_csv or (str(Path(args.out).with_suffix("")) + "_roc.csv" if args.out else None)
    if roc_path:
        lines = ["threshold,far,frr"]
        lines += [f"{p.threshold!r},{p.far!r},{p.frr!r}" for p in report.roc]
        Path(roc_path).write_text("\n".join(lines) + "\n")
    if args.scores_csv:
        lines = ["kind,score"]
        lines += [f"genuine,{v!r}" for v in report.genuine_scores]
        lines += [f"impostor,{v!r}" for v in report.impostor_scores]
        Path(args.scores_csv).write_text("\n".join(lines) + "\n")
    summary = {k: doc[k] for k in ("counts", "frr_at_far", "eer", "gate_stats", "work_units_total")}
    summary["minutiae_quality"] = doc["minutiae_quality"]
    _emit(summary, args.pretty)
    return 0


def _parse_grid(text: str) -> List[Optional[Tuple[float, float]]]:
    grid: List[Optional[Tuple[float, float]]] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.lower() == "disabled":
            grid.append(None)
            continue
        try:
            t, f = token.split(":")
            grid.append((float(t), float(f)))
        except ValueError as exc:
            raise CliError(f"bad grid token {token!r}; expected 'theta_t:theta_f' or 'disabled'") from exc
    if not grid:
        raise CliError("empty threshold grid")
    return grid


def cmd_bench(args) -> int:
    corpus, protocol = _load_eval_inputs(args)
    cfg = _load_config(args.config)
    try:
        genuine_pairs, impostor_pairs = enumerate_pairs(protocol, corpus)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    n_gen = len(genuine_pairs)
    pairs = genuine_pairs + impostor_pairs
    far_targets = [float(t) for t in args.far.split(",")]

    rows = []
    if args.sweep_minutiae:
        try:
            ks = [int(k) for k in args.sweep_minutiae.split(",")]
        except ValueError as exc:
            raise CliError(f"bad --sweep-minutiae {args.sweep_minutiae!r}") from exc
        for k in ks:
            k_cfg = cfg.with_max_minutiae(k)
            raw = score_pairs(corpus, pairs, k_cfg.local, jobs=args.jobs)
            ungated = k_cfg.with_thresholds(*_DISABLED)
            fused = apply_pipeline(raw, ungated)
            local_only = apply_pipeline(raw, ungated, channel="local")
            row = {"max_minutiae": k, "work_units": int(fused.work_units.sum())}
            for target in far_targets:
                row[f"frr_fused@far={target:g}"] = frr_at_far(
                    fused.final[:n_gen], fused.final[n_gen:], target)[0]
                row[f"frr_local@far={target:g}"] = frr_at_far(
                    local_only.final[:n_gen], local_only.final[n_gen:], target)[0]
            rows.append(row)
        rows.sort(key=lambda r: -r["max_minutiae"])
    else:
        grid = _parse_grid(args.grid)
        raw = score_pairs(corpus, pairs, cfg.local, jobs=args.jobs)
        for entry in grid:
            theta_t, theta_f = entry if entry is not None else _DISABLED
            g_cfg = cfg.with_thresholds(theta_t, theta_f)
            derived = apply_pipeline(raw, g_cfg)
            row = {
                "theta_t": theta_t,
                "theta_f": theta_f,
                "gap": theta_t - theta_f,
                "local_evaluated": derived.gate_stats["local_evaluated"],
                "work_units": int(derived.work_units.sum()),
            }
            for target in far_targets:
                row[f"frr@far={target:g}"] = frr_at_far(
                    derived.final[:n_gen], derived.final[n_gen:], target)[0]
            rows.append(row)
        rows.sort(key=lambda r: -r["gap"])
    doc = {"rows": rows}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True))
    _emit(doc, args.pretty, rows_key="rows")
    return 0


_DISABLED = (ThresholdConfig.disabled().theta_t, ThresholdConfig.disabled().theta_f)


def cmd_losses(args) -> int:
    try:
        pred = PredictionRecord.from_dict(json.loads(Path(args.pred).read_text()))
        gt = GroundTruthRecord.from_dict(json.loads(Path(args.gt).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read loss records: {exc}") from exc
    weights = LossWeights()
    if args.weights:
        try:
            text = Path(args.weights).read_text() if Path(args.weights).is_file() else args.weights
            weights = LossWeights.from_dict(json.loads(text))
        except (OSError, TypeError, ValueError) as exc:
            raise CliError(f"bad loss weights: {exc}") from exc
    try:
        breakdown = total_loss(pred, gt, weights)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _emit(breakdown.to_dict(), args.pretty)
    return 0


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpfuse",
        description="Fingerprint template matching, score fusion and evaluation toolkit.")
    parser.add_argument("--pretty", action="store_true", help="human-readable tables")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="generator spec JSON (defaults apply if omitted)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--no-refs", action="store_true", help="skip writing refs/")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="compare two template files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="run the verification protocol over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--protocol", help="SxI, e.g. 100x8 (inferred from corpus if omitted)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--roc-csv", help="ROC CSV path")
    p.add_argument("--scores-csv", help="raw final scores CSV path")
    p.add_argument("--refs", help="reference corpus for minutiae quality (default: <corpus>/refs)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="threshold-gate grid or minutiae-subset sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--protocol")
    p.add_argument("--config")
    p.add_argument("--grid", default="disabled,0.75:0.15",
                   help="comma list of theta_t:theta_f pairs or 'disabled'")
    p.add_argument("--sweep-minutiae", help="comma list of max_minutiae values")
    p.add_argument("--far", default="0.01", help="comma list of FAR targets")
    p.add_argument("--out", help="table JSON path")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("losses", help="training-loss breakdown for one record pair")
    p.add_argument("--pred", required=True, help="prediction record JSON")
    p.add_argument("--gt", required=True, help="ground-truth record JSON")
    p.add_argument("--weights", help="loss weights JSON (inline or file)")
    p.set_defaults(func=cmd_losses)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
