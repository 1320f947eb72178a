"""Command-line entry point: ``cqrpref <command> --config pipeline.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .corpus import DataError
from .llm_client import BackendError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    run_analyze,
    run_construct,
    run_evaluate,
    run_index,
    run_retrieve,
    run_rewrite,
)
from .preference import MdpoInputs, mdpo_loss
from .retriever import IndexArtifactError
from .similarity import SimilarityError

EXIT_OK, EXIT_INVALID, EXIT_BACKEND = 0, 1, 2


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline JSON config; relative paths resolve against its directory")
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.add_argument("--seed", type=int, help="override the seed shared by every randomized stage")
    p.add_argument("--workers", type=int, help="turn-level worker limit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cqrpref",
        description="Build self-consistency preference data for conversational query rewriting and evaluate retrieval.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and persist the BM25 index over the corpus")
    _add_config(p)

    p = sub.add_parser(
        "construct",
        help="sample K rewrites per turn, score RW/RT/RP, write tagged preference pairs",
        description="K (candidates per turn, default 16) is the main cost knob: every turn issues 2K generation calls and K searches.",
    )
    _add_config(p)
    p.add_argument("-K", "--num-candidates", type=int, dest="K", help="candidate rewrites sampled per turn (default 16)")
    p.add_argument("-T", "--depth", type=int, dest="T", help="passages retrieved per rewrite for the overlap score (default 100)")
    p.add_argument("--strict", action="store_true", help="abort on the first failing turn instead of skipping it")

    p = sub.add_parser("rewrite", help="generate one prefix-guided rewrite per tag and turn")
    _add_config(p)
    p.add_argument("--tags", nargs="+", help="subset of [REWRITE] [RETRIEVAL] [RESPONSE]")
    p.add_argument("--expand", action="store_true", help="also append a pseudo response to each rewrite")
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("retrieve", help="search with the combined rewrites and write a run file")
    _add_config(p)
    p.add_argument("--fusion", choices=["concat", "rrf"], help="concatenate rewrites (default) or fuse per-rewrite lists")
    p.add_argument("--tags", nargs="+", help="restrict to these tags")
    p.add_argument("--rewrites", help="rewrites file (default <output_dir>/rewrites.jsonl)")
    p.add_argument("--expand", action="store_true", help="use the expanded rewrites")
    p.add_argument("--run-name", default="run.txt", help="run file name inside output_dir")

    p = sub.add_parser("evaluate", help="MRR, NDCG@3, R@10, R@100 of a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--output-dir", help="write <run>.eval.json and <run>.eval.txt here")

    p = sub.add_parser("analyze", help="tau matrix, linguistic statistics, passage-overlap ratios")
    _add_config(p)
    p.add_argument("--scores", help="scores.jsonl from construct")
    p.add_argument("--candidates", help="candidates.jsonl from construct")
    p.add_argument("--rewrites", help="rewrites.jsonl from rewrite")

    p = sub.add_parser("mdpo-loss", help="MDPO loss from four sequence log-probabilities")
    p.add_argument("logp_theta_pos", type=float)
    p.add_argument("logp_ref_pos", type=float)
    p.add_argument("logp_theta_neg", type=float)
    p.add_argument("logp_ref_neg", type=float)
    p.add_argument("--beta", type=float, default=0.1)
    return parser


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    overrides = {}
    for name in ("output_dir", "seed", "workers", "K", "T", "fusion"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "tags", None):
        overrides["tags"] = tuple(args.tags)
    if getattr(args, "strict", False):
        overrides["strict"] = True
    if getattr(args, "expand", False):
        overrides["expand"] = True
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def dispatch(args) -> int:
    if args.command == "mdpo-loss":
        inputs = MdpoInputs(args.logp_theta_pos, args.logp_ref_pos, args.logp_theta_neg, args.logp_ref_neg, args.beta)
        print(f"{mdpo_loss(inputs):.6f}")
        return EXIT_OK
    if args.command == "evaluate":
        report = run_evaluate(args.run, args.qrels, args.output_dir)
        sys.stdout.write(report.summary())
        return EXIT_OK

    cfg = _config(args)
    if args.command == "index":
        index = run_index(cfg)
        print(f"indexed {index.doc_count} passages -> {cfg.index_path} (fingerprint {index.fingerprint})")
    elif args.command == "construct":
        s = run_construct(cfg)
        print(f"{s.records} preference records from {s.turns} turns ({s.failed} failed, {s.skipped_dims} degenerate dimensions)")
    elif args.command == "rewrite":
        n = run_rewrite(cfg)
        print(f"rewrote {n} turns")
    elif args.command == "retrieve":
        path = run_retrieve(cfg, args.rewrites, args.run_name)
        print(f"run written to {path}")
    elif args.command == "analyze":
        report = run_analyze(cfg, args.scores, args.rewrites, args.candidates)
        print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return dispatch(args)
    except (BackendError, SimilarityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, DataError, IndexArtifactError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
