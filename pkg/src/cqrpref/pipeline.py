"""End-to-end stages: index, construct preference data, rewrite, retrieve, evaluate, analyze."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Sequence

from . import corpus as corpus_io
from .corpus import CandidateSet, Candidate, DialogueTurn
from .evaluation import (
    EvalReport,
    evaluate,
    format_run_lines,
    intersection_ratio,
    linguistic_stats,
    load_run,
    preference_correlation_report,
    write_report,
)
from .fusion import RRF_K, concat_queries, expand_query, rrf
from .llm_client import (
    Backend,
    BackendError,
    DemoPool,
    LLMConfig,
    generate_prefixed_rewrite,
    generate_response,
    make_backend,
    ordered_map,
    sample_rewrites,
)
from .preference import TAG_ORDER, PreferenceTag, build_prompt, emit_preference_records
from .retriever import IndexConfig, InvertedIndex, build_index, load_index
from .scoring import score_candidate_set, scores_from_dict, scores_to_dict
from .similarity import SimilarityBackend, make_backend as make_similarity

logger = logging.getLogger(__name__)

RUN_DEPTH = 100


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    corpus: str | None = None
    dialogues: str | None = None
    demos: str | None = None
    qrels: str | None = None
    output_dir: str = "out"
    index: str | None = None
    retriever: IndexConfig = field(default_factory=IndexConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    similarity: dict = field(default_factory=lambda: {"kind": "lexical"})
    K: int = 16
    T: int = 100
    beta: float = 0.1
    seed: int = 0
    response_mode: str = "direct"
    workers: int = 1
    strict: bool = False
    expand: bool = False
    tags: tuple[str, ...] = tuple(t.value for t in TAG_ORDER)
    fusion: str = "concat"
    rrf_k: float = RRF_K

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.response_mode not in ("direct", "grounded"):
            raise ConfigError(f"response_mode must be 'direct' or 'grounded', got {self.response_mode!r}")
        if self.fusion not in ("concat", "rrf"):
            raise ConfigError(f"fusion must be 'concat' or 'rrf', got {self.fusion!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.tags:
            raise ConfigError("at least one preference tag is required")
        try:
            self.tags = tuple(PreferenceTag.parse(t).value for t in self.tags)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def index_path(self) -> Path:
        return Path(self.index) if self.index else self.out / "index.npz"

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | os.PathLike = ".") -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            if "retriever" in data:
                data["retriever"] = IndexConfig(**data["retriever"])
            if "llm" in data:
                data["llm"] = LLMConfig(**data["llm"])
        except TypeError as exc:
            raise ConfigError(f"bad nested config: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        base = Path(base_dir)
        for key in ("corpus", "dialogues", "demos", "qrels", "output_dir", "index"):
            if data.get(key) is not None:
                data[key] = str(base / data[key])
        if data.get("llm") is not None and data["llm"].canned_responses:
            llm = data["llm"]
            data["llm"] = LLMConfig(**{**asdict(llm), "canned_responses": str(base / llm.canned_responses)})
        if "tags" in data:
            data["tags"] = tuple(data["tags"])
        return cls(**data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data, Path(path).parent)

    def require(self, *names: str) -> None:
        """Fail before any side effect when a needed input is unset or missing."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config is missing {name!r}")
            if not Path(value).exists():
                raise ConfigError(f"{name} file not found: {value}")


@contextmanager
def atomic_write(path: str | os.PathLike) -> Iterator:
    """Write to ``<path>.tmp`` and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        yield f
    os.replace(tmp, path)


def _jsonl(f, obj: dict) -> None:
    f.write(json.dumps(obj, ensure_ascii=False))
    f.write("\n")


def turn_seed(seed: int, turn: DialogueTurn) -> int:
    """Per-turn seed that does not depend on processing order."""
    digest = hashlib.sha256(f"{seed}:{turn.conv_id}:{turn.turn_id}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# -- index ------------------------------------------------------------------

def run_index(cfg: PipelineConfig) -> InvertedIndex:
    cfg.require("corpus")
    passages = corpus_io.load_corpus(cfg.corpus)
    index = build_index(passages, cfg.retriever)
    path = cfg.index_path
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    index.save(tmp)
    os.replace(tmp, path)
    logger.info("indexed %d passages (%d terms) -> %s [%s]", index.doc_count, len(index.postings), path, index.fingerprint)
    return index


def open_index(cfg: PipelineConfig) -> InvertedIndex:
    if not cfg.index_path.exists():
        raise ConfigError(f"index not found at {cfg.index_path}; run the index command first")
    return load_index(cfg.index_path, cfg.retriever)


# -- construct --------------------------------------------------------------

@dataclass
class TurnResult:
    turn: DialogueTurn
    candidates: CandidateSet | None = None
    scores: dict | None = None
    records: list = field(default_factory=list)
    skipped_dims: int = 0
    error: str | None = None


def construct_turn(
    turn: DialogueTurn,
    cfg: PipelineConfig,
    backend: Backend,
    pool: DemoPool,
    index: InvertedIndex,
    similarity: SimilarityBackend,
    passages: dict[str, str] | None = None,
) -> TurnResult:
    rqs = sample_rewrites(
        backend, turn, cfg.K, pool,
        seed=turn_seed(cfg.seed, turn),
        temperature=cfg.llm.temperature,
        max_tokens=cfg.llm.max_tokens,
    )
    rankings = [index.search(rq, cfg.T) for rq in rqs]
    rss = []
    for rq, ranked in zip(rqs, rankings):
        if cfg.response_mode == "grounded":
            top3 = [passages[pid] for pid in ranked.pids[:3]]
            rss.append(generate_response(backend, turn, rq, "grounded", top3, max_tokens=cfg.llm.max_tokens))
        else:
            rss.append(generate_response(backend, turn, rq, "direct", pool=pool, max_tokens=cfg.llm.max_tokens))
    cs = CandidateSet(
        turn.conv_id, turn.turn_id,
        tuple(Candidate(rq, rs, tuple(r.pids)) for rq, rs, r in zip(rqs, rss, rankings)),
    )
    scores = score_candidate_set(cs, similarity, cfg.retriever, depth=cfg.T)
    records, skipped = emit_preference_records(cs, scores, turn)
    return TurnResult(turn, cs, scores_to_dict(cs, scores), records, skipped)


@dataclass
class ConstructSummary:
    turns: int
    failed: int
    records: int
    skipped_dims: int


def run_construct(cfg: PipelineConfig, backend: Backend | None = None, similarity: SimilarityBackend | None = None) -> ConstructSummary:
    cfg.require("dialogues", "demos")
    if cfg.response_mode == "grounded":
        cfg.require("corpus")
    index = open_index(cfg)
    pool = DemoPool.from_file(cfg.demos)
    if cfg.response_mode == "direct" and len(pool.response_examples) < 5:
        raise ConfigError("direct response mode needs 5 response demonstrations in the demos file")
    turns = corpus_io.load_dialogues(cfg.dialogues, set(index.doc_ids))
    passages = {p.id: p.text for p in corpus_io.load_corpus(cfg.corpus)} if cfg.response_mode == "grounded" else None
    backend = backend or make_backend(cfg.llm)
    similarity = similarity or make_similarity(cfg.similarity)

    def work(turn: DialogueTurn) -> TurnResult:
        try:
            return construct_turn(turn, cfg, backend, pool, index, similarity, passages)
        except BackendError as exc:
            if cfg.strict:
                raise
            logger.warning("skipping turn %s: %s", turn.key, exc)
            return TurnResult(turn, error=str(exc))

    results = ordered_map(work, turns, cfg.workers)
    with atomic_write(cfg.out / "candidates.jsonl") as fc, \
            atomic_write(cfg.out / "scores.jsonl") as fs, \
            atomic_write(cfg.out / "preferences.jsonl") as fp:
        for res in results:
            if res.error is not None:
                continue
            _jsonl(fc, corpus_io.candidate_set_to_dict(res.candidates))
            _jsonl(fs, res.scores)
            for rec in res.records:
                _jsonl(fp, rec.to_dict())
    summary = ConstructSummary(
        turns=len(turns),
        failed=sum(r.error is not None for r in results),
        records=sum(len(r.records) for r in results),
        skipped_dims=sum(r.skipped_dims for r in results),
    )
    logger.info(
        "constructed %d preference records from %d turns (%d failed, %d degenerate dimensions skipped)",
        summary.records, summary.turns, summary.failed, summary.skipped_dims,
    )
    return summary


# -- rewrite ----------------------------------------------------------------

def run_rewrite(cfg: PipelineConfig, backend: Backend | None = None) -> int:
    cfg.require("dialogues")
    if cfg.expand:
        cfg.require("demos")
    pool = DemoPool.from_file(cfg.demos) if cfg.expand else None
    turns = corpus_io.load_dialogues(cfg.dialogues)
    backend = backend or make_backend(cfg.llm)
    tags = [PreferenceTag.parse(t) for t in cfg.tags]

    def work(turn: DialogueTurn) -> dict | None:
        try:
            rewrites = {t.value: generate_prefixed_rewrite(backend, turn, t, cfg.llm.max_tokens) for t in tags}
            row = {"conv_id": turn.conv_id, "turn_id": turn.turn_id, "query": turn.query, "rewrites": rewrites}
            if cfg.expand:
                row["expanded"] = {
                    tag: expand_query(rw, generate_response(backend, turn, rw, "direct", pool=pool, max_tokens=cfg.llm.max_tokens))
                    for tag, rw in rewrites.items()
                }
            return row
        except BackendError as exc:
            if cfg.strict:
                raise
            logger.warning("skipping turn %s: %s", turn.key, exc)
            return None

    rows = ordered_map(work, turns, cfg.workers)
    written = 0
    with atomic_write(cfg.out / "rewrites.jsonl") as fr, atomic_write(cfg.out / "prompts.jsonl") as fa:
        for turn, row in zip(turns, rows):
            if row is None:
                continue
            _jsonl(fr, row)
            for tag in tags:
                _jsonl(fa, {"conv_id": turn.conv_id, "turn_id": turn.turn_id, "tag": tag.value, "prompt": build_prompt(tag, turn)})
            written += 1
    logger.info("wrote rewrites for %d of %d turns", written, len(turns))
    return written


def load_rewrites(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# -- retrieve ---------------------------------------------------------------

def turn_queries(row: dict, tags: Sequence[str], use_expansion: bool) -> list[str]:
    source = row.get("expanded") if use_expansion and row.get("expanded") else row["rewrites"]
    missing = [t for t in tags if t not in source]
    if missing:
        raise ConfigError(f"turn {row['conv_id']}/{row['turn_id']} has no rewrite for {missing}")
    return [source[t] for t in tags]


def run_retrieve(cfg: PipelineConfig, rewrites_path: str | os.PathLike | None = None, run_name: str = "run.txt") -> Path:
    rewrites_path = Path(rewrites_path) if rewrites_path else cfg.out / "rewrites.jsonl"
    if not rewrites_path.exists():
        raise ConfigError(f"rewrites file not found: {rewrites_path}")
    index = open_index(cfg)
    rows = load_rewrites(rewrites_path)
    tags = [t for t in (tag.value for tag in TAG_ORDER) if t in cfg.tags]
    runtag = f"cqrpref-{cfg.fusion}"

    def work(row: dict):
        qid = corpus_io.turn_qid(row["conv_id"], row["turn_id"])
        queries = turn_queries(row, tags, cfg.expand)
        if cfg.fusion == "concat":
            text = concat_queries(queries).text
            return qid, [text], index.search(text, RUN_DEPTH)
        lists = [index.search(q, RUN_DEPTH) for q in queries]
        return qid, queries, rrf(lists, cfg.rrf_k, depth=RUN_DEPTH)

    results = ordered_map(work, rows, cfg.workers)
    run_path = cfg.out / run_name
    with atomic_write(run_path) as fr, atomic_write(run_path.with_suffix(".queries.tsv")) as fq:
        for qid, issued, ranked in results:
            for text in issued:
                fq.write(f"{qid}\t{' '.join(text.split())}\n")
            fr.writelines(format_run_lines(qid, ranked, runtag))
    logger.info("retrieved %d queries (%s) -> %s", len(results), cfg.fusion, run_path)
    return run_path


# -- evaluate ---------------------------------------------------------------

def run_evaluate(run_path: str | os.PathLike, qrels_path: str | os.PathLike, out_dir: str | os.PathLike | None = None) -> EvalReport:
    for p in (run_path, qrels_path):
        if not Path(p).exists():
            raise ConfigError(f"file not found: {p}")
    qrels = corpus_io.load_qrels(qrels_path)
    if not qrels:
        raise ConfigError(f"qrels file {qrels_path} has no judgments")
    run = load_run(run_path)
    if not set(run) & set(qrels):
        orphans = sorted(set(run) ^ set(qrels))
        raise ConfigError(f"run and qrels share no query ids; orphan ids: {orphans[:20]}")
    report = evaluate(run, qrels)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(run_path).stem
        write_report(out / f"{stem}.eval.json", report.to_dict())
        (out / f"{stem}.eval.txt").write_text(report.summary(), encoding="utf-8")
    return report


# -- analyze ----------------------------------------------------------------

def run_analyze(
    cfg: PipelineConfig,
    scores_path: str | os.PathLike | None = None,
    rewrites_path: str | os.PathLike | None = None,
    candidates_path: str | os.PathLike | None = None,
) -> dict:
    if scores_path is None and rewrites_path is None and candidates_path is None:
        # default to whatever construct and rewrite left in the output directory
        found = [cfg.out / name for name in ("scores.jsonl", "rewrites.jsonl", "candidates.jsonl")]
        scores_path, rewrites_path, candidates_path = (f if f.exists() else None for f in found)
    report: dict = {}
    if scores_path is not None:
        with open(scores_path, encoding="utf-8") as f:
            scored = [scores_from_dict(json.loads(line))[1] for line in f if line.strip()]
        report["kendall_tau"] = preference_correlation_report(scored).to_dict()
    if candidates_path is not None:
        sets = corpus_io.load_candidates(candidates_path)
        ratios = []
        for cs in sets:
            cands = cs.candidates
            for i in range(len(cands)):
                for j in range(i + 1, len(cands)):
                    ratios.append(intersection_ratio(cands[i].pids, cands[j].pids, cfg.T))
        report["candidate_intersection"] = {"depth": cfg.T, "mean": sum(ratios) / len(ratios) if ratios else 0.0, "pairs": len(ratios)}
    if rewrites_path is not None:
        rows = load_rewrites(rewrites_path)
        tags = [t.value for t in TAG_ORDER if all(t.value in r["rewrites"] for r in rows)]
        report["linguistic"] = {
            tag: linguistic_stats([r["query"] for r in rows], [r["rewrites"][tag] for r in rows], 2, cfg.retriever)
            for tag in tags
        }
        if cfg.index_path.exists() and len(tags) > 1:
            index = open_index(cfg)
            runs = {tag: [index.search(r["rewrites"][tag], RUN_DEPTH) for r in rows] for tag in tags}
            inter = {}
            for i, a in enumerate(tags):
                for b in tags[i + 1:]:
                    vals = [intersection_ratio(x, y, RUN_DEPTH) for x, y in zip(runs[a], runs[b])]
                    inter[f"{a}|{b}"] = sum(vals) / len(vals) if vals else 0.0
            report["tag_intersection"] = {"depth": RUN_DEPTH, "mean": inter}
    if not report:
        raise ConfigError(f"nothing to analyze: pass --scores, --candidates or --rewrites, or run construct/rewrite into {cfg.out}")
    out = cfg.out / "analysis.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(out, report)
    return report
