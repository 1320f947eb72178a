"""Retrieval metrics over run files plus the rank-correlation, linguistic and overlap analyses."""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import DataError
from .retriever import IndexConfig, RankedList, tokenize
from .scoring import DIMENSIONS, ConsistencyScores

Run = Mapping[str, RankedList]
Qrels = Mapping[str, Mapping[str, int]]

DEFAULT_DEPTH = 100


# -- run files --------------------------------------------------------------

def load_run(path: str | os.PathLike) -> dict[str, RankedList]:
    """Read ``qid Q0 pid rank score tag`` lines; ranks must be 1..n per query."""
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 columns 'qid Q0 pid rank score tag'")
            qid, _, pid, rank, score, _ = parts
            try:
                rows.setdefault(qid, []).append((int(rank), pid, float(score)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: rank must be an integer and score a number") from None
    run = {}
    for qid, entries in rows.items():
        entries.sort()
        if [r for r, _, _ in entries] != list(range(1, len(entries) + 1)):
            raise DataError(f"{path}: ranks for query {qid!r} are not contiguous from 1")
        if len({pid for _, pid, _ in entries}) != len(entries):
            raise DataError(f"{path}: query {qid!r} lists a passage twice")
        run[qid] = RankedList(tuple((pid, score) for _, pid, score in entries))
    return run


def format_run_lines(qid: str, ranked: RankedList, tag: str) -> Iterable[str]:
    for rank, (pid, score) in enumerate(ranked, 1):
        yield f"{qid} Q0 {pid} {rank} {score:.6f} {tag}\n"


def write_run(path: str | os.PathLike, run: Run, tag: str = "cqrpref") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, ranked in run.items():
            f.writelines(format_run_lines(qid, ranked, tag))


# -- metrics ----------------------------------------------------------------

@dataclass
class MetricResult:
    per_query: dict[str, float]
    mean: float
    unjudged: list[str] = field(default_factory=list)


def _relevant(qrels: Qrels, qid: str) -> set[str]:
    return {pid for pid, rel in qrels.get(qid, {}).items() if rel > 0}


def _judged_queries(run: Run, qrels: Qrels) -> tuple[list[str], list[str]]:
    """Judged = has at least one relevant passage. Run queries without one are reported as unjudged."""
    judged = [qid for qid in qrels if _relevant(qrels, qid)]
    unjudged = [qid for qid in run if not _relevant(qrels, qid)]
    return judged, unjudged


def _aggregate(run: Run, qrels: Qrels, per_query_fn) -> MetricResult:
    judged, unjudged = _judged_queries(run, qrels)
    per_query = {}
    for qid in judged:
        ranked = run.get(qid, RankedList())
        per_query[qid] = per_query_fn([pid for pid, _ in ranked], _relevant(qrels, qid))
    mean = math.fsum(per_query.values()) / len(per_query) if per_query else 0.0
    return MetricResult(per_query, mean, unjudged)


def reciprocal_rank(pids: Sequence[str], relevant: set[str], depth: int = DEFAULT_DEPTH) -> float:
    for rank, pid in enumerate(pids[:depth], 1):
        if pid in relevant:
            return 1.0 / rank
    return 0.0


def ndcg(pids: Sequence[str], relevant: set[str], cutoff: int = 3) -> float:
    dcg = sum(1.0 / math.log2(i + 1) for i, pid in enumerate(pids[:cutoff], 1) if pid in relevant)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(relevant), cutoff) + 1))
    return dcg / ideal if ideal > 0 else 0.0


def recall(pids: Sequence[str], relevant: set[str], k: int) -> float:
    if not relevant:
        return 0.0
    return len(relevant & set(pids[:k])) / len(relevant)


def mrr(run: Run, qrels: Qrels, depth: int = DEFAULT_DEPTH) -> MetricResult:
    return _aggregate(run, qrels, lambda pids, rel: reciprocal_rank(pids, rel, depth))


def ndcg_at(run: Run, qrels: Qrels, cutoff: int = 3) -> MetricResult:
    return _aggregate(run, qrels, lambda pids, rel: ndcg(pids, rel, cutoff))


def recall_at(run: Run, qrels: Qrels, k: int) -> MetricResult:
    return _aggregate(run, qrels, lambda pids, rel: recall(pids, rel, k))


METRICS = ("mrr", "ndcg@3", "recall@10", "recall@100")


@dataclass
class EvalReport:
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    num_queries: int
    unjudged: list[str]

    def to_dict(self) -> dict:
        return {
            "num_queries": self.num_queries,
            "num_unjudged": len(self.unjudged),
            "unjudged": self.unjudged,
            "mean": self.means,
            "per_query": self.per_query,
        }

    def summary(self) -> str:
        header = f"{'metric':<12}{'value':>10}"
        lines = [header, "-" * len(header)]
        lines += [f"{name:<12}{self.means[name]:>10.4f}" for name in METRICS]
        lines.append(f"{'queries':<12}{self.num_queries:>10d}")
        lines.append(f"{'unjudged':<12}{len(self.unjudged):>10d}")
        return "\n".join(lines) + "\n"


def evaluate(run: Run, qrels: Qrels) -> EvalReport:
    results = {
        "mrr": mrr(run, qrels),
        "ndcg@3": ndcg_at(run, qrels, 3),
        "recall@10": recall_at(run, qrels, 10),
        "recall@100": recall_at(run, qrels, 100),
    }
    first = results["mrr"]
    per_query = {qid: {name: results[name].per_query[qid] for name in METRICS} for qid in first.per_query}
    return EvalReport(
        per_query=per_query,
        means={name: res.mean for name, res in results.items()},
        num_queries=len(per_query),
        unjudged=first.unjudged,
    )


# -- analyses ---------------------------------------------------------------

def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Kendall tau-b, which corrects for ties in either input."""
    if len(a) != len(b):
        raise ValueError("inputs must have equal length")
    if len(a) < 2:
        raise ValueError("kendall_tau needs at least 2 observations")
    concordant = discordant = ties_a = ties_b = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        da = a[i] - a[j]
        db = b[i] - b[j]
        if da == 0 and db == 0:
            continue
        if da == 0:
            ties_a += 1
        elif db == 0:
            ties_b += 1
        elif (da > 0) == (db > 0):
            concordant += 1
        else:
            discordant += 1
    denom = math.sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b))
    if denom == 0:
        raise ValueError("kendall tau is undefined when an input is constant")
    return (concordant - discordant) / denom


def ngram_diversity(text: str | Sequence[str], n: int = 2, config: IndexConfig | None = None) -> float:
    """Distinct n-grams over total n-grams; 0 when there are fewer than n tokens."""
    tokens = tokenize(text, config) if isinstance(text, str) else list(text)
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance between two sequences (tokens or characters)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def intersection_ratio(a: RankedList | Sequence[str], b: RankedList | Sequence[str], depth: int = DEFAULT_DEPTH) -> float:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    pa = a.pids if isinstance(a, RankedList) else list(a)
    pb = b.pids if isinstance(b, RankedList) else list(b)
    return len(set(pa[:depth]) & set(pb[:depth])) / depth


@dataclass
class CorrelationReport:
    labels: tuple[str, ...]
    matrix: list[list[float]]
    sets_used: int
    sets_skipped: int

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "matrix": self.matrix, "sets_used": self.sets_used, "sets_skipped": self.sets_skipped}


def preference_correlation_report(scored: Iterable[ConsistencyScores]) -> CorrelationReport:
    """Mean pairwise tau-b between the RW/RT/RP score vectors across candidate sets."""
    sums = {pair: 0.0 for pair in itertools.combinations(DIMENSIONS, 2)}
    used = skipped = 0
    for scores in scored:
        try:
            taus = {(x, y): kendall_tau(scores[x], scores[y]) for x, y in sums}
        except ValueError:
            skipped += 1
            continue
        for pair, tau in taus.items():
            sums[pair] += tau
        used += 1
    if used == 0:
        raise ValueError(f"no candidate set has a defined tau ({skipped} skipped)")
    index = {d: i for i, d in enumerate(DIMENSIONS)}
    matrix = [[1.0] * len(DIMENSIONS) for _ in DIMENSIONS]
    for (x, y), total in sums.items():
        matrix[index[x]][index[y]] = matrix[index[y]][index[x]] = total / used
    return CorrelationReport(DIMENSIONS, matrix, used, skipped)


def linguistic_stats(
    originals: Sequence[str],
    rewrites: Sequence[str],
    n: int = 2,
    config: IndexConfig | None = None,
    char_level: bool = False,
) -> dict[str, float]:
    """Mean token length, n-gram diversity and edit distance from the original query."""
    if len(originals) != len(rewrites):
        raise ValueError("originals and rewrites must align")
    if not rewrites:
        return {"length": 0.0, "ngram_diversity": 0.0, "edit_distance": 0.0, "count": 0}
    lengths, diversity, edits = [], [], []
    for orig, rw in zip(originals, rewrites):
        toks = tokenize(rw, config)
        lengths.append(len(toks))
        diversity.append(ngram_diversity(toks, n))
        if char_level:
            edits.append(levenshtein(orig, rw))
        else:
            edits.append(levenshtein(tokenize(orig, config), toks))
    m = len(rewrites)
    return {
        "length": sum(lengths) / m,
        "ngram_diversity": math.fsum(diversity) / m,
        "edit_distance": sum(edits) / m,
        "count": m,
    }


def write_report(path: str | os.PathLike, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
