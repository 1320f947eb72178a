"""Self-consistency scores over sampled rewrites and chosen/rejected selection.

Every candidate is scored by its agreement with the other K - 1 candidates along three
axes: rewrite text (similarity plus a length ratio), retrieved passages (mean overlap),
and generated response (similarity).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Candidate, CandidateSet
from .retriever import IndexConfig, tokenize
from .similarity import SimilarityBackend, sim_matrix

DIMENSIONS = ("rw", "rt", "rp")


@dataclass(frozen=True)
class ConsistencyScores:
    rw: tuple[float, ...]
    rt: tuple[float, ...]
    rp: tuple[float, ...]

    def __post_init__(self):
        if not len(self.rw) == len(self.rt) == len(self.rp):
            raise ValueError("score vectors must have equal length")

    def __getitem__(self, dim: str) -> tuple[float, ...]:
        if dim not in DIMENSIONS:
            raise KeyError(dim)
        return getattr(self, dim)

    def __len__(self) -> int:
        return len(self.rw)


@dataclass(frozen=True)
class PairSelection:
    chosen_index: int
    rejected_index: int
    degenerate: bool
    chosen: Candidate | None = None
    rejected: Candidate | None = None


def _check_k(k: int) -> None:
    if k < 2:
        raise ValueError(f"consistency scores need K >= 2 candidates, got {k}")


def _mean_off_diagonal(simm: np.ndarray) -> np.ndarray:
    simm = np.asarray(simm, dtype=np.float64)
    k = simm.shape[0]
    _check_k(k)
    if simm.shape != (k, k):
        raise ValueError(f"similarity matrix must be square, got {simm.shape}")
    out = np.empty(k)
    for i in range(k):
        # fsum is order-independent, which keeps the scores exactly permutation-equivariant
        out[i] = math.fsum(float(simm[i, j]) for j in range(k) if j != i) / (k - 1)
    return out


def rewrite_score(rqs: Sequence[str], simm: np.ndarray, lens: Sequence[int]) -> list[float]:
    k = len(rqs)
    _check_k(k)
    if len(lens) != k or np.shape(simm)[0] != k:
        raise ValueError("rqs, similarity matrix and lengths disagree on K")
    if any(n < 1 for n in lens):
        raise ValueError("every rewrite needs a token length >= 1")
    longest = max(lens)
    agreement = _mean_off_diagonal(simm)
    return [float(agreement[i]) + lens[i] / longest for i in range(k)]


def retrieval_score(pid_lists: Sequence[Sequence[str]]) -> list[float]:
    k = len(pid_lists)
    _check_k(k)
    sets = [set(p) for p in pid_lists]
    return [sum(len(sets[i] & sets[j]) for j in range(k) if j != i) / (k - 1) for i in range(k)]


def response_score(rss: Sequence[str], simm: np.ndarray) -> list[float]:
    if np.shape(simm)[0] != len(rss):
        raise ValueError("rss and similarity matrix disagree on K")
    return [float(v) for v in _mean_off_diagonal(simm)]


def majority_vote_scores(texts: Sequence[str], config: IndexConfig | None = None) -> list[float]:
    """Vote count of each candidate's normalized text; comparator for the similarity-free ablation."""
    keys = [" ".join(tokenize(t, config)) for t in texts]
    counts = Counter(keys)
    return [float(counts[key]) for key in keys]


def select_pair(scores: Sequence[float], candidates: Sequence[Candidate] | None = None) -> PairSelection:
    """Chosen = first argmax, rejected = first argmin; flagged degenerate when all scores tie."""
    if candidates is not None and len(candidates) != len(scores):
        raise ValueError(f"{len(scores)} scores for {len(candidates)} candidates")
    _check_k(len(scores))
    hi = max(range(len(scores)), key=lambda i: (scores[i], -i))
    lo = min(range(len(scores)), key=lambda i: (scores[i], i))
    degenerate = scores[hi] == scores[lo]
    if degenerate:
        hi = lo = 0
    return PairSelection(
        chosen_index=hi,
        rejected_index=lo,
        degenerate=degenerate,
        chosen=candidates[hi] if candidates is not None else None,
        rejected=candidates[lo] if candidates is not None else None,
    )


def score_candidate_set(
    cs: CandidateSet,
    backend: SimilarityBackend,
    config: IndexConfig | None = None,
    depth: int | None = None,
) -> ConsistencyScores:
    """All three score vectors for one candidate set.

    ``depth`` truncates each retrieved list before the overlap count; ``None`` uses the full lists.
    """
    cands = cs.candidates
    _check_k(len(cands))
    rqs = [c.rq for c in cands]
    rss = [c.rs for c in cands]
    lens = [len(tokenize(rq, config)) for rq in rqs]
    pid_lists = [c.pids[:depth] if depth is not None else c.pids for c in cands]
    rw = rewrite_score(rqs, sim_matrix(backend, rqs), lens)
    rt = retrieval_score(pid_lists)
    rp = response_score(rss, sim_matrix(backend, rss))
    return ConsistencyScores(tuple(rw), tuple(rt), tuple(rp))


def scores_to_dict(cs: CandidateSet, scores: ConsistencyScores) -> dict:
    selected = {}
    for dim in DIMENSIONS:
        sel = select_pair(scores[dim])
        selected[dim] = {"chosen": sel.chosen_index, "rejected": sel.rejected_index, "degenerate": sel.degenerate}
    return {
        "turn_key": [cs.conv_id, cs.turn_id],
        "rw": list(scores.rw),
        "rt": list(scores.rt),
        "rp": list(scores.rp),
        "selected": selected,
    }


def scores_from_dict(obj: dict) -> tuple[tuple[str, int], ConsistencyScores]:
    conv_id, turn_id = obj["turn_key"]
    return (str(conv_id), int(turn_id)), ConsistencyScores(
        tuple(map(float, obj["rw"])), tuple(map(float, obj["rt"])), tuple(map(float, obj["rp"]))
    )
