"""Combining the per-tag rewrites at inference: concatenation, expansion, reciprocal rank fusion."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .retriever import RankedList

RRF_K = 60.0


@dataclass(frozen=True)
class FusedQuery:
    parts: tuple[str, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("a fused query needs at least one part")

    @property
    def text(self) -> str:
        return " ".join(self.parts)


def concat_queries(parts: Sequence[str]) -> FusedQuery:
    """Join trimmed parts with single spaces, preserving order."""
    cleaned = []
    for i, part in enumerate(parts):
        part = part.strip()
        if not part:
            raise ValueError(f"query part {i} is empty")
        cleaned.append(part)
    return FusedQuery(tuple(cleaned))


def expand_query(q: str, pseudo_response: str) -> str:
    if not q.strip():
        raise ValueError("query must be non-empty")
    pseudo_response = pseudo_response.strip()
    if not pseudo_response:
        return q
    return f"{q} {pseudo_response}"


def rrf(lists: Sequence[RankedList], k: float = RRF_K, depth: int | None = None) -> RankedList:
    """Reciprocal rank fusion with 1-based ranks; ties broken by ascending pid."""
    if not lists:
        raise ValueError("rrf needs at least one ranked list")
    if k <= 0:
        raise ValueError(f"rrf constant must be > 0, got {k}")
    # exact rational sums: order-independent and rounded once
    kq = Fraction(k)
    totals: dict[str, Fraction] = defaultdict(Fraction)
    for ranked in lists:
        for rank, (pid, _) in enumerate(ranked, 1):
            totals[pid] += 1 / (kq + rank)
    ordered = sorted(totals.items(), key=lambda e: (-e[1], e[0]))
    fused = [(pid, float(total)) for pid, total in ordered]
    if depth is not None:
        fused = fused[:depth]
    return RankedList(tuple(fused))
