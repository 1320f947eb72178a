"""Record types and newline-delimited JSON I/O for passages, dialogues, candidates and qrels."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when an input file violates its record contract."""


@dataclass(frozen=True)
class Passage:
    id: str
    text: str


@dataclass(frozen=True)
class DialogueTurn:
    conv_id: str
    turn_id: int
    query: str
    history: tuple[tuple[str, str], ...] = ()
    gold_pids: frozenset[str] | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.conv_id, self.turn_id)

    @property
    def qid(self) -> str:
        return turn_qid(self.conv_id, self.turn_id)


@dataclass(frozen=True)
class Candidate:
    rq: str
    rs: str
    pids: tuple[str, ...] = ()


@dataclass(frozen=True)
class CandidateSet:
    conv_id: str
    turn_id: int
    candidates: tuple[Candidate, ...] = field(default_factory=tuple)

    @property
    def key(self) -> tuple[str, int]:
        return (self.conv_id, self.turn_id)

    def __len__(self) -> int:
        return len(self.candidates)


def turn_qid(conv_id: str, turn_id: int) -> str:
    """Query id used in run and qrels files for one dialogue turn."""
    return f"{conv_id}_{turn_id}"


def _iter_json_lines(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require_str(obj: dict, name: str, where: str) -> str:
    value = obj.get(name)
    if not isinstance(value, str) or not value.strip():
        raise DataError(f"{where}: field {name!r} must be a non-empty string")
    return value


def _write_json_lines(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
            f.write("\n")


# -- passages ---------------------------------------------------------------

def iter_corpus(path: str | os.PathLike) -> Iterator[Passage]:
    """Stream passages without duplicate checking."""
    for lineno, obj in _iter_json_lines(path):
        where = f"{path}:{lineno}"
        yield Passage(_require_str(obj, "id", where), _require_str(obj, "text", where))


def load_corpus(path: str | os.PathLike) -> list[Passage]:
    """Load a passage collection, rejecting duplicate ids."""
    if not Path(path).exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    passages: list[Passage] = []
    seen: set[str] = set()
    for p in iter_corpus(path):
        if p.id in seen:
            raise DataError(f"{path}: duplicate passage id {p.id!r}")
        seen.add(p.id)
        passages.append(p)
    if not passages:
        logger.warning("corpus %s is empty", path)
    logger.info("loaded %d passages from %s", len(passages), path)
    return passages


def write_corpus(path: str | os.PathLike, passages: Iterable[Passage]) -> None:
    _write_json_lines(path, ({"id": p.id, "text": p.text} for p in passages))


# -- dialogues --------------------------------------------------------------

def dialogue_from_dict(obj: dict, where: str = "record") -> DialogueTurn:
    conv_id = obj.get("conv_id")
    if conv_id is None or str(conv_id) == "":
        raise DataError(f"{where}: missing conv_id")
    turn_id = obj.get("turn_id")
    if isinstance(turn_id, bool) or not isinstance(turn_id, int):
        raise DataError(f"{where}: turn_id must be an integer")
    if turn_id < 1:
        raise DataError(f"{where}: turn_id must be >= 1, got {turn_id}")
    query = _require_str(obj, "query", where)
    history = []
    for pair in obj.get("history") or []:
        if not isinstance(pair, dict) or not isinstance(pair.get("q"), str) or not isinstance(pair.get("a"), str):
            raise DataError(f"{where}: history entries must be objects with string 'q' and 'a'")
        history.append((pair["q"], pair["a"]))
    gold = obj.get("gold_pids")
    gold_pids = None
    if gold is not None:
        if not isinstance(gold, list) or not all(isinstance(g, str) for g in gold):
            raise DataError(f"{where}: gold_pids must be a list of strings")
        gold_pids = frozenset(gold)
    return DialogueTurn(str(conv_id), turn_id, query, tuple(history), gold_pids)


def dialogue_to_dict(turn: DialogueTurn) -> dict:
    out = {
        "conv_id": turn.conv_id,
        "turn_id": turn.turn_id,
        "query": turn.query,
        "history": [{"q": q, "a": a} for q, a in turn.history],
    }
    if turn.gold_pids is not None:
        out["gold_pids"] = sorted(turn.gold_pids)
    return out


def load_dialogues(path: str | os.PathLike, passage_ids: set[str] | None = None) -> list[DialogueTurn]:
    """Load dialogue turns in file order.

    When ``passage_ids`` is given, gold ids that do not name a known passage are rejected.
    """
    turns = []
    for lineno, obj in _iter_json_lines(path):
        turn = dialogue_from_dict(obj, f"{path}:{lineno}")
        if passage_ids is not None and turn.gold_pids:
            unknown = sorted(turn.gold_pids - passage_ids)
            if unknown:
                raise DataError(f"{path}:{lineno}: gold_pids reference unknown passages {unknown}")
        turns.append(turn)
    return turns


def write_dialogues(path: str | os.PathLike, turns: Iterable[DialogueTurn]) -> None:
    _write_json_lines(path, (dialogue_to_dict(t) for t in turns))


def serialize_history(turn: DialogueTurn) -> str:
    lines = []
    for q, a in turn.history:
        lines.append(f"Q: {q}")
        lines.append(f"A: {a}")
    lines.append(f"Q: {turn.query}")
    return "\n".join(lines)


# -- candidate sets ---------------------------------------------------------

def candidate_set_from_dict(obj: dict, where: str = "record") -> CandidateSet:
    turn_id = obj.get("turn_id")
    if isinstance(turn_id, bool) or not isinstance(turn_id, int) or turn_id < 1:
        raise DataError(f"{where}: turn_id must be an integer >= 1")
    cands = []
    for c in obj.get("candidates") or []:
        if not isinstance(c, dict):
            raise DataError(f"{where}: candidates must be objects")
        pids = tuple(c.get("pids") or ())
        if len(set(pids)) != len(pids):
            raise DataError(f"{where}: candidate pids contain duplicates")
        cands.append(Candidate(str(c.get("rq", "")), str(c.get("rs", "")), pids))
    if len(cands) < 2:
        raise DataError(f"{where}: a candidate set needs at least 2 candidates, got {len(cands)}")
    return CandidateSet(str(obj.get("conv_id")), turn_id, tuple(cands))


def candidate_set_to_dict(cs: CandidateSet) -> dict:
    return {
        "conv_id": cs.conv_id,
        "turn_id": cs.turn_id,
        "candidates": [{"rq": c.rq, "rs": c.rs, "pids": list(c.pids)} for c in cs.candidates],
    }


def load_candidates(path: str | os.PathLike) -> list[CandidateSet]:
    return [candidate_set_from_dict(obj, f"{path}:{n}") for n, obj in _iter_json_lines(path)]


def write_candidates(path: str | os.PathLike, sets: Iterable[CandidateSet]) -> None:
    _write_json_lines(path, (candidate_set_to_dict(cs) for cs in sets))


# -- qrels ------------------------------------------------------------------

def load_qrels(path: str | os.PathLike) -> dict[str, dict[str, int]]:
    """Parse ``qid 0 pid rel`` lines into ``{qid: {pid: rel}}``."""
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 'qid 0 pid rel'")
            qid, _, pid, rel = parts
            try:
                rel_value = int(rel)
            except ValueError:
                raise DataError(f"{path}:{lineno}: relevance must be an integer") from None
            if rel_value not in (0, 1):
                raise DataError(f"{path}:{lineno}: relevance must be 0 or 1, got {rel_value}")
            qrels.setdefault(qid, {})[pid] = rel_value
    return qrels


def write_qrels(path: str | os.PathLike, qrels: dict[str, dict[str, int]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, judged in qrels.items():
            for pid, rel in judged.items():
                f.write(f"{qid} 0 {pid} {rel}\n")


def qrels_from_dialogues(turns: Iterable[DialogueTurn]) -> dict[str, dict[str, int]]:
    return {
        t.qid: {pid: 1 for pid in sorted(t.gold_pids)}
        for t in turns
        if t.gold_pids
    }
