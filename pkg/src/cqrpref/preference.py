"""Prefix-tagged preference records and the multi-faceted DPO objective."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

from .corpus import CandidateSet, DialogueTurn, serialize_history
from .scoring import ConsistencyScores, select_pair

logger = logging.getLogger(__name__)

INSTRUCTION = "Please rewrite the last query of the following conversation to make it more complete."


class PreferenceTag(str, enum.Enum):
    REWRITE = "[REWRITE]"
    RETRIEVAL = "[RETRIEVAL]"
    RESPONSE = "[RESPONSE]"

    @classmethod
    def parse(cls, value: "str | PreferenceTag") -> "PreferenceTag":
        try:
            return cls(value)
        except ValueError:
            allowed = ", ".join(t.value for t in cls)
            raise ValueError(f"unknown preference tag {value!r}; expected one of {allowed}") from None


# fixed emission order; also the concatenation order at inference
TAG_ORDER = (PreferenceTag.REWRITE, PreferenceTag.RETRIEVAL, PreferenceTag.RESPONSE)
TAG_DIMENSION = {PreferenceTag.REWRITE: "rw", PreferenceTag.RETRIEVAL: "rt", PreferenceTag.RESPONSE: "rp"}


@dataclass(frozen=True)
class PreferenceRecord:
    prefix: PreferenceTag
    prompt: str
    chosen: str
    rejected: str
    turn_key: tuple[str, int]

    def to_dict(self) -> dict:
        return {"prefix": self.prefix.value, "prompt": self.prompt, "chosen": self.chosen, "rejected": self.rejected}


def build_prompt(prefix: "PreferenceTag | str", turn: DialogueTurn) -> str:
    tag = PreferenceTag.parse(prefix)
    return f"{tag.value}\n{INSTRUCTION}\n{serialize_history(turn)}"


def strip_prompt(prompt: str) -> tuple[PreferenceTag, str]:
    """Inverse of :func:`build_prompt`: returns the tag and the rendered dialogue."""
    tag, instruction, rest = prompt.split("\n", 2)
    if instruction != INSTRUCTION:
        raise ValueError("prompt does not carry the rewrite instruction")
    return PreferenceTag.parse(tag), rest


def emit_preference_records(
    cs: CandidateSet,
    scores: ConsistencyScores,
    turn: DialogueTurn,
) -> tuple[list[PreferenceRecord], int]:
    """One record per non-degenerate dimension, in tag order.

    Returns the records and the number of skipped dimensions.
    """
    records = []
    skipped = 0
    for tag in TAG_ORDER:
        sel = select_pair(scores[TAG_DIMENSION[tag]], cs.candidates)
        if sel.degenerate or sel.chosen.rq == sel.rejected.rq:
            skipped += 1
            logger.debug("turn %s: %s pair is degenerate, skipped", cs.key, tag.value)
            continue
        records.append(PreferenceRecord(tag, build_prompt(tag, turn), sel.chosen.rq, sel.rejected.rq, cs.key))
    return records, skipped


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v!r}")


def implicit_reward(logp_theta: float, logp_ref: float, beta: float) -> float:
    _check_finite(logp_theta, logp_ref, beta)
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    return beta * (logp_theta - logp_ref)


def softplus(x: float) -> float:
    """log(1 + e^x) without overflow."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class MdpoInputs:
    logp_theta_pos: float
    logp_ref_pos: float
    logp_theta_neg: float
    logp_ref_neg: float
    beta: float = 0.1

    def __post_init__(self):
        _check_finite(self.logp_theta_pos, self.logp_ref_pos, self.logp_theta_neg, self.logp_ref_neg, self.beta)
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")

    @property
    def margin(self) -> float:
        """Chosen log-ratio minus rejected log-ratio (unscaled)."""
        return (self.logp_theta_pos - self.logp_ref_pos) - (self.logp_theta_neg - self.logp_ref_neg)


def mdpo_loss(inputs: MdpoInputs) -> float:
    """-log sigmoid(beta * margin), evaluated as softplus(-beta * margin)."""
    return softplus(-inputs.beta * inputs.margin)


def mdpo_loss_grad(inputs: MdpoInputs) -> float:
    """Derivative of :func:`mdpo_loss` with respect to the margin."""
    return -inputs.beta * sigmoid(-inputs.beta * inputs.margin)
