"""Text-generation backends and the prompts used to sample rewrites and responses."""

from __future__ import annotations

import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import httpx

from .corpus import DialogueTurn, serialize_history
from .preference import PreferenceTag, build_prompt

logger = logging.getLogger(__name__)

DEMOS_PER_PROMPT = 5
EMPTY_RETRIES = 3

REWRITE_INSTRUCTION = (
    "Please rewrite the last statement of the following dialogue to make it more complete. "
    "Just provide the rewritten sentence without any additional content."
)
RESPONSE_INSTRUCTION = (
    "Given a question, please answer the question in a sentence. "
    "The answer should be as informative as possible."
)
GROUNDED_INSTRUCTION = (
    "Given the following conversation history, the current query, and three passages related to "
    "the current query, please generate a response for the current query. You only need to output "
    "the response, please do not output any extra content."
)


class BackendError(RuntimeError):
    """The generation service failed or kept returning unusable output."""

    def __init__(self, message: str, turn_key: tuple[str, int] | None = None):
        if turn_key is not None:
            message = f"turn {turn_key[0]}/{turn_key[1]}: {message}"
        super().__init__(message)
        self.turn_key = turn_key


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 128
    seed: int | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class Backend(Protocol):
    def generate(self, request: GenerationRequest) -> str: ...


# -- backends ---------------------------------------------------------------

class ChatCompletionBackend:
    """OpenAI-compatible ``/chat/completions`` client with exponential-backoff retries."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        retry_limit: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.retry_limit = retry_limit
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def payload(self, request: GenerationRequest) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def generate(self, request: GenerationRequest) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last_error = "no attempt made"
        for attempt in range(self.retry_limit + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=self.payload(request), headers=headers)
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from None
        raise BackendError(f"{self.url} failed after {self.retry_limit + 1} attempts ({last_error})")


@dataclass
class MockBackend:
    """Canned, order-independent responses for offline runs.

    Each rule is ``{"contains": str | [str, ...], "endswith": str, "outputs": [str, ...]}`` (both
    match keys optional). A request is answered by the first rule whose substrings all occur in
    the prompt's annotated part (the text after the last ``Annotated Sample:`` marker, or the
    whole prompt when there is none) and whose ``endswith`` suffix ends the prompt. The output is
    ``outputs[seed % len(outputs)]``, or ``outputs[0]`` for unseeded requests.
    """

    rules: list[dict] = field(default_factory=list)
    default: str | None = None
    prompts: list[str] = field(default_factory=list, repr=False)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockBackend":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        rules = data.get("rules", [])
        for i, rule in enumerate(rules):
            if not rule.get("outputs"):
                raise ValueError(f"{path}: rule {i} has no outputs")
            if isinstance(rule.get("contains"), str):
                rule["contains"] = [rule["contains"]]
        return cls(rules=rules, default=data.get("default"))

    def generate(self, request: GenerationRequest) -> str:
        self.prompts.append(request.prompt)
        scope = request.prompt.rsplit("Annotated Sample:", 1)[-1]
        for rule in self.rules:
            if all(s in scope for s in rule.get("contains", [])) and request.prompt.endswith(rule.get("endswith", "")):
                outputs = rule["outputs"]
                return outputs[(request.seed or 0) % len(outputs)]
        if self.default is not None:
            return self.default
        raise BackendError(f"mock backend has no rule matching prompt ending {scope[-80:]!r}")


@dataclass(frozen=True)
class LLMConfig:
    base_url: str = "mock:"
    model: str = "mock"
    temperature: float = 1.0
    max_tokens: int = 128
    max_concurrency: int = 4
    retry_limit: int = 3
    api_key_env: str = "LLM_API_KEY"
    canned_responses: str | None = None

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")


def make_backend(config: LLMConfig) -> Backend:
    if config.base_url.startswith("mock:"):
        path = config.canned_responses or config.base_url[len("mock:"):]
        if not path:
            raise ValueError("mock backend needs a canned-responses file")
        return MockBackend.from_file(path)
    return ChatCompletionBackend(
        config.base_url,
        config.model,
        api_key=os.environ.get(config.api_key_env),
        retry_limit=config.retry_limit,
    )


def ordered_map(fn: Callable, items: Sequence, max_concurrency: int = 1) -> list:
    """Apply ``fn`` with at most ``max_concurrency`` calls in flight; results keep input order."""
    if max_concurrency <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(fn, items))


# -- demonstrations ---------------------------------------------------------

@dataclass(frozen=True)
class DemoPool:
    """Rewrite demonstrations (dialogue rendering, rewritten sentence) plus the fixed response demos."""

    examples: tuple[tuple[str, str], ...]
    response_examples: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if len(self.examples) < DEMOS_PER_PROMPT:
            raise ValueError(f"demo pool needs at least {DEMOS_PER_PROMPT} rewrite examples, got {len(self.examples)}")

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "DemoPool":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        rewrite = tuple((d["dialogue"], d["rewrite"]) for d in data.get("rewrite", []))
        response = tuple((d["question"], d["answer"]) for d in data.get("response", []))
        return cls(rewrite, response[:DEMOS_PER_PROMPT])

    def draw(self, rng: random.Random) -> list[tuple[str, str]]:
        return rng.sample(self.examples, DEMOS_PER_PROMPT)


def rewrite_sampling_prompt(turn: DialogueTurn, demos: Sequence[tuple[str, str]]) -> str:
    parts = [REWRITE_INSTRUCTION, "Demonstrations:"]
    for dialogue, rewrite in demos:
        parts.append(f"Dialogue:\n{dialogue}\nRewritten Sentence: {rewrite}\n")
    parts += ["Annotated Sample:", "Dialogue:", serialize_history(turn), "Rewritten Sentence:"]
    return "\n".join(parts)


def response_prompt(rq: str, demos: Sequence[tuple[str, str]]) -> str:
    parts = [RESPONSE_INSTRUCTION, "Demonstrations:"]
    for question, answer in demos:
        parts.append(f"Question: {question}\nAnswer: {answer}\n")
    parts += ["Annotated Sample:", "Question:", rq, "Answer:"]
    return "\n".join(parts)


def grounded_response_prompt(turn: DialogueTurn, rq: str, passages: Sequence[str]) -> str:
    history = "\n".join(f"Q: {q}\nA: {a}" for q, a in turn.history)
    parts = [
        GROUNDED_INSTRUCTION,
        "",
        f"Conversation History: {history}",
        "",
        f"Current Query: {rq}",
        "",
        "Relevant Passages:",
    ]
    for i, text in enumerate(passages, 1):
        parts += ["", f"Passage {i}:", text]
    parts += ["", "Response:"]
    return "\n".join(parts)


# -- operations -------------------------------------------------------------

def _generate_nonempty(backend: Backend, request: GenerationRequest, stride: int, turn_key) -> str:
    for attempt in range(EMPTY_RETRIES + 1):
        seed = None if request.seed is None else request.seed + attempt * stride
        try:
            text = backend.generate(replace(request, seed=seed)).strip()
        except BackendError as exc:
            raise BackendError(str(exc), turn_key) from exc
        if text:
            return text
        logger.debug("turn %s: empty generation, retry %d", turn_key, attempt + 1)
    raise BackendError(f"generation stayed empty after {EMPTY_RETRIES} retries", turn_key)


def sample_rewrites(
    backend: Backend,
    turn: DialogueTurn,
    k: int,
    pool: DemoPool,
    seed: int = 0,
    temperature: float = 1.0,
    max_tokens: int = 128,
    max_concurrency: int = 1,
) -> list[str]:
    """K candidate rewrites, each prompted with an independently drawn set of 5 demonstrations.

    Request ``i`` carries seed ``seed + i``; empty outputs are retried with shifted seeds.
    """
    if k < 2:
        raise ValueError(f"K must be >= 2, got {k}")
    rng = random.Random(seed)
    requests = [
        GenerationRequest(rewrite_sampling_prompt(turn, pool.draw(rng)), temperature, max_tokens, seed + i)
        for i in range(k)
    ]
    outputs = ordered_map(lambda r: _generate_nonempty(backend, r, k, turn.key), requests, max_concurrency)
    if len(outputs) != k:
        raise BackendError(f"expected {k} rewrites, got {len(outputs)}", turn.key)
    return outputs


def generate_response(
    backend: Backend,
    turn: DialogueTurn,
    rq: str,
    mode: str = "direct",
    passages: Sequence[str] | None = None,
    pool: DemoPool | None = None,
    max_tokens: int = 128,
) -> str:
    """Answer one rewrite, either from fixed demonstrations or grounded in three passages."""
    if mode == "direct":
        demos = pool.response_examples if pool is not None else ()
        prompt = response_prompt(rq, demos)
    elif mode == "grounded":
        if passages is None or len(passages) != 3:
            raise ValueError(f"grounded mode needs exactly 3 passages, got {0 if passages is None else len(passages)}")
        prompt = grounded_response_prompt(turn, rq, passages)
    else:
        raise ValueError(f"unknown response mode {mode!r}")
    return _generate_nonempty(backend, GenerationRequest(prompt, 0.0, max_tokens, 0), 1, turn.key)


def generate_prefixed_rewrite(
    backend: Backend,
    turn: DialogueTurn,
    prefix: PreferenceTag | str,
    max_tokens: int = 128,
) -> str:
    prompt = build_prompt(PreferenceTag.parse(prefix), turn)
    return _generate_nonempty(backend, GenerationRequest(prompt, 0.0, max_tokens, 0), 1, turn.key)
