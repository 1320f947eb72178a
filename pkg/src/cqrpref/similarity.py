"""Pairwise semantic similarity in [0, 1]: embedding cosine or lexical token F1."""

from __future__ import annotations

import logging
import math
import os
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .retriever import IndexConfig, tokenize

logger = logging.getLogger(__name__)

EMBED_BATCH = 64


class SimilarityError(RuntimeError):
    pass


class SimilarityBackend(Protocol):
    kind: str

    def sim(self, a: str, b: str) -> float: ...

    def matrix(self, texts: Sequence[str]) -> np.ndarray: ...


def token_f1(a_tokens: Sequence[str], b_tokens: Sequence[str]) -> float:
    """Multiset-overlap F1 between two token sequences."""
    if not a_tokens or not b_tokens:
        return 0.0
    overlap = sum((Counter(a_tokens) & Counter(b_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(a_tokens)
    recall = overlap / len(b_tokens)
    return 2 * precision * recall / (precision + recall)


@dataclass
class LexicalSimilarity:
    """Offline fallback: token-level F1 under the retriever tokenizer."""

    config: IndexConfig = IndexConfig()
    kind: str = "lexical"

    def sim(self, a: str, b: str) -> float:
        ta, tb = tokenize(a, self.config), tokenize(b, self.config)
        if not ta and not tb:
            logger.warning("similarity of two empty strings requested; returning 0")
            return 0.0
        return token_f1(ta, tb)

    def matrix(self, texts: Sequence[str]) -> np.ndarray:
        toks = [tokenize(t, self.config) for t in texts]
        k = len(texts)
        out = np.zeros((k, k))
        for i in range(k):
            out[i, i] = 1.0 if toks[i] else 0.0
            for j in range(i + 1, k):
                out[i, j] = out[j, i] = token_f1(toks[i], toks[j])
        return out


class EmbeddingSimilarity:
    """Cosine similarity over vectors from an embedding service, clamped at 0.

    Request: ``POST <endpoint>`` with ``{"model": ..., "input": [texts]}``.
    Response: ``{"data": [{"embedding": [...]}, ...]}`` in input order.
    """

    kind = "embedding"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "EMBEDDING_API_KEY",
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = os.environ.get(api_key_env)
        self._client = client or httpx.Client(timeout=timeout)
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        for start in range(0, len(missing), EMBED_BATCH):
            batch = missing[start:start + EMBED_BATCH]
            try:
                resp = self._client.post(self.endpoint, json={"model": self.model, "input": batch}, headers=headers)
                resp.raise_for_status()
                data = resp.json()["data"]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                raise SimilarityError(f"embedding request to {self.endpoint} failed: {exc}") from exc
            if len(data) != len(batch):
                raise SimilarityError(f"embedding service returned {len(data)} vectors for {len(batch)} texts")
            for text, item in zip(batch, data):
                self._cache[text] = np.asarray(item["embedding"], dtype=np.float64)
        return [self._cache[t] for t in texts]

    @staticmethod
    def _cosine(u: np.ndarray, v: np.ndarray) -> float:
        denom = float(np.linalg.norm(u) * np.linalg.norm(v))
        if denom == 0.0:
            return 0.0
        return min(1.0, max(0.0, float(np.dot(u, v)) / denom))

    def sim(self, a: str, b: str) -> float:
        if not a and not b:
            logger.warning("similarity of two empty strings requested; returning 0")
            return 0.0
        u, v = self.embed([a, b])
        return self._cosine(u, v)

    def matrix(self, texts: Sequence[str]) -> np.ndarray:
        vecs = self.embed(texts)
        k = len(texts)
        out = np.zeros((k, k))
        for i in range(k):
            out[i, i] = self._cosine(vecs[i], vecs[i])
            for j in range(i + 1, k):
                out[i, j] = out[j, i] = self._cosine(vecs[i], vecs[j])
        return out


def sim(backend: SimilarityBackend, a: str, b: str) -> float:
    value = backend.sim(a, b)
    if math.isnan(value):
        raise SimilarityError("similarity backend returned NaN")
    return value


def sim_matrix(backend: SimilarityBackend, texts: Sequence[str]) -> np.ndarray:
    """Symmetric K x K similarity matrix; each unordered pair is evaluated once."""
    if len(texts) < 2:
        raise ValueError(f"sim_matrix needs at least 2 texts, got {len(texts)}")
    return backend.matrix(list(texts))


def make_backend(cfg: dict | None) -> SimilarityBackend:
    cfg = dict(cfg or {})
    kind = cfg.pop("kind", "lexical")
    if kind == "lexical":
        return LexicalSimilarity()
    if kind == "embedding":
        try:
            return EmbeddingSimilarity(**cfg)
        except TypeError as exc:
            raise ValueError(f"bad embedding similarity config: {exc}") from None
    raise ValueError(f"unknown similarity backend kind {kind!r}")
