"""Sparse BM25 retrieval over an in-memory inverted index."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import zipfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Passage

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

STOPWORDS = frozenset(
    """a an and are as at be but by for from had has have he her his i if in into is it its
    me my no not of on or our she so than that the their them then there these they this
    to was we were what when where which who whom why will with you your""".split()
)

FORMAT_VERSION = 1


class IndexArtifactError(RuntimeError):
    """Raised for unusable or mismatched index artifacts."""


@dataclass(frozen=True)
class IndexConfig:
    k1: float = 0.9
    b: float = 0.4
    lowercase: bool = True
    min_token_len: int = 1
    stem: bool = False
    remove_stopwords: bool = False

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")
        if self.min_token_len < 1:
            raise ValueError(f"min_token_len must be >= 1, got {self.min_token_len}")

    def fingerprint(self) -> str:
        """Digest of every setting that changes the index contents or its scores."""
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def s_stem(token: str) -> str:
    """Plural-stripping S-stemmer (Harman 1991)."""
    if token.endswith("ies") and not token.endswith(("eies", "aies")):
        return token[:-3] + "y"
    if token.endswith("es") and not token.endswith(("aes", "ees", "oes")):
        return token[:-1]
    if token.endswith("s") and not token.endswith(("us", "ss")):
        return token[:-1]
    return token


def tokenize(text: str, config: IndexConfig | None = None) -> list[str]:
    config = config or IndexConfig()
    if config.lowercase:
        text = text.lower()
    tokens = _TOKEN_RE.findall(text)
    if config.remove_stopwords:
        tokens = [t for t in tokens if t.lower() not in STOPWORDS]
    if config.stem:
        tokens = [s_stem(t) for t in tokens]
    return [t for t in tokens if len(t) >= config.min_token_len]


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def pids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    def top(self, depth: int) -> "RankedList":
        return RankedList(self.entries[:depth])


class InvertedIndex:
    """Immutable term -> (ordinals, term frequencies) postings plus document statistics.

    Build with :func:`build_index`; postings arrays are sorted by document ordinal.
    """

    def __init__(
        self,
        config: IndexConfig,
        doc_ids: Sequence[str],
        doc_lengths: np.ndarray,
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
    ):
        self.config = config
        self.doc_ids = tuple(doc_ids)
        self.doc_lengths = np.asarray(doc_lengths, dtype=np.int64)
        self.doc_lengths.setflags(write=False)
        self.postings = postings
        for ords, tfs in postings.values():
            ords.setflags(write=False)
            tfs.setflags(write=False)
        self.doc_count = len(self.doc_ids)
        self.avg_doc_len = float(self.doc_lengths.mean()) if self.doc_count else 0.0
        if self.avg_doc_len > 0:
            self._norm = 1.0 - config.b + config.b * self.doc_lengths / self.avg_doc_len
        else:
            self._norm = np.ones(self.doc_count)
        self._norm.setflags(write=False)
        self._ordinal = {pid: i for i, pid in enumerate(self.doc_ids)}

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def ordinal(self, pid: str) -> int:
        return self._ordinal[pid]

    def df(self, term: str) -> int:
        post = self.postings.get(term)
        return 0 if post is None else len(post[0])

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def tf(self, term: str, ordinal: int) -> int:
        post = self.postings.get(term)
        if post is None:
            return 0
        ords, tfs = post
        i = int(np.searchsorted(ords, ordinal))
        if i < len(ords) and ords[i] == ordinal:
            return int(tfs[i])
        return 0

    def bm25_score(self, query_tokens: Iterable[str], ordinal: int) -> float:
        if not 0 <= ordinal < self.doc_count:
            raise IndexError(f"document ordinal {ordinal} out of range")
        k1 = self.config.k1
        norm = float(self._norm[ordinal])
        score = 0.0
        for term in query_tokens:
            tf = self.tf(term, ordinal)
            if tf == 0:
                continue
            score += self.idf(term) * (tf * (k1 + 1.0)) / (tf + k1 * norm)
        return score

    def score_all(self, query_tokens: Iterable[str]) -> np.ndarray:
        """Term-at-a-time accumulation of BM25 scores for every document."""
        k1 = self.config.k1
        scores = np.zeros(self.doc_count, dtype=np.float64)
        for term in query_tokens:
            post = self.postings.get(term)
            if post is None:
                continue
            ords, tfs = post
            tf = tfs.astype(np.float64)
            scores[ords] += self.idf(term) * (tf * (k1 + 1.0)) / (tf + k1 * self._norm[ords])
        return scores

    def search(self, query: str, k: int = 100) -> RankedList:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        scores = self.score_all(tokenize(query, self.config))
        hits = np.flatnonzero(scores > 0)
        if len(hits) > k:
            # keep everything tied with the k-th best so the pid tie-break stays exact
            kth = np.partition(scores[hits], len(hits) - k)[len(hits) - k]
            hits = hits[scores[hits] >= kth]
        ranked = sorted(((self.doc_ids[i], float(scores[i])) for i in hits), key=lambda e: (-e[1], e[0]))
        return RankedList(tuple(ranked[:k]))

    def search_many(self, queries: Sequence[str], k: int = 100, workers: int = 1) -> list[RankedList]:
        if workers <= 1:
            return [self.search(q, k) for q in queries]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda q: self.search(q, k), queries))

    def save(self, path: str | os.PathLike) -> None:
        terms = sorted(self.postings)
        lengths = np.array([len(self.postings[t][0]) for t in terms], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        if terms:
            ords = np.concatenate([self.postings[t][0] for t in terms]).astype(np.int32)
            tfs = np.concatenate([self.postings[t][1] for t in terms]).astype(np.int32)
        else:
            ords = np.zeros(0, np.int32)
            tfs = np.zeros(0, np.int32)
        meta = {"format": FORMAT_VERSION, "config": asdict(self.config), "fingerprint": self.fingerprint}
        arrays = {
            "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
            "doc_ids": np.array(self.doc_ids, dtype=np.str_),
            "doc_lengths": self.doc_lengths,
            "terms": np.array(terms, dtype=np.str_),
            "offsets": offsets,
            "ordinals": ords,
            "tfs": tfs,
        }
        # np.savez stamps entries with the current time; fixed timestamps keep the bytes reproducible
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name, array in arrays.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w", force_zip64=True) as f:
                    np.lib.format.write_array(f, np.ascontiguousarray(array), allow_pickle=False)


def build_index(corpus: Iterable[Passage], config: IndexConfig | None = None) -> InvertedIndex:
    config = config or IndexConfig()
    doc_ids: list[str] = []
    doc_lengths: list[int] = []
    acc: dict[str, tuple[list[int], list[int]]] = {}
    for ordinal, passage in enumerate(corpus):
        doc_ids.append(passage.id)
        counts = Counter(tokenize(passage.text, config))
        doc_lengths.append(sum(counts.values()))
        for term, tf in counts.items():
            ords, tfs = acc.setdefault(term, ([], []))
            ords.append(ordinal)
            tfs.append(tf)
    if not doc_ids:
        raise ValueError("cannot build an index over an empty corpus")
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("corpus contains duplicate passage ids")
    postings = {
        term: (np.array(ords, dtype=np.int32), np.array(tfs, dtype=np.int32))
        for term, (ords, tfs) in acc.items()
    }
    return InvertedIndex(config, doc_ids, np.array(doc_lengths, dtype=np.int64), postings)


def load_index(path: str | os.PathLike, expected: IndexConfig | None = None) -> InvertedIndex:
    """Load a saved index; ``expected`` must match the stored config when given."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != FORMAT_VERSION:
            raise IndexArtifactError(f"{path}: unsupported index format {meta.get('format')!r}")
        config = IndexConfig(**meta["config"])
        if config.fingerprint() != meta["fingerprint"]:
            raise IndexArtifactError(f"{path}: stored fingerprint does not match stored config")
        if expected is not None and expected.fingerprint() != config.fingerprint():
            raise IndexArtifactError(
                f"{path}: index was built with config {meta['config']} "
                f"(fingerprint {config.fingerprint()}), expected {asdict(expected)} "
                f"(fingerprint {expected.fingerprint()})"
            )
        terms = data["terms"].tolist()
        offsets = data["offsets"]
        ords = data["ordinals"]
        tfs = data["tfs"]
        postings = {
            term: (ords[offsets[i]:offsets[i + 1]].copy(), tfs[offsets[i]:offsets[i + 1]].copy())
            for i, term in enumerate(terms)
        }
        return InvertedIndex(config, data["doc_ids"].tolist(), data["doc_lengths"], postings)
