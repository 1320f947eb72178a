import json
import math
import random
import shutil
from collections import Counter
from pathlib import Path

import pytest

TOY_DIR = Path(__file__).parent / "fixtures" / "toy"


@pytest.fixture
def toy_dir(tmp_path):
    """Copy of the toy fixtures in a scratch directory, with output_dir pointing inside it."""
    dst = tmp_path / "toy"
    shutil.copytree(TOY_DIR, dst, ignore=shutil.ignore_patterns("out", "__pycache__"))
    return dst


@pytest.fixture
def toy_expected():
    return json.loads((TOY_DIR / "expected.json").read_text())


def brute_force_bm25(docs: list[list[str]], query: list[str], k1: float = 0.9, b: float = 0.4) -> list[float]:
    """Score every document from raw token lists; shares no code with the index."""
    n = len(docs)
    bags = [Counter(d) for d in docs]
    lengths = [len(d) for d in docs]
    avgdl = sum(lengths) / n
    df = Counter()
    for bag in bags:
        df.update(bag.keys())
    scores = []
    for bag, dl in zip(bags, lengths):
        s = 0.0
        for term in query:
            tf = bag.get(term, 0)
            if tf == 0:
                continue
            idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
            s += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl))
        scores.append(s)
    return scores


def random_corpus(rng: random.Random, n_docs: int, vocab_size: int = 60, max_len: int = 30):
    vocab = [f"w{i}" for i in range(vocab_size)]
    # skewed draws so some terms are frequent and many score ties occur
    weights = [1.0 / (i + 1) for i in range(vocab_size)]
    return [
        (f"doc{i:04d}", rng.choices(vocab, weights, k=rng.randint(1, max_len)))
        for i in range(n_docs)
    ], vocab
