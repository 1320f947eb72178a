import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqrpref.corpus import Candidate, CandidateSet
from cqrpref.scoring import (
    majority_vote_scores,
    response_score,
    retrieval_score,
    rewrite_score,
    score_candidate_set,
    select_pair,
)
from cqrpref.similarity import LexicalSimilarity, sim_matrix, token_f1

LEX = LexicalSimilarity()


def full(k, value):
    m = np.full((k, k), value, dtype=float)
    np.fill_diagonal(m, 1.0)
    return m


def test_rewrite_score_examples():
    assert rewrite_score(["a", "b"], full(2, 0.8), [10, 8]) == pytest.approx([1.8, 1.6])
    assert rewrite_score(["x", "y", "z"], full(3, 0.0), [5, 10, 10]) == pytest.approx([0.5, 1.0, 1.0])


def test_rewrite_score_identical_strings():
    texts = ["where is mount etna"] * 4
    assert rewrite_score(texts, sim_matrix(LEX, texts), [4] * 4) == [2.0] * 4


def test_rewrite_score_errors():
    with pytest.raises(ValueError):
        rewrite_score(["a"], full(1, 0), [1])
    with pytest.raises(ValueError):
        rewrite_score(["a", "b"], full(2, 0), [0, 3])


def test_retrieval_score_examples():
    a = [f"p{i}" for i in range(40)] + [f"a{i}" for i in range(10)]
    b = [f"p{i}" for i in range(40)] + [f"b{i}" for i in range(20)]
    c = [f"a{i}" for i in range(10)] + [f"b{i}" for i in range(20)]
    assert retrieval_score([a, b, c]) == [25.0, 30.0, 15.0]
    same = [f"p{i}" for i in range(100)]
    assert retrieval_score([same, list(reversed(same)), same]) == [100.0] * 3
    assert retrieval_score([["a"], ["b"], ["c"]]) == [0.0] * 3
    with pytest.raises(ValueError):
        retrieval_score([["a"]])


def test_response_score_examples():
    m = np.array([[1, 0.9, 0], [0.9, 1, 0], [0, 0, 1]], dtype=float)
    assert response_score(["x", "y", "z"], m) == pytest.approx([0.45, 0.45, 0.0])
    assert response_score(["a b"] * 3, full(3, 1.0)) == [1.0] * 3
    assert response_score(["a", "b", "c"], full(3, 0.0)) == [0.0] * 3


@pytest.mark.parametrize(
    "scores, chosen, rejected, degenerate",
    [
        ((1.8, 2.5, 0.3), 1, 2, False),
        ((2.0, 2.0, 1.0), 0, 2, False),
        ((1.0, 0.5, 0.5), 0, 1, False),
        ((3.0, 3.0, 3.0), 0, 0, True),
    ],
)
def test_select_pair(scores, chosen, rejected, degenerate):
    sel = select_pair(scores)
    assert (sel.chosen_index, sel.rejected_index, sel.degenerate) == (chosen, rejected, degenerate)


def test_select_pair_returns_candidates_and_checks_lengths():
    cands = [Candidate("a", "x"), Candidate("b", "y")]
    sel = select_pair([0.1, 0.9], cands)
    assert sel.chosen is cands[1] and sel.rejected is cands[0]
    with pytest.raises(ValueError):
        select_pair([0.1, 0.2, 0.3], cands)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=10))
def test_select_pair_invariant_under_increasing_transform(scores):
    base = select_pair(scores)
    for f in (lambda x: 3 * x + 1, lambda x: x ** 3, np.arctan):
        moved = select_pair([float(f(s)) for s in scores])
        # strictly increasing maps can only merge values through float rounding, never reorder them
        if len(set(map(float, map(f, scores)))) == len(set(scores)):
            assert (moved.chosen_index, moved.rejected_index) == (base.chosen_index, base.rejected_index)


def test_score_candidate_set_identical_candidates():
    pids = tuple(f"p{i}" for i in range(100))
    cs = CandidateSet("c", 1, (Candidate("who sang it", "sia did", pids),) * 2)
    s = score_candidate_set(cs, LEX)
    assert s.rw == (2.0, 2.0) and s.rt == (100.0, 100.0) and s.rp == (1.0, 1.0)


def random_candidate_set(rng, k, vocab="abcdefgh"):
    pool = [f"p{i}" for i in range(30)]
    return CandidateSet(
        "c", 1,
        tuple(
            Candidate(
                " ".join(rng.choices(vocab, k=rng.randint(1, 6))),
                " ".join(rng.choices(vocab, k=rng.randint(0, 6))),
                tuple(rng.sample(pool, rng.randint(0, 20))),
            )
            for _ in range(k)
        ),
    )


@pytest.mark.parametrize("seed", range(10))
def test_permutation_equivariance(seed):
    rng = random.Random(seed)
    cs = random_candidate_set(rng, rng.randint(2, 8))
    perm = list(range(len(cs)))
    rng.shuffle(perm)
    permuted = CandidateSet(cs.conv_id, cs.turn_id, tuple(cs.candidates[i] for i in perm))
    s, t = score_candidate_set(cs, LEX), score_candidate_set(permuted, LEX)
    for dim in ("rw", "rt", "rp"):
        assert list(t[dim]) == [s[dim][i] for i in perm]


@pytest.mark.parametrize("seed", range(10))
def test_bounds_and_longest_gets_full_ratio(seed):
    rng = random.Random(100 + seed)
    cs = random_candidate_set(rng, rng.randint(2, 8))
    depth = 20
    s = score_candidate_set(cs, LEX, depth=depth)
    assert all(0 <= v <= 1 for v in s.rp)
    assert all(0 <= v <= depth for v in s.rt)
    assert all(0 <= v <= 2 for v in s.rw)
    lens = [len(c.rq.split()) for c in cs.candidates]
    sims = [sum(token_f1(cs.candidates[i].rq.split(), cs.candidates[j].rq.split())
                for j in range(len(cs)) if j != i) / (len(cs) - 1) for i in range(len(cs))]
    longest = lens.index(max(lens))
    assert s.rw[longest] - sims[longest] == pytest.approx(1.0)


def test_shape_for_sixteen():
    s = score_candidate_set(random_candidate_set(random.Random(5), 16), LEX)
    assert len(s.rw) == len(s.rt) == len(s.rp) == 16


def test_majority_vote():
    assert majority_vote_scores(["Who sang it?", "who sang it", "other"]) == [2.0, 2.0, 1.0]
