import itertools
import random

import pytest

from cqrpref.fusion import concat_queries, expand_query, rrf
from cqrpref.retriever import RankedList


def ranked(pids):
    return RankedList(tuple((p, float(len(pids) - i)) for i, p in enumerate(pids)))


def test_concat():
    assert concat_queries(["A", "B", "C"]).text == "A B C"
    assert concat_queries(["A"]).text == "A"
    assert concat_queries(["A ", " B"]).text == "A B"
    with pytest.raises(ValueError):
        concat_queries(["A", "  "])
    with pytest.raises(ValueError):
        concat_queries([])


def test_concat_associative():
    a, b, c = "x y", "z", "w v"
    assert concat_queries([concat_queries([a, b]).text, c]).text == concat_queries([a, b, c]).text


def test_expand():
    assert expand_query("when was it released", "It was released in 2012.") == "when was it released It was released in 2012."
    assert expand_query("q", "") == "q"
    with pytest.raises(ValueError):
        expand_query("", "x")


def test_rrf_spot_values():
    fused = rrf([ranked(["d", "x"]), ranked(["d", "y"]), ranked(["d"])], k=60)
    assert dict(fused.entries)["d"] == pytest.approx(3 / 61, abs=1e-12)
    assert round(3 / 61, 7) == 0.0491803
    fused = rrf([ranked([f"o{i}" for i in range(9)] + ["d"])], k=60)
    assert dict(fused.entries)["d"] == pytest.approx(1 / 70, abs=1e-12)


def test_rrf_tie_order_and_coverage():
    fused = rrf([ranked(["b", "a"]), ranked(["a", "b"])])
    assert fused.pids == ["a", "b"]
    lists = [ranked(["p1", "p2"]), ranked(["p3"])]
    assert set(rrf(lists).pids) == {"p1", "p2", "p3"}


def test_rrf_errors():
    with pytest.raises(ValueError):
        rrf([])
    with pytest.raises(ValueError):
        rrf([ranked(["a"])], k=0)


@pytest.mark.parametrize("seed", range(5))
def test_rrf_permutation_invariant(seed):
    rng = random.Random(seed)
    pool = [f"p{i}" for i in range(40)]
    lists = [ranked(rng.sample(pool, 20)) for _ in range(3)]
    outputs = {rrf(list(p)).entries for p in itertools.permutations(lists)}
    assert len(outputs) == 1
