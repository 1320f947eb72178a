"""Regenerate the toy fixtures (corpus, dialogues, demos, qrels, mock responses).

Each turn's gold passage mentions three facet words once. Every facet word also has a family
of short distractor passages that repeat it, so a query naming a single facet ranks the gold
passage below ten distractors, while a query naming all three ranks it first.

    python tests/fixtures/toy/make_fixtures.py
"""

import json
import random
from pathlib import Path

HERE = Path(__file__).parent
DISTRACTORS_PER_FACET = 12
TOTAL_PASSAGES = 200

FILLER = """river stone market garden lantern harbor meadow copper window ladder orchard
pebble canvas thunder velvet compass anchor prairie timber glacier basket marble
feather candle meadow quarry saddle bramble cottage kettle lumber mosaic paddle
ribbon spindle thimble tundra walnut yarrow zephyr beacon cobble dune ember fjord""".split()

TURNS = [
    {
        "conv_id": "c1", "turn_id": 1, "query": "who sang chandelier", "history": [],
        "facets": ["chandelier", "sia", "furler"],
        "tags": {"[REWRITE]": "who sang chandelier sia furler", "[RETRIEVAL]": "who sang chandelier",
                 "[RESPONSE]": "singer of furler"},
    },
    {
        "conv_id": "c1", "turn_id": 2, "query": "which album was it on",
        "history": [["who sang chandelier", "Chandelier was sung by Sia."]],
        "facets": ["album", "fear", "forms"],
        "tags": {"[REWRITE]": "which album was chandelier on", "[RETRIEVAL]": "album forms of fear",
                 "[RESPONSE]": "chandelier album fear"},
    },
    {
        "conv_id": "c1", "turn_id": 3, "query": "did she win awards for it",
        "history": [["who sang chandelier", "Chandelier was sung by Sia."],
                    ["which album was it on", "It was on 1000 Forms of Fear."]],
        "facets": ["grammy", "nomination", "vocals"],
        "tags": {"[REWRITE]": "did she win a grammy for the song", "[RETRIEVAL]": "grammy nomination",
                 "[RESPONSE]": "awards for her vocals"},
    },
    {
        "conv_id": "c2", "turn_id": 1, "query": "where is mount etna", "history": [],
        "facets": ["etna", "sicily", "catania"],
        "tags": {"[REWRITE]": "where is mount etna", "[RETRIEVAL]": "etna sicily catania location",
                 "[RESPONSE]": "mount etna sicily"},
    },
    {
        "conv_id": "c2", "turn_id": 2, "query": "how often does it erupt",
        "history": [["where is mount etna", "Mount Etna is on Sicily near Catania."]],
        "facets": ["eruption", "lava", "frequency"],
        "tags": {"[REWRITE]": "how often does the volcano erupt", "[RETRIEVAL]": "eruption frequency",
                 "[RESPONSE]": "lava flows"},
    },
]


def filler(rng, n):
    return " ".join(rng.choice(FILLER) for _ in range(n))


def candidates_for(turn):
    q, (a, b, c) = turn["query"], turn["facets"]
    return [f"{q} {a}", f"{q} {a} {b}", f"{a} {c}", f"{q} {a} {b} {c}"]


def main():
    rng = random.Random(7)
    passages = []
    qrels = []
    for t in TURNS:
        a, b, c = t["facets"]
        gid = f"gold-{t['conv_id']}-{t['turn_id']}"
        text = f"{filler(rng, 6)} {a} {filler(rng, 6)} {b} {filler(rng, 6)} {c} {filler(rng, 5)}"
        passages.append({"id": gid, "text": text})
        qrels.append(f"{t['conv_id']}_{t['turn_id']} 0 {gid} 1")
        for facet in t["facets"]:
            for i in range(DISTRACTORS_PER_FACET):
                passages.append({"id": f"d-{facet}-{i:02d}", "text": f"{facet} {filler(rng, 4)} {facet} {filler(rng, 4)}"})
    i = 0
    while len(passages) < TOTAL_PASSAGES:
        passages.append({"id": f"f-{i:03d}", "text": filler(rng, 14)})
        i += 1
    rng.shuffle(passages)

    with open(HERE / "corpus.jsonl", "w") as f:
        for p in passages:
            f.write(json.dumps(p) + "\n")
    with open(HERE / "dialogues.jsonl", "w") as f:
        for t in TURNS:
            row = {
                "conv_id": t["conv_id"], "turn_id": t["turn_id"], "query": t["query"],
                "history": [{"q": q, "a": ans} for q, ans in t["history"]],
                "gold_pids": [f"gold-{t['conv_id']}-{t['turn_id']}"],
            }
            f.write(json.dumps(row) + "\n")
    (HERE / "qrels.txt").write_text("\n".join(qrels) + "\n")

    demos = {
        "rewrite": [
            {"dialogue": "Q: who painted the starry night\nA: Vincent van Gogh.\nQ: when", "rewrite": "when did van gogh paint the starry night"},
            {"dialogue": "Q: what is the capital of peru\nA: Lima.\nQ: how big is it", "rewrite": "how big is lima peru"},
            {"dialogue": "Q: who wrote dune\nA: Frank Herbert.\nQ: any sequels", "rewrite": "did frank herbert write sequels to dune"},
            {"dialogue": "Q: what is a quasar\nA: A bright galactic nucleus.\nQ: how far", "rewrite": "how far away are quasars"},
            {"dialogue": "Q: who founded rome\nA: Romulus, in legend.\nQ: his brother", "rewrite": "who was the brother of romulus"},
            {"dialogue": "Q: what do koalas eat\nA: Eucalyptus leaves.\nQ: is it toxic", "rewrite": "are eucalyptus leaves toxic to koalas"},
            {"dialogue": "Q: when was the eiffel tower built\nA: 1887 to 1889.\nQ: who designed it", "rewrite": "who designed the eiffel tower"},
        ],
        "response": [
            {"question": "who designed the eiffel tower", "answer": "The Eiffel Tower was designed by the engineering firm of Gustave Eiffel."},
            {"question": "how big is lima peru", "answer": "Lima has roughly ten million inhabitants in its metropolitan area."},
            {"question": "who was the brother of romulus", "answer": "Romulus's twin brother was Remus."},
            {"question": "are eucalyptus leaves toxic to koalas", "answer": "Eucalyptus leaves are toxic to most animals, but koalas can detoxify them."},
            {"question": "how far away are quasars", "answer": "Known quasars lie billions of light years from Earth."},
        ],
    }
    (HERE / "demos.json").write_text(json.dumps(demos, indent=2) + "\n")

    rules = []
    for t in TURNS:
        q = t["query"]
        cands = candidates_for(t)
        rules.append({"endswith": f"Q: {q}\nRewritten Sentence:", "outputs": cands})
        for j, rq in enumerate(cands):
            facets = " and ".join(t["facets"][: j + 1])
            rules.append({"endswith": f"Question:\n{rq}\nAnswer:", "outputs": [f"it concerns {facets} in answer {j}"]})
        for tag, rw in t["tags"].items():
            rules.append({"contains": [tag], "endswith": f"\nQ: {q}", "outputs": [rw]})
            rules.append({"endswith": f"Question:\n{rw}\nAnswer:", "outputs": [f"a pseudo answer about {rw}"]})
    (HERE / "mock_responses.json").write_text(json.dumps({"rules": rules}, indent=2) + "\n")


if __name__ == "__main__":
    main()
