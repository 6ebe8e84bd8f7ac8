from __future__ import annotations

import json
from collections import Counter

import pytest

from summfact.corpus import Splits
from summfact.distill import (
    NO_ERROR,
    ForgeSetting,
    PromptCompletion,
    build_training_corpus,
    corpus_manifest_path,
    export_corpus,
    make_binary_pair,
    make_taxonomy_pair,
    sample_with_ratio,
    taxonomy_ratio,
)
from summfact.errors import CorpusIOError, EmptyStratum, NoTypeLabels, ScoreLabeled
from summfact.prompting import parse_label
from summfact.taxonomy import CANONICAL_ORDER, ErrorType, GoldLabel

from synth import example

ENT, PRED, CIRC, COREF, ADD = CANONICAL_ORDER


def set_one(n=100, typed=40):
    out = []
    for i in range(n):
        if i < typed:
            types = {CANONICAL_ORDER[i % 5], CANONICAL_ORDER[(i * 3) % 5]} if i % 4 else set()
            gold = GoldLabel.incorrect(types, typed=True) if types else GoldLabel.correct(typed=True)
            out.append(example(f"t{i}", gold, summary=f"Typed summary {i}."))
        else:
            gold = GoldLabel.correct() if i % 2 else GoldLabel.incorrect()
            out.append(example(f"b{i}", gold, dataset_id="Polytope", domain="CNN/DM", summary=f"Plain {i}."))
    return out


def test_binary_pairs():
    pair = make_binary_pair(example("a", GoldLabel.correct()))
    assert pair.completion == "Factually Correct" and pair.kind == "binary"
    assert "Document:" in pair.prompt and "Summary:" in pair.prompt
    assert make_binary_pair(example("b", GoldLabel.incorrect())).completion == "Factually Incorrect"
    with pytest.raises(ScoreLabeled):
        make_binary_pair(example("c", GoldLabel.scored(2.0), dataset_id="SummEval", domain="CNN/DM"))


def test_taxonomy_pairs():
    pair = make_taxonomy_pair(example("a", GoldLabel.incorrect({COREF, ENT}, typed=True)))
    assert pair.completion == "Entity_Error, Coreference_Error"
    for t in ErrorType:
        assert t.label in pair.prompt
    assert make_taxonomy_pair(example("b", GoldLabel.correct(typed=True))).completion == NO_ERROR
    with pytest.raises(NoTypeLabels):
        make_taxonomy_pair(example("c", GoldLabel.incorrect()))


def test_pair_invariants():
    with pytest.raises(ValueError):
        PromptCompletion("p", "Yes", "binary", "x", "d")
    with pytest.raises(ValueError):
        PromptCompletion("p", "c", "other", "x", "d")


def test_taxonomy_ratio_reporter():
    assert taxonomy_ratio(16393, 26315) == pytest.approx(0.377, abs=0.0005)
    assert taxonomy_ratio(100, 140) == pytest.approx(40 / 140)
    with pytest.raises(ValueError):
        taxonomy_ratio(5, 0)


def test_settings_on_synthetic_set_one():
    splits = Splits(set_one(), [], [])
    pairs, manifest = build_training_corpus("I-Binary", splits)
    assert len(pairs) == 100 and manifest["taxonomy_ratio"] == 0.0
    pairs, manifest = build_training_corpus("I-Taxonomy", splits)
    assert len(pairs) == 140
    assert manifest["counts"] == {"binary": 100, "taxonomy": 40, "total": 140}
    assert manifest["taxonomy_ratio"] == pytest.approx(40 / 140)
    assert manifest["provenance"]["FacEval"] == {"binary": 40, "taxonomy": 40}
    recipe = manifest["training_recipe"]
    assert recipe["epochs"] == 8 and recipe["learning_rate"] == 1e-5 and recipe["loss"] == "completion_only"
    by_id = {ex.id: ex for ex in splits.train_one}
    for pair in pairs:
        if pair.kind == "taxonomy":
            assert parse_label(pair.completion).types == by_id[pair.source_example_id].gold.types


def test_combined_setting_reports_both_totals():
    two = [example(f"n{i}", GoldLabel.incorrect(), dataset_id="DocNLI", domain="CNN/DM", summary=f"S{i}.")
           for i in range(30)]
    pairs, manifest = build_training_corpus(ForgeSetting("I&II-Taxonomy"), Splits(set_one(), two, []))
    assert len(pairs) == 170
    assert manifest["totals"] == {"all_pairs": 170, "binary_only": 130}
    assert manifest["taxonomy_ratio"] == 0.20
    assert manifest["natural_taxonomy_ratio"] == pytest.approx(40 / 170)


def test_score_examples_are_excluded():
    data = set_one(10, 4) + [example("s", GoldLabel.scored(3.0), dataset_id="SummEval", domain="CNN/DM")]
    pairs, manifest = build_training_corpus("I-Taxonomy", Splits(data, [], []))
    assert len(pairs) == 14 and manifest["excluded_score_only"] == {"SummEval": 1}


def test_setting_validation():
    with pytest.raises(ValueError):
        ForgeSetting("II-Binary")
    with pytest.raises(ValueError):
        ForgeSetting("I-Binary", taxonomy_ratio=0.2)


def test_stratified_sampling():
    pairs, _ = build_training_corpus("I-Taxonomy", Splits(set_one(), [], []))
    epoch = sample_with_ratio(pairs, 0.20, 1000, seed=5)
    assert Counter(p.kind for p in epoch) == {"taxonomy": 200, "binary": 800}
    assert epoch == sample_with_ratio(pairs, 0.20, 1000, seed=5)
    assert epoch != sample_with_ratio(pairs, 0.20, 1000, seed=6)
    # without replacement while a stratum lasts: 40 taxonomy pairs -> each used exactly 5 times
    assert set(Counter(id(p) for p in epoch if p.kind == "taxonomy").values()) == {5}
    assert all(p.kind == "binary" for p in sample_with_ratio(pairs, 0.0, 50))
    assert Counter(p.kind for p in sample_with_ratio(pairs, 0.25, 10))["taxonomy"] == 3  # 2.5 rounds up


def test_sampling_needs_both_strata():
    binary_only, _ = build_training_corpus("I-Binary", Splits(set_one(), [], []))
    with pytest.raises(EmptyStratum):
        sample_with_ratio(binary_only, 0.2, 10)


def test_export(tmp_path):
    pairs, manifest = build_training_corpus("I-Taxonomy", Splits(set_one(3, 2), [], []))
    path = tmp_path / "corpus.jsonl"
    export_corpus(pairs, path, manifest=manifest)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(pairs) == 5
    assert set(json.loads(lines[0])) == {"prompt", "completion", "kind", "source_example_id", "dataset_id"}
    meta = json.loads(corpus_manifest_path(path).read_text())
    assert meta["export"]["loss"] == "completion_only" and meta["export"]["lines"] == 5
    first = path.read_bytes()
    export_corpus(pairs, path, manifest=manifest)
    assert path.read_bytes() == first

    chat = tmp_path / "chat.jsonl"
    export_corpus(pairs, chat, "chat")
    roles = [m["role"] for m in json.loads(chat.read_text().splitlines()[0])["messages"]]
    assert roles == ["user", "assistant"]


def test_export_unwritable(tmp_path):
    with pytest.raises(CorpusIOError):
        export_corpus([], tmp_path / "missing-dir" / "x.jsonl")
