from __future__ import annotations

import json
import re
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from summfact.errors import TemplateError, UnknownErrorToken, UnparseableResponse
from summfact.prompting import (
    PromptTemplate,
    Verdict,
    aggregate_windows,
    build_factax_prompt,
    default_template,
    parse_response,
    render_response,
    segment_windows,
)
from summfact.taxonomy import CANONICAL_ORDER, ErrorType

ENT, PRED, CIRC, COREF, ADD = CANONICAL_ORDER
FIXTURE = Path(__file__).parent / "fixtures" / "responses.json"


# -- templates -------------------------------------------------------------------

def test_prompt_contains_types_slots_and_format():
    prompt = build_factax_prompt("The DOC text.", "The SUMMARY text.")
    for t in ErrorType:
        assert t.label in prompt
        assert t.definition_text in prompt
    assert "The DOC text." in prompt and "The SUMMARY text." in prompt
    assert "Reasoning:" in prompt and "Label:" in prompt
    assert "Score:" not in prompt


def test_score_mode_appends_rating_request():
    prompt = build_factax_prompt("doc", "sum", mode="score")
    assert "- Score:" in prompt and "1" in prompt and "10" in prompt


def test_empty_slots_are_refused():
    with pytest.raises(TemplateError):
        build_factax_prompt("doc", "   ")
    with pytest.raises(TemplateError):
        build_factax_prompt("", "sum")


@pytest.mark.parametrize(
    "text",
    ["{{document}} {{summary}}", "{{document}} {{summary}} {{type_definitions}} {{summary}}",
     "{{document}} {{summary}} {{type_definitions}} {{extra}}"],
)
def test_template_validation(text):
    with pytest.raises(TemplateError):
        PromptTemplate(text)


def test_guidance_must_cover_each_type_once():
    with pytest.raises(TemplateError):
        PromptTemplate("{{document}}{{summary}}{{type_definitions}}", ((ENT, "x"),))


def test_template_sections_and_hash():
    t = default_template()
    assert t.instruction_header.strip()
    assert "Label:" in t.response_format_spec
    assert len(t.sha256) == 64
    assert PromptTemplate(t.text).sha256 == t.sha256


def test_custom_template_file(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("Types:\n{{type_definitions}}\nD: {{document}}\nS: {{summary}}\n", encoding="utf-8")
    prompt = PromptTemplate.load(path).render("d1", "s1")
    assert prompt.startswith("Types:\n- Entity_Error:")


@given(st.text(min_size=1).filter(str.strip), st.text(min_size=1).filter(str.strip),
       st.sampled_from(["classify", "score"]))
def test_slots_roundtrip(document, summary, mode):
    t = default_template()
    assert t.extract_slots(t.render(document, summary, mode)) == {"document": document, "summary": summary}


# -- windows ---------------------------------------------------------------------

def words(n, start=0):
    return " ".join(f"W{i}" for i in range(start, start + n))


def test_single_short_sentence():
    windows = segment_windows(words(12) + ".")
    assert [w.word_count for w in windows] == [12]


def test_three_twenty_word_sentences():
    summary = " ".join(words(20, k * 20) + "." for k in range(3))
    assert [w.word_count for w in segment_windows(summary, 30)] == [40, 20]


def test_forced_split_of_long_sentence():
    assert [w.word_count for w in segment_windows(words(70) + ".", 30)] == [30, 40]
    assert [w.word_count for w in segment_windows(words(61) + ".", 30)] == [30, 31]
    assert [w.word_count for w in segment_windows(words(60) + ".", 30)] == [60]


def test_windows_are_slices_of_summary():
    summary = "First one here. Second sentence follows.  Third!"
    windows = segment_windows(summary, 3)
    assert [w.text for w in windows] == ["First one here.", "Second sentence follows.", "Third!"]
    assert segment_windows("   ") == []
    with pytest.raises(ValueError):
        segment_windows("x", 0)


sentence_st = st.lists(st.sampled_from(["alpha", "beta", "Gamma", "d.", "e!", "Mr.", "x"]), min_size=1, max_size=80)


@given(st.lists(sentence_st, min_size=1, max_size=8), st.integers(1, 40))
def test_segmentation_conserves_words(sentences, target):
    summary = " ".join(" ".join(s).capitalize() + "." for s in sentences)
    windows = segment_windows(summary, target)
    assert " ".join(w.text for w in windows).split() == summary.split()
    assert all(w.word_count >= 1 for w in windows)
    assert all(w.word_count == len(w.text.split()) for w in windows)
    assert all(w.word_count >= target for w in windows[:-1])
    assert [w.index for w in windows] == list(range(len(windows)))


# -- responses -------------------------------------------------------------------

def test_label_examples():
    assert parse_response("- Reasoning: because\n- Label: Entity_Error") == Verdict(False, {ENT}, "because")
    assert parse_response("- Label: Factually Correct") == Verdict(True)
    assert parse_response("- Label: Entity_Error, Coreference_Error").types == {ENT, COREF}


def test_errors_carry_details():
    with pytest.raises(UnknownErrorToken) as info:
        parse_response("- Label: Grammar_Error")
    assert info.value.token == "Grammar_Error"
    with pytest.raises(UnparseableResponse):
        parse_response("no label here")


@pytest.mark.parametrize("case", json.loads(FIXTURE.read_text(encoding="utf-8")), ids=lambda c: c["id"])
def test_fixture_responses(case):
    expect = case["expect"]
    if "error" in expect:
        with pytest.raises((UnparseableResponse, UnknownErrorToken)) as info:
            parse_response(case["text"], case["mode"])
        assert type(info.value).__name__ == expect["error"]
    else:
        v = parse_response(case["text"], case["mode"])
        assert v.consistent == expect["consistent"]
        assert sorted(t.value for t in v.types) == expect["types"]
        assert v.score == expect["score"]


rationale_st = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), max_size=60).filter(
    lambda s: s == s.strip() and not re.search(r"label\s*\**\s*:|reasoning\s*\**\s*:|score\s*\**\s*:", s, re.I)
)
verdict_st = st.builds(
    lambda types, consistent, rationale, score: Verdict(consistent and not types, types, rationale, score),
    st.frozensets(st.sampled_from(CANONICAL_ORDER)),
    st.booleans(),
    rationale_st,
    st.one_of(st.none(), st.integers(1, 10).map(float), st.floats(-1e6, 1e6, allow_nan=False)),
)


@given(verdict_st)
def test_render_parse_roundtrip(v):
    mode = "score" if v.score is not None else "classify"
    assert parse_response(render_response(v), mode) == v


# -- aggregation -----------------------------------------------------------------

def test_aggregate_examples():
    clean = Verdict(True)
    agg = aggregate_windows([clean, clean, clean])
    assert agg.consistent and agg.score == 1.0
    agg = aggregate_windows([clean, Verdict.from_types({ENT})])
    assert not agg.consistent and agg.types == {ENT} and agg.score == 0.5
    agg = aggregate_windows([Verdict.from_types({PRED}), Verdict.from_types({ADD})])
    assert agg.types == {PRED, ADD} and agg.score == 0.0
    with pytest.raises(ValueError):
        aggregate_windows([])


verdicts_st = st.lists(st.builds(Verdict.from_types, st.frozensets(st.sampled_from(CANONICAL_ORDER))), min_size=1)


@given(verdicts_st, st.builds(Verdict.from_types, st.frozensets(st.sampled_from(CANONICAL_ORDER))))
def test_aggregation_monotone(verdicts, extra):
    before = aggregate_windows(verdicts)
    after = aggregate_windows(verdicts + [extra])
    if not before.consistent:
        assert not after.consistent
    if not extra.types:
        assert after.types == before.types
