from __future__ import annotations

import json
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from summfact.errors import DegenerateGold, EmptyGold, MissingCount, ZeroVariance
from summfact.evaluation import (
    EvalReport,
    apply_threshold,
    average_runs,
    balanced_accuracy,
    criteria_rates,
    domain_score,
    error_type_f1,
    evaluate,
    macro_score,
    match_criteria,
    pearson,
    tune_threshold,
)
from summfact.inference import VerdictRecord
from summfact.taxonomy import CANONICAL_ORDER, GoldLabel, Verdict

from synth import example

ENT, PRED, CIRC, COREF, ADD = CANONICAL_ORDER


def confusion_ba(pred, gold):
    cells = {(p, g): 0 for p in (True, False) for g in (True, False)}
    for p, g in zip(pred, gold):
        cells[(bool(p), bool(g))] += 1
    sens = Fraction(cells[(True, True)], cells[(True, True)] + cells[(False, True)])
    spec = Fraction(cells[(False, False)], cells[(False, False)] + cells[(True, False)])
    return (sens + spec) / 2


def test_balanced_accuracy_examples():
    gold = [True] * 4 + [False] * 4
    pred = [True, True, True, False, False, False, True, True]  # TP=3 FN=1 TN=2 FP=2
    assert balanced_accuracy(pred, gold) == pytest.approx(0.625)
    assert float(confusion_ba(pred, gold)) == pytest.approx(0.625)
    assert balanced_accuracy(gold, gold) == 1.0
    assert balanced_accuracy([True] * 8, gold) == 0.5


def test_balanced_accuracy_errors():
    with pytest.raises(DegenerateGold):
        balanced_accuracy([True, False], [True, True])
    with pytest.raises(ValueError):
        balanced_accuracy([True], [True, False])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=2, max_size=60))
def test_balanced_accuracy_matches_confusion_oracle_and_swap_invariance(pairs):
    pred = [p for p, _ in pairs]
    gold = [g for _, g in pairs]
    if all(gold) or not any(gold):
        return
    value = balanced_accuracy(pred, gold)
    assert value == pytest.approx(float(confusion_ba(pred, gold)), abs=1e-12)
    swapped = balanced_accuracy([not p for p in pred], [not g for g in gold])
    assert swapped == pytest.approx(value, abs=1e-12)


def test_pearson_pinned_value():
    # 50-digit reference: 0.99339926779878285489956379038764698134502561902939
    assert pearson([1, 2, 3], [2, 4, 7]) == pytest.approx(0.993399267798783, abs=5e-13)
    assert round(pearson([1, 2, 3], [2, 4, 7]), 12) == 0.993399267799


def test_pearson_identities_and_errors():
    xs = [0.3, 1.7, 2.2, 5.0]
    assert pearson(xs, xs) == pytest.approx(1.0)
    assert pearson(xs, [-x for x in xs]) == pytest.approx(-1.0)
    with pytest.raises(ZeroVariance):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [2])


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=30),
       st.floats(0.1, 10), st.floats(-50, 50))
def test_pearson_affine_invariance(pairs, scale, shift):
    xs = [x for x, _ in pairs]
    ys = [y for _, y in pairs]
    try:
        base = pearson(xs, ys)
    except ZeroVariance:
        return
    if min(max(xs) - min(xs), max(ys) - min(ys)) < 1e-3:
        return
    assert pearson([scale * x + shift for x in xs], ys) == pytest.approx(base, abs=1e-9)


def test_domain_score_examples():
    assert domain_score({"DiaSumFact": 62.76}, {"DiaSumFact": 10}) == pytest.approx(62.76)
    assert domain_score({"a": 60, "b": 70}, {"a": 5, "b": 5}) == pytest.approx(65)
    assert domain_score({"a": 80, "b": 60}, {"a": 100, "b": 300}) == pytest.approx(65)
    with pytest.raises(MissingCount):
        domain_score({"a": 80, "b": 60}, {"a": 100})


def test_macro_score():
    assert macro_score({"d": 41.2}) == 41.2
    assert macro_score([68.97, 72.21, 62.76, 40.54, 45.93]) == pytest.approx(58.08, abs=0.01)
    scores = {"a": 1.0, "b": 2.0, "c": 6.0}
    assert macro_score(scores) == macro_score(dict(reversed(list(scores.items())))) == 3.0


def test_run_averaging():
    assert average_runs([0.60, 0.62, 0.64]) == pytest.approx(0.62)
    assert average_runs([0.7]) == 0.7


def exhaustive_threshold(scores, gold):
    cands = sorted(set(scores))
    cuts = [-math.inf] + [(a + b) / 2 for a, b in zip(cands, cands[1:])] + [math.inf]
    best = None
    for t in cuts:
        ba = confusion_ba([s > t for s in scores], gold)
        if best is None or ba > best[1]:
            best = (t, ba)
    return best


def test_tune_threshold_examples():
    assert tune_threshold([0.1, 0.9], [False, True]) == (0.5, 1.0)
    assert tune_threshold([0.4] * 4, [True, False, True, False])[1] == 0.5
    with pytest.raises(DegenerateGold):
        tune_threshold([0.1, 0.2], [True, True])


def test_tune_threshold_matches_exhaustive_scan_on_50_points():
    rng = random.Random(7)
    scores = [round(rng.random(), 2) for _ in range(50)]
    gold = [rng.random() < s + 0.1 for s in scores]
    t, ba = tune_threshold(scores, gold)
    t_ref, ba_ref = exhaustive_threshold(scores, gold)
    assert t == t_ref and ba == pytest.approx(float(ba_ref), abs=1e-12)
    for user_t in (0.1, 0.3, 0.5, 0.77):
        assert ba >= balanced_accuracy(apply_threshold(scores, user_t), gold) - 1e-12


def test_error_type_f1_hand_counted():
    preds = [{ENT}, {PRED}, set(), {ENT, ADD}, {CIRC}]
    golds = [{ENT, COREF}, {ENT}, {ADD}, {ADD}, {CIRC}]
    scores = error_type_f1(preds, golds)
    expected = {  # (precision, recall, f1, support) counted by hand
        ENT: (0.5, 0.5, 0.5, 2),
        PRED: (0.0, 0.0, 0.0, 0),
        CIRC: (1.0, 1.0, 1.0, 1),
        COREF: (0.0, 0.0, 0.0, 1),
        ADD: (1.0, 0.5, 2 / 3, 2),
    }
    for t, (p, r, f, n) in expected.items():
        s = scores[t]
        assert (s.precision, s.recall, s.support) == (p, r, n)
        assert s.f1 == pytest.approx(f)


def test_error_type_f1_perfect_and_missed():
    golds = [{ENT}, {PRED, ADD}, set()]
    perfect = error_type_f1(golds, golds)
    assert all(perfect[t].f1 == 1.0 for t in (ENT, PRED, ADD))
    missed = error_type_f1([set()] * 3, golds)
    assert missed[ENT].recall == 0.0 and missed[ENT].f1 == 0.0


def test_match_criteria_examples():
    assert tuple(match_criteria({ENT}, {ENT, COREF})) == (False, True, True, False)
    assert tuple(match_criteria({ENT, COREF}, {ENT, COREF})) == (True, True, True, True)
    assert tuple(match_criteria(set(), {ENT})) == (False, True, False, False)
    with pytest.raises(EmptyGold):
        match_criteria({ENT}, set())


def test_criteria_rates_skip_empty_gold():
    rates = criteria_rates([{ENT}, {ENT}, {PRED}], [{ENT}, set(), {ENT}])
    assert rates == {"exact": 50.0, "subset": 50.0, "contains_one": 50.0, "contains_all": 50.0}


# -- end-to-end report -------------------------------------------------------------

def gold_corpus():
    return [
        example("d1", GoldLabel.correct(typed=True)),
        example("d2", GoldLabel.incorrect({ENT}, typed=True)),
        example("d3", GoldLabel.incorrect({PRED, ADD}, typed=True)),
        example("x1", GoldLabel.correct(), dataset_id="XSumFaith", domain="XSum"),
        example("x2", GoldLabel.incorrect({ENT}, typed=True), dataset_id="XSumFaith", domain="XSum"),
        example("s1", GoldLabel.scored(1.0), dataset_id="SummEval", domain="CNN/DM"),
        example("s2", GoldLabel.scored(3.0), dataset_id="SummEval", domain="CNN/DM"),
        example("s3", GoldLabel.scored(2.0), dataset_id="SummEval", domain="CNN/DM"),
    ]


def record(ex_id, run, verdict, ds="FacEval", dom="Dialogues"):
    return VerdictRecord(ex_id, run, verdict, dataset_id=ds, domain=dom)


def test_evaluate_averages_metric_per_run():
    recs = []
    for r in range(2):
        recs += [
            record("d1", r, Verdict(True)),
            record("d2", r, Verdict.from_types({ENT})),
            # run 0 misses the error, run 1 catches one of two types
            record("d3", r, Verdict(True) if r == 0 else Verdict.from_types({PRED})),
            record("x1", r, Verdict(True), "XSumFaith", "XSum"),
            record("x2", r, Verdict.from_types({COREF}), "XSumFaith", "XSum"),
            record("s1", r, Verdict(True, score=2.0), "SummEval", "CNN/DM"),
            record("s2", r, Verdict(True, score=6.0), "SummEval", "CNN/DM"),
            record("s3", r, Verdict(True, score=4.0 + r), "SummEval", "CNN/DM"),
        ]
    report = evaluate(recs, gold_corpus())
    assert report.run_count == 2
    ba_run0 = balanced_accuracy([True, False, True], [True, False, False])
    assert report.per_dataset["FacEval"] == pytest.approx(100 * (ba_run0 + 1.0) / 2)
    assert report.per_dataset["XSumFaith"] == pytest.approx(100.0)
    r0 = pearson([2, 6, 4], [1, 3, 2])
    r1 = pearson([2, 6, 5], [1, 3, 2])
    assert report.per_dataset["SummEval"] == pytest.approx(100 * (r0 + r1) / 2)
    assert report.per_domain["Dialogues"] == report.per_dataset["FacEval"]
    assert report.macro == pytest.approx(sum(report.per_domain.values()) / 3)
    assert report.weights == {"FacEval": 3, "XSumFaith": 2, "SummEval": 3}
    assert report.dataset_metrics["SummEval"] == "pearson"
    assert 0 <= report.per_type_f1["EntityError"]["f1"] <= 1
    rates = report.criteria_rates
    assert rates["exact"] <= min(rates["subset"], rates["contains_all"]) <= 100
    assert rates["contains_all"] <= rates["contains_one"]


def test_missing_dataset_is_warned_and_excluded():
    recs = [record("d1", 0, Verdict(True)), record("d2", 0, Verdict.from_types({ENT}))]
    report = evaluate(recs, gold_corpus())
    assert set(report.per_dataset) == {"FacEval"}
    assert any("XSumFaith" in w for w in report.warnings)
    assert report.macro == report.per_domain["Dialogues"] == report.per_dataset["FacEval"] == 100.0


def test_thresholds_apply_to_scores():
    recs = [record("x1", 0, Verdict(True, score=0.9), "XSumFaith", "XSum"),
            record("x2", 0, Verdict(True, score=0.2), "XSumFaith", "XSum")]
    report = evaluate(recs, gold_corpus(), thresholds={"XSumFaith": 0.5})
    assert report.per_dataset["XSumFaith"] == 100.0


def test_split_dataset_gets_domain_keys():
    gold = [example("c1", GoldLabel.correct(), dataset_id="CLIFF", domain="CNN/DM"),
            example("c2", GoldLabel.incorrect(), dataset_id="CLIFF", domain="CNN/DM"),
            example("c3", GoldLabel.correct(), dataset_id="CLIFF", domain="XSum"),
            example("c4", GoldLabel.incorrect(), dataset_id="CLIFF", domain="XSum")]
    recs = [record(ex.id, 0, Verdict(True), "CLIFF", ex.domain) for ex in gold]
    report = evaluate(recs, gold)
    assert set(report.per_dataset) == {"CLIFF (CNN/DM)", "CLIFF (XSum)"}


def test_report_files_are_deterministic(tmp_path):
    recs = [record("d1", 0, Verdict(True)), record("d2", 0, Verdict.from_types({ENT}))]
    report = evaluate(recs, gold_corpus())
    j1, t1 = report.write(tmp_path / "a")
    j2, t2 = evaluate(list(reversed(recs)), gold_corpus()).write(tmp_path / "b")
    assert j1.read_bytes() == j2.read_bytes() and t1.read_bytes() == t2.read_bytes()
    assert EvalReport.from_dict(json.loads(j1.read_text())).to_json() == report.to_json()
    assert "MACRO: 100.00" in t1.read_text()
