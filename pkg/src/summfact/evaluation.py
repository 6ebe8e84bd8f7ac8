"""Detector metrics: balanced accuracy, Pearson, domain and MACRO averages, type-level scores."""
from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import DOMAINS, SummaryExample
from .errors import DegenerateGold, EmptyGold, MissingCount, ZeroVariance
from .inference import VerdictRecord, predictions
from .taxonomy import CANONICAL_ORDER, ErrorType, Verdict, is_consistent

log = logging.getLogger(__name__)


def balanced_accuracy(pred_labels: Sequence[bool], gold_labels: Sequence[bool]) -> float:
    """Mean of the true-positive and true-negative rates (positive class = ``True``)."""
    if len(pred_labels) != len(gold_labels):
        raise ValueError("predictions and gold labels differ in length")
    tp = fn = tn = fp = 0
    for p, g in zip(pred_labels, gold_labels):
        if g:
            tp += bool(p)
            fn += not p
        else:
            tn += not p
            fp += bool(p)
    if tp + fn == 0 or tn + fp == 0:
        raise DegenerateGold("balanced accuracy needs both classes in the gold labels")
    return (tp / (tp + fn) + tn / (tn + fp)) / 2


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise ValueError("inputs differ in length")
    n = len(xs)
    if n < 2:
        raise ValueError("pearson needs at least two points")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("pearson is undefined for a constant input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def domain_score(dataset_scores: Mapping[str, float], dataset_example_counts: Mapping[str, int]) -> float:
    """Example-weighted average of the dataset scores in one domain."""
    if not dataset_scores:
        raise ValueError("no dataset scores")
    missing = [ds for ds in dataset_scores if ds not in dataset_example_counts]
    if missing:
        raise MissingCount(f"no example count for {missing}")
    total = sum(dataset_example_counts[ds] for ds in dataset_scores)
    if total <= 0:
        raise MissingCount("example counts sum to zero")
    return math.fsum(score * dataset_example_counts[ds] for ds, score in dataset_scores.items()) / total


def macro_score(domain_scores: Mapping[str, float] | Iterable[float]) -> float:
    values = list(domain_scores.values()) if isinstance(domain_scores, Mapping) else list(domain_scores)
    if not values:
        raise ValueError("no domain scores")
    return math.fsum(values) / len(values)


def average_runs(values: Iterable[float]) -> float:
    values = list(values)
    if not values:
        raise ValueError("no runs to average")
    return math.fsum(values) / len(values)


def tune_threshold(scores: Sequence[float], gold_labels: Sequence[bool]) -> tuple[float, float]:
    """Cut-off maximising balanced accuracy; predicts ``True`` when score > threshold.

    Candidates are -inf, +inf and midpoints of consecutive distinct scores. Ties
    go to the smaller threshold.
    """
    if len(scores) != len(gold_labels):
        raise ValueError("scores and gold labels differ in length")
    pos = sum(1 for g in gold_labels if g)
    neg = len(gold_labels) - pos
    if pos == 0 or neg == 0:
        raise DegenerateGold("threshold tuning needs both classes in the gold labels")
    distinct = sorted(set(scores))
    candidates = [-math.inf] + [(a + b) / 2 for a, b in zip(distinct, distinct[1:])] + [math.inf]
    # sweep: counts of positives/negatives with score <= each distinct value
    order = sorted(zip(scores, gold_labels))
    best_t, best_ba = -math.inf, -1.0
    tp, fp = pos, neg  # everything predicted positive at -inf
    i = 0
    for k, t in enumerate(candidates):
        if k > 0:
            cut = distinct[k - 1]
            while i < len(order) and order[i][0] <= cut:
                if order[i][1]:
                    tp -= 1
                else:
                    fp -= 1
                i += 1
        ba = (tp / pos + (neg - fp) / neg) / 2
        if ba > best_ba + 1e-15:
            best_t, best_ba = t, ba
    return best_t, best_ba


def apply_threshold(scores: Sequence[float], threshold: float) -> list[bool]:
    return [s > threshold for s in scores]


@dataclass(frozen=True)
class TypeScore:
    precision: float
    recall: float
    f1: float
    support: int


def error_type_f1(
    pred_type_sets: Sequence[Iterable[ErrorType]], gold_type_sets: Sequence[Iterable[ErrorType]]
) -> dict[ErrorType, TypeScore]:
    if len(pred_type_sets) != len(gold_type_sets):
        raise ValueError("prediction and gold lists differ in length")
    counts = {t: [0, 0, 0] for t in CANONICAL_ORDER}  # tp, fp, fn
    for pred, gold in zip(pred_type_sets, gold_type_sets):
        pred, gold = set(pred), set(gold)
        for t in CANONICAL_ORDER:
            if t in pred and t in gold:
                counts[t][0] += 1
            elif t in pred:
                counts[t][1] += 1
            elif t in gold:
                counts[t][2] += 1
    out = {}
    for t, (tp, fp, fn) in counts.items():
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[t] = TypeScore(p, r, f, tp + fn)
    return out


@dataclass(frozen=True)
class MatchCriteria:
    exact: bool
    subset: bool
    contains_one: bool
    contains_all: bool

    def __iter__(self):
        return iter((self.exact, self.subset, self.contains_one, self.contains_all))


def match_criteria(pred_set: Iterable[ErrorType], gold_set: Iterable[ErrorType]) -> MatchCriteria:
    pred, gold = frozenset(pred_set), frozenset(gold_set)
    if not gold:
        raise EmptyGold("match criteria are defined on cases with gold error types")
    return MatchCriteria(pred == gold, pred <= gold, bool(pred & gold), pred >= gold)


def criteria_rates(
    pred_type_sets: Sequence[Iterable[ErrorType]], gold_type_sets: Sequence[Iterable[ErrorType]]
) -> dict[str, float]:
    """Percentage of cases meeting each criterion; cases with empty gold are skipped."""
    totals = [0, 0, 0, 0]
    n = 0
    for pred, gold in zip(pred_type_sets, gold_type_sets):
        gold = frozenset(gold)
        if not gold:
            continue
        n += 1
        for i, hit in enumerate(match_criteria(pred, gold)):
            totals[i] += hit
    names = ("exact", "subset", "contains_one", "contains_all")
    return {name: (100.0 * c / n if n else 0.0) for name, c in zip(names, totals)}


# -- reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    per_dataset: dict[str, float] = field(default_factory=dict)
    per_domain: dict[str, float] = field(default_factory=dict)
    macro: float | None = None
    per_type_f1: dict[str, dict[str, float]] = field(default_factory=dict)
    criteria_rates: dict[str, float] = field(default_factory=dict)
    run_count: int = 0
    dataset_domains: dict[str, str] = field(default_factory=dict)
    dataset_metrics: dict[str, str] = field(default_factory=dict)
    weights: dict[str, int] = field(default_factory=dict)
    per_run: dict[str, list[float]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_dataset": self.per_dataset,
            "per_domain": self.per_domain,
            "macro": self.macro,
            "per_type_f1": self.per_type_f1,
            "criteria_rates": self.criteria_rates,
            "run_count": self.run_count,
            "dataset_domains": self.dataset_domains,
            "dataset_metrics": self.dataset_metrics,
            "weights": self.weights,
            "per_run": self.per_run,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"runs averaged: {self.run_count}", "", "dataset scores (x100):"]
        for ds in sorted(self.per_dataset):
            lines.append(
                f"  {ds:<28} {self.dataset_domains.get(ds, ''):<10} "
                f"{self.dataset_metrics.get(ds, ''):<18} n={self.weights.get(ds, 0):<6} "
                f"{self.per_dataset[ds]:.2f}"
            )
        lines += ["", "domain scores (x100):"]
        for dom in DOMAINS:
            if dom in self.per_domain:
                lines.append(f"  {dom:<10} {self.per_domain[dom]:.2f}")
        lines.append("")
        lines.append(f"MACRO: {self.macro:.2f}" if self.macro is not None else "MACRO: n/a")
        if self.per_type_f1:
            lines += ["", "error type        precision  recall     f1  support"]
            for name, s in self.per_type_f1.items():
                lines.append(
                    f"  {name:<16} {s['precision']:9.3f} {s['recall']:7.3f} {s['f1']:6.3f} {int(s['support']):8d}"
                )
        if self.criteria_rates:
            lines += ["", "type match criteria (% of inconsistent cases with gold types):"]
            for name, v in self.criteria_rates.items():
                lines.append(f"  {name:<13} {v:6.2f}")
        if self.warnings:
            lines += ["", "warnings:"] + [f"  - {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"

    def write(self, path_prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(path_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        json_path = prefix.with_name(prefix.name + ".json")
        text_path = prefix.with_name(prefix.name + ".txt")
        json_path.write_text(self.to_json(), encoding="utf-8")
        text_path.write_text(self.to_text(), encoding="utf-8")
        return json_path, text_path


def dataset_key(example: SummaryExample, split_datasets: set[str]) -> str:
    if example.dataset_id in split_datasets:
        return f"{example.dataset_id} ({example.domain})"
    return example.dataset_id


def _dataset_metric(examples: Sequence[SummaryExample], verdicts: Mapping[str, Verdict],
                    threshold: float | None) -> tuple[str, float | None, int]:
    """Score one dataset for one run; returns (metric name, value in [0,1] or None, n)."""
    scored = [ex for ex in examples if ex.id in verdicts]
    if not scored:
        return "", None, 0
    if scored[0].gold.kind == "score":
        pairs = [(verdicts[ex.id].score, ex.gold.score) for ex in scored if verdicts[ex.id].score is not None]
        if len(pairs) < 2:
            return "pearson", None, len(pairs)
        return "pearson", pearson([p for p, _ in pairs], [g for _, g in pairs]), len(pairs)
    gold = [ex.gold.kind == "consistent" for ex in scored]
    if threshold is not None:
        pred = [
            (verdicts[ex.id].score if verdicts[ex.id].score is not None else -math.inf) > threshold
            for ex in scored
        ]
    else:
        pred = [is_consistent(verdicts[ex.id]) for ex in scored]
    return "balanced_accuracy", balanced_accuracy(pred, gold), len(scored)


def evaluate(
    records: Iterable[VerdictRecord],
    gold: Sequence[SummaryExample],
    thresholds: Mapping[str, float] | None = None,
    strict: bool = False,
) -> EvalReport:
    """Score run records against gold examples, averaging each metric over runs."""
    records = list(records)
    thresholds = thresholds or {}
    report = EvalReport()
    by_run = predictions(records, strict=False)
    report.run_count = len(by_run)
    if not by_run:
        report.warnings.append("no successful records")
        return report

    domains_of: dict[str, set[str]] = defaultdict(set)
    for ex in gold:
        domains_of[ex.dataset_id].add(ex.domain)
    split = {ds for ds, doms in domains_of.items() if len(doms) > 1}
    groups: dict[str, list[SummaryExample]] = defaultdict(list)
    for ex in gold:
        groups[dataset_key(ex, split)].append(ex)

    predicted_ids = {ex_id for run in by_run.values() for ex_id in run}
    for key in sorted(groups):
        examples = groups[key]
        if not any(ex.id in predicted_ids for ex in examples):
            report.warnings.append(f"dataset {key} has no records; excluded from MACRO")
            continue
        values, counts, metric = [], [], ""
        for r in sorted(by_run):
            missing = sum(1 for ex in examples if ex.id not in by_run[r])
            if missing:
                msg = f"run {r}: {missing} example(s) of {key} have no verdict"
                if strict:
                    raise ValueError(msg)
                report.warnings.append(msg)
            metric, value, n = _dataset_metric(examples, by_run[r], thresholds.get(examples[0].dataset_id))
            if value is None:
                report.warnings.append(f"run {r}: {key} could not be scored")
                continue
            values.append(100.0 * value)
            counts.append(n)
        if not values:
            continue
        report.per_dataset[key] = average_runs(values)
        report.per_run[key] = values
        report.dataset_domains[key] = examples[0].domain
        report.dataset_metrics[key] = metric
        report.weights[key] = round(average_runs(counts))

    for dom in DOMAINS:
        members = {k: v for k, v in report.per_dataset.items() if report.dataset_domains[k] == dom}
        if members:
            report.per_domain[dom] = domain_score(members, report.weights)
    if report.per_domain:
        report.macro = macro_score(report.per_domain)

    typed = [ex for ex in gold if ex.gold.typed and ex.gold.kind != "score"]
    if typed:
        f1_runs, crit_runs = [], []
        for r in sorted(by_run):
            have = [ex for ex in typed if ex.id in by_run[r]]
            if not have:
                continue
            preds = [by_run[r][ex.id].types for ex in have]
            golds = [ex.gold.types for ex in have]
            f1_runs.append(error_type_f1(preds, golds))
            if any(golds):
                crit_runs.append(criteria_rates(preds, golds))
        if f1_runs:
            for t in CANONICAL_ORDER:
                report.per_type_f1[t.value] = {
                    "precision": average_runs(run[t].precision for run in f1_runs),
                    "recall": average_runs(run[t].recall for run in f1_runs),
                    "f1": average_runs(run[t].f1 for run in f1_runs),
                    "support": f1_runs[0][t].support,
                }
        if crit_runs:
            report.criteria_rates = {k: average_runs(run[k] for run in crit_runs) for k in crit_runs[0]}
    return report
