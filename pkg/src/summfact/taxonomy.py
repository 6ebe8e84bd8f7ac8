"""Five-type error taxonomy and conversion of source-dataset labels into it."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import MissingOverride, ParseError, UnknownLabel


class ErrorType(enum.Enum):
    # declaration order is the canonical order used in completions and reports
    ENTITY = "EntityError"
    PREDICATE = "PredicateError"
    CIRCUMSTANTIAL = "CircumstantialError"
    COREFERENCE = "CoreferenceError"
    ADDITION = "AdditionError"

    @property
    def label(self) -> str:
        """Response token, e.g. ``Entity_Error``."""
        return self.value[: -len("Error")] + "_Error"

    @property
    def display(self) -> str:
        return self.value[: -len("Error")] + " Error"

    @property
    def definition_text(self) -> str:
        return DEFINITIONS[self]

    @classmethod
    def parse(cls, token: str) -> "ErrorType":
        """Accept variant names, response tokens and display names, any casing."""
        key = _letters(token)
        try:
            return _TOKEN_INDEX[key]
        except KeyError:
            raise ValueError(f"not an error type: {token!r}") from None


DEFINITIONS: dict[ErrorType, str] = {
    ErrorType.PREDICATE: (
        "the semantics expressed by a predicate in the summary are not consistent "
        "with those in the source document."
    ),
    ErrorType.ENTITY: (
        "any core arguments or attributes (e.g. subjects and objects in semantic frames) "
        "in the summary are not consistent accordingly."
    ),
    ErrorType.CIRCUMSTANTIAL: (
        "Time, duration, or the location of an event or action is not consistent."
    ),
    ErrorType.COREFERENCE: (
        "a pronoun or a reference mention in the summary cannot be resolved to refer "
        "to the correct entity."
    ),
    ErrorType.ADDITION: (
        "the summary expresses facts or events that have no grounding sentences in the "
        "document, thus cannot be verified (unless clearly extrapolatable by common sense)."
    ),
}

CANONICAL_ORDER: tuple[ErrorType, ...] = tuple(ErrorType)


def _letters(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch.isalpha())


_TOKEN_INDEX: dict[str, ErrorType] = {}
for _t in ErrorType:
    _stem = _letters(_t.value[: -len("Error")])
    _TOKEN_INDEX[_stem + "error"] = _t
    _TOKEN_INDEX[_stem] = _t
for _alias, _t in {
    "circumstance": ErrorType.CIRCUMSTANTIAL,
    "circumstanceerror": ErrorType.CIRCUMSTANTIAL,
    "coref": ErrorType.COREFERENCE,
}.items():
    _TOKEN_INDEX[_alias] = _t


def sort_types(types: Iterable[ErrorType]) -> list[ErrorType]:
    return sorted(set(types), key=CANONICAL_ORDER.index)


def format_types(types: Iterable[ErrorType]) -> str:
    return ", ".join(t.label for t in sort_types(types))


@dataclass(frozen=True)
class GoldLabel:
    """Gold annotation after conversion.

    ``typed`` marks labels whose error-type set is known (possibly empty on a
    consistent example); binary-only judgments carry ``typed=False``.
    """

    kind: str
    types: frozenset[ErrorType] = frozenset()
    score: float | None = None
    typed: bool = False

    KINDS = ("consistent", "inconsistent", "score")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown gold kind {self.kind!r}")
        object.__setattr__(self, "types", frozenset(self.types))
        if self.kind == "score":
            if self.score is None or self.types or self.typed:
                raise ValueError("score labels carry a value and nothing else")
        elif self.score is not None:
            raise ValueError("score is exclusive to score labels")
        if self.kind == "consistent" and self.types:
            raise ValueError("a consistent label cannot carry error types")
        if self.types and not self.typed:
            raise ValueError("labels with error types must be marked typed")

    @classmethod
    def correct(cls, typed: bool = False) -> "GoldLabel":
        return cls("consistent", typed=typed)

    @classmethod
    def incorrect(cls, types: Iterable[ErrorType] = (), typed: bool | None = None) -> "GoldLabel":
        types = frozenset(types)
        return cls("inconsistent", types, typed=bool(types) if typed is None else typed)

    @classmethod
    def scored(cls, value: float) -> "GoldLabel":
        return cls("score", score=float(value))

    @property
    def is_consistent(self) -> bool | None:
        if self.kind == "score":
            return None
        return self.kind == "consistent"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "types": [t.value for t in sort_types(self.types)],
            "score": self.score,
            "typed": self.typed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GoldLabel":
        types = [ErrorType.parse(t) for t in data.get("types") or ()]
        typed = data.get("typed")
        if typed is None:
            typed = bool(types)
        return cls(data["kind"], frozenset(types), data.get("score"), bool(typed))


@dataclass(frozen=True)
class Verdict:
    """Detector output for one summary or window.

    A verdict may be inconsistent with no types (fallback for responses whose
    label fell outside the taxonomy); it may never be consistent with types.
    """

    consistent: bool
    types: frozenset[ErrorType] = frozenset()
    rationale: str = ""
    score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "types", frozenset(self.types))
        if self.consistent and self.types:
            raise ValueError("a consistent verdict cannot carry error types")

    @classmethod
    def from_types(cls, types: Iterable[ErrorType], rationale: str = "", score: float | None = None) -> "Verdict":
        types = frozenset(types)
        return cls(not types, types, rationale, score)

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "types": [t.value for t in sort_types(self.types)],
            "rationale": self.rationale,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Verdict":
        return cls(
            bool(data["consistent"]),
            frozenset(ErrorType.parse(t) for t in data.get("types") or ()),
            data.get("rationale", ""),
            data.get("score"),
        )


def is_consistent(verdict: Verdict) -> bool:
    return not verdict.types and verdict.consistent is not False


# -- conversion rules -------------------------------------------------------

CONSISTENT = "consistent"
MANUAL = "manual"


@dataclass(frozen=True)
class ConversionRule:
    dataset_id: str
    source_label: str
    # a frozenset of ErrorType, or one of CONSISTENT / MANUAL
    target: frozenset[ErrorType] | str = field(default=frozenset())

    @property
    def is_manual(self) -> bool:
        return self.target == MANUAL

    @property
    def is_consistent(self) -> bool:
        return self.target == CONSISTENT


def normalize_label(label: str) -> str:
    return " ".join(label.strip().lower().split())


DATASET_ALIASES = {
    "wang'20": "Wang20",
    "qags": "Wang20",
    "goyal'21": "Goyal21",
    "cao'22": "Cao22",
    "facteval": "FacEval",
    "diasummfact": "DiaSumFact",
    "xsumfaith": "XSumFaith",
    "frank": "FRANK",
    "longeval": "SQuALITY",
}


def canonical_dataset_id(name: str) -> str:
    key = name.strip().lower()
    if key in DATASET_ALIASES:
        return DATASET_ALIASES[key]
    for known in _KNOWN_IDS:
        if known.lower() == key:
            return known
    return name.strip()


_KNOWN_IDS = (
    "Polytope", "SummEval", "FRANK", "BUMP", "CLIFF", "XSumFaith", "Wang20",
    "Goyal21", "Cao22", "DiaSumFact", "DiaSummEval", "DiaSummFactCorr", "FacEval",
    "GovReport", "SQuALITY", "DeFacto", "DocNLI", "FalseSum", "AggreFact",
)

AGGREFACT_DATASETS = ("AggreFact", "FRANK", "XSumFaith", "Goyal21", "CLIFF")

ENT, PRED, CIRC, COREF, ADD = (
    ErrorType.ENTITY,
    ErrorType.PREDICATE,
    ErrorType.CIRCUMSTANTIAL,
    ErrorType.COREFERENCE,
    ErrorType.ADDITION,
)


def _aggrefact_table() -> dict[str, frozenset[ErrorType] | str]:
    table: dict[str, frozenset[ErrorType] | str] = {}
    heads = {
        "np": ENT,
        "pred": PRED,
        "predicate": PRED,
        "sent": ADD,
        "sentence": ADD,
    }
    for head, t in heads.items():
        table[head] = frozenset({t})
        for sep in ("-", "_", " "):
            table[f"intrinsic{sep}{head}"] = frozenset({t})
            # extrinsic errors are additionally marked as Addition
            table[f"extrinsic{sep}{head}"] = frozenset({t, ADD})
    table["extrinsic"] = frozenset({ADD})
    return table


_MANUAL_TABLES: dict[str, dict[str, frozenset[ErrorType] | str]] = {
    "BUMP": {
        "extrinsic entity error": frozenset({ENT}),
        "intrinsic entity error": frozenset({ENT}),
        "extrinsic predicate error": frozenset({PRED}),
        "intrinsic predicate error": frozenset({PRED}),
        "extrinsic circumstance error": frozenset({CIRC}),
        "intrinsic circumstance error": frozenset({CIRC}),
        "coreference error": frozenset({COREF}),
        "extrinsic-related error": frozenset({ADD}),
        "other error": MANUAL,
    },
    "DiaSumFact": {
        "ex-ente": frozenset({ENT}),
        "in-ente": frozenset({ENT}),
        "ex-prede": frozenset({PRED}),
        "in-prede": frozenset({PRED}),
        "linke": frozenset({PRED}),
        "ex-cire": frozenset({CIRC}),
        "in-cire": frozenset({CIRC}),
        "corefe": frozenset({COREF}),
        "ex-error": frozenset({ADD}),
        "others": MANUAL,
    },
    "DiaSummFactCorr": {
        "ente": frozenset({ENT}),
        "prede": frozenset({PRED}),
        "grame": frozenset({PRED}),
        "linke": frozenset({PRED}),
        "circe": frozenset({CIRC}),
        "corefe": frozenset({COREF}),
        "oute": frozenset({ADD}),
        "othe": MANUAL,
    },
    "FacEval": {
        "subject object error": frozenset({ENT}),
        "pronoun error": frozenset({COREF}),
        "negation error": frozenset({PRED}),
        "particulars error": frozenset({CIRC}),
        "hallucination error": frozenset({ADD}),
        "other error": MANUAL,
    },
    "GovReport": {
        "entitye": frozenset({ENT}),
        "prede": frozenset({PRED}),
        "grame": frozenset({PRED}),
        "linke": frozenset({PRED}),
        "circe": frozenset({CIRC}),
        "corefe": frozenset({COREF}),
        "oute": frozenset({ADD}),
    },
}

CONSISTENT_MARKERS = ("correct", "factually correct", "no error", "consistent", "faithful")


def builtin_rules() -> list[ConversionRule]:
    rules: list[ConversionRule] = []
    tables = {ds: _aggrefact_table() for ds in AGGREFACT_DATASETS}
    tables.update(_MANUAL_TABLES)
    for dataset_id, table in tables.items():
        for label, target in table.items():
            rules.append(ConversionRule(dataset_id, label, target))
        for marker in CONSISTENT_MARKERS:
            if marker not in table:
                rules.append(ConversionRule(dataset_id, marker, CONSISTENT))
    return rules


class RuleTable:
    def __init__(self, rules: Iterable[ConversionRule]):
        self._rules: dict[tuple[str, str], ConversionRule] = {}
        for rule in rules:
            key = (canonical_dataset_id(rule.dataset_id), normalize_label(rule.source_label))
            if key in self._rules:
                raise ValueError(f"duplicate conversion rule for {key}")
            self._rules[key] = rule
        self.typed_datasets = frozenset(ds for ds, _ in self._rules)

    def lookup(self, dataset_id: str, label: str) -> ConversionRule | None:
        return self._rules.get((canonical_dataset_id(dataset_id), normalize_label(label)))

    def __iter__(self):
        return iter(self._rules.values())

    def __len__(self):
        return len(self._rules)


_DEFAULT_TABLE: RuleTable | None = None


def default_table() -> RuleTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = RuleTable(builtin_rules())
    return _DEFAULT_TABLE


def lookup(dataset_id: str, label: str) -> ConversionRule | None:
    return default_table().lookup(dataset_id, label)


Overrides = Mapping[tuple[str, str, str], frozenset[ErrorType]]


def override_key(dataset_id: str, example_id: str, label: str) -> tuple[str, str, str]:
    return (canonical_dataset_id(dataset_id), str(example_id), normalize_label(label))


def parse_type_list(text: str) -> frozenset[ErrorType]:
    return frozenset(ErrorType.parse(part) for part in text.split(",") if part.strip())


def load_overrides(path: str | Path) -> dict[tuple[str, str, str], frozenset[ErrorType]]:
    """Read a tab-separated override file.

    Columns: dataset_id, example_id, source_label, target types (comma-separated
    variant names; empty means the label carries no taxonomy error).
    Blank lines and ``#`` comments are ignored.
    """
    overrides: dict[tuple[str, str, str], frozenset[ErrorType]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for lineno, row in enumerate(csv.reader(handle, delimiter="\t"), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) not in (3, 4):
                raise ParseError(lineno, f"expected 4 tab-separated fields, got {len(row)}")
            dataset_id, example_id, label = row[0], row[1], row[2]
            try:
                types = parse_type_list(row[3] if len(row) == 4 else "")
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            key = override_key(dataset_id, example_id, label)
            if key in overrides and overrides[key] != types:
                raise ParseError(lineno, f"conflicting override for {key}")
            overrides[key] = types
    return overrides


def convert_label(
    dataset_id: str,
    source_labels: Iterable[str],
    overrides: Overrides | None = None,
    *,
    example_id: str | None = None,
    consistent: bool | None = None,
    score: float | None = None,
    rules: RuleTable | None = None,
) -> GoldLabel:
    """Map an example's source labels onto the taxonomy.

    ``consistent`` and ``score`` carry the dataset's own binary or score judgment;
    they are used when the dataset annotates no error types.
    """
    rules = rules or default_table()
    overrides = overrides or {}
    labels = [lab for lab in source_labels if lab and lab.strip()]
    union: set[ErrorType] = set()
    saw_consistent = False
    for label in labels:
        key = override_key(dataset_id, example_id, label) if example_id is not None else None
        if key is not None and key in overrides:
            union |= overrides[key]
            continue
        rule = rules.lookup(dataset_id, label)
        if rule is not None:
            if rule.is_manual:
                raise MissingOverride(dataset_id, label, example_id)
            if rule.is_consistent:
                saw_consistent = True
            else:
                union |= rule.target
            continue
        try:
            union.add(ErrorType.parse(label))
        except ValueError:
            raise UnknownLabel(dataset_id, label, example_id) from None

    if score is not None:
        return GoldLabel.scored(score)
    if not labels:
        if consistent is None:
            raise ValueError(f"example {example_id!r} has neither labels nor a binary judgment")
        typed = canonical_dataset_id(dataset_id) in rules.typed_datasets
        return GoldLabel.correct(typed=typed) if consistent else GoldLabel.incorrect()
    if union:
        return GoldLabel.incorrect(union, typed=True)
    if saw_consistent or consistent:
        return GoldLabel.correct(typed=True)
    # overrides resolved every label to "no taxonomy error" on an unfaithful summary
    return GoldLabel.incorrect()
