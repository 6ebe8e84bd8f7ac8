"""Unified example records, dataset ingestion and training/test split assembly."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import MissingDataset, MissingOverride, ParseError, SummFactError, UnknownLabel
from .taxonomy import GoldLabel, Overrides, canonical_dataset_id, convert_label

log = logging.getLogger(__name__)

DOMAINS = ("CNN/DM", "XSum", "Dialogues", "Reports", "Stories")

# allowed domains per dataset; None means the dataset is not tied to one domain
DATASET_DOMAINS: dict[str, frozenset[str] | None] = {
    "Polytope": frozenset({"CNN/DM"}),
    "SummEval": frozenset({"CNN/DM"}),
    "FRANK": frozenset({"CNN/DM"}),
    "BUMP": frozenset({"CNN/DM"}),
    "CLIFF": frozenset({"CNN/DM", "XSum"}),
    "XSumFaith": frozenset({"XSum"}),
    "Wang20": frozenset({"XSum"}),
    "Goyal21": frozenset({"XSum"}),
    "Cao22": frozenset({"XSum"}),
    "DeFacto": frozenset({"XSum"}),
    "DiaSumFact": frozenset({"Dialogues"}),
    "DiaSummEval": frozenset({"Dialogues"}),
    "DiaSummFactCorr": frozenset({"Dialogues"}),
    "FacEval": frozenset({"Dialogues"}),
    "GovReport": frozenset({"Reports"}),
    "SQuALITY": frozenset({"Stories"}),
    "FalseSum": frozenset({"CNN/DM"}),
    "DocNLI": None,
    "AggreFact": frozenset({"CNN/DM", "XSum"}),
}


def default_domain(dataset_id: str) -> str | None:
    allowed = DATASET_DOMAINS.get(canonical_dataset_id(dataset_id))
    if allowed and len(allowed) == 1:
        return next(iter(allowed))
    return None


@dataclass(frozen=True)
class SummaryExample:
    id: str
    dataset_id: str
    domain: str
    document: str
    summary: str
    gold: GoldLabel
    origin_model: str | None = None

    def __post_init__(self):
        if not self.document.strip() or not self.summary.strip():
            raise ValueError(f"example {self.id!r}: document and summary must be non-empty")
        if self.domain not in DOMAINS:
            raise ValueError(f"example {self.id!r}: unknown domain {self.domain!r}")
        allowed = DATASET_DOMAINS.get(canonical_dataset_id(self.dataset_id))
        if allowed is not None and self.domain not in allowed:
            raise ValueError(
                f"example {self.id!r}: domain {self.domain!r} does not belong to {self.dataset_id}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dataset_id": self.dataset_id,
            "domain": self.domain,
            "document": self.document,
            "summary": self.summary,
            "gold": self.gold.to_dict(),
            "origin_model": self.origin_model,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SummaryExample":
        return cls(
            id=str(data["id"]),
            dataset_id=data["dataset_id"],
            domain=data["domain"],
            document=data["document"],
            summary=data["summary"],
            gold=GoldLabel.from_dict(data["gold"]),
            origin_model=data.get("origin_model"),
        )


@dataclass
class SchemaDescriptor:
    """Declarative mapping from a source JSON record to a SummaryExample.

    Field names may be dotted paths into nested objects. ``labels_field`` may hold
    a list of strings or one comma/semicolon separated string.
    """

    document_field: str = "document"
    summary_field: str = "summary"
    id_field: str | None = "id"
    labels_field: str | None = None
    consistent_field: str | None = None
    consistent_values: tuple = (True, 1, "1", "true", "consistent", "correct", "faithful")
    score_field: str | None = None
    domain: str | None = None
    domain_field: str | None = None
    origin_model_field: str | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SchemaDescriptor":
        data = dict(data)
        if "consistent_values" in data:
            data["consistent_values"] = tuple(data["consistent_values"])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "SchemaDescriptor":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


UNIFIED_SCHEMA = "unified"


@dataclass
class LoadResult:
    examples: list[SummaryExample] = field(default_factory=list)
    problems: list[SummFactError] = field(default_factory=list)

    def __iter__(self):
        return iter(self.examples)

    def __len__(self):
        return len(self.examples)

    @property
    def ok(self) -> bool:
        return not self.problems


def _get(record: Mapping[str, Any], path: str | None) -> Any:
    if path is None:
        return None
    node: Any = record
    for part in path.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return None
        node = node[part]
    return node


def _split_labels(raw: Any) -> list[str]:
    if raw is None:
        return []
    if isinstance(raw, str):
        return [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
    return [str(p).strip() for p in raw if str(p).strip()]


def _is_truthy(value: Any, accepted: Sequence) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in {str(a).lower() for a in accepted}
    if isinstance(value, bool):
        return value
    return value in accepted


def record_to_example(
    record: Mapping[str, Any],
    dataset_id: str,
    schema: SchemaDescriptor,
    overrides: Overrides | None = None,
    fallback_id: str = "",
) -> SummaryExample:
    example_id = _get(record, schema.id_field) if schema.id_field else None
    example_id = str(example_id) if example_id is not None else fallback_id
    domain = _get(record, schema.domain_field) or schema.domain or default_domain(dataset_id)
    if domain is None:
        raise ValueError(f"example {example_id!r}: no domain for dataset {dataset_id!r}")
    consistent = None
    if schema.consistent_field is not None:
        raw = _get(record, schema.consistent_field)
        if raw is not None:
            consistent = _is_truthy(raw, schema.consistent_values)
    score = _get(record, schema.score_field)
    gold = convert_label(
        dataset_id,
        _split_labels(_get(record, schema.labels_field)),
        overrides,
        example_id=example_id,
        consistent=consistent,
        score=float(score) if score is not None else None,
    )
    origin = _get(record, schema.origin_model_field)
    return SummaryExample(
        id=example_id,
        dataset_id=dataset_id,
        domain=domain,
        document=str(_get(record, schema.document_field) or ""),
        summary=str(_get(record, schema.summary_field) or ""),
        gold=gold,
        origin_model=str(origin) if origin is not None else None,
    )


def load_corpus(
    path: str | Path,
    dataset_id: str | None = None,
    schema_descriptor: SchemaDescriptor | str = UNIFIED_SCHEMA,
    overrides: Overrides | None = None,
    strict: bool = False,
) -> LoadResult:
    """Load a JSON Lines file into SummaryExamples.

    With ``schema_descriptor="unified"`` the file is expected to already be in the
    unified record format. Malformed lines and unconvertible labels are collected in
    ``problems``; with ``strict=True`` the first one is raised instead.
    """
    result = LoadResult()
    if dataset_id is not None:
        dataset_id = canonical_dataset_id(dataset_id)
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record is not a JSON object")
                if schema_descriptor == UNIFIED_SCHEMA:
                    example = SummaryExample.from_dict(record)
                else:
                    example = record_to_example(
                        record, dataset_id or record.get("dataset_id", ""), schema_descriptor,
                        overrides, fallback_id=f"{dataset_id}-{lineno}",
                    )
            except (UnknownLabel, MissingOverride) as exc:
                if strict:
                    raise
                result.problems.append(exc)
                continue
            except (ValueError, KeyError, TypeError) as exc:
                err = ParseError(lineno, str(exc))
                if strict:
                    raise err from exc
                result.problems.append(err)
                continue
            result.examples.append(example)
    for problem in result.problems:
        log.warning("%s: %s", path, problem)
    return result


def write_examples(examples: Iterable[SummaryExample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for ex in examples:
            handle.write(json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_examples(path: str | Path) -> list[SummaryExample]:
    return load_corpus(path, strict=True).examples


def normalize_document(text: str) -> str:
    return " ".join(text.lower().split())


def overlap_filter(
    candidates: Iterable[SummaryExample], reserved_docs: Iterable[str]
) -> list[SummaryExample]:
    reserved = {normalize_document(doc) for doc in reserved_docs}
    return [ex for ex in candidates if normalize_document(ex.document) not in reserved]


@dataclass
class SplitSpec:
    set_one: list[str]
    set_two: list[str]
    test: list[str]
    set_two_sample_size: int = 50_000
    seed: int = 0
    # dataset_id -> summarizer names counted as state-of-the-art in the test split
    sota_models: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        overlap = set(self.test) & (set(self.set_one) | set(self.set_two))
        if overlap:
            raise ValueError(f"test datasets overlap training sets: {sorted(overlap)}")
        if self.set_two_sample_size < 0:
            raise ValueError("set_two_sample_size must be non-negative")

    @classmethod
    def standard(cls, seed: int = 0) -> "SplitSpec":
        return cls(
            set_one=["FRANK", "Polytope", "BUMP", "CLIFF", "Goyal21", "DeFacto",
                     "XSumFaith", "DiaSummEval", "DiaSummFactCorr", "FacEval"],
            set_two=["DocNLI", "FalseSum"],
            test=["SummEval", "Wang20", "Cao22", "DiaSumFact"],
            set_two_sample_size=50_000,
            seed=seed,
        )


@dataclass
class Splits:
    train_one: list[SummaryExample]
    train_two: list[SummaryExample]
    test: list[SummaryExample]

    def counts(self) -> dict[str, int]:
        return {"train_one": len(self.train_one), "train_two": len(self.train_two),
                "test": len(self.test)}

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        for name in ("train_one", "train_two", "test"):
            write_examples(getattr(self, name), directory / f"{name}.jsonl")

    @classmethod
    def read(cls, directory: str | Path) -> "Splits":
        directory = Path(directory)
        parts = {}
        for name in ("train_one", "train_two", "test"):
            path = directory / f"{name}.jsonl"
            parts[name] = read_examples(path) if path.exists() else []
        return cls(**parts)


def assemble_splits(split: SplitSpec, loaded: Mapping[str, Sequence[SummaryExample]]) -> Splits:
    def get(ds: str) -> Sequence[SummaryExample]:
        if ds not in loaded:
            raise MissingDataset(f"dataset {ds!r} required by the split is not loaded")
        return loaded[ds]

    test: list[SummaryExample] = []
    for ds in split.test:
        sota = split.sota_models.get(ds)
        test.extend(ex for ex in get(ds) if sota is None or ex.origin_model in sota)

    train_one = [ex for ds in split.set_one for ex in get(ds)]

    test_docs = [ex.document for ex in test]
    train_two: list[SummaryExample] = []
    for ds in split.set_two:
        survivors = overlap_filter(get(ds), test_docs)
        if len(survivors) <= split.set_two_sample_size:
            train_two.extend(survivors)
            continue
        rng = random.Random(f"{split.seed}:{ds}")
        picked = sorted(rng.sample(range(len(survivors)), split.set_two_sample_size))
        train_two.extend(survivors[i] for i in picked)
    return Splits(train_one, train_two, test)
