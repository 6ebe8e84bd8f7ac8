"""Supervised fine-tuning corpora built from unified examples."""
from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .corpus import Splits, SummaryExample
from .errors import CorpusIOError, EmptyStratum, NoTypeLabels, ScoreLabeled
from .prompting import CONSISTENT_LABEL, INCONSISTENT_LABEL
from .taxonomy import CANONICAL_ORDER, DEFINITIONS, format_types

KINDS = ("binary", "taxonomy")
NO_ERROR = "No Error"
SETTINGS = ("I-Binary", "I-Taxonomy", "I&II-Taxonomy")
DEFAULT_TAXONOMY_RATIO = 0.20

# Recommended fine-tuning recipe; recorded in manifests, never executed here.
TRAINING_RECIPE = {
    "base_model": "Llama3-8B",
    "finetuning": "full",
    "epochs": 8,
    "per_device_batch_size": 1,
    "learning_rate": 1e-5,
    "lr_schedule": "cosine",
    "warmup_ratio": 0.05,
    "loss": "completion_only",
}

BINARY_INSTRUCTION = (
    "Decide whether the summary is factually correct with respect to the document. "
    f'Answer with exactly "{CONSISTENT_LABEL}" or "{INCONSISTENT_LABEL}".'
)


def _taxonomy_instruction() -> str:
    lines = [
        "Decide whether the summary contains any of the following error types with respect to the document:"
    ]
    lines += [f"- {t.label}: {DEFINITIONS[t]}" for t in CANONICAL_ORDER]
    lines.append(f'List every error type present, separated by commas, or answer "{NO_ERROR}".')
    return "\n".join(lines)


TAXONOMY_INSTRUCTION = _taxonomy_instruction()


@dataclass(frozen=True)
class PromptCompletion:
    prompt: str
    completion: str
    kind: str
    source_example_id: str
    dataset_id: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pair kind {self.kind!r}")
        if self.kind == "binary" and self.completion not in (CONSISTENT_LABEL, INCONSISTENT_LABEL):
            raise ValueError(f"non-canonical binary completion {self.completion!r}")


@dataclass(frozen=True)
class ForgeSetting:
    name: str
    taxonomy_ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in SETTINGS:
            raise ValueError(f"unknown setting {self.name!r}; expected one of {SETTINGS}")
        if self.taxonomy_ratio is not None:
            if self.name != "I&II-Taxonomy":
                raise ValueError("taxonomy_ratio applies only to I&II-Taxonomy")
            if not 0.0 <= self.taxonomy_ratio <= 1.0:
                raise ValueError("taxonomy_ratio must lie in [0, 1]")

    @property
    def sampling_ratio(self) -> float | None:
        """Target taxonomy fraction for epoch sampling, or None for natural proportions."""
        if self.name != "I&II-Taxonomy":
            return None
        return DEFAULT_TAXONOMY_RATIO if self.taxonomy_ratio is None else self.taxonomy_ratio

    @property
    def uses_set_two(self) -> bool:
        return self.name == "I&II-Taxonomy"

    @property
    def uses_taxonomy(self) -> bool:
        return self.name != "I-Binary"


def _prompt(instruction: str, example: SummaryExample) -> str:
    return f"{instruction}\n\nDocument:\n{example.document}\n\nSummary:\n{example.summary}\n"


def make_binary_pair(example: SummaryExample) -> PromptCompletion:
    if example.gold.kind == "score":
        raise ScoreLabeled(f"example {example.id} only has a consistency score")
    completion = CONSISTENT_LABEL if example.gold.kind == "consistent" else INCONSISTENT_LABEL
    return PromptCompletion(_prompt(BINARY_INSTRUCTION, example), completion, "binary",
                            example.id, example.dataset_id)


def make_taxonomy_pair(example: SummaryExample) -> PromptCompletion:
    gold = example.gold
    if gold.kind == "score" or not gold.typed:
        raise NoTypeLabels(f"example {example.id} from {example.dataset_id} has no error-type labels")
    completion = format_types(gold.types) if gold.types else NO_ERROR
    return PromptCompletion(_prompt(TAXONOMY_INSTRUCTION, example), completion, "taxonomy",
                            example.id, example.dataset_id)


def taxonomy_ratio(binary_count: int, total_count: int) -> float:
    """Fraction of pairs carrying the taxonomy, given the binary and total pair counts."""
    if total_count <= 0:
        raise ValueError("total_count must be positive")
    if not 0 <= binary_count <= total_count:
        raise ValueError("binary_count must lie in [0, total_count]")
    return (total_count - binary_count) / total_count


def _binary_pairs(examples: Iterable[SummaryExample], excluded: Counter) -> list[PromptCompletion]:
    out = []
    for ex in examples:
        if ex.gold.kind == "score":
            excluded[ex.dataset_id] += 1
            continue
        out.append(make_binary_pair(ex))
    return out


def build_training_corpus(
    setting: ForgeSetting | str, splits: Splits
) -> tuple[list[PromptCompletion], dict[str, Any]]:
    """Pairs for one training setting, plus a manifest describing them.

    Score-only examples yield no pairs and are counted under ``excluded_score_only``.
    """
    if isinstance(setting, str):
        setting = ForgeSetting(setting)
    excluded: Counter = Counter()
    set_one_binary = _binary_pairs(splits.train_one, excluded)
    taxonomy = []
    if setting.uses_taxonomy:
        taxonomy = [make_taxonomy_pair(ex) for ex in splits.train_one
                    if ex.gold.kind != "score" and ex.gold.typed]
    set_two_binary = _binary_pairs(splits.train_two, excluded) if setting.uses_set_two else []
    pairs = set_one_binary + taxonomy + set_two_binary

    kinds = Counter(p.kind for p in pairs)
    provenance: dict[str, dict[str, int]] = {}
    for p in pairs:
        provenance.setdefault(p.dataset_id, {"binary": 0, "taxonomy": 0})[p.kind] += 1
    binary_total = kinds["binary"]
    manifest = {
        "setting": setting.name,
        "seed": setting.seed,
        "counts": {"binary": binary_total, "taxonomy": kinds["taxonomy"], "total": len(pairs)},
        # the two readings of the combined setting's size: with and without taxonomy pairs
        "totals": {"all_pairs": len(pairs), "binary_only": binary_total},
        "natural_taxonomy_ratio": taxonomy_ratio(binary_total, len(pairs)) if pairs else 0.0,
        "taxonomy_ratio": setting.sampling_ratio
        if setting.sampling_ratio is not None
        else (taxonomy_ratio(binary_total, len(pairs)) if pairs else 0.0),
        "sampling": "stratified per epoch" if setting.sampling_ratio is not None else "natural",
        "provenance": {ds: provenance[ds] for ds in sorted(provenance)},
        "excluded_score_only": dict(sorted(excluded.items())),
        "training_recipe": TRAINING_RECIPE,
    }
    return pairs, manifest


def _draw(stratum: Sequence[PromptCompletion], k: int, rng: random.Random) -> list[PromptCompletion]:
    """k items without replacement, cycling through fresh permutations once exhausted."""
    out: list[PromptCompletion] = []
    while len(out) < k:
        need = k - len(out)
        if need >= len(stratum):
            out.extend(rng.sample(stratum, len(stratum)))
        else:
            out.extend(rng.sample(stratum, need))
    return out


def sample_with_ratio(
    pairs: Sequence[PromptCompletion], taxonomy_ratio: float, epoch_size: int, seed: int = 0
) -> list[PromptCompletion]:
    """Stratified epoch: round(ratio * epoch_size) taxonomy pairs, the rest binary, shuffled."""
    if not 0.0 <= taxonomy_ratio <= 1.0:
        raise ValueError("taxonomy_ratio must lie in [0, 1]")
    if epoch_size < 0:
        raise ValueError("epoch_size must be non-negative")
    n_tax = math.floor(taxonomy_ratio * epoch_size + 0.5)
    n_bin = epoch_size - n_tax
    strata = {kind: [p for p in pairs if p.kind == kind] for kind in KINDS}
    for kind, need in (("taxonomy", n_tax), ("binary", n_bin)):
        if need and not strata[kind]:
            raise EmptyStratum(f"{need} {kind} pairs requested but none are available")
    rng = random.Random(seed)
    sample = _draw(strata["taxonomy"], n_tax, rng) + _draw(strata["binary"], n_bin, rng)
    rng.shuffle(sample)
    return sample


def corpus_manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _encode(pair: PromptCompletion, format: str) -> dict[str, Any]:
    if format == "plain":
        return asdict(pair)
    return {
        "messages": [
            {"role": "user", "content": pair.prompt},
            {"role": "assistant", "content": pair.completion},
        ],
        "kind": pair.kind,
        "source_example_id": pair.source_example_id,
        "dataset_id": pair.dataset_id,
    }


def export_corpus(
    pairs: Iterable[PromptCompletion],
    path: str | Path,
    format: str = "plain",
    manifest: Mapping[str, Any] | None = None,
) -> Path:
    """Write pairs as JSON Lines plus a companion ``<stem>.manifest.json``."""
    if format not in ("plain", "chat"):
        raise ValueError(f"unknown export format {format!r}")
    path = Path(path)
    pairs = list(pairs)
    meta = dict(manifest or {})
    meta["export"] = {
        "format": format,
        "lines": len(pairs),
        "kinds": dict(sorted(Counter(p.kind for p in pairs).items())),
        "loss": "completion_only",
    }
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for pair in pairs:
                handle.write(json.dumps(_encode(pair, format), ensure_ascii=False, sort_keys=True) + "\n")
        corpus_manifest_path(path).write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise CorpusIOError(f"cannot write corpus to {path}: {exc}") from exc
    return path
