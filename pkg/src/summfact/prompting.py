"""Taxonomy-grounded prompts, summary windows, response parsing and window aggregation."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .alignment import split_sentences
from .errors import TemplateError, UnknownErrorToken, UnparseableResponse
from .taxonomy import CANONICAL_ORDER, DEFINITIONS, ErrorType, Verdict, format_types, is_consistent

__all__ = [
    "PromptTemplate",
    "Verdict",
    "Window",
    "aggregate_windows",
    "build_factax_prompt",
    "parse_label",
    "parse_response",
    "render_response",
    "segment_windows",
]

PLACEHOLDERS = ("document", "summary", "type_definitions")
CONSISTENT_LABEL = "Factually Correct"
INCONSISTENT_LABEL = "Factually Incorrect"
SCORE_SCALE = (1, 10)

SCORE_INSTRUCTION = (
    "Finally, rate the factual consistency of the summary on a scale from {low} "
    "(severely inconsistent) to {high} (fully consistent) and add one more line:\n"
    "- Score: <an integer from {low} to {high}>"
)

_PLACEHOLDER_RE = re.compile(r"\{\{\s*(\w+)\s*\}\}")


def _type_guidance_lines(guidance: Sequence[tuple[ErrorType, str]]) -> str:
    return "\n".join(f"- {t.label}: {text.strip()}" for t, text in guidance)


@dataclass(frozen=True)
class PromptTemplate:
    """Plain-text template with ``{{document}}``, ``{{summary}}`` and ``{{type_definitions}}``."""

    text: str
    per_type_guidance: tuple[tuple[ErrorType, str], ...] = field(
        default_factory=lambda: tuple((t, DEFINITIONS[t]) for t in CANONICAL_ORDER)
    )

    def __post_init__(self):
        found = _PLACEHOLDER_RE.findall(self.text)
        for name in PLACEHOLDERS:
            if found.count(name) != 1:
                raise TemplateError(f"template must contain {{{{{name}}}}} exactly once")
        unknown = set(found) - set(PLACEHOLDERS)
        if unknown:
            raise TemplateError(f"unknown placeholders: {sorted(unknown)}")
        types = [t for t, _ in self.per_type_guidance]
        if sorted(types, key=CANONICAL_ORDER.index) != list(CANONICAL_ORDER):
            raise TemplateError("per-type guidance must list each error type exactly once")

    @classmethod
    def default(cls) -> "PromptTemplate":
        text = resources.files("summfact").joinpath("templates/factax.txt").read_text(encoding="utf-8")
        return cls(text)

    @classmethod
    def load(cls, path: str | Path) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def instruction_header(self) -> str:
        return self.text[: _PLACEHOLDER_RE.search(self.text).start()]

    @property
    def response_format_spec(self) -> str:
        last = list(_PLACEHOLDER_RE.finditer(self.text))[-1]
        return self.text[last.end():]

    @property
    def type_definitions(self) -> str:
        return _type_guidance_lines(self.per_type_guidance)

    def render(self, document: str, summary: str, mode: str = "classify") -> str:
        if mode not in ("classify", "score"):
            raise ValueError(f"unknown prompt mode {mode!r}")
        if not document.strip() or not summary.strip():
            raise TemplateError("document and summary slots must be non-empty")
        values = {"document": document, "summary": summary, "type_definitions": self.type_definitions}
        out = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], self.text)
        if mode == "score":
            low, high = SCORE_SCALE
            out = out.rstrip() + "\n" + SCORE_INSTRUCTION.format(low=low, high=high) + "\n"
        return out

    def extract_slots(self, prompt: str) -> dict[str, str]:
        """Recover slot values from a prompt rendered with this template."""
        parts = _PLACEHOLDER_RE.split(self.text)
        # trailing whitespace of the template may be replaced by the score instruction
        parts[-1] = parts[-1].rstrip()
        pattern = ""
        for i, part in enumerate(parts):
            if i % 2 == 0:
                pattern += re.escape(part)
            elif part == "type_definitions":
                pattern += re.escape(self.type_definitions)
            else:
                pattern += f"(?P<{part}>.*)"
        m = re.match(pattern, prompt, re.DOTALL)
        if m is None:
            raise TemplateError("prompt was not rendered from this template")
        return m.groupdict()


_DEFAULT_TEMPLATE: PromptTemplate | None = None


def default_template() -> PromptTemplate:
    global _DEFAULT_TEMPLATE
    if _DEFAULT_TEMPLATE is None:
        _DEFAULT_TEMPLATE = PromptTemplate.default()
    return _DEFAULT_TEMPLATE


def build_factax_prompt(
    context: str, summary: str, template: PromptTemplate | None = None, mode: str = "classify"
) -> str:
    return (template or default_template()).render(context, summary, mode)


# -- windows ------------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    index: int
    text: str
    word_count: int


def segment_windows(summary: str, target_words: int = 30) -> list[Window]:
    """Pack summary sentences into windows of roughly ``target_words`` words.

    A window closes as soon as it holds at least ``target_words`` words. A sentence
    longer than twice the target is cut at word boundaries into pieces of
    ``target_words`` words; the final piece keeps the rest.
    """
    if target_words < 1:
        raise ValueError("target_words must be >= 1")
    words = [(m.start(), m.end()) for m in re.finditer(r"\S+", summary)]
    if not words:
        return []
    # group word indices by sentence
    groups: list[list[int]] = []
    wi = 0
    for sent in split_sentences(summary):
        group = []
        while wi < len(words) and words[wi][0] < sent.end:
            group.append(wi)
            wi += 1
        if group:
            groups.append(group)
    if wi < len(words):
        groups.append(list(range(wi, len(words))))

    spans: list[list[int]] = []
    current: list[int] = []

    def close():
        nonlocal current
        if current:
            spans.append(current)
            current = []

    for group in groups:
        if len(group) > 2 * target_words:
            rest = group
            while len(rest) > 2 * target_words:
                current.extend(rest[:target_words])
                close()
                rest = rest[target_words:]
            current.extend(rest)
        else:
            current.extend(group)
        if len(current) >= target_words:
            close()
    close()

    return [
        Window(i, summary[words[span[0]][0] : words[span[-1]][1]], len(span))
        for i, span in enumerate(spans)
    ]


# -- responses ----------------------------------------------------------------

# "**Label:**" style bold markers; closing asterisks are consumed only when opened
_MARKER = r"(?:^|(?<=\s))[-*•]?\s*(\*\*)?\s*{name}\s*(?:\*\*)?\s*:\s*(?(1)(?:\*\*)?)"
_LABEL_RE = re.compile(_MARKER.format(name="label"), re.IGNORECASE | re.MULTILINE)
_REASONING_RE = re.compile(_MARKER.format(name="reasoning"), re.IGNORECASE | re.MULTILINE)
_SCORE_RE = re.compile(r"^\s*[-*•]?\s*\**\s*score\s*\**\s*:\s*\**\s*(-?\d+(?:\.\d+)?(?:e[-+]?\d+)?)", re.IGNORECASE | re.MULTILINE)
_SPLIT_RE = re.compile(r",|;|/|&|\|| and ", re.IGNORECASE)

_CONSISTENT_KEYS = {
    "factuallycorrect", "correct", "noerror", "noerrors", "none", "consistent",
    "factuallyconsistent", "noerrortype", "noerrortypes",
}
_INCONSISTENT_KEYS = {"factuallyincorrect", "incorrect", "inconsistent", "factuallyinconsistent"}


def _key(token: str) -> str:
    return "".join(ch for ch in token.lower() if ch.isalpha())


def parse_label(label_text: str) -> Verdict:
    """Interpret the content of a label line (no reasoning, no score)."""
    types: set[ErrorType] = set()
    saw_consistent = saw_inconsistent = False
    for raw in _SPLIT_RE.split(label_text):
        token = raw.strip().strip(" .'\"`*[]()<>")
        if not token:
            continue
        key = _key(token)
        if key in _CONSISTENT_KEYS:
            saw_consistent = True
        elif key in _INCONSISTENT_KEYS:
            saw_inconsistent = True
        else:
            try:
                types.add(ErrorType.parse(token))
            except ValueError:
                raise UnknownErrorToken(token) from None
    if types or saw_inconsistent:
        return Verdict(False, frozenset(types))
    if saw_consistent:
        return Verdict(True)
    raise UnparseableResponse("empty label")


def parse_response(raw_text: str, mode: str = "classify") -> Verdict:
    labels = list(_LABEL_RE.finditer(raw_text))
    if not labels:
        raise UnparseableResponse("no label line in response")
    last = labels[-1]
    line_end = raw_text.find("\n", last.end())
    label_text = raw_text[last.end() : line_end if line_end >= 0 else len(raw_text)]
    verdict = parse_label(label_text)

    before = raw_text[: last.start()]
    reasons = list(_REASONING_RE.finditer(before))
    rationale = before[reasons[-1].end():] if reasons else before
    rationale = rationale.strip()

    score = None
    scores = list(_SCORE_RE.finditer(raw_text))
    if scores:
        score = float(scores[-1].group(1))
    elif mode == "score":
        tail = re.findall(r"-?\d+", raw_text[last.end():])
        if not tail:
            raise UnparseableResponse("no consistency rating in response")
        score = float(tail[-1])
    return Verdict(verdict.consistent, verdict.types, rationale, score)


def render_label(verdict: Verdict) -> str:
    if verdict.types:
        return format_types(verdict.types)
    return CONSISTENT_LABEL if verdict.consistent else INCONSISTENT_LABEL


def render_response(verdict: Verdict) -> str:
    """Canonical response text; ``parse_response`` inverts it."""
    lines = [f"- Reasoning: {verdict.rationale.strip()}", f"- Label: {render_label(verdict)}"]
    if verdict.score is not None:
        s = verdict.score
        lines.append(f"- Score: {int(s) if float(s).is_integer() else repr(float(s))}")
    return "\n".join(lines)


def aggregate_windows(verdicts: Iterable[Verdict]) -> Verdict:
    verdicts = list(verdicts)
    if not verdicts:
        raise ValueError("cannot aggregate an empty list of window verdicts")
    types = frozenset().union(*(v.types for v in verdicts))
    clean = [is_consistent(v) for v in verdicts]
    rationale = "\n".join(f"[window {i}] {v.rationale}".rstrip() for i, v in enumerate(verdicts))
    return Verdict(all(clean), types, rationale, sum(clean) / len(clean))
