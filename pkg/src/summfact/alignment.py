"""Sentence segmentation and ROUGE-recall context retrieval for long documents."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Sequence

_TOKEN_RE = re.compile(r"[^\W_]+")

# lowercase, without the trailing period
ABBREVIATIONS = frozenset(
    """
    mr mrs ms dr prof sr jr st mt ft vs etc e.g i.e cf al inc ltd co corp llc
    dept univ gen gov sen rep col lt sgt capt cmdr adm maj pres rev hon messrs
    no nos vol fig approx est jan feb mar apr jun jul aug sep sept oct nov dec
    mon tue wed thu fri sat sun u.s u.k u.n a.m p.m
    """.split()
)

_SPEAKER_RE = re.compile(r"^\s*[A-Za-z#@][\w .'#@-]{0,30}:(?:\s|$)")
_BOUNDARY_RE = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s+[\"'“‘(\[]*[A-Z])")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric word tokens; punctuation is dropped."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Sentence:
    text: str
    start: int
    end: int
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class SentenceIndex:
    sentences: tuple[Sentence, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]


def _is_abbreviation(block: str, dot: int) -> bool:
    j = dot
    while j > 0 and not block[j - 1].isspace():
        j -= 1
    word = block[j:dot].lstrip("\"'“‘([")
    if not word:
        return False
    if len(word) == 1 and word.isupper():
        return True  # initials such as "J. Smith"
    return word.lower() in ABBREVIATIONS or bool(re.fullmatch(r"(?:[A-Za-z]\.)+[A-Za-z]", word))


def _blocks(text: str) -> list[tuple[int, int]]:
    """Line groups that sentences never cross: paragraphs and dialogue turns."""
    lines = []
    pos = 0
    for line in text.splitlines(keepends=True):
        lines.append((pos, pos + len(line), line))
        pos += len(line)
    blocks: list[tuple[int, int]] = []
    prev_speaker = False
    for start, end, line in lines:
        if not line.strip():
            prev_speaker = False
            blocks.append((start, start))  # paragraph break sentinel
            continue
        speaker = bool(_SPEAKER_RE.match(line))
        if blocks and blocks[-1][0] != blocks[-1][1] and not speaker and not prev_speaker:
            blocks[-1] = (blocks[-1][0], end)
        else:
            blocks.append((start, end))
        prev_speaker = speaker
    return [(s, e) for s, e in blocks if s != e]


def split_sentences(text: str) -> SentenceIndex:
    out: list[Sentence] = []
    for bstart, bend in _blocks(text):
        block = text[bstart:bend]
        cuts = [0]
        for m in _BOUNDARY_RE.finditer(block):
            if m.group().rstrip("\"'”’)]") == "." and _is_abbreviation(block, m.start()):
                continue
            cuts.append(m.end())
        cuts.append(len(block))
        for a, b in zip(cuts, cuts[1:]):
            piece = block[a:b]
            stripped = piece.strip()
            if not stripped:
                continue
            start = bstart + a + (len(piece) - len(piece.lstrip()))
            out.append(Sentence(stripped, start, start + len(stripped), tuple(tokenize(stripped))))
    return SentenceIndex(tuple(out))


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _as_tokens(value: str | Sequence[str]) -> Sequence[str]:
    return tokenize(value) if isinstance(value, str) else value


def ngram_recall(candidate_tokens: str | Sequence[str], reference_tokens: str | Sequence[str], n: int) -> float:
    """Clipped n-gram recall of ``reference`` by ``candidate`` (ROUGE-N recall)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ref = ngrams(_as_tokens(reference_tokens), n)
    total = sum(ref.values())
    if total == 0:
        return 0.0
    cand = ngrams(_as_tokens(candidate_tokens), n)
    matched = sum(min(count, cand[g]) for g, count in ref.items())
    return matched / total


def combined_recall(candidate_tokens: str | Sequence[str], reference_tokens: str | Sequence[str]) -> float:
    return ngram_recall(candidate_tokens, reference_tokens, 1) + ngram_recall(
        candidate_tokens, reference_tokens, 2
    )


@dataclass(frozen=True)
class AlignmentConfig:
    max_context_tokens: int = 1024
    per_window_sentences: int = 5

    def __post_init__(self):
        if self.max_context_tokens < 1 or self.per_window_sentences < 1:
            raise ValueError("alignment budgets must be positive")


class _RecallState:
    """Incremental ROUGE-1 + ROUGE-2 recall of a growing sentence set.

    N-grams are counted per sentence, so no bigram spans two selected sentences.
    """

    def __init__(self, reference: Sequence[str]):
        self.refs = {n: ngrams(reference, n) for n in (1, 2)}
        self.totals = {n: sum(c.values()) for n, c in self.refs.items()}
        self.have = {n: Counter() for n in (1, 2)}

    def gain(self, tokens: Sequence[str]) -> float:
        g = 0.0
        for n in (1, 2):
            if not self.totals[n]:
                continue
            ref, have = self.refs[n], self.have[n]
            matched = 0
            for gram, c in ngrams(tokens, n).items():
                r = ref.get(gram)
                if r:
                    matched += min(have[gram] + c, r) - min(have[gram], r)
            g += matched / self.totals[n]
        return g

    def add(self, tokens: Sequence[str]) -> None:
        for n in (1, 2):
            self.have[n].update(ngrams(tokens, n))

    def score(self) -> float:
        s = 0.0
        for n in (1, 2):
            if self.totals[n]:
                s += sum(min(c, self.have[n][g]) for g, c in self.refs[n].items()) / self.totals[n]
        return s


def greedy_order(sentence_tokens: Sequence[Sequence[str]], summary_tokens: Sequence[str]) -> Iterator[int]:
    """Yield sentence indices in greedy marginal-gain order (ties go to the earlier one)."""
    state = _RecallState(summary_tokens)
    remaining = list(range(len(sentence_tokens)))
    while remaining:
        best, best_gain = remaining[0], -1.0
        for i in remaining:
            g = state.gain(sentence_tokens[i])
            if g > best_gain + 1e-12:
                best, best_gain = i, g
        yield best
        remaining.remove(best)
        state.add(sentence_tokens[best])


def select_sentences(
    index: SentenceIndex, summary: str, max_tokens: int
) -> tuple[list[int], bool]:
    """Greedy selection under a token budget.

    Returns the selected sentence indices in selection order and whether the first
    pick had to be truncated because it alone exceeds the budget. Selection stops at
    the first sentence that would push the total past ``max_tokens``.
    """
    toks = [s.tokens for s in index]
    chosen: list[int] = []
    used = 0
    for i in greedy_order(toks, tokenize(summary)):
        if used + len(toks[i]) > max_tokens:
            if not chosen:
                return [i], True
            break
        chosen.append(i)
        used += len(toks[i])
    return chosen, False


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    words = []
    used = 0
    for word in text.split():
        n = len(tokenize(word))
        if used + n > max_tokens:
            break
        words.append(word)
        used += n
    return " ".join(words)


def align_document(document: str, summary: str, config: AlignmentConfig = AlignmentConfig()) -> str:
    if len(tokenize(document)) <= config.max_context_tokens:
        return document
    index = split_sentences(document)
    chosen, truncated = select_sentences(index, summary, config.max_context_tokens)
    if truncated:
        return truncate_to_tokens(index[chosen[0]].text, config.max_context_tokens)
    return " ".join(index[i].text for i in sorted(chosen))


def rank_by_recall(index: SentenceIndex, text: str) -> list[int]:
    ref = tokenize(text)
    scores = [combined_recall(s.tokens, ref) for s in index]
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def align_window(document: str, window_text: str, config: AlignmentConfig = AlignmentConfig()) -> str:
    index = split_sentences(document)
    top = rank_by_recall(index, window_text)[: config.per_window_sentences]
    return " ".join(index[i].text for i in sorted(top))
