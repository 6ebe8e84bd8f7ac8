"""Synthetic corpora shared by the test modules."""
from __future__ import annotations

import random

from summfact.corpus import SummaryExample
from summfact.taxonomy import CANONICAL_ORDER, GoldLabel

WORDS = (
    "river council budget harbor engineer village report school market bridge station "
    "farmer museum storm garden teacher doctor festival library company"
).split()


def sentence(rng: random.Random, n_words: int, tag: str = "") -> str:
    words = [rng.choice(WORDS) for _ in range(n_words)]
    if tag:
        words.insert(rng.randrange(len(words) + 1), tag)
    return " ".join(words).capitalize() + "."


def example(
    ex_id: str,
    gold: GoldLabel,
    dataset_id: str = "FacEval",
    domain: str = "Dialogues",
    document: str = "The council approved the budget on Monday.",
    summary: str = "The council approved the budget.",
) -> SummaryExample:
    return SummaryExample(ex_id, dataset_id, domain, document, summary, gold)


def planted_corpus(n: int, seed: int = 0, windows: int = 3, target_words: int = 30):
    """Examples whose summary windows carry known error types.

    Every summary sentence has exactly ``target_words`` words and a unique tag
    word, so each sentence becomes one window. Returns (examples, answers) where
    ``answers`` maps each sentence to the types planted in it.
    """
    rng = random.Random(seed)
    examples, answers = [], {}
    for i in range(n):
        sents, union = [], set()
        for w in range(windows):
            tag = f"tag{i}x{w}"
            text = sentence(rng, target_words - 1, tag)
            types = set()
            if i % 2 == 1 and (w == 0 or rng.random() < 0.4):
                types = set(rng.sample(CANONICAL_ORDER, rng.randint(1, 2)))
            answers[text] = frozenset(types)
            union |= types
            sents.append(text)
        gold = GoldLabel.incorrect(union, typed=True) if union else GoldLabel.correct(typed=True)
        doc = " ".join(sentence(rng, 12) for _ in range(6))
        examples.append(SummaryExample(f"ex{i:04d}", "FacEval", "Dialogues", doc, " ".join(sents), gold))
    return examples, answers
