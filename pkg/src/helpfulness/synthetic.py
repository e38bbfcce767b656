"""Synthetic review corpora with a planted phrase signal.

Reviews are strings of filler words. A review is "informative" when it contains
at least one cue bigram (e.g. ``"battery holds"``); the individual cue words
also appear on their own as distractors, so only the adjacent pair carries
signal. Vote counts are drawn binomially from a helpfulness rate that depends
on informativeness, giving X-of-Y labels with realistic noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import rng_stream

_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "st", "pl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]

CUE_BIGRAMS = (
    ("battery", "holds"),
    ("charges", "quickly"),
    ("solved", "problems"),
    ("highly", "recommend"),
    ("works", "perfectly"),
    ("clear", "instructions"),
)


def filler_words(count: int = 300, seed: int = 7) -> list[str]:
    rng = rng_stream(seed)
    words: list[str] = []
    seen = {w for pair in CUE_BIGRAMS for w in pair}
    while len(words) < count:
        syllables = rng.integers(1, 4)
        word = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                       for _ in range(syllables))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


@dataclass
class SyntheticSpec:
    min_words: int = 7
    max_words: int = 80
    cue_rate: float = 0.5
    helpful_rate: float = 0.8
    unhelpful_rate: float = 0.2
    distractor_rate: float = 0.08
    min_votes: int = 5
    max_votes: int = 40


def generate_records(n: int, seed: int, category: str = "Phone",
                     spec: SyntheticSpec = SyntheticSpec()) -> list[dict]:
    """``n`` corpus records in the JSON-lines schema ``parse_reviews`` reads."""
    rng = rng_stream(seed)
    vocab = filler_words()
    cue_words = [w for pair in CUE_BIGRAMS for w in pair]
    records = []
    for i in range(n):
        length = int(rng.integers(spec.min_words, spec.max_words + 1))
        words = [vocab[k] for k in rng.integers(len(vocab), size=length)]
        for pos in np.flatnonzero(rng.random(length) < spec.distractor_rate):
            words[pos] = cue_words[rng.integers(len(cue_words))]
        # a stray pair may have formed by chance; break it so only planted cues count
        for a in range(length - 1):
            if (words[a], words[a + 1]) in CUE_BIGRAMS:
                words[a + 1] = vocab[rng.integers(len(vocab))]
        informative = bool(rng.random() < spec.cue_rate)
        if informative:
            first, second = CUE_BIGRAMS[rng.integers(len(CUE_BIGRAMS))]
            at = int(rng.integers(length - 1))
            words[at], words[at + 1] = first, second
        rate = spec.helpful_rate if informative else spec.unhelpful_rate
        total = int(rng.integers(spec.min_votes, spec.max_votes + 1))
        helpful = int(rng.binomial(total, rate))
        records.append({
            "review_id": f"{category.lower()}-{seed}-{i:06d}",
            "category": category,
            "helpful": [helpful, total],
            "reviewText": " ".join(words) + ".",
        })
    return records


def write_corpus(path, records: Sequence[dict]) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
