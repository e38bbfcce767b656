"""Tokenization, vocabulary, and the pre-trained embedding table."""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import FormatError
from .tensor import RngStream, Tensor

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
EMBED_INIT_RANGE = 0.05


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel leading/trailing punctuation
    off each word as one-character tokens.

    >>> tokenize("Great charger!")
    ['great', 'charger', '!']
    """
    tokens: list[str] = []
    for word in text.lower().split():
        start, end = 0, len(word)
        while start < end and _is_punct(word[start]):
            start += 1
        while end > start and _is_punct(word[end - 1]):
            end -= 1
        tokens.extend(word[:start])
        if start < end:
            tokens.append(word[start:end])
        tokens.extend(word[end:])
    return tokens


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        if self.id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise FormatError("vocabulary must start with the PAD and UNK entries")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise FormatError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()[:16]

    def save(self, path: Path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        return cls(lines[:-1] if lines and lines[-1] == "" else lines)


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 2) -> Vocabulary:
    """Tokens with frequency >= ``min_count``, most frequent first (ties
    lexicographic), after PAD and UNK."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count and tok not in (PAD_TOKEN, UNK_TOKEN)),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary([PAD_TOKEN, UNK_TOKEN, *kept])


@dataclass
class EmbeddingTable:
    matrix: Tensor
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def random_embeddings(vocab_size: int, dim: int, rng: RngStream, trainable: bool = True) -> EmbeddingTable:
    data = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(vocab_size, dim))
    data[PAD] = 0.0
    return EmbeddingTable(Tensor(data, requires_grad=trainable, name="embedding"), trainable)


def load_pretrained(path, vocab: Vocabulary, rng: RngStream, dim: int = 100,
                    trainable: bool = True) -> EmbeddingTable:
    """Build the embedding table from a GloVe-style text file.

    Rows for vocabulary tokens found in the file are copied verbatim; the rest
    are drawn uniformly from [-0.05, 0.05]. UNK becomes the mean of every vector
    read from the file and PAD is zeroed.
    """
    table = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(len(vocab), dim))
    total = np.zeros(dim)
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected token plus {dim} floats, got {len(parts) - 1} values")
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            total += vec
            loaded += 1
            idx = vocab.token_to_id.get(parts[0])
            if idx is not None and idx > UNK:
                table[idx] = vec
    if loaded:
        table[UNK] = total / loaded
    table[PAD] = 0.0
    return EmbeddingTable(Tensor(table, requires_grad=trainable, name="embedding"), trainable)


@dataclass
class TokenizedReview:
    token_ids: list[int]
    n: int  # word count before truncation

    def __len__(self) -> int:
        return len(self.token_ids)


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int = 400) -> TokenizedReview:
    if max_len < 7:
        raise ValueError(f"max_len must be >= 7, got {max_len}")
    return TokenizedReview([vocab.lookup(t) for t in tokens[:max_len]], len(tokens))
