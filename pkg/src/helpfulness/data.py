"""Review corpora to labeled, split, serialized datasets.

D1 is a JSON-lines corpus of Amazon-style reviews labeled by their vote ratio.
D2 is a CSV of human-annotated scores used only for evaluation.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TypeVar


from .errors import ConfigurationError, CorpusFormatError, FormatError, UndefinedLabelError
from .tensor import rng_stream
from .text import TokenizedReview, Vocabulary, build_vocab, encode, tokenize

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "test", "validation")
DEFAULT_RATIOS = (0.7, 0.2, 0.1)
D2_COLUMNS = ("review_id", "category", "score", "text")

TEXT_KEYS = ("reviewText", "review_text", "text")
VOTE_KEYS = ("helpful", "helpful_votes")


@dataclass(frozen=True)
class RawReview:
    review_text: str
    helpful_votes: tuple[int, int]
    category: str
    review_id: str


@dataclass
class LabeledExample:
    tokens: TokenizedReview
    score: float
    category: str
    source: str = "D1"
    review_id: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "review_id": self.review_id,
            "category": self.category,
            "source": self.source,
            "score": self.score,
            "n": self.tokens.n,
            "token_ids": self.tokens.token_ids,
        }, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "LabeledExample":
        d = json.loads(line)
        return cls(TokenizedReview(list(d["token_ids"]), int(d["n"])), float(d["score"]),
                   d["category"], d["source"], d["review_id"])


@dataclass
class DatasetSplit:
    train: list
    test: list
    validation: list
    seed: int

    def parts(self) -> dict[str, list]:
        return {"train": self.train, "test": self.test, "validation": self.validation}


# -- D1 corpus ---------------------------------------------------------------------


def _first(record: dict, keys: Sequence[str]):
    for k in keys:
        if k in record:
            return record[k]
    return None


def _review_from_record(record: dict, default_category: str) -> RawReview:
    text = _first(record, TEXT_KEYS)
    votes = _first(record, VOTE_KEYS)
    if not isinstance(text, str):
        raise ValueError("missing review text")
    if (not isinstance(votes, (list, tuple)) or len(votes) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in votes)):
        raise ValueError("helpful votes must be a pair of integers")
    x, y = votes
    if x < 0 or y < 0 or x > y:
        raise ValueError(f"invalid vote pair {votes}")
    if "review_id" in record:
        review_id = str(record["review_id"])
    elif "reviewerID" in record and "asin" in record:
        review_id = f"{record['reviewerID']}/{record['asin']}"
    else:
        raise ValueError("missing review id")
    category = record.get("category") or default_category
    return RawReview(text, (x, y), str(category), review_id)


class ReviewStream:
    """Lazily parsed JSON-lines corpus.

    Malformed lines are skipped and counted in ``skipped``. Once iteration
    finishes, more than ``max_malformed`` of non-blank lines being malformed
    raises :class:`CorpusFormatError`.
    """

    def __init__(self, path, default_category: str = "unknown", max_malformed: float = 0.1):
        self.path = Path(path)
        with open(self.path, "rb"):
            pass
        self.default_category = default_category
        self.max_malformed = max_malformed
        self.total = 0
        self.skipped = 0

    def __iter__(self) -> Iterator[RawReview]:
        self.total = self.skipped = 0
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                self.total += 1
                try:
                    record = json.loads(line)
                    if not isinstance(record, dict):
                        raise ValueError("line is not a JSON object")
                    yield _review_from_record(record, self.default_category)
                except ValueError as exc:
                    self.skipped += 1
                    log.debug("%s:%d skipped: %s", self.path, lineno, exc)
        if self.total and self.skipped / self.total > self.max_malformed:
            raise CorpusFormatError(
                f"{self.path}: {self.skipped} of {self.total} lines malformed "
                f"(limit {self.max_malformed:.0%})")


def parse_reviews(path, default_category: str = "unknown") -> ReviewStream:
    return ReviewStream(path, default_category)


def label(raw: RawReview) -> float:
    """Helpfulness score X / Y from the vote pair."""
    x, y = raw.helpful_votes
    if y < 1:
        raise UndefinedLabelError(f"review {raw.review_id} has no votes")
    return x / y


def admit(raw: RawReview, tokenized: TokenizedReview, vote_threshold: int = 5, min_words: int = 7) -> bool:
    return raw.helpful_votes[1] >= vote_threshold and tokenized.n >= min_words


Item = TypeVar("Item")


def _largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    # exact rationals so that e.g. 12 * 0.7 ties 12 * 0.2 on the remainder
    fracs = [Fraction(str(r)) for r in ratios]
    quotas = [total * f / sum(fracs) for f in fracs]
    counts = [int(q) for q in quotas]
    by_remainder = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split(examples: Sequence[Item], seed: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> DatasetSplit:
    """Seeded shuffle, then contiguous train/test/validation partition sized by
    largest remainder."""
    if len(examples) < 10:
        raise ConfigurationError(f"need at least 10 examples to split, got {len(examples)}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigurationError(f"split ratios must be three non-negative numbers, got {ratios}")
    order = rng_stream(seed).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    n_train, n_test, _ = _largest_remainder(len(examples), ratios)
    return DatasetSplit(shuffled[:n_train], shuffled[n_train:n_train + n_test],
                        shuffled[n_train + n_test:], seed)


# -- D2 annotated file -------------------------------------------------------------


def load_annotated(path, vocab: Vocabulary, max_len: int = 400, min_words: int = 7) -> list[LabeledExample]:
    """Read the human-annotated CSV (header ``review_id,category,score,text``).

    No vote filter applies; reviews shorter than ``min_words`` tokens are dropped.
    """
    examples: list[LabeledExample] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return examples
        missing = [c for c in D2_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: header lacks columns {missing}")
        for row_no, row in enumerate(reader, start=1):
            try:
                score = float(row["score"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: row {row_no}: score {row['score']!r} is not a number") from exc
            if not 0.0 <= score <= 1.0:
                raise FormatError(f"{path}: row {row_no}: score {score} outside [0, 1]")
            tokens = tokenize(row["text"] or "")
            if len(tokens) < min_words:
                continue
            examples.append(LabeledExample(encode(tokens, vocab, max_len), score,
                                           row["category"], "D2", row["review_id"]))
    return examples


# -- ingestion -------------------------------------------------------------------------


@dataclass
class _Admitted:
    review_id: str
    category: str
    score: float
    tokens: list[str]


@dataclass
class IngestResult:
    split: DatasetSplit
    vocab: Vocabulary
    manifest: dict = field(default_factory=dict)


def ingest(paths: Iterable, seed: int = 0, vote_threshold: int = 5, min_words: int = 7,
           min_count: int = 2, max_len: int = 400, ratios: Sequence[float] = DEFAULT_RATIOS,
           default_category: str = "unknown") -> IngestResult:
    """Filter, label, deduplicate and split D1 corpora; build the vocabulary from
    the training split and encode everything with it."""
    admitted: list[_Admitted] = []
    seen: set[str] = set()
    stats = {"lines": 0, "malformed": 0, "rejected_votes": 0, "rejected_length": 0, "duplicates": 0}
    for path in paths:
        stream = parse_reviews(path, default_category)
        for raw in stream:
            tokens = tokenize(raw.review_text)
            if raw.helpful_votes[1] < vote_threshold:
                stats["rejected_votes"] += 1
                continue
            if not admit(raw, TokenizedReview([], len(tokens)), vote_threshold, min_words):
                stats["rejected_length"] += 1
                continue
            if raw.review_id in seen:
                stats["duplicates"] += 1
                continue
            seen.add(raw.review_id)
            admitted.append(_Admitted(raw.review_id, raw.category, label(raw), tokens))
        stats["lines"] += stream.total
        stats["malformed"] += stream.skipped

    parts = split(admitted, seed, ratios)
    vocab = build_vocab((a.tokens for a in parts.train), min_count)
    encoded = {
        name: [LabeledExample(encode(a.tokens, vocab, max_len), a.score, a.category, "D1", a.review_id)
               for a in items]
        for name, items in parts.parts().items()
    }
    categories = sorted({a.category for a in admitted})
    manifest = {
        "seed": seed,
        "filters": {"vote_threshold": vote_threshold, "min_words": min_words},
        "min_count": min_count,
        "max_len": max_len,
        "split_ratios": list(ratios),
        "stats": stats,
        "admitted": len(admitted),
        "counts": {
            name: {c: sum(1 for ex in items if ex.category == c) for c in categories}
            for name, items in encoded.items()
        },
        "vocab_size": len(vocab),
        "vocab_fingerprint": vocab.fingerprint(),
    }
    return IngestResult(DatasetSplit(encoded["train"], encoded["test"], encoded["validation"], seed),
                        vocab, manifest)


def write_dataset(out_dir, result: IngestResult, extra_manifest: Optional[dict] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, items in result.split.parts().items():
        with open(out / f"{name}.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for ex in items:
                fh.write(ex.to_json() + "\n")
    result.vocab.save(out / "vocab.txt")
    manifest = {**result.manifest, **(extra_manifest or {})}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_split(data_dir, name: str) -> list[LabeledExample]:
    if name not in SPLIT_NAMES:
        raise ConfigurationError(f"unknown split {name!r}")
    with open(Path(data_dir) / f"{name}.jsonl", encoding="utf-8") as fh:
        return [LabeledExample.from_json(line) for line in fh if line.strip()]


def read_manifest(data_dir) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text(encoding="utf-8"))
