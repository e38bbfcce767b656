"""Correlation-based evaluation: per-category reports, cross-domain runs and
variant comparison tables."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError, DimensionError, UndefinedCorrelationError
from .model import HelpfulnessModel, predict_batch

OVERALL = "__overall__"


def pearson(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Sample Pearson correlation. Zero variance in either input raises
    :class:`UndefinedCorrelationError`; it is never reported as 0."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gold, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelationError(f"need at least 2 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def spearman(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Rank correlation (average ranks for ties)."""
    return pearson(rankdata(pred), rankdata(gold))


@dataclass
class CategoryResult:
    n: int
    pearson: Optional[float] = None
    spearman: Optional[float] = None
    status: str = "ok"  # ok | undefined | skipped


def score_category(pred: np.ndarray, gold: np.ndarray) -> CategoryResult:
    if len(pred) < 2:
        return CategoryResult(len(pred), status="skipped")
    try:
        return CategoryResult(len(pred), pearson(pred, gold), spearman(pred, gold))
    except UndefinedCorrelationError:
        return CategoryResult(len(pred), status="undefined")


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


@dataclass
class EvalReport:
    experiment_name: str
    per_category: dict[str, CategoryResult]
    overall: CategoryResult
    config_fingerprint: str = ""
    seed: int = 0
    timestamp: str = field(default_factory=_timestamp)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["per_category"] = {k: CategoryResult(**v) for k, v in d["per_category"].items()}
        d["overall"] = CategoryResult(**d["overall"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        rows = [(cat, res) for cat, res in sorted(self.per_category.items())] + [("overall", self.overall)]
        width = max(len("category"), *(len(c) for c, _ in rows))
        lines = [f"# {self.experiment_name}",
                 f"{'category':<{width}}  {'n':>6}  {'pearson':>8}  {'spearman':>8}"]
        for cat, res in rows:
            if res.status == "ok":
                lines.append(f"{cat:<{width}}  {res.n:>6}  {res.pearson:>8.4f}  {res.spearman:>8.4f}")
            else:
                lines.append(f"{cat:<{width}}  {res.n:>6}  {res.status:>8}  {res.status:>8}")
        return "\n".join(lines) + "\n"


def evaluate(model: HelpfulnessModel, examples: Sequence, experiment_name: str = "eval",
             config_fingerprint: str = "", seed: int = 0, metadata: Optional[dict] = None,
             batch_size: int = 64) -> EvalReport:
    """Inference-mode scores, clamped to [0, 1], correlated with gold per category.

    The model is only read.
    """
    if not examples:
        raise ConfigurationError("cannot evaluate on an empty example list")
    raw = predict_batch(model, [ex.tokens.token_ids for ex in examples], batch_size)
    pred = np.clip(raw, 0.0, 1.0)
    gold = np.array([ex.score for ex in examples], dtype=np.float64)
    categories = np.array([ex.category for ex in examples])
    per_category = {
        cat: score_category(pred[categories == cat], gold[categories == cat])
        for cat in sorted(set(categories.tolist()))
    }
    meta = {"clamped_to_unit_interval": True, "variant": model.config.variant,
            "trainable_embeddings": model.config.trainable_embeddings, **(metadata or {})}
    return EvalReport(experiment_name, per_category, score_category(pred, gold),
                      config_fingerprint, seed, metadata=meta)


def cross_domain_label(train_category: str, eval_category: str) -> str:
    return f"D1-{train_category} D2-{eval_category}"


def cross_domain(model: HelpfulnessModel, train_category: str, d2_examples: Sequence,
                 eval_category: str, **kwargs) -> EvalReport:
    """Evaluate a model trained on D1 ``train_category`` against D2
    ``eval_category``; the report is named ``"D1-A D2-B"``."""
    wanted = eval_category.casefold()
    chosen = [ex for ex in d2_examples if ex.category.casefold() == wanted]
    if not chosen:
        present = sorted({ex.category for ex in d2_examples})
        raise ConfigurationError(f"category {eval_category!r} not in annotated data (have {present})")
    meta = {"train_category": train_category, "eval_category": eval_category, **kwargs.pop("metadata", {})}
    return evaluate(model, chosen, cross_domain_label(train_category, eval_category), metadata=meta, **kwargs)


@dataclass
class ComparisonTable:
    columns: list[str]
    rows: list[tuple[str, list[Optional[float]]]]
    best: list[Optional[int]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", *self.columns, "best"])
        for (cat, values), best in zip(self.rows, self.best):
            writer.writerow([cat, *("" if v is None else f"{v:.6f}" for v in values),
                             "" if best is None else self.columns[best]])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [["category", *self.columns]]
        for (cat, values), best in zip(self.rows, self.best):
            row = [cat]
            for i, v in enumerate(values):
                text = "n/a" if v is None else f"{v:.4f}"
                row.append(text + ("*" if i == best else " "))
            cells.append(row)
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in cells]
        return "\n".join(lines) + "\n"


def compare_variants(reports: Sequence[EvalReport], metric: str = "pearson") -> ComparisonTable:
    """Side-by-side table over the categories every report covers; the best
    value in each row is marked."""
    if len(reports) < 2:
        raise ConfigurationError("comparison needs at least two reports")
    shared = set(reports[0].per_category)
    for rep in reports[1:]:
        shared &= set(rep.per_category)
    if not shared:
        raise ConfigurationError("reports share no categories")
    rows, best = [], []
    for cat in sorted(shared):
        values = [getattr(rep.per_category[cat], metric) for rep in reports]
        rows.append((cat, values))
        defined = [(v, i) for i, v in enumerate(values) if v is not None]
        best.append(max(defined, key=lambda t: (t[0], -t[1]))[1] if defined else None)
    return ComparisonTable([rep.experiment_name for rep in reports], rows, best)
