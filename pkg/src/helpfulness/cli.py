"""Command-line entry point: ingest, train, eval, predict, verify (plus compare
and synth helpers).

Exit codes: 0 success, 1 verification/evaluation/training failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Optional, Sequence, TextIO

import numpy as np

from . import data as D
from .config import CONFIG_KEYS, RunConfig, build_config, coerce
from .errors import ConfigurationError, FormatError, HelpfulnessError, NumericError
from .errors import UndefinedCorrelationError
from .evaluation import EvalReport, compare_variants, cross_domain, cross_domain_label, evaluate, pearson
from .model import HelpfulnessModel, load_checkpoint, predict_batch, save_checkpoint, train_epoch
from .optim import adam_states
from .tensor import rng_stream
from .text import Vocabulary, encode, load_pretrained, random_embeddings, tokenize

log = logging.getLogger("helpfulness")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MODEL_KEYS = ("dim", "heads", "j", "channels", "filters", "dropout", "max_len", "scale_dim", "variant",
              "trainable_embeddings")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    overrides = {k: coerce(k, getattr(args, k)) for k in CONFIG_KEYS if getattr(args, k, None) is not None}
    return build_config(args.config, overrides)


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"no {what} path configured")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


# -- ingest ------------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    paths = [_require_file(p.strip(), "corpus") for p in cfg.corpus.split(",") if p.strip()]
    if not paths:
        raise UsageError("no corpus path configured (set corpus)")
    result = D.ingest(paths, seed=cfg.seed, vote_threshold=cfg.vote_threshold, min_words=cfg.min_words,
                      min_count=cfg.min_count, max_len=cfg.max_len, ratios=cfg.split,
                      default_category=cfg.corpus_category)
    D.write_dataset(cfg.data_dir, result, {"config_fingerprint": cfg.fingerprint(), "config": cfg.to_dict()})
    counts = result.manifest["counts"]
    print(f"admitted {result.manifest['admitted']} reviews into {cfg.data_dir}", file=out)
    for cat in sorted(counts["train"]):
        row = "  ".join(f"{name}={counts[name][cat]}" for name in D.SPLIT_NAMES)
        print(f"  {cat}: {row}", file=out)
    return EXIT_OK


# -- train ---------------------------------------------------------------------------------


def _format_r(r: Optional[float]) -> str:
    return "nan" if r is None else repr(r)


def _validation_r(model: HelpfulnessModel, examples) -> Optional[float]:
    if len(examples) < 2:
        return None
    pred = np.clip(predict_batch(model, [ex.tokens.token_ids for ex in examples]), 0.0, 1.0)
    try:
        return pearson(pred, [ex.score for ex in examples])
    except UndefinedCorrelationError:
        return None


def cmd_train(cfg: RunConfig, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    data_dir = Path(cfg.data_dir)
    if not (data_dir / "manifest.json").is_file():
        raise UsageError(f"no ingested dataset in {data_dir} (run ingest first)")
    manifest = D.read_manifest(data_dir)
    vocab = Vocabulary.load(data_dir / "vocab.txt")
    if vocab.fingerprint() != manifest["vocab_fingerprint"]:
        raise ConfigurationError(f"{data_dir}: vocab.txt does not match the manifest fingerprint")
    train = D.read_split(data_dir, "train")
    validation = D.read_split(data_dir, "validation")
    if cfg.train_category:
        wanted = cfg.train_category.casefold()
        train = [ex for ex in train if ex.category.casefold() == wanted]
        validation = [ex for ex in validation if ex.category.casefold() == wanted]
        if not train:
            raise ConfigurationError(f"no training examples in category {cfg.train_category!r}")

    init_rng = rng_stream(cfg.seed)
    model_cfg = cfg.model_config(len(vocab))
    if cfg.embeddings:
        emb = load_pretrained(_require_file(cfg.embeddings, "embeddings"), vocab, init_rng, cfg.dim,
                              cfg.trainable_embeddings)
    else:
        emb = random_embeddings(len(vocab), cfg.dim, init_rng, cfg.trainable_embeddings)
    model = HelpfulnessModel.initialize(model_cfg, init_rng, emb)
    states = adam_states(model.parameters(), cfg.learning_rate)
    train_rng = rng_stream(cfg.seed + 1)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = model.named_parameters(include_frozen=True)
    # best validation r wins; with no defined r at all the last epoch is kept
    best: Optional[dict] = None
    best_r, best_epoch = None, cfg.epochs
    lines = ["epoch\ttrain_loss\tval_r"]
    for epoch in range(1, cfg.epochs + 1):
        try:
            loss = train_epoch(model, train, cfg.batch_size, states, train_rng)
        except NumericError as exc:
            print(f"training diverged in epoch {epoch}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        val_r = _validation_r(model, validation)
        line = f"{epoch}\t{loss!r}\t{_format_r(val_r)}"
        lines.append(line)
        print(line, file=out)
        if val_r is not None and (best_r is None or val_r > best_r):
            best = {name: t.data.copy() for name, t in params.items()}
            best_r, best_epoch = val_r, epoch
    if best is not None:
        for name, t in params.items():
            t.data = best[name]

    (out_dir / "train_log.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg.write(out_dir / "config.txt")
    meta = {
        "run_config": cfg.to_dict(),
        "run_fingerprint": cfg.fingerprint(),
        "train_category": cfg.train_category,
        "best_epoch": best_epoch,
        "best_val_r": best_r,
        "train_examples": len(train),
    }
    save_checkpoint(out_dir / "model.ckpt", model, vocab, meta)
    print(f"checkpoint (epoch {best_epoch}) written to {out_dir / 'model.ckpt'}", file=out)
    return EXIT_OK


# -- eval -----------------------------------------------------------------------------------


def _check_fingerprint(cfg: RunConfig, header: dict) -> None:
    stored = header["meta"].get("run_config", {})
    stored_model = header["model_config"]
    for key in MODEL_KEYS:
        if key not in cfg.explicit:
            continue
        mine = cfg.to_dict()[key]
        theirs = stored.get(key, stored_model.get(key))
        if theirs is not None and mine != theirs:
            raise ConfigurationError(
                f"config/checkpoint fingerprint mismatch: {key}={mine!r} but checkpoint has {theirs!r}")


def parse_selector(selector: str) -> tuple[str, Optional[str], Optional[str]]:
    if selector in ("d1_test", "d2"):
        return selector, None, None
    if selector.startswith("cross:"):
        pair = selector[len("cross:"):]
        arrow = "→" if "→" in pair else "->"
        a, _, b = pair.partition(arrow)
        if a.strip() and b.strip():
            return "cross", a.strip(), b.strip()
    raise UsageError(f"unknown dataset selector {selector!r} (use d1_test, d2 or cross:A->B)")


def cmd_eval(cfg: RunConfig, checkpoint: str, selector: str, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    kind, cat_a, cat_b = parse_selector(selector)
    model, vocab, header = load_checkpoint(_require_file(checkpoint, "checkpoint"))
    _check_fingerprint(cfg, header)
    common = {"config_fingerprint": header["meta"].get("run_fingerprint", header["model_fingerprint"]),
              "seed": model.config.seed}
    if kind == "d1_test":
        manifest = D.read_manifest(cfg.data_dir)
        if manifest["vocab_fingerprint"] != header["vocab_fingerprint"]:
            raise ConfigurationError(
                f"config/checkpoint fingerprint mismatch: dataset {cfg.data_dir} was encoded with vocabulary "
                f"{manifest['vocab_fingerprint']}, checkpoint uses {header['vocab_fingerprint']}")
        report = evaluate(model, D.read_split(cfg.data_dir, "test"), "D1-test", **common)
        slug = "d1_test"
    else:
        d2 = D.load_annotated(_require_file(cfg.annotated, "annotated file"), vocab,
                              model.config.max_len, cfg.min_words)
        if kind == "d2":
            report = evaluate(model, d2, "D2", **common)
            slug = "d2"
        else:
            trained_on = header["meta"].get("train_category", "")
            if trained_on and trained_on.casefold() != cat_a.casefold():
                raise ConfigurationError(
                    f"checkpoint was trained on category {trained_on!r}, not {cat_a!r}")
            report = cross_domain(model, cat_a, d2, cat_b, **common)
            slug = re.sub(r"[^A-Za-z0-9]+", "_", cross_domain_label(cat_a, cat_b)).strip("_").lower()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"report_{slug}.json"
    path.write_text(report.to_json(), encoding="utf-8")
    print(report.to_text(), end="", file=out)
    print(f"report written to {path}", file=out)
    return EXIT_OK


# -- predict ---------------------------------------------------------------------------------


def cmd_predict(checkpoint: str, texts: Sequence[str], min_words: int = 7, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    model, vocab, _ = load_checkpoint(_require_file(checkpoint, "checkpoint"))
    encoded = []
    for line_no, text in enumerate(texts, start=1):
        tokens = tokenize(text)
        if len(tokens) < min_words:
            print(f"warning: line {line_no} has {len(tokens)} tokens (< {min_words}); "
                  f"scoring anyway", file=sys.stderr)
        encoded.append(encode(tokens, vocab, model.config.max_len).token_ids)
    if not encoded:
        return EXIT_OK
    for score in np.clip(predict_batch(model, encoded), 0.0, 1.0):
        print(f"{score:.4f}", file=out)
    return EXIT_OK


# -- verify -----------------------------------------------------------------------------------


def cmd_verify(cfg: RunConfig, corrupt: Optional[str] = None, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    from .verify import run_verification

    results = run_verification(cfg.model_config(vocab_size=2), cfg.seed, corrupt,
                               report=lambda r: print(r.line(), file=out, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_FAIL if failed else EXIT_OK


# -- helpers ---------------------------------------------------------------------------------


def cmd_compare(report_paths: Sequence[str], csv_path: Optional[str], out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    reports = [EvalReport.from_json(_require_file(p, "report").read_text(encoding="utf-8"))
               for p in report_paths]
    table = compare_variants(reports)
    print(table.to_text(), end="", file=out)
    if csv_path:
        Path(csv_path).write_text(table.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_synth(path: str, n: int, seed: int, category: str) -> int:
    from .synthetic import generate_records, write_corpus

    write_corpus(path, generate_records(n, seed, category))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    for key in CONFIG_KEYS:
        common.add_argument(f"--{key}", metavar="VALUE", default=None)

    parser = argparse.ArgumentParser(prog="helpfulness", description="Review helpfulness regression.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="filter, label and split a review corpus")
    sub.add_parser("train", parents=[common], help="train a model on an ingested dataset")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--select", required=True, help="d1_test, d2, or cross:A->B")
    p = sub.add_parser("predict", help="score review texts")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--text", help="a single review")
    src.add_argument("--file", help="one review per line")
    p.add_argument("--min_words", type=int, default=7)
    p = sub.add_parser("verify", parents=[common], help="run gradient and property checks")
    p.add_argument("--corrupt-grad", dest="corrupt_grad", help=argparse.SUPPRESS)
    p = sub.add_parser("compare", help="side-by-side table of eval reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--csv", help="also write the table as CSV")
    p = sub.add_parser("synth", help="write a synthetic review corpus")
    p.add_argument("path")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--category", default="Phone")
    return parser


def _read_texts(args) -> list[str]:
    if args.text is not None:
        return [args.text]
    if args.file is not None:
        return _require_file(args.file, "input file").read_text(encoding="utf-8").splitlines()
    return sys.stdin.read().splitlines()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "predict":
            return cmd_predict(args.checkpoint, _read_texts(args), args.min_words)
        if args.command == "compare":
            return cmd_compare(args.reports, args.csv)
        if args.command == "synth":
            return cmd_synth(args.path, args.n, args.seed, args.category)
        cfg = _config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.select)
        return cmd_verify(cfg, args.corrupt_grad)
    except UsageError as exc:
        parser.exit(EXIT_USAGE, f"{parser.prog}: error: {exc}\n")
    except (ConfigurationError, FormatError) as exc:
        parser.exit(EXIT_USAGE, f"{parser.prog}: error: {exc}\n")
    except OSError as exc:
        parser.exit(EXIT_USAGE, f"{parser.prog}: error: {exc}\n")
    except HelpfulnessError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK
