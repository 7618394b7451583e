"""Command-line entry point: ingest, split, synthesize, train, evaluate, recommend.

Settings resolve in three layers: built-in defaults, then the matching
section of an INI file given with ``--config`` (``[train]``, ``[evaluate]``,
...; keys use underscores, e.g. ``latent_dim = 64``), then explicit flags.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from pathlib import Path

from relavar.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from relavar.corpus import load_corpus, save_corpus
from relavar.data import (
    SPLIT_RULES,
    TRANSITIONS,
    SplitRule,
    gen_synthetic,
    ingest,
    sparse_markov_matrix,
    split,
    synthetic_vocab,
)
from relavar.errors import ConfigError, DataError, RelavarError
from relavar.evaluation import MODES, EvalConfig, evaluate, recommend
from relavar.trainer import LOSSES, TrainConfig, Trainer

log = logging.getLogger("relavar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_config(path, section: str) -> dict:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return dict(parser[section]) if parser.has_section(section) else {}


def _coerce(value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        lowered = str(value).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot convert {value!r} to {kind.__name__}") from None


def _resolve(args, section: str, fields: dict[str, type], defaults: dict) -> dict:
    """defaults < config file section < explicit command-line flags."""
    resolved = dict(defaults)
    file_values = _read_config(getattr(args, "config", None), section)
    unknown = set(file_values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    for key, value in file_values.items():
        resolved[key] = _coerce(value, fields[key])
    for key, kind in fields.items():
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = _coerce(value, kind)
    return resolved


_TRAIN_FIELDS = {
    "latent_dim": int, "batch_size": int, "step_size": float, "momentum": float,
    "dropout": float, "epochs": int, "seed": int, "loss": str, "kl_weight": float,
    "gamma_train": int, "bptt_window": int, "shuffle": bool,
}
_EVAL_FIELDS = {"k": int, "gamma_eval": int, "mode": str, "seed": int}


def _train_config(args) -> TrainConfig:
    values = _resolve(args, "train", _TRAIN_FIELDS, TrainConfig().to_dict())
    return TrainConfig(**values)


def _eval_config(args, section: str = "evaluate") -> EvalConfig:
    values = _resolve(args, section, _EVAL_FIELDS, EvalConfig().__dict__)
    return EvalConfig(**values)


def _echo_config(name: str, values: dict) -> None:
    log.info("resolved %s config: %s", name, json.dumps(values, sort_keys=True))


def cmd_ingest(args) -> int:
    corpus = ingest(args.data, delimiter=args.delimiter, strict=args.strict)
    save_corpus(args.out, corpus.sessions, corpus.vocab)
    print(
        f"sessions={len(corpus.sessions)} items={corpus.vocab.m} events={corpus.n_events} "
        f"dropped_singletons={corpus.dropped_singletons} malformed_rows={corpus.malformed_rows}"
    )
    return EXIT_OK


def cmd_split(args) -> int:
    corpus = load_corpus(args.corpus)
    rule = SplitRule(args.split, cutoff=args.cutoff, n_test=args.n_test, fraction=args.fraction,
                     seed=args.seed if args.seed is not None else 0)
    train, test, filtered = split(corpus.sessions, rule)
    out = Path(args.out)
    train_path = out.with_name(out.name + ".train")
    test_path = out.with_name(out.name + ".test")
    save_corpus(train_path, train, corpus.vocab)
    save_corpus(test_path, test, corpus.vocab)
    print(f"train_sessions={len(train)} test_sessions={len(test)} filtered_test_events={filtered}")
    print(f"wrote {train_path} {test_path}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    seed = args.seed if args.seed is not None else 0
    matrix = sparse_markov_matrix(args.items, args.fanout, seed) if args.transition == "markov" else None
    sessions = gen_synthetic(args.items, args.sessions, (args.min_len, args.max_len), args.transition, seed, matrix)
    save_corpus(args.out, sessions, synthetic_vocab(args.items))
    print(f"sessions={len(sessions)} items={args.items} events={sum(len(s) for s in sessions)}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _train_config(args)
    eval_config = _eval_config(args) if args.validation else None
    corpus = load_corpus(args.corpus)
    ckpt_path = Path(args.checkpoint)
    if args.resume and ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path)
        if ckpt.vocab != corpus.vocab:
            raise DataError("corpus vocabulary does not match the checkpoint being resumed")
        trainer = ckpt.to_trainer()
        trainer.config.epochs = config.epochs
        config = trainer.config
        log.info("resuming from %s at epoch %d", ckpt_path, trainer.epoch)
    else:
        trainer = Trainer.create(corpus.vocab.m, config)
    _echo_config("train", config.to_dict())
    validation = load_corpus(args.validation) if args.validation else None
    if validation is not None and validation.vocab != corpus.vocab:
        raise DataError("validation corpus vocabulary does not match the training corpus")

    log_path = Path(args.log) if args.log else ckpt_path.with_name(ckpt_path.name + ".log.jsonl")
    mode = "a" if args.resume else "w"
    with log_path.open(mode) as log_fh:
        start = time.perf_counter()
        while trainer.epoch < config.epochs:
            report = trainer.train_epoch(corpus.sessions)
            line = {
                "epoch": report.epoch,
                "mean_loss": report.mean_loss,
                "mean_kl": report.mean_kl,
                "mean_data_loss": report.mean_data_loss,
                "steps": report.steps,
                "skipped_updates": report.skipped_updates,
                "wall_seconds": round(time.perf_counter() - start, 3),
            }
            if validation is not None and args.eval_every and report.epoch % args.eval_every == 0:
                val = evaluate(trainer.model, validation.sessions, eval_config)
                line[f"val_recall@{val.k}"] = val.recall_at_k
                line[f"val_mrr@{val.k}"] = val.mrr_at_k
            log_fh.write(json.dumps(line, sort_keys=True) + "\n")
            log_fh.flush()
            log.info("epoch %d loss=%.4f kl=%.4f", report.epoch, report.mean_loss, report.mean_kl)
    save_checkpoint(Checkpoint.from_trainer(trainer, corpus.vocab), ckpt_path)
    print(f"wrote checkpoint {ckpt_path} after {trainer.epoch} epochs")
    return EXIT_OK


def _vocab_diagnostic(a, b) -> str:
    if a.m != b.m:
        return f"checkpoint has {a.m} items, corpus has {b.m}"
    for i, (x, y) in enumerate(zip(a.raw_ids, b.raw_ids)):
        if x != y:
            return f"index {i}: checkpoint item {x!r} vs corpus item {y!r}"
    return "vocabularies differ"


def cmd_evaluate(args) -> int:
    config = _eval_config(args)
    _echo_config("evaluate", config.__dict__)
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    if ckpt.vocab != corpus.vocab:
        raise DataError(f"vocabulary mismatch between checkpoint and corpus: {_vocab_diagnostic(ckpt.vocab, corpus.vocab)}")
    report = evaluate(ckpt.model, corpus.sessions, config)
    sys.stdout.write(report.to_text())
    if args.out:
        txt, jsonl = report.write(args.out)
        print(f"wrote {txt} {jsonl}")
    return EXIT_OK


def cmd_recommend(args) -> int:
    config = _eval_config(args, "recommend")
    ckpt = load_checkpoint(args.checkpoint)
    items = []
    for raw in args.items:
        if raw not in ckpt.vocab:
            raise DataError(f"unknown item id {raw!r}")
        items.append(ckpt.vocab.index(raw))
    for idx, score in recommend(ckpt.model, items, args.k if args.k is not None else config.k, config):
        print(f"{ckpt.vocab.raw(idx)}\t{score:.6f}")
    return EXIT_OK


def _add_eval_flags(p) -> None:
    p.add_argument("--k", type=int)
    p.add_argument("--gamma-eval", dest="gamma_eval", type=int)
    p.add_argument("--mode", choices=MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relavar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a click-stream text file into a corpus file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", "--emit", dest="out", required=True)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="split a corpus into train and test corpora")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="prefix; writes <out>.train and <out>.test")
    p.add_argument("--split", choices=SPLIT_RULES, required=True)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("synthesize", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--items", type=int, default=50)
    p.add_argument("--sessions", type=int, default=200)
    p.add_argument("--min-len", dest="min_len", type=int, default=5)
    p.add_argument("--max-len", dest="max_len", type=int, default=15)
    p.add_argument("--transition", choices=TRANSITIONS, default="cyclic")
    p.add_argument("--fanout", type=int, default=3, help="successors per item for markov corpora")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--kl-weight", dest="kl_weight", type=float)
    p.add_argument("--gamma-train", dest="gamma_train", type=int)
    p.add_argument("--bptt-window", dest="bptt_window", type=int)
    p.add_argument("--shuffle", action="store_const", const=True)
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint if it exists")
    p.add_argument("--log", help="training log path (default <checkpoint>.log.jsonl)")
    p.add_argument("--validation", help="corpus evaluated every --eval-every epochs")
    p.add_argument("--eval-every", dest="eval_every", type=int, default=1)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compute Recall@K and MRR@K on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="prefix; writes <out>.txt and <out>.jsonl")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k items following a partial session")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("items", nargs="+", help="raw item ids of the session so far")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "train":
        # the resolved config is always logged, verbose or not
        log.setLevel(logging.INFO)
    try:
        return args.func(args)
    except RelavarError as exc:
        print(f"relavar: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, IndexError, KeyError) as exc:
        print(f"relavar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
