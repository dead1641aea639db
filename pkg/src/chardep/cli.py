"""Command-line entry points: train, parse, eval and mask."""

from __future__ import annotations

import os

# single-threaded BLAS keeps training byte-reproducible; must precede the numpy import
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import fields  # noqa: E402
from pathlib import Path  # noqa: E402

from .corpus_io import ConllError, EmbeddingFormatError, TreeError, load_embeddings, read_conll, write_conll  # noqa: E402
from .evaluation import MASK_PATTERNS, mask_corpus, normalize_pattern, oov_buckets, report, score  # noqa: E402
from .parser import ModelFormatError, NetConfig, TrainSchedule, load, parse_batch, save, train  # noqa: E402
from .representations import MODES, ReprConfig, normalize_mode  # noqa: E402

log = logging.getLogger("chardep")

# hyperparameter flag -> (owning config, field name)
_HYPER = {
    "steps": ("schedule", "max_steps"),
    "batch-size": ("schedule", "batch_size"),
    "eval-every": ("schedule", "eval_every"),
    "patience": ("schedule", "patience"),
    "lr": ("schedule", "lr"),
    "decay": ("schedule", "decay"),
    "decay-steps": ("schedule", "decay_steps"),
    "momentum": ("schedule", "momentum"),
    "l2": ("schedule", "l2"),
    "max-grad-norm": ("schedule", "max_grad_norm"),
    "log-every": ("schedule", "log_every"),
    "dropout": ("net", "dropout"),
    "token-dim": ("net", "token_dim"),
    "hidden1": ("net", "hidden1"),
    "hidden2": ("net", "hidden2"),
    "unk-replace": ("net", "unk_replace"),
    "word-dim": ("repr", "word_dim"),
    "tag-dim": ("repr", "tag_dim"),
    "label-dim": ("repr", "label_dim"),
    "char-dim": ("repr", "char_dim"),
    "kernel-lengths": ("repr", "kernel_lengths"),
    "channels": ("repr", "channels_per_kernel"),
    "char-length": ("repr", "char_length"),
    "lstm-hidden": ("repr", "lstm_hidden"),
}

_DEFAULTS = {
    "schedule": {f.name: f.default for f in fields(TrainSchedule)},
    "net": {f.name: f.default for f in fields(NetConfig)},
    "repr": {f.name: f.default for f in fields(ReprConfig)},
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _flag_type(group: str, name: str):
    if name == "kernel_lengths":
        return _int_list
    default = _DEFAULTS[group][name]
    return int if isinstance(default, int) and not isinstance(default, bool) else float


def _read_config_file(path: str) -> dict[str, str]:
    """``key = value`` lines; keys are flag names with or without dashes."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            key = key.lstrip("-").replace("_", "-")
            if key not in _HYPER and key not in ("mode", "seed"):
                raise UsageError(f"{path}:{n}: unknown setting {key!r}")
            out[key] = value
    return out


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chardep", description="Transition-based dependency parser with character-level word models.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on CoNLL data")
    t.add_argument("--mode", default=None, help=f"word representation: {', '.join(MODES)} (default WORD)")
    t.add_argument("--train", required=True, help="training CoNLL file")
    t.add_argument("--dev", required=True, help="development CoNLL file")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--log", help="training log (tab-separated; default OUT.log.tsv)")
    t.add_argument("--embeddings", help="pre-trained word vectors (text format), required for W2V modes")
    t.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    t.add_argument("--threads", type=int, default=1, help="threads for dev parsing (default 1)")
    t.add_argument("--config", help="file of key=value hyperparameters; flags override it")
    t.add_argument("--tag-column", type=int, default=4, help="0-based CoNLL column holding tags (default 4)")
    for flag, (group, name) in _HYPER.items():
        t.add_argument(f"--{flag}", type=_flag_type(group, name), default=None, help=f"default {_fmt_default(group, name)}")

    p = sub.add_parser("parse", help="parse a CoNLL file with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tag-column", type=int, default=4)

    e = sub.add_parser("eval", help="score predicted against gold trees")
    e.add_argument("gold")
    e.add_argument("pred")
    e.add_argument("--vocab", metavar="MODEL", help="model file whose training vocabulary defines IV/OOV buckets")
    e.add_argument("--tsv", help="also write the table as tab-separated values")

    m = sub.add_parser("mask", help="mask thirds of every word form")
    m.add_argument("input")
    m.add_argument("--pattern", required=True, help=f"one of {', '.join(MASK_PATTERNS)} ('_' may stand for the mask)")
    m.add_argument("--output", help="output file (default stdout)")
    return ap


def _fmt_default(group: str, name: str) -> str:
    value = _DEFAULTS[group][name]
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    return str(value)


def _train_settings(args) -> tuple[str, int, ReprConfig, NetConfig, TrainSchedule]:
    values: dict[str, dict] = {"schedule": {}, "net": {}, "repr": {}}
    mode, seed = "WORD", 0
    if args.config:
        for key, raw in _read_config_file(args.config).items():
            if key == "mode":
                mode = raw
            elif key == "seed":
                seed = int(raw)
            else:
                group, name = _HYPER[key]
                try:
                    values[group][name] = _flag_type(group, name)(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"{args.config}: bad value for {key}: {exc}") from None
    for flag, (group, name) in _HYPER.items():
        v = getattr(args, flag.replace("-", "_"))
        if v is not None:
            values[group][name] = v
    if args.mode is not None:
        mode = args.mode
    if args.seed is not None:
        seed = args.seed
    try:
        mode = normalize_mode(mode)
        repr_config = ReprConfig(mode=mode, **values["repr"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return mode, seed, repr_config, NetConfig(**values["net"]), TrainSchedule(**values["schedule"])


def cmd_train(args) -> int:
    mode, seed, repr_config, net, schedule = _train_settings(args)
    if repr_config.uses_pretrained and not args.embeddings:
        raise UsageError(f"--mode {mode} requires --embeddings")
    embeddings = None
    if args.embeddings:
        if not repr_config.uses_pretrained:
            log.warning("--embeddings ignored for mode %s", mode)
        else:
            with open(args.embeddings, encoding="utf-8") as fh:
                embeddings = load_embeddings(fh, expected_dim=repr_config.word_dim)
    train_set = _read(args.train, args.tag_column)
    dev_set = _read(args.dev, args.tag_column)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.tsv")
    columns = ["event", "step", "lr", "loss", "dev_las", "dev_uas", "best"]
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, columns, delimiter="\t", restval="")
        writer.writeheader()

        def on_log(row: dict) -> None:
            writer.writerow(row)
            fh.flush()
            if row["event"] == "eval":
                log.info("step %d  dev LAS %.4f  UAS %.4f%s", row["step"], row["dev_las"], row["dev_uas"], "  *" if row["best"] else "")

        result = train(train_set, dev_set, repr_config, schedule, net, seed, embeddings, on_log, args.threads)
    save(result.model, args.out)
    print(
        f"mode {mode}: {result.steps} steps ({result.stop_reason}); "
        f"best dev LAS {100 * result.best_las:.2f} at step {result.best_step}; "
        f"{result.instances} instances, {result.skipped} sentences skipped"
    )
    return 0


def cmd_parse(args) -> int:
    model = load(args.model)
    sentences = _read(args.input, args.tag_column)
    predicted = parse_batch(sentences, model, threads=args.threads)
    Path(args.output).write_text(write_conll(sentences, predicted), encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    gold = _read(args.gold)
    pred = _read(args.pred, single_root=False)
    predicted = [list(zip(s.heads, s.labels)) for s in pred]
    if args.vocab:
        result = oov_buckets(gold, predicted, load(args.vocab).vocab)
    else:
        result = score(gold, predicted)
    text, table = report([(Path(args.pred).name, result)])
    sys.stdout.write(text)
    if result.per_bucket:
        for bucket, (correct, total) in result.per_bucket.items():
            print(f"{bucket}: {correct}/{total} tokens correct")
    if args.tsv:
        Path(args.tsv).write_text(table, encoding="utf-8")
    return 0


def cmd_mask(args) -> int:
    try:
        pattern = normalize_pattern(args.pattern)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = write_conll(mask_corpus(_read(args.input), pattern))
    if args.output:
        Path(args.output).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return 0


def _read(path: str, tag_column: int = 4, single_root: bool = True):
    with open(path, encoding="utf-8") as fh:
        return read_conll(fh, tag_column=tag_column, single_root=single_root)


_COMMANDS = {"train": cmd_train, "parse": cmd_parse, "eval": cmd_eval, "mask": cmd_mask}


def main(argv: list[str] | None = None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        ap.error(str(exc))  # exits with status 2
    except (OSError, ConllError, TreeError, EmbeddingFormatError, ModelFormatError, ValueError) as exc:
        print(f"chardep {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
