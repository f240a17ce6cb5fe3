"""Command-line surface: train, eval, predict, gen, inspect-graph.

Run configs are YAML documents with three sections (model, train, data);
unknown keys are rejected. Any leaf is overridable with repeated
`--set key=value` flags, using either a dotted path (train.lr=0.01) or a
bare leaf name when it is unambiguous (steps=0). Exit codes: 0 success,
2 usage/config/data error, 3 training divergence. DARER_LOG=debug|info
controls verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from .data import (
    ConfigError,
    CorpusError,
    build_token_vocab,
    gen_synthetic,
    load_corpus,
    remap_labels,
    split_corpus,
    write_corpus,
)
from .graphs import build_drtg, build_satg, export_dot
from .model import CheckpointError, DarerConfig, DarerModel, load_checkpoint, save_checkpoint
from .training import CONVENTIONS, DivergenceError, TrainConfig, evaluate, train, write_log

log = logging.getLogger("darer")


def _section_defaults(cls) -> dict:
    return {f.name: f.default for f in fields(cls)}


def default_run_config() -> dict:
    return {
        "model": _section_defaults(DarerConfig),
        "train": _section_defaults(TrainConfig),
        "data": {"train": None, "valid": None, "valid_fraction": None, "min_count": 1},
    }


def load_run_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh) or {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    config = default_run_config()
    for section, values in loaded.items():
        if section not in config:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in config[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            config[section][key] = value
    return config


def apply_overrides(config: dict, assignments: list[str]) -> None:
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        value = yaml.safe_load(raw)
        if "." in key:
            section, leaf = key.split(".", 1)
            if section not in config or leaf not in config[section]:
                raise ConfigError(f"unknown config key {key!r}")
        else:
            owners = [s for s, values in config.items() if key in values]
            if not owners:
                raise ConfigError(f"unknown config key {key!r}")
            if len(owners) > 1:
                raise ConfigError(f"ambiguous config key {key!r}; qualify as section.key")
            section, leaf = owners[0], key
        config[section][leaf] = value


def _build_configs(config: dict) -> tuple[DarerConfig, TrainConfig]:
    model_cfg = DarerConfig(**config["model"])
    train_cfg = TrainConfig(**config["train"])
    model_cfg.validate()
    train_cfg.validate()
    return model_cfg, train_cfg


def _load_training_corpora(data_cfg: dict):
    if not data_cfg["train"]:
        raise ConfigError("data.train must point at a corpus file")
    train_dialogs, vocab = load_corpus(data_cfg["train"])
    if not train_dialogs:
        raise CorpusError(f"training corpus {data_cfg['train']} is empty")
    if data_cfg["valid"]:
        valid_dialogs, valid_vocab = load_corpus(data_cfg["valid"])
        valid_dialogs = remap_labels(valid_dialogs, valid_vocab, vocab)
    elif data_cfg["valid_fraction"]:
        fraction = float(data_cfg["valid_fraction"])
        if not (0.0 < fraction < 1.0):
            raise ConfigError("data.valid_fraction must be in (0, 1)")
        valid_dialogs, train_dialogs = split_corpus(
            train_dialogs, (fraction, 1.0 - fraction), seed=0
        )
    else:
        raise ConfigError("provide data.valid or data.valid_fraction")
    if not valid_dialogs or not train_dialogs:
        raise CorpusError("validation split left an empty corpus")
    return train_dialogs, valid_dialogs, vocab


def _metric_payload(metrics, convention: str) -> dict:
    return {
        "convention": convention,
        "sentiment": {
            "precision": metrics.sentiment.precision,
            "recall": metrics.sentiment.recall,
            "f1": metrics.sentiment.f1,
        },
        "act": {
            "precision": metrics.act.precision,
            "recall": metrics.act.recall,
            "f1": metrics.act.f1,
        },
        "avg_f1": metrics.avg_f1,
    }


def _print_metrics(metrics, convention: str) -> None:
    print(f"convention: {convention}")
    print("task        precision    recall        f1")
    for name, task in (("sentiment", metrics.sentiment), ("act", metrics.act)):
        print(f"{name:<10}  {task.precision:9.4f}  {task.recall:8.4f}  {task.f1:8.4f}")
    print("METRICS " + json.dumps(_metric_payload(metrics, convention)))


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    apply_overrides(config, args.set or [])
    if args.seed is not None:
        config["train"]["seed"] = args.seed
    model_cfg, train_cfg = _build_configs(config)
    train_dialogs, valid_dialogs, label_vocab = _load_training_corpora(config["data"])
    token_vocab = build_token_vocab(train_dialogs, int(config["data"]["min_count"]))
    model = DarerModel(model_cfg, token_vocab, label_vocab, seed=train_cfg.seed)
    log.info(
        "training on %d dialogs (%d validation), %d parameters",
        len(train_dialogs), len(valid_dialogs), model.n_parameters(),
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)

    try:
        result = train(model, train_dialogs, valid_dialogs, train_cfg)
    except DivergenceError as exc:
        model.set_parameters(exc.result.best_params)
        save_checkpoint(model, out / "model.ckpt")
        write_log(out / "train_log.jsonl", exc.result.log)
        print(f"error: {exc} (last-good checkpoint written to {out})", file=sys.stderr)
        return 3

    save_checkpoint(model, out / "model.ckpt")
    write_log(out / "train_log.jsonl", result.log)
    print(f"best epoch: {result.best_epoch} (validation avg F1 {result.best_metric:.4f})")
    _print_metrics(evaluate(model, valid_dialogs, train_cfg.eval_convention),
                   train_cfg.eval_convention)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dialogs, corpus_vocab = load_corpus(args.corpus)
    if not dialogs:
        raise CorpusError(f"corpus {args.corpus} is empty")
    dialogs = remap_labels(dialogs, corpus_vocab, model.label_vocab)
    metrics = evaluate(model, dialogs, args.convention)
    _print_metrics(metrics, args.convention)
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dialogs, corpus_vocab = load_corpus(args.corpus)
    dialogs = remap_labels(dialogs, corpus_vocab, model.label_vocab)
    vocab = model.label_vocab
    lines = []
    for dialog in dialogs:
        sent_ids, act_ids = model.predict(dialog)
        lines.append(json.dumps({
            "id": dialog.id,
            "sentiment": [vocab.sentiment_names[i] for i in sent_ids],
            "act": [vocab.act_names[i] for i in act_ids],
        }))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out and args.out != "-":
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(lines)} predictions to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gen(args) -> int:
    dialogs, vocab = gen_synthetic(
        seed=args.seed if args.seed is not None else 0,
        n_dialogs=args.dialogs,
        n_utt_range=(args.min_utterances, args.max_utterances),
        n_speakers=args.speakers,
        vocab_size=args.vocab_size,
        noise=args.noise,
    )
    write_corpus(args.out, dialogs, vocab)
    n_utts = sum(len(d) for d in dialogs)
    print(f"wrote {len(dialogs)} dialogs ({n_utts} utterances) to {args.out}")
    sentiments = [0] * vocab.n_sentiments
    acts = [0] * vocab.n_acts
    for d in dialogs:
        for u in d.utterances:
            sentiments[u.sentiment] += 1
            acts[u.act] += 1
    print("sentiments: " + ", ".join(f"{n}={c}" for n, c in zip(vocab.sentiment_names, sentiments)))
    print("acts: " + ", ".join(f"{n}={c}" for n, c in zip(vocab.act_names, acts)))
    return 0


def cmd_inspect_graph(args) -> int:
    dialogs, _ = load_corpus(args.corpus)
    matches = [d for d in dialogs if d.id == args.dialog_id]
    if not matches:
        raise ConfigError(f"no dialog with id {args.dialog_id!r} in {args.corpus}")
    dialog = matches[0]
    n = len(dialog)
    if args.which == "satg":
        graph = build_satg(dialog, n_speakers=max(dialog.speakers))
        labels = [f"u{i + 1}" for i in range(n)]
    else:
        graph = build_drtg(n)
        labels = [f"s{i + 1}" for i in range(n)] + [f"a{i + 1}" for i in range(n)]
    dot = export_dot(graph, labels)
    if args.out and args.out != "-":
        Path(args.out).write_text(dot, encoding="utf-8")
        print(f"wrote {args.which} of dialog {dialog.id!r} to {args.out}")
    else:
        sys.stdout.write(dot)
    counts = graph.relation_counts()
    for r, count in enumerate(counts, start=1):
        print(f"r{r}: {count}")
    print(f"total edges: {sum(counts)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run config")
    p_train.add_argument("--config", required=True, help="YAML run config")
    p_train.add_argument("--set", action="append", metavar="K=V",
                         help="override a config leaf (repeatable)")
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--convention", choices=CONVENTIONS, default="macro")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="write per-utterance predictions")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--corpus", required=True)
    p_pred.add_argument("--out", default="-", help="output file, or - for stdout")
    p_pred.set_defaults(func=cmd_predict)

    p_gen = sub.add_parser("gen", help="generate a synthetic corpus")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--dialogs", type=int, required=True)
    p_gen.add_argument("--min-utterances", type=int, default=4)
    p_gen.add_argument("--max-utterances", type=int, default=10)
    p_gen.add_argument("--speakers", type=int, default=2)
    p_gen.add_argument("--vocab-size", type=int, default=60)
    p_gen.add_argument("--noise", type=float, default=0.1)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_graph = sub.add_parser("inspect-graph", help="export a dialog graph as DOT")
    p_graph.add_argument("--corpus", required=True)
    p_graph.add_argument("--dialog-id", required=True)
    p_graph.add_argument("--which", choices=("satg", "drtg"), required=True)
    p_graph.add_argument("--out", default="-", help="output file, or - for stdout")
    p_graph.set_defaults(func=cmd_inspect_graph)

    return parser


def main(argv=None) -> int:
    level = logging.DEBUG if os.environ.get("DARER_LOG", "").lower() == "debug" else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
