"""Command-line entry points.

Subcommands: tokenize, pretrain, finetune, eval, verify, similarity.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .config import RunConfig, load_run_config
from .data import Record, bundled_corpus_path, load_jsonl, prepare_example, record_to_molecule
from .errors import CheckpointCorrupt, DataError, EmptyCorpus, InvalidConfig, MumoError, ParseError
from .model import MuMo, init_params
from .tokenizer import Vocab, build_vocab, tokenize, tokenize_chars
from .train import (
    embedding_similarity_report,
    finetune_binary,
    finetune_regression,
    gtk_embeddings,
    metrics_auroc,
    metrics_regression,
    predict_regression,
    predict_scores,
    pretrain_mlm,
)
from .tensor import Tensor
from .verify import run_all

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


def _str2bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="run-config JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("--use-graph", type=_str2bool, default=None, metavar="BOOL")
    p.add_argument("--use-geometry", type=_str2bool, default=None, metavar="BOOL")
    p.add_argument("--fusion-start", type=int, default=None)
    p.add_argument("--pooling", choices=("gtk", "mean", "max", "combo"), default=None)
    p.add_argument("--tokenizer", choices=("substructure", "char"), default=None)
    p.add_argument("--injection", choices=("progressive", "fixed"), default=None)
    p.add_argument("--layers", type=int, default=None, help="override model.n_layers")


def _resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.precision is not None:
        cfg.precision = args.precision
    if getattr(args, "tokenizer", None) is not None:
        cfg.tokenizer = args.tokenizer
    if getattr(args, "use_graph", None) is not None:
        cfg.model.use_graph = args.use_graph
    if getattr(args, "use_geometry", None) is not None:
        cfg.model.use_geometry = args.use_geometry
    if getattr(args, "fusion_start", None) is not None:
        cfg.model.fusion_start = args.fusion_start
    if getattr(args, "pooling", None) is not None:
        cfg.model.pooling = args.pooling
    if getattr(args, "injection", None) is not None:
        cfg.model.progressive = args.injection == "progressive"
    if getattr(args, "layers", None) is not None:
        cfg.model.n_layers = args.layers
    return cfg


def _dtype(cfg: RunConfig):
    return np.float64 if cfg.precision == "f64" else np.float32


def _load_records(path: str) -> list[Record]:
    return load_jsonl(path or bundled_corpus_path())


def _build_or_load_vocab(cfg: RunConfig, records: list[Record]) -> Vocab:
    if cfg.data.vocab and os.path.exists(cfg.data.vocab):
        return Vocab.load(cfg.data.vocab)
    return build_vocab([r.smiles for r in records], char_level=cfg.tokenizer == "char")


def _prepare(cfg: RunConfig, records: list[Record], vocab: Vocab):
    from .unigraph import GraphConfig
    gcfg = GraphConfig(radius_cutoff=cfg.data.radius_cutoff,
                       strict_geometry=cfg.data.strict_geometry)
    return [prepare_example(r, vocab, cfg.model, gcfg=gcfg,
                            char_level=cfg.tokenizer == "char") for r in records]


def cmd_tokenize(args) -> int:
    cfg = _resolve_config(args)
    records = _load_records(args.input)
    fn = tokenize_chars if cfg.tokenizer == "char" else tokenize
    vocab = build_vocab([r.smiles for r in records], char_level=cfg.tokenizer == "char")
    vocab.save(args.vocab)
    histogram: dict[int, int] = {}
    total = 0
    for r in records:
        n = len(fn(r.smiles))
        total += n
        histogram[n] = histogram.get(n, 0) + 1
    stats = {
        "molecules": len(records),
        "vocab_size": vocab.size,
        "total_tokens": total,
        "length_histogram": {str(k): histogram[k] for k in sorted(histogram)},
    }
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    records = _load_records(cfg.data.train)
    vocab = _build_or_load_vocab(cfg, records)
    cfg.model.vocab_size = vocab.size
    cfg.model.validate()
    os.makedirs(cfg.data.output_dir, exist_ok=True)
    vocab.save(os.path.join(cfg.data.output_dir, "vocab.json"))
    set_precision = _dtype(cfg)
    with T.precision(set_precision):
        model = MuMo(cfg.model, init_params(cfg.model, cfg.seed), trainable=True,
                     dtype=set_precision)
        examples = _prepare(cfg, records, vocab)
        log = pretrain_mlm(
            model, examples, vocab.size,
            steps=cfg.pretrain.steps, lr=cfg.pretrain.lr, warmup=cfg.pretrain.warmup,
            batch_size=cfg.pretrain.batch_size, seed=cfg.seed,
            mask_ratio=cfg.pretrain.mask_ratio,
            log_path=os.path.join(cfg.data.output_dir, "train_log.jsonl"),
            checkpoint_every=cfg.pretrain.checkpoint_every, out_dir=cfg.data.output_dir)
        model.to_checkpoint().save(os.path.join(cfg.data.output_dir, "final.mumo"))
    with open(os.path.join(cfg.data.output_dir, "config_echo.json"), "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2)
    print(json.dumps({"steps": len(log), "initial_loss": log[0]["loss"],
                      "final_loss": log[-1]["loss"],
                      "output_dir": cfg.data.output_dir}, indent=2))
    return EXIT_OK


def _split_head(ckpt: Checkpoint):
    model_entries, head_entries = Checkpoint(), {}
    for name, value in ckpt.entries.items():
        if name.startswith("head."):
            head_entries[name] = value
        else:
            model_entries[name] = value
    return model_entries, head_entries


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    records = _load_records(cfg.data.train)
    if any(r.label is None for r in records):
        raise DataError("finetuning needs a label on every record")
    vocab = _build_or_load_vocab(cfg, records)
    cfg.model.vocab_size = vocab.size
    cfg.model.validate()
    dtype = _dtype(cfg)
    with T.precision(dtype):
        if args.checkpoint:
            ckpt, _ = _split_head(Checkpoint.load(args.checkpoint))
        else:
            ckpt = init_params(cfg.model, cfg.seed)
        model = MuMo(cfg.model, ckpt, trainable=True, dtype=dtype)
        examples = _prepare(cfg, records, vocab)
        rng = np.random.default_rng(cfg.seed)
        order = rng.permutation(len(examples))
        n_hold = max(1, int(len(examples) * cfg.finetune.holdout_fraction))
        hold = [examples[i] for i in order[:n_hold]]
        trainset = [examples[i] for i in order[n_hold:]]
        task = args.task or cfg.finetune.task
        if task == "regression":
            fit = finetune_regression(model, trainset, epochs=cfg.finetune.epochs,
                                      lr=cfg.finetune.lr, batch_size=cfg.finetune.batch_size,
                                      seed=cfg.seed, warmup=cfg.finetune.warmup)
            preds = predict_regression(model, fit, hold)
            targets = np.asarray([e.record.label for e in hold], dtype=np.float64)
            report = metrics_regression(preds, targets)
        elif task == "binary":
            fit = finetune_binary(model, trainset, epochs=cfg.finetune.epochs,
                                  lr=cfg.finetune.lr, batch_size=cfg.finetune.batch_size,
                                  seed=cfg.seed, warmup=cfg.finetune.warmup)
            scores = predict_scores(model, fit, hold)
            targets = np.asarray([e.record.label for e in hold])
            report = {"auroc": metrics_auroc(scores, targets)}
        else:
            raise InvalidConfig(f"unsupported task {task!r}")
        out = model.to_checkpoint()
        for name, p in fit.head.items():
            out[name] = p.data.astype(np.float32)
        out["head.label_mean"] = np.asarray([fit.label_mean], dtype=np.float32)
        out["head.label_std"] = np.asarray([fit.label_std], dtype=np.float32)
    os.makedirs(cfg.data.output_dir, exist_ok=True)
    out.save(os.path.join(cfg.data.output_dir, "finetuned.mumo"))
    report["task"] = task
    with open(os.path.join(cfg.data.output_dir, "eval.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    records = _load_records(args.input or cfg.data.train)
    if any(r.label is None for r in records):
        raise DataError("evaluation needs a label on every record")
    vocab = _build_or_load_vocab(cfg, records)
    cfg.model.vocab_size = vocab.size
    cfg.model.validate()
    dtype = _dtype(cfg)
    task = args.task or cfg.finetune.task
    with T.precision(dtype):
        model_ckpt, head_entries = _split_head(Checkpoint.load(args.checkpoint))
        if not head_entries:
            raise CheckpointCorrupt("checkpoint has no task head; run finetune first")
        model = MuMo(cfg.model, model_ckpt, trainable=False, dtype=dtype)
        head = {name: Tensor(value.astype(dtype))
                for name, value in head_entries.items() if name in ("head.w", "head.b")}
        from .train import FitResult
        fit = FitResult(head=head,
                        label_mean=float(head_entries.get("head.label_mean", [0.0])[0]),
                        label_std=float(head_entries.get("head.label_std", [1.0])[0]),
                        losses=[])
        examples = _prepare(cfg, records, vocab)
        if task == "regression":
            preds = predict_regression(model, fit, examples)
            targets = np.asarray([e.record.label for e in examples], dtype=np.float64)
            report = metrics_regression(preds, targets)
        elif task == "binary":
            scores = predict_scores(model, fit, examples)
            targets = np.asarray([e.record.label for e in examples])
            report = {"auroc": metrics_auroc(scores, targets)}
        else:
            raise InvalidConfig(f"unsupported task {task!r}")
    report["task"] = task
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed if args.seed is not None else 0)
    ok = True
    for r in results:
        print(r.line())
        ok = ok and r.passed
    print("verification:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_similarity(args) -> int:
    cfg = _resolve_config(args)
    if args.pairs <= 0:
        raise DataError("--pairs must be positive")
    records = _load_records(args.input)
    vocab = _build_or_load_vocab(cfg, records)
    cfg.model.vocab_size = vocab.size
    dtype = _dtype(cfg)
    with T.precision(dtype):
        if args.checkpoint:
            ckpt, _ = _split_head(Checkpoint.load(args.checkpoint))
        else:
            ckpt = init_params(cfg.model, cfg.seed)
        model = MuMo(cfg.model, ckpt, trainable=False, dtype=dtype)
        examples = _prepare(cfg, records, vocab)
        rng = np.random.default_rng(cfg.seed)
        order = rng.permutation(len(examples))
        groups = np.array_split(order, 5)
        per_metric: dict[str, list[float]] = {}
        for split_id, group in enumerate(groups):
            subset = [examples[i] for i in group]
            if len(subset) < 2:
                continue
            emb = gtk_embeddings(model, subset)
            table = {id(subset[k].molecule): emb[k] for k in range(len(subset))}
            report = embedding_similarity_report(
                lambda m: table[id(m)], [e.molecule for e in subset],
                n_pairs=args.pairs, seed=cfg.seed * 17 + split_id)
            for name, vals in report.items():
                per_metric.setdefault(name, []).append(vals["abs_r"])
    summary = {name: {"mean_abs_r": float(np.mean(vals)), "std_abs_r": float(np.std(vals))}
               for name, vals in per_metric.items()}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mumo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="build a vocabulary and token statistics")
    p.add_argument("--input", required=True, help="JSONL corpus")
    p.add_argument("--vocab", required=True, help="output vocab JSON")
    _add_common_flags(p)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("pretrain", help="masked-token pretraining")
    _add_common_flags(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning + holdout metrics")
    p.add_argument("--checkpoint", default=None, help="pretrained checkpoint to start from")
    p.add_argument("--task", choices=("regression", "binary"), default=None)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="metric report for a finetuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default=None, help="JSONL with labels (default: config data.train)")
    p.add_argument("--task", choices=("regression", "binary"), default=None)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run the acceptance verification suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("similarity", help="embedding vs fingerprint similarity report")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", default=None, help="JSONL corpus (default: bundled)")
    p.add_argument("--pairs", type=int, required=True)
    _add_common_flags(p)
    p.set_defaults(fn=cmd_similarity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.fn(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, EmptyCorpus, CheckpointCorrupt, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MumoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
