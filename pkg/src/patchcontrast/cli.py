"""Command-line interface: one executable, one subcommand per pipeline stage.

Subcommands: synth, split, pretrain, probe, scratch, eval, cluster, gradcheck.
Training commands read a flat key=value config file (``--config``) and accept
a same-named flag for every key; precedence is flags > file > defaults. Each
run writes its outputs plus the resolved config under a run directory named
by config hash and timestamp (or exactly ``--out`` when given).

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import fields, replace

import numpy as np

from . import gradcheck
from .corpus import (
    CorpusConfig,
    SplitSpec,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
    split_by_section,
    validate_corpus,
)
from .errors import ConfigError, Error, TrainingError
from .evaluate import (
    cluster_composition,
    compute_metrics,
    embed_2d,
    ward_cluster,
    write_cluster_csv,
    write_embedding_csv,
    write_metrics_csv,
)
from .trainer import (
    TrainConfig,
    coerce_config_value,
    evaluate_on_sections,
    load_checkpoint,
    make_model_config,
    parse_config_text,
    pretrain_contrastive,
    train_probe,
    train_scratch,
)


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage errors to 1
        raise _ArgumentError(message)


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())
    parser.add_argument("--corpus", required=True, help="corpus directory")
    parser.add_argument("--split", required=True, help="split JSON file")
    parser.add_argument("--out", help="output directory (default: runs/<hash>-<timestamp>)")


def _resolve_train_config(args) -> TrainConfig:
    config = TrainConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            config = parse_config_text(f.read(), config)
    overrides = {}
    for f in fields(TrainConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = coerce_config_value(f.name, str(raw))
    config = replace(config, **overrides)
    config.validate()
    return config


def _run_dir(args, config_hash: str) -> str:
    if args.out:
        path = args.out
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = os.path.join("runs", f"{config_hash[:12]}-{stamp}")
    os.makedirs(path, exist_ok=True)
    return path


def _emit_config(run_dir: str, config: TrainConfig) -> None:
    with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(config.to_text())


def _emit_resolved_args(directory: str, command: str, args, keys: list[str]) -> None:
    """Record the resolved flag values of a non-training command."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, f"{command}_config.txt"), "w", encoding="utf-8") as f:
        for key in keys:
            f.write(f"{key}={getattr(args, key)}\n")


def _write_runlog(run_dir: str, runlog) -> None:
    with open(os.path.join(run_dir, "runlog.csv"), "w", encoding="utf-8") as f:
        f.write(runlog.to_csv_text())


def cmd_synth(args) -> int:
    config = CorpusConfig(
        classes=args.classes,
        patches_per_class=args.per_class,
        side=args.side,
        brains=args.brains,
        sections_per_brain=args.sections_per_brain,
        seed=args.seed,
        resolution_um=args.resolution_um,
    )
    corpus = generate_synthetic_corpus(config)
    save_corpus(corpus, args.out)
    validate_corpus(corpus.manifest, corpus.store)
    _emit_resolved_args(
        args.out, "synth", args,
        ["classes", "per_class", "side", "brains", "sections_per_brain", "seed", "resolution_um"],
    )
    print(f"wrote {len(corpus)} patches ({config.classes} classes) to {args.out}")
    return 0


def cmd_split(args) -> int:
    corpus = load_corpus(args.corpus)
    split = split_by_section(
        corpus.manifest, args.train_fraction, seed=args.seed, holdout_brain=args.holdout_brain
    )
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(split.to_json() + "\n")
    with open(args.out + ".config.txt", "w", encoding="utf-8") as f:
        for key in ("corpus", "train_fraction", "holdout_brain", "seed"):
            f.write(f"{key}={getattr(args, key)}\n")
    print(
        f"wrote {args.out}: {len(split.train_sections)} train / "
        f"{len(split.test_sections)} test sections"
    )
    return 0


def _load_corpus_split(args):
    corpus = load_corpus(args.corpus)
    with open(args.split, encoding="utf-8") as f:
        split = SplitSpec.from_json(f.read())
    return corpus, split


def cmd_pretrain(args) -> int:
    config = _resolve_train_config(args)
    corpus, split = _load_corpus_split(args)
    run_dir = _run_dir(args, config.config_hash())
    _emit_config(run_dir, config)
    _, runlog = pretrain_contrastive(
        config, corpus, split,
        out_path=os.path.join(run_dir, "contrastive.ckpt"),
        resume_from=args.resume,
    )
    _write_runlog(run_dir, runlog)
    print(f"pretrained {config.epochs} epochs -> {run_dir}")
    return 0


def cmd_probe(args) -> int:
    config = _resolve_train_config(args)
    corpus, split = _load_corpus_split(args)
    encoder_params, _, _, _, _, _ = load_checkpoint(args.encoder)
    run_dir = _run_dir(args, config.config_hash())
    _emit_config(run_dir, config)
    params, runlog = train_probe(
        config, corpus, split, encoder_params, out_path=os.path.join(run_dir, "probe.ckpt")
    )
    _write_runlog(run_dir, runlog)
    model_config = make_model_config(config, corpus.manifest.class_count)
    block, _, _, _ = evaluate_on_sections(
        params, model_config, corpus, split.test_sections, config.patch_side, config.batch_size
    )
    write_metrics_csv(os.path.join(run_dir, "metrics.csv"), [("contrastive", "X_te", block)])
    print(f"probe top-1 {100 * block.top1:.2f}% -> {run_dir}")
    return 0


def cmd_scratch(args) -> int:
    config = _resolve_train_config(args)
    corpus, split = _load_corpus_split(args)
    run_dir = _run_dir(args, config.config_hash())
    _emit_config(run_dir, config)
    params, runlog = train_scratch(
        config, corpus, split,
        out_path=os.path.join(run_dir, "scratch.ckpt"),
        resume_from=args.resume,
    )
    _write_runlog(run_dir, runlog)
    model_config = make_model_config(config, corpus.manifest.class_count)
    block, _, _, _ = evaluate_on_sections(
        params, model_config, corpus, split.test_sections, config.patch_side, config.batch_size
    )
    write_metrics_csv(os.path.join(run_dir, "metrics.csv"), [("scratch", "X_te", block)])
    print(f"scratch top-1 {100 * block.top1:.2f}% -> {run_dir}")
    return 0


def cmd_eval(args) -> int:
    if args.pred:
        if not args.truth:
            raise ConfigError("eval with --pred also needs --truth")
        logits = np.loadtxt(args.pred, delimiter=",", ndmin=2)
        labels = np.loadtxt(args.truth, delimiter=",").astype(np.int64).reshape(-1)
        block = compute_metrics(logits, labels, k=args.k)
    elif args.checkpoint:
        if not (args.corpus and args.split):
            raise ConfigError("eval with --checkpoint also needs --corpus and --split")
        params, _, _, config, _, model_config = load_checkpoint(args.checkpoint)
        corpus, split = _load_corpus_split(args)
        block, _, _, _ = evaluate_on_sections(
            params, model_config, corpus, split.test_sections, config.patch_side, config.batch_size
        )
    else:
        raise ConfigError("eval needs either --pred/--truth CSVs or a --checkpoint")
    write_metrics_csv(args.out, [(args.model_name, args.dataset_name, block)])
    with open(args.out + ".config.txt", "w", encoding="utf-8") as f:
        for key in ("pred", "truth", "checkpoint", "corpus", "split", "k", "model_name", "dataset_name"):
            f.write(f"{key}={getattr(args, key)}\n")
    print(
        f"{args.model_name},{args.dataset_name}: f1 {100 * block.weighted_f1:.2f} "
        f"top1 {100 * block.top1:.2f} top3 {100 * block.top3:.2f} -> {args.out}"
    )
    return 0


def cmd_cluster(args) -> int:
    params, _, _, config, _, model_config = load_checkpoint(args.checkpoint)
    corpus, split = _load_corpus_split(args)
    _, features, labels, brains = evaluate_on_sections(
        params, model_config, corpus, split.test_sections, config.patch_side, config.batch_size
    )
    report = ward_cluster(features, args.k)
    table = cluster_composition(report, labels, top_m=args.top_m)
    os.makedirs(args.out, exist_ok=True)
    _emit_resolved_args(args.out, "cluster", args, ["checkpoint", "corpus", "split", "k", "top_m", "seed"])
    write_cluster_csv(os.path.join(args.out, "clusters.csv"), table, corpus.manifest.class_names)
    coords = embed_2d(features, seed=args.seed)
    write_embedding_csv(
        os.path.join(args.out, "embedding.csv"), coords, labels, brains, report.assignments
    )
    print(f"clustered {features.shape[0]} features into {args.k} clusters -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(trials=args.trials, seed=args.seed)
    width = max(len(name) for name in results)
    failed = []
    for name, err in results.items():
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name:<{width}}  max rel err {err:.3e}  {status}")
        if err >= gradcheck.TOLERANCE:
            failed.append(name)
    if failed:
        raise TrainingError(f"gradient checks failed: {', '.join(failed)}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="patchcontrast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--side", type=int, required=True)
    p.add_argument("--brains", type=int, default=3)
    p.add_argument("--sections-per-brain", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution-um", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="section-level train/test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--holdout-brain", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pretrain", help="contrastive pretraining")
    _train_flags(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear probe on a frozen encoder")
    _train_flags(p)
    p.add_argument("--encoder", required=True, help="pretrained checkpoint")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("scratch", help="end-to-end cross-entropy baseline")
    _train_flags(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_scratch)

    p = sub.add_parser("eval", help="metrics from logits CSV or a checkpoint")
    p.add_argument("--pred", help="logits CSV, one row per item")
    p.add_argument("--truth", help="labels CSV, one label per row")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--split")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--model-name", default="model")
    p.add_argument("--dataset-name", default="X_te")
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster", help="Ward clustering + 2D embedding export")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--top-m", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
