"""Command-line entry points.

Commands: synth, build-dataset, pretrain, finetune, eval, inspect. Every
command resolves its configuration (file < --set overrides < dedicated
flags), validates inputs before doing work, and writes a frozen
config.resolved.json next to its outputs. Failures after partial output
leave a .failed sentinel in the output directory.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig
from .corpus import (
    CorpusFormatError,
    load_corpus,
    tree_checksum,
    write_corpus,
)
from .dataset import DatasetError, Split, build_split_pairs, split_by_app
from .finetune import TaskError, eval_task
from .metrics import write_report
from .model import FeatureCache, UIModel
from .pretrain import (
    PretrainHeads,
    evaluate_pairs,
    load_into,
    metrics_jsonl_sink,
    run_pretraining,
)
from .shards import ShardError, load_dataset_dir, write_dataset_dir
from .synth import GenerationError, generate_corpus
from .transformer import ModelConfig, NumericError, glorot_init

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataPathError(ValueError):
    pass


def _apply_threads(cfg_threads: int, flag_threads: Optional[int]) -> int:
    import torch

    threads = flag_threads
    if threads is None:
        env = os.environ.get("TRACEFORM_THREADS")
        threads = int(env) if env else cfg_threads
    if threads and threads > 0:
        torch.set_num_threads(threads)
        return threads
    return torch.get_num_threads()


def _resolve_config(args: argparse.Namespace, extra: dict | None = None) -> RunConfig:
    overrides = dict(extra or {})
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = raw
    return RunConfig.resolve(args.config, overrides)


def _write_snapshot(out_dir: Path, cfg: RunConfig, command: str, inputs: dict) -> None:
    snapshot = {
        "command": command,
        "traceform_version": __version__,
        "config": cfg.values,
        "inputs": inputs,
    }
    (out_dir / "config.resolved.json").write_text(
        json.dumps(snapshot, sort_keys=True, indent=1) + "\n"
    )


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataPathError(f"{what} directory {p} does not exist")
    return p


# ------------------------------------------------------------------ commands


def cmd_synth(args: argparse.Namespace) -> int:
    extra = {}
    if args.seed is not None:
        extra["seed.corpus"] = args.seed
    cfg = _resolve_config(args, extra)
    threads = _apply_threads(cfg["threads"], args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen_cfg = cfg.generator_config()
    logger.info("synthesizing corpus: %d apps, %d threads", gen_cfg.n_apps, threads)
    corpus = generate_corpus(gen_cfg, cfg["seed.corpus"])
    write_corpus(corpus, out)
    _write_snapshot(out, cfg, "synth", inputs={})
    print(json.dumps({"corpus": str(out), "checksum": tree_checksum(out)}))
    return EXIT_OK


def cmd_build_dataset(args: argparse.Namespace) -> int:
    extra = {}
    if args.split_seed is not None:
        extra["seed.split"] = args.split_seed
    if args.pair_seed is not None:
        extra["seed.pairs"] = args.pair_seed
    if args.mask_rate is not None:
        extra["data.mask_rate"] = args.mask_rate
    cfg = _resolve_config(args, extra)
    _apply_threads(cfg["threads"], args.threads)
    corpus_dir = _require_dir(args.corpus, "corpus")
    corpus = load_corpus(corpus_dir)
    corpus_digest = tree_checksum(corpus_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        split = split_by_app([a.spec.app_id for a in corpus.apps], cfg["seed.split"])
        per_split = build_split_pairs(
            {a.spec.app_id: a.traces for a in corpus.apps},
            split,
            pair_seed=cfg["seed.pairs"],
            mask_rate=cfg["data.mask_rate"],
        )
        write_dataset_dir(
            out,
            per_split,
            split,
            corpus_path=str(corpus_dir),
            corpus_checksum=corpus_digest,
            seeds={"split": cfg["seed.split"], "pairs": cfg["seed.pairs"]},
            mask_rate=cfg["data.mask_rate"],
        )
        _write_snapshot(out, cfg, "build-dataset", {"corpus_checksum": corpus_digest})
    except Exception:
        (out / ".failed").write_text("build-dataset failed\n")
        raise
    counts = {k: len(v) for k, v in per_split.items()}
    print(json.dumps({"dataset": str(out), "counts": counts}))
    return EXIT_OK


def _load_training_world(dataset_dir: Path, corpus_override: Optional[str]):
    manifest, per_split = load_dataset_dir(dataset_dir)
    corpus_path = Path(corpus_override) if corpus_override else Path(manifest["corpus"])
    if not corpus_path.is_dir():
        raise DataPathError(
            f"corpus directory {corpus_path} (from dataset manifest) does not exist; "
            "pass --corpus"
        )
    corpus = load_corpus(corpus_path)
    return manifest, per_split, corpus


def cmd_pretrain(args: argparse.Namespace) -> int:
    extra = {}
    if args.steps is not None:
        extra["train.steps"] = args.steps
    if args.paper_adam:
        extra["train.lr"] = 1e-5
        extra["train.batch_size"] = 128
    cfg = _resolve_config(args, extra)
    threads = _apply_threads(cfg["threads"], args.threads)
    dataset_dir = _require_dir(args.data, "dataset")
    manifest, per_split, corpus = _load_training_world(dataset_dir, args.corpus)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model_cfg = cfg.model_config()
        model = UIModel(model_cfg)
        heads = PretrainHeads(model_cfg.hidden)
        glorot_init(model, cfg["seed.init"])
        glorot_init(heads, cfg["seed.init"] + 1)
        cache = FeatureCache(corpus.all_screens(), model_cfg.text_buckets)
        inputs = {
            "dataset": str(dataset_dir),
            "dataset_corpus_checksum": manifest["corpus_checksum"],
        }
        _write_snapshot(out, cfg, "pretrain", inputs)
        sink = metrics_jsonl_sink(out / "metrics.jsonl")

        def sink_and_log(line: dict) -> None:
            sink(line)
            logger.info(
                "step %d loss %.4f lcp %.3f cui %.3f",
                line["step"], line["loss_total"],
                line["acc_lcp"] or 0.0, line["acc_cui"] or 0.0,
            )

        result = run_pretraining(
            model,
            heads,
            per_split["train"],
            cache,
            cfg.train_config(),
            cfg.loss_weights(),
            out_dir=out,
            metrics_sink=sink_and_log,
            config_snapshot={"config": cfg.values, "threads": threads},
            seeds=cfg.seeds(),
        )
        dev_report = evaluate_pairs(model, heads, per_split["dev"], cache)
        write_report(dev_report, out / "dev_report.json")
    except Exception:
        (out / ".failed").write_text("pretrain failed\n")
        raise
    print(json.dumps({"steps": result.steps, "dev": {
        "acc_lcp": dev_report["acc_lcp"],
        "acc_cui": dev_report["acc_cui"],
        "chance_lcp": dev_report["chance_lcp"],
    }}))
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    extra = {}
    if args.task is not None:
        extra["finetune.task"] = args.task
    if args.init is not None:
        extra["finetune.init"] = args.init
    cfg = _resolve_config(args, extra)
    _apply_threads(cfg["threads"], args.threads)
    corpus_dir = _require_dir(args.corpus, "corpus")
    init_mode = cfg["finetune.init"]
    checkpoint_dir = None
    if init_mode == "pretrained":
        if not args.checkpoint:
            raise ConfigError("finetune with pretrained init requires --checkpoint")
        checkpoint_dir = _require_dir(args.checkpoint, "checkpoint")
    corpus = load_corpus(corpus_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model_cfg = cfg.model_config()
        cache = FeatureCache(corpus.all_screens(), model_cfg.text_buckets)
        split = split_by_app([a.spec.app_id for a in corpus.apps], cfg["seed.split"])
        report = eval_task(
            cfg["finetune.task"],
            corpus,
            split,
            model_cfg,
            cache,
            checkpoint_dir,
            init_mode=init_mode,
            ft_cfg=cfg.finetune_config(),
            data_seed=cfg["seed.pairs"],
        )
        _write_snapshot(out, cfg, "finetune", {"corpus": str(corpus_dir)})
        write_report(report, out / "report.json")
    except Exception:
        (out / ".failed").write_text("finetune failed\n")
        raise
    print(json.dumps(report))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    _apply_threads(cfg["threads"], args.threads)
    dataset_dir = _require_dir(args.data, "dataset")
    checkpoint_dir = _require_dir(args.checkpoint, "checkpoint")
    manifest, per_split, corpus = _load_training_world(dataset_dir, args.corpus)
    if args.split not in per_split:
        raise DataPathError(f"split {args.split!r} not in dataset")
    ckpt_manifest, tensors = load_checkpoint(checkpoint_dir)
    saved = ckpt_manifest.get("config", {}).get("config", {})
    model_cfg = cfg.model_config()
    if saved:
        model_cfg = RunConfig({**cfg.values, **{
            k: v for k, v in saved.items() if k.startswith("model.")
        }}).model_config()
    model = UIModel(model_cfg)
    heads = PretrainHeads(model_cfg.hidden)
    load_into(model, heads, tensors)
    cache = FeatureCache(corpus.all_screens(), model_cfg.text_buckets)
    report = evaluate_pairs(model, heads, per_split[args.split], cache)
    report["split"] = args.split
    report["task"] = args.task
    if args.task == "lcp":
        summary = {"acc": report["acc_lcp"], "chance": report["chance_lcp"]}
    elif args.task == "cui":
        summary = {"acc": report["acc_cui"]}
    else:
        raise ConfigError(f"eval task must be lcp or cui, got {args.task!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_snapshot(out, cfg, "eval", {"dataset": str(dataset_dir)})
        write_report(report, out / "report.json")
    print(json.dumps({args.task: summary, "split": args.split}))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataPathError(f"nothing to inspect under {path} (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    kind = manifest.get("kind", "unknown")
    summary: dict = {"path": str(path), "kind": kind}
    if kind == "traceform-corpus":
        summary["counts"] = manifest.get("counts")
        summary["seed"] = manifest.get("seed")
        summary["checksum"] = tree_checksum(path)
    elif kind == "traceform-dataset":
        summary["composition"] = manifest.get("composition")
        summary["seeds"] = manifest.get("seeds")
        summary["splits"] = {k: len(v) for k, v in manifest.get("splits", {}).items()}
    elif kind == "traceform-checkpoint":
        summary["step"] = manifest.get("step")
        summary["seeds"] = manifest.get("seeds")
        summary["tensors"] = len(manifest.get("tensors", {}))
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traceform",
        description="UI representation learning from synthetic interaction traces",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="config file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--threads", type=int, help="torch thread count")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--seed", type=int, help="corpus seed (seed.corpus)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-dataset", help="build pair shards from a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--pair-seed", type=int)
    p.add_argument("--mask-rate", type=float)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("pretrain", help="pre-train on a pair dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--corpus", help="corpus directory (defaults to the dataset's)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--paper-adam", action="store_true",
                   help="use the published optimizer settings (lr 1e-5, batch 128)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune and evaluate a downstream task")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", help="pre-trained checkpoint directory")
    p.add_argument("--task", help="downstream task name")
    p.add_argument("--init", choices=["pretrained", "random"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on pre-training tasks")
    common(p)
    p.add_argument("--task", required=True, help="lcp or cui")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", default="dev")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a corpus/dataset/checkpoint directory")
    common(p)
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, TaskError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        DataPathError,
        CorpusFormatError,
        ShardError,
        CheckpointError,
        DatasetError,
        GenerationError,
        FileNotFoundError,
    ) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
