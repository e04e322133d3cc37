"""Operator surface: ``pkge train``, ``pkge eval``, and ``pkge bench``.

Every run writes a manifest with the fully resolved config and input file
digests so it can be reproduced. Config precedence is flags > JSON config
file (``--config``) > built-in defaults. Exit codes: 0 success, 1 config
error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, load_dataset, load_triples, make_synthetic_translation_kg
from .errors import CheckpointError, NumericError, PkgeError, TripleParseError, VocabularyError
from .evaluation import classify, evaluate_ranking, fit_thresholds
from .model import draw_corruption_plan
from .store import load_checkpoint, save_checkpoint
from .train_mapreduce import MERGE_STRATEGIES, SyncSchedule, train_mapreduce
from .train_single import TrainConfig, train_single

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

TRAIN_MODES = ("single", "mr-sgd", "mr-bgd")


class ConfigError(PkgeError):
    """Bad flag or config-file value."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract says config errors are 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _default_workers() -> int:
    return os.cpu_count() or 1


def _cap_workers(workers: int) -> int:
    cap = os.environ.get("PKGE_THREADS")
    if cap is None:
        return workers
    try:
        cap_n = int(cap)
    except ValueError:
        raise ConfigError(f"PKGE_THREADS must be an integer, got {cap!r}") from None
    if cap_n < 1:
        raise ConfigError(f"PKGE_THREADS must be >= 1, got {cap_n}")
    return min(workers, cap_n)


def _sha256(path: Path) -> dict:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return {"path": str(path), "sha256": digest.hexdigest(), "bytes": path.stat().st_size}


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pkge",
        description="Knowledge-graph embedding: single-thread or map/reduce training, "
        "ranking and classification evaluation, and throughput benchmarks.",
    )
    parser.add_argument("--version", action="version", version=f"pkge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def add_shared(p):
        p.add_argument("--seed", type=int, default=42, help="base RNG seed")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config file; flags override its values")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--log", choices=("jsonl", "text"), default="text",
                       help="stdout progress format")

    train = sub.add_parser("train", formatter_class=fmt, help="train embeddings")
    add_shared(train)
    train.add_argument("--mode", choices=TRAIN_MODES, default="single")
    train.add_argument("--input", type=Path, default=None, help="training triple file (required)")
    train.add_argument("--valid", type=Path, default=None, help="validation triple file")
    train.add_argument("--dim", type=int, default=50)
    train.add_argument("--margin", type=float, default=1.0)
    train.add_argument("--lr", type=float, default=0.01)
    train.add_argument("--norm", choices=("L1", "L2"), default="L1")
    train.add_argument("--epochs", type=int, default=1000)
    train.add_argument("--eps", type=float, default=1e-4, help="relative-loss convergence threshold")
    train.add_argument("--neg-per-pos", type=int, default=1)
    train.add_argument("--filter-negatives", action="store_true", default=False,
                       help="re-draw corrupted triples that appear in the training set")
    train.add_argument("--merge", choices=MERGE_STRATEGIES, default="average",
                       help="reduce strategy for mr-sgd")
    train.add_argument("--weighted-average", action="store_true", default=False,
                       help="weight the average merge by per-key update counts")
    train.add_argument("--workers", type=int, default=_default_workers(),
                       help="map workers for mr-* modes")
    train.add_argument("--epochs-per-sync", type=int, default=1,
                       help="local SGD epochs per sync round (mr-sgd)")
    train.add_argument("--drop-oov", action="store_true", default=False,
                       help="drop validation triples with labels unseen in training "
                       "instead of failing")

    ev = sub.add_parser("eval", formatter_class=fmt, help="evaluate a trained model")
    add_shared(ev)
    ev.add_argument("--model", type=Path, default=None,
                    help="model directory or checkpoint file (required)")
    ev.add_argument("--test", type=Path, default=None, help="test triple file (required)")
    ev.add_argument("--train", type=Path, default=None,
                    help="training file for filtering (defaults to the manifest's input)")
    ev.add_argument("--valid", type=Path, default=None,
                    help="validation file (thresholds for classify; filtering)")
    ev.add_argument("--task", choices=("entity", "relation", "classify", "all"),
                    default="entity")
    ev.add_argument("--filtered", action="store_true", default=False,
                    help="filtered ranking setting")
    ev.add_argument("--ks", type=str, default="1,3,10", help="comma-separated Hits@k cutoffs")
    ev.add_argument("--norm", choices=("L1", "L2"), default=None,
                    help="energy norm (defaults to the manifest's norm, else L1)")
    ev.add_argument("--drop-oov", action="store_true", default=False,
                    help="drop eval triples with labels unseen in training instead of failing")

    bench = sub.add_parser("bench", formatter_class=fmt,
                           help="map-phase throughput across worker counts")
    add_shared(bench)
    bench.add_argument("--workers-list", type=str, default="1,2,4")
    bench.add_argument("--mode", choices=("mr-sgd", "mr-bgd"), default="mr-sgd")
    bench.add_argument("--merge", choices=MERGE_STRATEGIES, default="average")
    bench.add_argument("--synthetic", action="store_true", default=True,
                       help="benchmark on a generated KG")
    bench.add_argument("--input", type=Path, default=None,
                       help="benchmark on this triple file instead of --synthetic")
    bench.add_argument("--entities", type=int, default=5000)
    bench.add_argument("--relations", type=int, default=25)
    bench.add_argument("--triples", type=int, default=100_000,
                       help="target training-split triple count")
    bench.add_argument("--dim", type=int, default=50)
    bench.add_argument("--margin", type=float, default=1.0)
    bench.add_argument("--lr", type=float, default=0.01)
    bench.add_argument("--norm", choices=("L1", "L2"), default="L1")
    bench.add_argument("--rounds", type=int, default=3, help="timed sync rounds per worker count")
    bench.add_argument("--warmup", type=int, default=1,
                       help="untimed leading rounds (pool start-up, cache warm-up)")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """flags > config file > defaults: config values become parser defaults."""
    first = parser.parse_args(argv)
    config_path = getattr(first, "config", None)
    if config_path is None:
        return first
    try:
        payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")

    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    subparser = sub_actions[0].choices[first.command]
    known = {a.dest for a in subparser._actions}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    for key in ("input", "valid", "test", "train", "model", "out"):
        if key in payload and payload[key] is not None:
            payload[key] = Path(payload[key])
    subparser.set_defaults(**payload)
    return parser.parse_args(argv)


def _positive(name: str, value, strict: bool = True) -> None:
    bad = value <= 0 if strict else value < 0
    if bad:
        op = ">" if strict else ">="
        raise ConfigError(f"--{name} must be {op} 0, got {value}")


def _resolve_train_config(args) -> TrainConfig:
    _positive("dim", args.dim)
    _positive("margin", args.margin)
    _positive("lr", args.lr)
    _positive("epochs", args.epochs, strict=False)
    _positive("eps", args.eps, strict=False)
    _positive("neg-per-pos", args.neg_per_pos)
    return TrainConfig(
        dim=args.dim,
        margin=args.margin,
        learning_rate=args.lr,
        norm=args.norm,
        max_epochs=args.epochs,
        convergence_eps=args.eps,
        seed=args.seed,
        neg_per_pos=args.neg_per_pos,
        filter_negatives=args.filter_negatives,
    )


def _epoch_line(fmt: str, report) -> str:
    if fmt == "jsonl":
        return json.dumps(
            {"epoch": report.epoch, "loss": report.loss, "rel": report.rel_change,
             "active": report.active, "secs": report.seconds}
        )
    return (f"epoch {report.epoch}  loss {report.loss:.6f}  rel {report.rel_change:.3e}"
            f"  active {report.active}  ({report.seconds:.2f}s)")


def _round_line(fmt: str, report) -> str:
    payload = {"round": report.round, "mode": report.mode, "strategy": report.strategy,
               "workers": report.workers, "loss": report.loss,
               "map_secs": report.map_secs, "reduce_secs": report.reduce_secs,
               "triples_per_sec": report.triples_per_sec}
    if fmt == "jsonl":
        return json.dumps(payload)
    return (f"round {report.round}  mode {report.mode}  workers {report.workers}  "
            f"loss {report.loss:.6f}  map {report.map_secs:.2f}s  "
            f"reduce {report.reduce_secs:.2f}s  {report.triples_per_sec:.0f} triples/s")


def cmd_train(args) -> int:
    if args.input is None:
        raise ConfigError("--input is required")
    if args.out is None:
        raise ConfigError("--out is required")
    _positive("workers", args.workers)
    _positive("epochs-per-sync", args.epochs_per_sync)
    config = _resolve_train_config(args)
    workers = _cap_workers(args.workers)

    dataset, load_stats = load_dataset(
        args.input, args.valid, on_oov="drop" if args.drop_oov else "error"
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "epochs.jsonl"
    started = time.time()

    with log_path.open("w", encoding="utf-8") as log_file:
        if args.mode == "single":
            def on_report(r):
                log_file.write(_epoch_line("jsonl", r) + "\n")
                print(_epoch_line(args.log, r))

            table, reports = train_single(dataset, config, on_report=on_report)
        else:
            schedule = SyncSchedule(
                mode="sgd" if args.mode == "mr-sgd" else "bgd",
                workers=workers,
                epochs_per_sync=args.epochs_per_sync,
            )

            def on_report(r):
                log_file.write(_round_line("jsonl", r) + "\n")
                print(_round_line(args.log, r))

            table, reports = train_mapreduce(
                dataset, config, schedule,
                strategy=args.merge if args.mode == "mr-sgd" else None,
                weighted_average=args.weighted_average,
                on_report=on_report,
            )

    checkpoint_path = out_dir / "model.pkge"
    save_checkpoint(table, dataset.vocab, checkpoint_path)
    final_loss = reports[-1].loss if reports else None
    manifest = {
        "command": "train",
        "version": __version__,
        "config": {
            "mode": args.mode,
            "dim": config.dim,
            "margin": config.margin,
            "lr": config.learning_rate,
            "norm": config.norm,
            "epochs": config.max_epochs,
            "eps": config.convergence_eps,
            "neg_per_pos": config.neg_per_pos,
            "filter_negatives": config.filter_negatives,
            "merge": args.merge if args.mode == "mr-sgd" else None,
            "workers": workers if args.mode != "single" else 1,
            "epochs_per_sync": args.epochs_per_sync if args.mode == "mr-sgd" else None,
        },
        "seed": config.seed,
        "inputs": {
            "train": _sha256(Path(args.input)),
            "valid": _sha256(Path(args.valid)) if args.valid else None,
        },
        "load_stats": {k: v._asdict() for k, v in load_stats.items()},
        "artifacts": {
            "checkpoint": str(checkpoint_path),
            "epoch_log": str(log_path),
        },
        "epochs_run": len(reports),
        "final_loss": final_loss,
        "started_unix": started,
        "wall_secs": time.time() - started,
    }
    _write_json_atomic(out_dir / "manifest.json", manifest)
    print(f"wrote {checkpoint_path} ({len(reports)} epoch(s), final loss "
          f"{final_loss if final_loss is not None else 'n/a'})")
    return EXIT_OK


def _locate_model(model_arg: Path) -> tuple[Path, dict | None]:
    model_path = Path(model_arg)
    manifest = None
    if model_path.is_dir():
        checkpoint = model_path / "model.pkge"
        manifest_path = model_path / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    else:
        checkpoint = model_path
        manifest_path = model_path.with_name("manifest.json")
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if not checkpoint.exists():
        raise FileNotFoundError(f"model checkpoint not found: {checkpoint}")
    return checkpoint, manifest


def cmd_eval(args) -> int:
    if args.model is None:
        raise ConfigError("--model is required")
    if args.test is None:
        raise ConfigError("--test is required")
    checkpoint_path, manifest = _locate_model(args.model)
    ckpt = load_checkpoint(checkpoint_path)

    norm = args.norm
    if norm is None:
        norm = (manifest or {}).get("config", {}).get("norm") or "L1"
    try:
        ks = tuple(int(k) for k in str(args.ks).split(",") if k)
    except ValueError:
        raise ConfigError(f"--ks must be comma-separated integers, got {args.ks!r}")
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"--ks must be positive integers, got {args.ks!r}")

    on_oov = "drop" if args.drop_oov else "error"
    train_path = args.train
    if train_path is None and manifest is not None:
        recorded = manifest.get("inputs", {}).get("train", {}).get("path")
        if recorded and Path(recorded).exists():
            train_path = Path(recorded)

    empty = np.zeros((0, 3), dtype=np.int64)
    vocab = ckpt.vocab
    train = load_triples(train_path, vocab, on_oov=on_oov)[0] if train_path else empty
    valid = load_triples(args.valid, vocab, on_oov=on_oov)[0] if args.valid else empty
    test, _, _ = load_triples(args.test, vocab, on_oov=on_oov)
    if len(test) == 0:
        raise VocabularyError("test split is empty after loading", offenders=[])
    dataset = Dataset(train=train, valid=valid, test=test, vocab=vocab)

    setting = "filtered" if args.filtered else "raw"
    tasks = ("entity", "relation", "classify") if args.task == "all" else (args.task,)
    results = []
    for task in tasks:
        if task in ("entity", "relation"):
            metrics = evaluate_ranking(
                ckpt.table, dataset, task, setting=setting, ks=ks, norm=norm
            )
            results.append(metrics.to_json_dict(task))
        else:
            if len(dataset.valid) == 0:
                raise ConfigError("--task classify needs --valid for threshold fitting")
            rng = np.random.default_rng(args.seed)
            thresholds = fit_thresholds(ckpt.table, dataset.valid, rng, norm)
            plan = draw_corruption_plan(dataset.test, vocab.n_entities, 1, rng)
            h, t = dataset.test[:, 0], dataset.test[:, 2]
            negatives = dataset.test.copy()
            negatives[:, 0] = np.where(plan.head_side[:, 0], plan.replacement[:, 0], h)
            negatives[:, 2] = np.where(plan.head_side[:, 0], t, plan.replacement[:, 0])
            triples = np.concatenate([dataset.test, negatives])
            labels = np.concatenate(
                [np.ones(len(dataset.test), bool), np.zeros(len(negatives), bool)]
            )
            accuracy = classify(ckpt.table, thresholds, triples, labels, norm)
            results.append({"task": "classify", "accuracy": accuracy, "n": int(len(triples))})

    for row in results:
        print(json.dumps(row))
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json_atomic(out_dir / "metrics.json", {"results": results})
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        workers_list = [int(w) for w in str(args.workers_list).split(",") if w]
    except ValueError:
        raise ConfigError(f"--workers-list must be comma-separated integers, got {args.workers_list!r}")
    if not workers_list or any(w < 1 for w in workers_list):
        raise ConfigError(f"--workers-list entries must be >= 1, got {args.workers_list!r}")
    workers_list = [_cap_workers(w) for w in workers_list]
    _positive("rounds", args.rounds)
    _positive("warmup", args.warmup, strict=False)

    if args.input is not None:
        dataset, _ = load_dataset(args.input)
    else:
        _positive("entities", args.entities)
        _positive("relations", args.relations)
        _positive("triples", args.triples)
        # 80/10/10 split: oversample so the training split reaches the target
        total_target = -(-args.triples * 10 // 8)
        per_relation = -(-total_target // args.relations)
        dataset = make_synthetic_translation_kg(
            args.entities, args.relations, args.dim, per_relation, args.seed
        )
    config = TrainConfig(
        dim=args.dim,
        margin=args.margin,
        learning_rate=args.lr,
        norm=args.norm,
        max_epochs=args.rounds + args.warmup,
        convergence_eps=0.0,
        seed=args.seed,
    )

    rows = []
    for workers in workers_list:
        schedule = SyncSchedule(
            mode="sgd" if args.mode == "mr-sgd" else "bgd",
            workers=workers,
            epochs_per_sync=1,
        )
        _, reports = train_mapreduce(
            dataset, config, schedule,
            strategy=args.merge if args.mode == "mr-sgd" else None,
            use_processes=True,
        )
        timed = reports[args.warmup :] or reports
        map_secs = [r.map_secs for r in timed]
        rows.append({
            "workers": workers,
            "rounds": len(timed),
            "map_secs_per_round": sum(map_secs) / len(map_secs),
            "triples_per_sec": sum(r.triples_per_sec for r in timed) / len(timed),
            "final_loss": reports[-1].loss,
        })

    payload = {
        "command": "bench",
        "mode": args.mode,
        "n_train": int(len(dataset.train)),
        "rounds": args.rounds,
        "seed": args.seed,
        "rows": rows,
    }
    print(json.dumps(payload))
    header = f"{'workers':>7}  {'rounds':>6}  {'map_secs/round':>14}  {'triples/sec':>12}  {'final_loss':>12}"
    print(header)
    for row in rows:
        print(f"{row['workers']:>7}  {row['rounds']:>6}  {row['map_secs_per_round']:>14.3f}  "
              f"{row['triples_per_sec']:>12.1f}  {row['final_loss']:>12.4f}")
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json_atomic(out_dir / "bench.json", payload)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"pkge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handlers = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"pkge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"pkge: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TripleParseError, VocabularyError, CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"pkge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
