"""``sidrec`` command line: preprocess | train | evaluate | synth | plot.

Exit codes: 0 success, 1 internal error, 2 configuration error, 3 data or I/O error.
Flag values beat config-file values, which beat built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import curves
from .config import RunConfig, dump_run_config, load_run_config
from .data import preprocess
from .errors import ConfigError, DataError, SidrecError
from .pipeline import load_split, load_vocab, save_prepared
from .srgnn import MULTI_SIDE_MESSAGE
from .synth import item_categories, synth_generate, write_events
from .train import (
    Batcher,
    DTYPES,
    build_model,
    evaluate,
    fit,
    load_checkpoint,
    save_checkpoint,
    split_validation,
)

log = logging.getLogger("sidrec")

EFFECTIVE_CONFIG = "effective_config.yaml"
CHECKPOINT = "checkpoint.pt"
ARCH_FIELDS = ("model", "use_side", "embedding_dim", "hidden_dim", "propagation_steps", "dtype")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _run_config(args, extra: Optional[dict] = None) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides.update({"train.seed": args.seed, "synth.seed": args.seed,
                          "split.seed": args.seed})
    overrides.update(extra or {})
    return load_run_config(args.config, overrides)


def _print_kv(rows: dict) -> None:
    for key, value in rows.items():
        print(f"{key}\t{value}")


# -- subcommands --------------------------------------------------------------


def cmd_preprocess(args) -> int:
    cfg = _run_config(args, {"dataset.preset": args.preset})
    out = _out_dir(args.out)
    if not Path(args.input).is_file():
        raise DataError(f"input file not found: {args.input}")
    result = preprocess(args.input, cfg.profile, cfg.columns, cfg.test_fraction, cfg.split_seed)
    stats = save_prepared(result, out)
    dump_run_config(cfg, out / EFFECTIVE_CONFIG)
    _print_kv(stats)
    return 0


def cmd_synth(args) -> int:
    cfg = _run_config(args, {"synth.n_sessions": args.n_sessions, "synth.n_items": args.n_items})
    out = _out_dir(args.out)
    sessions, _ = synth_generate(cfg.synth)
    write_events(sessions, out / "events.csv")
    cats = item_categories(cfg.synth.n_items, cfg.synth.n_categories)
    with open(out / "item_categories.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i, c in enumerate(cats):
            fh.write(f"i{i}\tc{c}\n")
    dump_run_config(cfg, out / EFFECTIVE_CONFIG)
    _print_kv({"sessions": len(sessions), "events": sum(len(s) for s in sessions),
               "events_file": out / "events.csv"})
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args, {
        "train.model": args.model, "train.use_side": args.use_side, "train.epochs": args.epochs,
        "train.embedding_dim": args.embedding_dim, "train.batch_size": args.batch_size,
        "train.learning_rate": args.learning_rate,
        "train.attention_loss_weight": args.attention_weight,
        "train.early_stop_patience": args.patience, "train.dtype": args.dtype,
    })
    tc = cfg.train
    vocab = load_vocab(args.data)
    if tc.model == "srgnn" and vocab.side_kind == "multi":
        raise ConfigError(MULTI_SIDE_MESSAGE)
    build_model(tc, vocab)  # surfaces configuration errors before any data work
    out = _out_dir(args.out)
    dump_run_config(cfg, out / EFFECTIVE_CONFIG)

    resume = None
    if args.resume:
        _, ck_cfg, ck_vocab, resume = load_checkpoint(args.resume)
        for name in ARCH_FIELDS:
            if getattr(ck_cfg, name) != getattr(tc, name):
                raise ConfigError(f"--resume: checkpoint has {name}={getattr(ck_cfg, name)!r} "
                                  f"but the run config has {getattr(tc, name)!r}")
        if ck_vocab.n_items != vocab.n_items:
            raise DataError("--resume: checkpoint vocabulary does not match the data directory")

    data = load_split(args.data, "train", vocab)
    train, valid = split_validation(data, tc.validation_fraction, tc.seed)
    result = fit(train, valid, tc, vocab, resume=resume, progress=True)
    save_checkpoint(out / CHECKPOINT, result.model, tc, vocab, result.final_epoch,
                    result.optimizer, result.records)
    curves.write_metrics_jsonl(result.records, out / "metrics.jsonl")
    if result.records:
        curves.export_curves(result.records, out / "metrics.tsv", chart=args.chart)
    summary = curves.summary(result.records)
    summary.update(best_epoch_restored=result.best_epoch if tc.early_stop_patience else None,
                   stopped_early=result.stopped_early)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    _print_kv({"epochs": len(result.records), **summary.get("best", {})})
    return 0


def cmd_evaluate(args) -> int:
    model, tc, ck_vocab, _ = load_checkpoint(args.checkpoint)
    vocab = load_vocab(args.data)
    if vocab.n_items != ck_vocab.n_items:
        raise DataError(f"checkpoint has {ck_vocab.n_items} item IDs, data directory has "
                        f"{vocab.n_items}")
    data = load_split(args.data, args.split, vocab)
    ks = tuple(args.k) if args.k else tc.ks
    if min(ks) < 1:
        raise ConfigError("--k values must be >= 1")
    batcher = Batcher(data, tc.model, tc.use_side, DTYPES[tc.dtype])
    metrics = evaluate(model, batcher, ks, tc.eval_batch_size)
    row = {"examples": len(data)}
    for k in ks:
        row[f"recall@{k}"] = metrics["recall"][k]
        row[f"mrr@{k}"] = metrics["mrr"][k]
    out = _out_dir(args.out or Path(args.checkpoint).parent)
    curves.write_table([row], out / f"evaluation_{args.split}.tsv")
    (out / f"evaluation_{args.split}.json").write_text(json.dumps(row, sort_keys=True) + "\n",
                                                       encoding="utf-8")
    _print_kv(row)
    return 0


def _labels(paths: Sequence[str], labels: Optional[Sequence[str]]) -> list[str]:
    if labels:
        if len(labels) != len(paths):
            raise ConfigError(f"got {len(labels)} labels for {len(paths)} metrics files")
        return list(labels)
    out = []
    for p in paths:
        name = Path(p).parent.name or Path(p).stem
        while name in out:
            name += "'"
        out.append(name)
    return out


def cmd_plot(args) -> int:
    labels = _labels(args.metrics, args.labels)
    if len(set(labels)) != len(labels):
        raise ConfigError("run labels must be unique")
    runs = {label: curves.read_table(p) for label, p in zip(labels, args.metrics)}
    merged = curves.merge_runs(runs)  # validates that every run has the same columns
    out = _out_dir(args.out)
    if args.sweep:
        try:
            lambdas = {float(l): rows for l, rows in runs.items()}
        except ValueError as exc:
            raise ConfigError("--sweep needs numeric labels (the attention-loss weights)") from exc
        k = int(args.metric.split("@")[1])
        table = curves.sweep_table(lambdas, k)
        path = curves.write_table(table, out / "lambda_sweep.tsv")
        values = [r[f"best_recall@{k}"] for r in table]
        print(f"non_increasing\t{curves.is_non_increasing(values)}")
    elif args.best:
        metrics = [c for c in merged[0] if "@" in c]
        best = {label: curves.best_of(rows, args.metric) for label, rows in runs.items()}
        table = [{"metric": m, **{label: best[label][m] for label in labels}} for m in metrics]
        table.append({"metric": "best_epoch", **{label: best[label]["epoch"] for label in labels}})
        path = curves.write_table(table, out / "comparison.tsv")
    else:
        path = curves.write_table(merged, out / "curves.tsv")
    if args.chart:
        curves.render_chart(runs, out / args.chart, args.metric)
    print(path.read_text(encoding="utf-8"), end="")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run-config file (sections: dataset, columns, "
                                         "train, synth, split)")
    common.add_argument("--seed", type=int, help="single seed for data split, synthesis and training")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="sidrec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", parents=[common], help="event log -> example files")
    s.add_argument("--input", required=True, help="delimited event file")
    s.add_argument("--preset", help="dataset preset: diginetica, lastfm, movielens, tafeng")
    s.set_defaults(func=cmd_preprocess, needs_out=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic event log")
    s.add_argument("--n-sessions", type=int)
    s.add_argument("--n-items", type=int)
    s.set_defaults(func=cmd_synth, needs_out=True)

    s = sub.add_parser("train", parents=[common], help="train a model on a preprocessed directory")
    s.add_argument("--data", required=True, help="directory written by `sidrec preprocess`")
    s.add_argument("--model", choices=("repeatnet", "srgnn"))
    s.add_argument("--use-side", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--epochs", type=int)
    s.add_argument("--embedding-dim", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--attention-weight", type=float, help="attention-loss weight lambda")
    s.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    s.add_argument("--dtype", choices=("float32", "float64"))
    s.add_argument("--resume", help="checkpoint to continue training from")
    s.add_argument("--chart", help="also render the learning curve to this image path")
    s.set_defaults(func=cmd_train, needs_out=True)

    s = sub.add_parser("evaluate", parents=[common], help="Recall@K / MRR@K of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--k", type=int, nargs="+", help="cutoffs (default: the checkpoint's)")
    s.set_defaults(func=cmd_evaluate, needs_out=False)

    s = sub.add_parser("plot", parents=[common], help="merge metrics files into comparison tables")
    s.add_argument("metrics", nargs="+", help="metrics.jsonl or metrics.tsv files, one per run")
    s.add_argument("--labels", nargs="+", help="run labels (default: parent directory names)")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--best", action="store_true",
                      help="one column per run with its best-epoch metrics")
    mode.add_argument("--sweep", action="store_true",
                      help="labels are attention-loss weights; emit the sweep table")
    s.add_argument("--metric", default="recall@20", help="metric that selects the best epoch")
    s.add_argument("--chart", help="image filename (inside --out) for a line chart")
    s.set_defaults(func=cmd_plot, needs_out=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.needs_out and not args.out:
        parser.error(f"{args.command}: --out is required")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except SidrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:  # noqa: BLE001 - last-resort guard for the exit-code contract
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
