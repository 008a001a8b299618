"""On-disk layout of a preprocessed dataset and in-memory synthetic datasets."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

from .config import ColumnMap, DatasetProfile, SynthConfig
from .data import (
    ExampleSet,
    PreprocessResult,
    count_vocab_lines,
    preprocess,
    read_examples,
    read_item_side,
    write_examples,
    write_vocab,
)
from .errors import DataError
from .synth import synth_generate, write_events
from .train import VocabInfo

SPLIT_FILES = {"train": "train.txt", "test": "test.txt"}
STATS_FILE = "stats.json"


@dataclass
class Prepared:
    train: ExampleSet
    test: ExampleSet
    vocab: VocabInfo
    stats: dict


def vocab_info(result: PreprocessResult) -> VocabInfo:
    v = result.vocab
    return VocabInfo(v.n_items, v.n_sides, v.item_side_matrix(), v.side_kind)


def as_prepared(result: PreprocessResult) -> Prepared:
    return Prepared(ExampleSet.from_examples(result.train_examples),
                    ExampleSet.from_examples(result.test_examples),
                    vocab_info(result), dict(result.stats))


def save_prepared(result: PreprocessResult, out_dir) -> dict:
    """Write train/test examples, vocab files and ``stats.json``; returns the stats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_examples(result.train_examples, out / SPLIT_FILES["train"])
    write_examples(result.test_examples, out / SPLIT_FILES["test"])
    write_vocab(result.vocab, out)
    (out / STATS_FILE).write_text(json.dumps(result.stats, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    return result.stats


def load_stats(data_dir) -> dict:
    path = Path(data_dir) / STATS_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_vocab(data_dir) -> VocabInfo:
    data_dir = Path(data_dir)
    stats = load_stats(data_dir)
    kind = stats.get("side_kind", "single")
    try:
        n_items = count_vocab_lines(data_dir / "items.vocab") + 1
        n_sides = count_vocab_lines(data_dir / "sides.vocab") + 1
    except OSError as exc:
        raise DataError(f"cannot read vocabulary in {data_dir}: {exc}") from exc
    item_sides = read_item_side(data_dir / "item_side.tsv", n_items, multi=kind == "multi")
    return VocabInfo(n_items, n_sides, item_sides, kind)


def load_split(data_dir, split: str, vocab: VocabInfo) -> ExampleSet:
    if split not in SPLIT_FILES:
        raise DataError(f"unknown split {split!r}")
    examples = read_examples(Path(data_dir) / SPLIT_FILES[split], multi=vocab.side_kind == "multi")
    data = ExampleSet.from_examples(examples)
    if data.inputs.max(initial=0) >= vocab.n_items or data.targets.max(initial=0) >= vocab.n_items:
        raise DataError(f"{split} examples reference item IDs outside the vocabulary")
    return data


def synthetic_dataset(config: SynthConfig, test_fraction: float = 0.1,
                      split_seed: int = 42) -> Prepared:
    """Generate, serialise and preprocess a synthetic event log entirely in memory."""
    sessions, _ = synth_generate(config)
    buf = io.StringIO()
    write_events(sessions, buf)
    buf.seek(0)
    result = preprocess(buf, DatasetProfile(name="synthetic"), ColumnMap(), test_fraction,
                        split_seed)
    return as_prepared(result)

