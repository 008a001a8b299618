"""Training loop, evaluation and checkpoints for both models."""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import TrainConfig
from .data import ExampleSet
from .errors import DataError, TrainingDiverged, UnsupportedConfigError
from .metrics import mrr_from_ranks, recall_from_ranks, target_ranks
from .optim import AdamState, adam_step, lr_schedule
from .repeatnet import RepeatNet, repeatnet_loss
from .srgnn import MULTI_SIDE_MESSAGE, SRGNN, collate_graphs, graphs_for, srgnn_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sidrec-checkpoint"
CHECKPOINT_VERSION = 1
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class VocabInfo:
    n_items: int
    n_sides: int
    item_sides: np.ndarray
    side_kind: str = "single"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    recall: dict
    mrr: dict
    wall_seconds: float
    lr: float = 0.0

    def to_row(self) -> dict:
        row = {"epoch": self.epoch, "train_loss": self.train_loss, "lr": self.lr}
        for k in sorted(self.recall):
            row[f"recall@{k}"] = self.recall[k]
        for k in sorted(self.mrr):
            row[f"mrr@{k}"] = self.mrr[k]
        row["wall_seconds"] = self.wall_seconds
        return row

    @classmethod
    def from_row(cls, row: dict) -> "EpochRecord":
        recall = {int(k.split("@")[1]): v for k, v in row.items() if k.startswith("recall@")}
        mrr = {int(k.split("@")[1]): v for k, v in row.items() if k.startswith("mrr@")}
        return cls(int(row["epoch"]), float(row["train_loss"]), recall, mrr,
                   float(row.get("wall_seconds", 0.0)), float(row.get("lr", 0.0)))


@dataclass
class FitResult:
    model: torch.nn.Module
    records: list
    optimizer: AdamState
    best_epoch: int = 0
    final_epoch: int = 0
    stopped_early: bool = False


def build_model(config: TrainConfig, vocab: VocabInfo) -> torch.nn.Module:
    if config.model == "srgnn" and vocab.side_kind == "multi":
        raise UnsupportedConfigError(MULTI_SIDE_MESSAGE)
    if config.use_side and vocab.side_kind == "none":
        raise UnsupportedConfigError("use_side requested but the dataset has no side information")
    if config.model == "repeatnet":
        model = RepeatNet(vocab.n_items, vocab.n_sides, vocab.item_sides, config.embedding_dim,
                          config.hidden, config.use_side)
    else:
        model = SRGNN(vocab.n_items, vocab.n_sides, vocab.item_sides, config.embedding_dim,
                      config.use_side, config.propagation_steps)
    return model.to(DTYPES[config.dtype])


class Batcher:
    """Slices an ExampleSet into trimmed tensor batches; caches SR-GNN graphs."""

    def __init__(self, data: ExampleSet, model_kind: str, use_side: bool, dtype=torch.float32):
        self.data = data
        self.kind = model_kind
        self.use_side = use_side
        self.dtype = dtype
        self.item_graphs = self.side_graphs = None
        if model_kind == "srgnn":
            self.item_graphs = graphs_for(data.inputs)
            if use_side:
                if data.side_inputs.shape[-1] > 1:
                    raise UnsupportedConfigError(MULTI_SIDE_MESSAGE)
                self.side_graphs = graphs_for(data.side_inputs[..., 0])

    def __len__(self):
        return len(self.data)

    def batch(self, idx: np.ndarray) -> dict:
        L = int(self.data.prefix_len[idx].max())
        b = {
            "inputs": torch.from_numpy(self.data.inputs[idx, :L]),
            "side_inputs": torch.from_numpy(self.data.side_inputs[idx, :L]),
            "targets": torch.from_numpy(self.data.targets[idx]),
            "side_targets": torch.from_numpy(self.data.side_targets[idx]),
        }
        if self.kind == "srgnn":
            b["item_graphs"] = collate_graphs([self.item_graphs[i] for i in idx], L, self.dtype)
            b["side_graphs"] = (collate_graphs([self.side_graphs[i] for i in idx], L, self.dtype)
                                if self.use_side else None)
        return b


def batch_loss(model, b: dict, attention_weight: float):
    if isinstance(model, RepeatNet):
        return repeatnet_loss(model, b["inputs"], b["side_inputs"], b["targets"],
                              b["side_targets"], attention_weight)
    return srgnn_loss(model, b["inputs"], b["item_graphs"], b["side_graphs"], b["targets"],
                      b["side_inputs"], b["side_targets"], attention_weight)


@torch.no_grad()
def batch_scores(model, b: dict) -> torch.Tensor:
    if isinstance(model, RepeatNet):
        return model(b["inputs"], b["side_inputs"]).probs
    return model(b["inputs"], b["item_graphs"], b["side_graphs"]).probs


@torch.no_grad()
def evaluate(model, batcher: Batcher, ks=(10, 20), batch_size: int = 512) -> dict:
    """Recall@K and MRR@K over every example of ``batcher``."""
    if len(batcher) == 0:
        raise DataError("no examples to evaluate")
    model.eval()
    ranks = []
    for start in range(0, len(batcher), batch_size):
        idx = np.arange(start, min(start + batch_size, len(batcher)))
        b = batcher.batch(idx)
        scores = batch_scores(model, b).cpu().numpy()
        ranks.append(target_ranks(scores, b["targets"].numpy()))
    model.train()
    ranks = np.concatenate(ranks)
    return {"recall": {k: recall_from_ranks(ranks, k) for k in ks},
            "mrr": {k: mrr_from_ranks(ranks, k) for k in ks}}


def _monitor_k(ks) -> int:
    return 20 if 20 in ks else max(ks)


def fit(train: ExampleSet, valid: ExampleSet, config: TrainConfig, vocab: VocabInfo,
        resume: Optional[dict] = None, progress: bool = False) -> FitResult:
    """Train ``config.model`` on ``train``; one EpochRecord per epoch on ``valid``.

    ``resume`` is a loaded checkpoint payload; training then continues after
    its recorded epoch with its parameters and optimizer state.
    """
    if len(train) == 0 or len(valid) == 0:
        raise DataError("train and validation sets must be non-empty")
    torch.manual_seed(config.seed)
    model = build_model(config, vocab)
    dtype = DTYPES[config.dtype]
    params = [p for p in model.parameters()]
    state = AdamState.zeros_like(params)
    records: list[EpochRecord] = []
    start_epoch = 0
    if resume is not None:
        model.load_state_dict(resume["state"])
        state = AdamState.from_state_dict(resume["optimizer"])
        records = [EpochRecord.from_row(r) for r in resume.get("records", [])]
        start_epoch = int(resume["epoch"])

    train_b = Batcher(train, config.model, config.use_side, dtype)
    valid_b = Batcher(valid, config.model, config.use_side, dtype)
    rng = np.random.default_rng(config.seed)
    for _ in range(start_epoch):
        rng.permutation(len(train))  # keep the shuffle stream aligned on resume

    monitor = _monitor_k(config.ks)
    best_value = max((r.recall.get(monitor, -1.0) for r in records), default=-1.0)
    best_epoch = max((r.epoch for r in records if r.recall.get(monitor) == best_value), default=0)
    best_state = copy.deepcopy(model.state_dict())
    stopped = False
    epoch = start_epoch
    for epoch in range(start_epoch, config.epochs):
        tic = time.perf_counter()
        lr = lr_schedule(epoch, config.learning_rate, config.lr_halving_period)
        order = rng.permutation(len(train))
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            b = train_b.batch(order[start:start + config.batch_size])
            loss, _ = batch_loss(model, b, config.attention_loss_weight)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch {batches + 1}")
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            try:
                adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps,
                          config.weight_decay)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch + 1}: {exc}") from exc
            total += float(loss.detach())
            batches += 1
        metrics = evaluate(model, valid_b, config.ks, config.eval_batch_size)
        rec = EpochRecord(epoch + 1, total / max(batches, 1), metrics["recall"], metrics["mrr"],
                          time.perf_counter() - tic, lr)
        records.append(rec)
        if progress:
            log.info("epoch %d loss %.4f recall@%d %.4f", rec.epoch, rec.train_loss, monitor,
                     rec.recall[monitor])
        if rec.recall[monitor] > best_value:
            best_value, best_epoch = rec.recall[monitor], rec.epoch
            best_state = copy.deepcopy(model.state_dict())
        elif (config.early_stop_patience is not None
              and rec.epoch - best_epoch >= config.early_stop_patience):
            stopped = True
            break
    final_epoch = records[-1].epoch if records else start_epoch
    if config.early_stop_patience is not None and records:
        model.load_state_dict(best_state)
    return FitResult(model, records, state, best_epoch, final_epoch, stopped)


def split_validation(train: ExampleSet, fraction: float, seed: int):
    """Carve a seeded validation slice out of the training examples."""
    n = len(train)
    if n < 2:
        raise DataError("need at least 2 training examples to carve a validation set")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = min(max(1, int(math.floor(fraction * n))), n - 1)
    return train.subset(np.sort(order[n_valid:])), train.subset(np.sort(order[:n_valid]))


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, model, config: TrainConfig, vocab: VocabInfo, epoch: int,
                    optimizer: Optional[AdamState] = None, records=()) -> None:
    cfg = dataclasses.asdict(config)
    cfg["ks"] = list(config.ks)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "vocab": {"n_items": vocab.n_items, "n_sides": vocab.n_sides,
                  "side_kind": vocab.side_kind,
                  "item_sides": torch.as_tensor(vocab.item_sides)},
        "epoch": int(epoch),
        "state": model.state_dict(),
        "optimizer": (optimizer or AdamState.zeros_like(list(model.parameters()))).state_dict(),
        "records": [r.to_row() for r in records],
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Returns (model, config, vocab, payload); DataError on anything unreadable."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a sidrec checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('version')}")
    try:
        config = TrainConfig(**payload["config"])
        v = payload["vocab"]
        vocab = VocabInfo(int(v["n_items"]), int(v["n_sides"]), v["item_sides"].numpy(),
                          v["side_kind"])
        model = build_model(config, vocab)
        model.load_state_dict(payload["state"])
    except (KeyError, TypeError, RuntimeError) as exc:
        raise DataError(f"checkpoint {path} is corrupt: {exc}") from exc
    return model, config, vocab, payload
