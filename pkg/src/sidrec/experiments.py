"""Side-information experiments on synthetic data.

Three harnesses, all built on :func:`sidrec.train.fit`:

* :func:`side_effect` trains baseline and side-fused variants per seed and
  records best validation Recall@20 and how quickly each variant gets there;
* :func:`lambda_sweep` varies the attention-loss weight on one configuration;
* :func:`size_control` compares a d-dim baseline, a 2d-dim baseline and a
  d-dim side model.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from .config import SynthConfig, TrainConfig
from .curves import epoch_rows, sweep_table
from .pipeline import Prepared, synthetic_dataset
from .train import EpochRecord, fit, split_validation

log = logging.getLogger(__name__)

MONITOR = 20


def best_recall(records: Sequence[EpochRecord], k: int = MONITOR) -> float:
    return max(r.recall[k] for r in records)


def epochs_to_reach(records: Sequence[EpochRecord], threshold: float,
                    k: int = MONITOR) -> Optional[int]:
    """First epoch whose Recall@k is at least ``threshold``; None if never."""
    for r in records:
        if r.recall[k] >= threshold:
            return r.epoch
    return None


@dataclass
class SeedComparison:
    model: str
    seed: int
    baseline: list
    side: list

    @property
    def baseline_best(self) -> float:
        return best_recall(self.baseline)

    @property
    def side_best(self) -> float:
        return best_recall(self.side)

    @property
    def baseline_epochs(self) -> int:
        return epochs_to_reach(self.baseline, self.baseline_best)

    @property
    def side_epochs(self) -> Optional[int]:
        """Epochs the side variant needs to match the baseline's best."""
        return epochs_to_reach(self.side, self.baseline_best)

    @property
    def side_better(self) -> bool:
        return self.side_best > self.baseline_best

    @property
    def side_faster(self) -> bool:
        return self.side_epochs is not None and self.side_epochs < self.baseline_epochs

    def row(self) -> dict:
        return {"model": self.model, "seed": self.seed,
                "baseline_best_recall@20": self.baseline_best,
                "side_best_recall@20": self.side_best,
                "baseline_epochs": self.baseline_epochs,
                "side_epochs": self.side_epochs if self.side_epochs is not None else -1}


def train_on(data: Prepared, config: TrainConfig) -> list[EpochRecord]:
    """Fit on a seeded train/validation split of ``data.train``."""
    train, valid = split_validation(data.train, config.validation_fraction, config.seed)
    tic = time.perf_counter()
    result = fit(train, valid, config, data.vocab)
    log.info("%s side=%s d=%d lambda=%g seed=%d: best recall@20 %.4f in %.1fs",
             config.model, config.use_side, config.embedding_dim, config.attention_loss_weight,
             config.seed, best_recall(result.records), time.perf_counter() - tic)
    return result.records


def side_effect(models: Sequence[str], seeds: Sequence[int], synth: SynthConfig,
                **train_overrides) -> list[SeedComparison]:
    """Baseline vs side-fused runs; each seed drives both data generation and training."""
    out = []
    for seed in seeds:
        data = synthetic_dataset(dataclasses.replace(synth, seed=seed), split_seed=seed)
        for model in models:
            runs = {}
            for use_side in (False, True):
                cfg = TrainConfig.for_model(model, use_side=use_side, seed=seed, **train_overrides)
                runs[use_side] = train_on(data, cfg)
            out.append(SeedComparison(model, seed, runs[False], runs[True]))
    return out


def lambda_sweep(model: str, lambdas: Sequence[float], synth: SynthConfig, seed: int = 0,
                 use_side: bool = True, **train_overrides):
    """Returns (sweep table rows, per-lambda epoch rows)."""
    data = synthetic_dataset(dataclasses.replace(synth, seed=seed), split_seed=seed)
    results = {}
    for lam in lambdas:
        cfg = TrainConfig.for_model(model, use_side=use_side, seed=seed,
                                    attention_loss_weight=float(lam), **train_overrides)
        results[float(lam)] = epoch_rows(train_on(data, cfg))
    return sweep_table(results), results


def size_control(model: str, synth: SynthConfig, embedding_dim: int = 100, seed: int = 0,
                 **train_overrides) -> dict:
    """Best-epoch metrics of baseline-d, baseline-2d and side-d, keyed by run label."""
    data = synthetic_dataset(dataclasses.replace(synth, seed=seed), split_seed=seed)
    plan = {f"baseline-{embedding_dim}": (False, embedding_dim),
            f"baseline-{2 * embedding_dim}": (False, 2 * embedding_dim),
            f"side-{embedding_dim}": (True, embedding_dim)}
    out = {}
    for label, (use_side, dim) in plan.items():
        cfg = TrainConfig.for_model(model, use_side=use_side, embedding_dim=dim, seed=seed,
                                    **train_overrides)
        out[label] = epoch_rows(train_on(data, cfg))
    return out
