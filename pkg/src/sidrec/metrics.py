"""Recall@K and MRR@K.

Rankings break score ties by ascending item ID and never include the pad ID 0.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Item IDs (1..V-1) in descending score order, ties by ascending ID."""
    scores = np.asarray(scores)
    ids = np.arange(1, scores.shape[-1])
    # lexsort: last key is primary
    return ids[np.lexsort((ids, -scores[1:]))]


def target_ranks(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target under the tie-breaking rule, for (N, V) scores."""
    scores = np.asarray(scores)
    targets = np.asarray(targets)
    if np.any(targets < 1):
        raise ValueError("targets must be item IDs >= 1")
    body = scores[:, 1:]
    t = scores[np.arange(len(targets)), targets][:, None]
    ids = np.arange(1, scores.shape[1])[None, :]
    ahead = (body > t) | ((body == t) & (ids < targets[:, None]))
    return ahead.sum(1) + 1


def _ranks_from_lists(ranked_lists: Sequence[Sequence[int]], targets: Sequence[int]) -> list:
    if len(ranked_lists) == 0:
        raise ValueError("no examples to evaluate")
    if len(ranked_lists) != len(targets):
        raise ValueError("ranked_lists and targets differ in length")
    ranks = []
    for ranking, target in zip(ranked_lists, targets):
        ranking = list(ranking)
        ranks.append(ranking.index(target) + 1 if target in ranking else np.inf)
    return ranks


def recall_from_ranks(ranks, k: int) -> float:
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        raise ValueError("no examples to evaluate")
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.mean(ranks <= k))


def mrr_from_ranks(ranks, k: int) -> float:
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        raise ValueError("no examples to evaluate")
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.mean(np.where(ranks <= k, 1.0 / ranks, 0.0)))


def recall_at_k(ranked_lists, targets, k: int) -> float:
    return recall_from_ranks(_ranks_from_lists(ranked_lists, targets), k)


def mrr_at_k(ranked_lists, targets, k: int) -> float:
    return mrr_from_ranks(_ranks_from_lists(ranked_lists, targets), k)
