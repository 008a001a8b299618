"""Attention regularisation toward prefix steps that match the target item or side."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import torch

ALPHA_FLOOR = 1e-12


def _side_match(a, b) -> bool:
    if isinstance(a, (tuple, frozenset, set)) or isinstance(b, (tuple, frozenset, set)):
        sa = set(a) if isinstance(a, (tuple, frozenset, set)) else {a}
        sb = set(b) if isinstance(b, (tuple, frozenset, set)) else {b}
        sa.discard(0)
        sb.discard(0)
        return bool(sa & sb)
    return a == b and a != 0


def _normalise(hits: list[bool]) -> list[float]:
    k = sum(hits)
    return [1.0 / k if h else 0.0 for h in hits] if k else [0.0] * len(hits)


def item_target(prefix_items: Sequence, target_item) -> list[float]:
    """1/k on each of the k prefix positions holding ``target_item``, else 0."""
    if not len(prefix_items):
        raise ValueError("prefix must be non-empty")
    return _normalise([i == target_item for i in prefix_items])


def side_target(prefix_sides: Sequence, target_side) -> list[float]:
    """Like item_target; set-valued sides match on non-empty intersection."""
    if not len(prefix_sides):
        raise ValueError("prefix must be non-empty")
    return _normalise([_side_match(s, target_side) for s in prefix_sides])


def attention_loss(alpha: Sequence[float], prefix_items: Sequence, prefix_sides: Optional[Sequence],
                   target_item, target_side=None) -> float:
    """Cross-entropy of ``alpha`` against the combined item/side target for one prefix.

    Without side information (``prefix_sides=None``) the target is the item
    target alone.
    """
    if len(alpha) != len(prefix_items):
        raise ValueError(f"alpha has {len(alpha)} entries for a prefix of {len(prefix_items)}")
    weights = item_target(prefix_items, target_item)
    if prefix_sides is not None:
        if len(prefix_sides) != len(prefix_items):
            raise ValueError("prefix_sides and prefix_items differ in length")
        side = side_target(prefix_sides, target_side)
        weights = [(a + b) / 2 for a, b in zip(weights, side)]
    return -sum(w * math.log(max(a, ALPHA_FLOOR)) for w, a in zip(weights, alpha) if w)


def _row_normalise(hits: torch.Tensor, dtype) -> torch.Tensor:
    hits = hits.to(dtype)
    return hits / hits.sum(-1, keepdim=True).clamp_min(1.0)


def attention_targets(inputs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor,
                      side_inputs: Optional[torch.Tensor] = None,
                      side_targets: Optional[torch.Tensor] = None,
                      dtype=torch.float32) -> torch.Tensor:
    """Batched combined targets, (B, L).

    ``side_inputs`` is (B, L, W) and ``side_targets`` (B, W), zero padded.
    """
    item_hits = (inputs == targets.unsqueeze(-1)) & mask
    combined = _row_normalise(item_hits, dtype)
    if side_inputs is not None:
        a = side_inputs.unsqueeze(-1)                 # B, L, W, 1
        b = side_targets[:, None, None, :]            # B, 1, 1, W
        side_hits = ((a == b) & (a != 0) & (b != 0)).flatten(2).any(-1) & mask
        combined = (combined + _row_normalise(side_hits, dtype)) / 2
    return combined


def attention_loss_batch(alpha: torch.Tensor, combined_targets: torch.Tensor,
                         normaliser: Optional[float] = None) -> torch.Tensor:
    """Sum of per-prefix losses divided by ``normaliser`` (default: batch size)."""
    n = alpha.shape[0] if normaliser is None else normaliser
    logs = torch.log(alpha.clamp_min(ALPHA_FLOOR))
    return -(combined_targets * logs).sum() / n
