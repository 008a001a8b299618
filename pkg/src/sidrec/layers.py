from __future__ import annotations

import torch

NEG_INF = float("-inf")


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax over entries where ``mask`` is True; masked entries get exactly 0.

    Rows with no valid entry return all zeros instead of NaN.
    """
    filled = logits.masked_fill(~mask, NEG_INF)
    any_valid = mask.any(dim=dim, keepdim=True)
    filled = torch.where(any_valid, filled, torch.zeros_like(filled))
    probs = torch.softmax(filled, dim=dim)
    return probs * mask.to(probs.dtype)


def gather_last(seq: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """seq[b, lengths[b] - 1] for a (B, L, D) tensor."""
    idx = (lengths - 1).clamp_min(0).view(-1, 1, 1).expand(-1, 1, seq.shape[-1])
    return seq.gather(1, idx).squeeze(1)
