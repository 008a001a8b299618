"""Side-information embedding and item/side hidden-state fusion.

The side branch of either model is a structural copy of its item encoder with
its own weights; its per-step hidden states are concatenated after the item
hidden states (item half first) and the fused vectors replace the item ones
everywhere downstream.
"""

from __future__ import annotations

import copy
from typing import Optional

import torch
from torch import nn


def init_uniform_(module: nn.Module, dim: int) -> nn.Module:
    """Uniform(-1/sqrt(dim), 1/sqrt(dim)) init on every parameter; embedding pad rows zeroed."""
    bound = 1.0 / dim ** 0.5
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-bound, bound)
        for m in module.modules():
            if isinstance(m, nn.Embedding) and m.padding_idx is not None:
                m.weight[m.padding_idx].zero_()
    return module


def embed_side_single(side_id: int, table: torch.Tensor) -> torch.Tensor:
    if not 0 <= side_id < table.shape[0]:
        raise IndexError(f"side id {side_id} outside vocabulary of size {table.shape[0]}")
    return table[side_id]


def embed_side_multi(side_ids, table: torch.Tensor) -> torch.Tensor:
    """Mean of the member rows of a non-empty set of side IDs."""
    ids = sorted(set(int(i) for i in side_ids))
    if not ids:
        raise ValueError("empty side set; padded steps must be masked before embedding")
    for i in ids:
        if not 0 <= i < table.shape[0]:
            raise IndexError(f"side id {i} outside vocabulary of size {table.shape[0]}")
    return table[ids].mean(dim=0)


def embed_side_ids(ids: torch.Tensor, embedding: nn.Embedding) -> torch.Tensor:
    """Batched side embedding for (..., W) side-ID tensors, zero padded along W.

    Each slot averages the embeddings of its non-zero IDs; with W=1 this is a
    plain lookup. All-zero slots (padding) come out as zero vectors.
    """
    valid = (ids != 0).to(embedding.weight.dtype)
    rows = embedding(ids) * valid.unsqueeze(-1)
    count = valid.sum(-1, keepdim=True).clamp_min(1.0)
    return rows.sum(-2) / count


def clone_encoder(encoder: nn.Module, dim: Optional[int] = None) -> nn.Module:
    """Structural copy with independent, freshly initialised weights."""
    twin = copy.deepcopy(encoder)
    if dim is not None:
        init_uniform_(twin, dim)
    return twin


def fuse(item_hidden: torch.Tensor, side_hidden: Optional[torch.Tensor],
         mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Concatenate per-step item and side hidden states along the last axis.

    ``side_hidden=None`` is baseline mode and returns ``item_hidden`` as is
    (masked positions zeroed).
    """
    if side_hidden is None:
        out = item_hidden
    else:
        if item_hidden.shape != side_hidden.shape:
            raise ValueError(f"shape mismatch: item {tuple(item_hidden.shape)} "
                             f"vs side {tuple(side_hidden.shape)}")
        out = torch.cat([item_hidden, side_hidden], dim=-1)
    if mask is not None:
        if mask.shape != out.shape[:-1]:
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match {tuple(out.shape[:-1])}")
        out = out * mask.unsqueeze(-1).to(out.dtype)
    return out
