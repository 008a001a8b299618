"""RepeatNet with an optional side-information branch.

Session encoder (bias-free GRU), repeat-or-explore gate, repeat decoder and a
dot-product explore decoder scoring ``W_p [h_t ; c_e]`` against each
candidate's (fused) embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import nn

from . import attention
from .fusion import clone_encoder, embed_side_ids, fuse, init_uniform_
from .layers import gather_last, masked_softmax

PROB_FLOOR = 1e-12


class GRUEncoder(nn.Module):
    """h_r = (1 - z) * h_{r-1} + z * tanh(W_h [x ; r * h_{r-1}]), no biases, h_0 = 0."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.W_z = nn.Linear(input_dim + hidden_dim, hidden_dim, bias=False)
        self.W_r = nn.Linear(input_dim + hidden_dim, hidden_dim, bias=False)
        self.W_h = nn.Linear(input_dim + hidden_dim, hidden_dim, bias=False)

    def forward(self, inputs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """inputs (B, L, in), mask (B, L) -> hidden states (B, L, d).

        Masked steps carry the previous state forward and emit zeros.
        """
        if not torch.isfinite(inputs).all():
            raise FloatingPointError("non-finite GRU input")
        B, L, _ = inputs.shape
        h = inputs.new_zeros(B, self.hidden_dim)
        outs = []
        for t in range(L):
            x = inputs[:, t]
            xh = torch.cat([x, h], dim=-1)
            z = torch.sigmoid(self.W_z(xh))
            r = torch.sigmoid(self.W_r(xh))
            cand = torch.tanh(self.W_h(torch.cat([x, r * h], dim=-1)))
            h_new = (1 - z) * h + z * cand
            m = mask[:, t].unsqueeze(-1)
            h = torch.where(m, h_new, h)
            outs.append(h_new * m.to(h_new.dtype))
        return torch.stack(outs, dim=1)


def gru_encode(inputs: torch.Tensor, mask: torch.Tensor, params: GRUEncoder) -> torch.Tensor:
    return params(inputs, mask)


class Attention(nn.Module):
    """Additive attention logits e_r = v^T tanh(W q + U h_r)."""

    def __init__(self, dim: int):
        super().__init__()
        self.W = nn.Linear(dim, dim, bias=False)
        self.U = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, 1, bias=False)

    def forward(self, query: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
        return self.v(torch.tanh(self.W(query).unsqueeze(1) + self.U(hidden))).squeeze(-1)


class RepeatNetOutput(NamedTuple):
    probs: torch.Tensor          # B, V
    p_repeat: torch.Tensor       # B
    p_explore: torch.Tensor      # B
    repeat_probs: torch.Tensor   # B, V
    explore_probs: torch.Tensor  # B, V
    attention: torch.Tensor      # B, L; explore attention over prefix steps
    mask: torch.Tensor           # B, L


class RepeatNet(nn.Module):
    def __init__(self, n_items: int, n_sides: int = 1, item_sides: Optional[np.ndarray] = None,
                 embedding_dim: int = 100, hidden_dim: Optional[int] = None, use_side: bool = False):
        super().__init__()
        hidden_dim = hidden_dim or embedding_dim
        self.n_items = n_items
        self.use_side = use_side
        self.item_embeddings = nn.Embedding(n_items, embedding_dim, padding_idx=0)
        self.item_gru = GRUEncoder(embedding_dim, hidden_dim)
        fused_hidden = hidden_dim
        fused_emb = embedding_dim
        if use_side:
            self.side_embeddings = nn.Embedding(max(n_sides, 1), embedding_dim, padding_idx=0)
            self.side_gru = clone_encoder(self.item_gru)
            fused_hidden *= 2
            fused_emb *= 2
        if item_sides is None:
            item_sides = np.zeros((n_items, 1), dtype=np.int64)
        self.register_buffer("item_sides", torch.as_tensor(np.asarray(item_sides), dtype=torch.long))
        self.gate_attention = Attention(fused_hidden)
        self.W_T = nn.Linear(fused_hidden, 2, bias=False)
        self.repeat_attention = Attention(fused_hidden)
        self.explore_attention = Attention(fused_hidden)
        self.W_p = nn.Linear(2 * fused_hidden, fused_emb, bias=False)
        init_uniform_(self, hidden_dim)

    # -- pieces ------------------------------------------------------------

    def encode(self, inputs: torch.Tensor, side_inputs: Optional[torch.Tensor],
               mask: torch.Tensor) -> torch.Tensor:
        item_h = self.item_gru(self.item_embeddings(inputs), mask)
        side_h = None
        if self.use_side:
            side_h = self.side_gru(embed_side_ids(side_inputs, self.side_embeddings), mask)
        return fuse(item_h, side_h, mask)

    def candidate_embeddings(self) -> torch.Tensor:
        emb = self.item_embeddings.weight
        if self.use_side:
            emb = torch.cat([emb, embed_side_ids(self.item_sides, self.side_embeddings)], dim=-1)
        return emb

    def repeat_explore_gate(self, hidden, mask, last):
        alpha = masked_softmax(self.gate_attention(last, hidden), mask)
        context = (alpha.unsqueeze(-1) * hidden).sum(1)
        p = torch.softmax(self.W_T(context), dim=-1)
        return p[:, 0], p[:, 1]

    def repeat_decoder(self, hidden, mask, last, inputs):
        weights = masked_softmax(self.repeat_attention(last, hidden), mask)
        probs = hidden.new_zeros(inputs.shape[0], self.n_items)
        # occurrence sum: repeated items collect the weight of every position
        return probs.scatter_add(1, inputs, weights)

    def explore_decoder(self, hidden, mask, last, inputs):
        alpha = masked_softmax(self.explore_attention(last, hidden), mask)
        context = torch.cat([last, (alpha.unsqueeze(-1) * hidden).sum(1)], dim=-1)
        scores = self.W_p(context) @ self.candidate_embeddings().T
        seen = torch.zeros_like(scores, dtype=torch.bool).scatter(1, inputs, True)
        seen[:, 0] = True
        return masked_softmax(scores, ~seen), alpha

    def forward(self, inputs: torch.Tensor, side_inputs: Optional[torch.Tensor] = None) -> RepeatNetOutput:
        mask = inputs != 0
        lengths = mask.sum(1)
        if (lengths == 0).any():
            raise ValueError("every example needs at least one unmasked step")
        hidden = self.encode(inputs, side_inputs, mask)
        last = gather_last(hidden, lengths)
        p_repeat, p_explore = self.repeat_explore_gate(hidden, mask, last)
        rep = self.repeat_decoder(hidden, mask, last, inputs)
        exp, alpha = self.explore_decoder(hidden, mask, last, inputs)
        probs = p_repeat.unsqueeze(-1) * rep + p_explore.unsqueeze(-1) * exp
        return RepeatNetOutput(probs, p_repeat, p_explore, rep, exp, alpha, mask)

    def scores(self, inputs, side_inputs=None) -> torch.Tensor:
        return self(inputs, side_inputs).probs


# -- losses -----------------------------------------------------------------


def normal_loss(target_probs: torch.Tensor, normaliser: float) -> torch.Tensor:
    """-sum(log P(target)) / normaliser, probabilities floored at 1e-12."""
    return -torch.log(target_probs.clamp_min(PROB_FLOOR)).sum() / normaliser


def repeat_explore_loss(p_repeat: torch.Tensor, p_explore: torch.Tensor,
                        target_in_prefix: torch.Tensor, normaliser: float) -> torch.Tensor:
    chosen = torch.where(target_in_prefix, p_repeat, p_explore)
    return -torch.log(chosen.clamp_min(PROB_FLOOR)).sum() / normaliser


def repeatnet_loss(model: RepeatNet, inputs, side_inputs, targets, side_targets=None,
                   attention_weight: float = 0.0, normaliser: Optional[float] = None):
    """Total loss and its breakdown for a batch of prefix examples.

    Each example is one (prefix, next item) step; the step sums are divided by
    ``normaliser``, the number of sessions the steps came from (defaults to
    the number of examples).
    """
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    if attention_weight < 0:
        raise ValueError("attention_weight must be >= 0")
    n = inputs.shape[0] if normaliser is None else normaliser
    out = model(inputs, side_inputs)
    target_probs = out.probs.gather(1, targets.unsqueeze(1)).squeeze(1)
    in_prefix = (inputs == targets.unsqueeze(1)).any(1)
    l_normal = normal_loss(target_probs, n)
    l_re = repeat_explore_loss(out.p_repeat, out.p_explore, in_prefix, n)
    total = l_normal + l_re
    terms = {"normal": l_normal, "repeat_explore": l_re}
    if attention_weight > 0:
        tgt = attention.attention_targets(
            inputs, targets, out.mask,
            side_inputs if model.use_side else None,
            side_targets if model.use_side else None,
            dtype=out.attention.dtype)
        l_att = attention.attention_loss_batch(out.attention, tgt, n)
        total = total + attention_weight * l_att
        terms["attention"] = l_att
    return total, terms


# -- single-example convenience ---------------------------------------------


@dataclass
class PredictionDistribution:
    probs: np.ndarray
    p_repeat: float
    p_explore: float


def predict(example, model: RepeatNet) -> PredictionDistribution:
    from .data import ExampleSet

    batch = ExampleSet.from_examples([example])
    with torch.no_grad():
        out = model(torch.as_tensor(batch.inputs), torch.as_tensor(batch.side_inputs))
    return PredictionDistribution(out.probs[0].cpu().numpy(), float(out.p_repeat[0]),
                                  float(out.p_explore[0]))
