"""SR-GNN with an optional side-information graph encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import attention
from .errors import UnsupportedConfigError
from .fusion import clone_encoder, fuse, init_uniform_
from .layers import gather_last, masked_softmax

PROB_FLOOR = 1e-12

MULTI_SIDE_MESSAGE = (
    "SR-GNN supports only single-valued side information: a graph edge encodes a "
    "transition between two single categories, not between sets of categories "
    "(multi-valued profiles such as MovieLens genres are excluded)"
)


@dataclass
class SessionGraph:
    nodes: np.ndarray   # distinct IDs, first-appearance order
    A_out: np.ndarray   # n x n
    A_in: np.ndarray    # n x n
    alias: np.ndarray   # sequence position -> node index
    last_node: int

    @property
    def A(self) -> np.ndarray:
        return np.concatenate([self.A_out, self.A_in], axis=1)


def build_session_graph(prefix: Sequence[int]) -> SessionGraph:
    """Directed transition graph of a prefix.

    A_out[u, v] = count(u->v) / total outgoing transitions of u;
    A_in[v, u] = count(u->v) / total incoming transitions of v.
    """
    prefix = [int(p) for p in prefix]
    if not prefix:
        raise ValueError("prefix must be non-empty")
    if any(p == 0 for p in prefix):
        raise ValueError("prefix must not contain pad IDs")
    index: dict[int, int] = {}
    alias = []
    for p in prefix:
        if p not in index:
            index[p] = len(index)
        alias.append(index[p])
    n = len(index)
    counts = np.zeros((n, n))
    for u, v in zip(alias[:-1], alias[1:]):
        counts[u, v] += 1
    out_deg = counts.sum(1, keepdims=True)
    in_deg = counts.sum(0, keepdims=True)
    A_out = np.divide(counts, out_deg, out=np.zeros_like(counts), where=out_deg > 0)
    A_in = np.divide(counts, in_deg, out=np.zeros_like(counts), where=in_deg > 0).T
    return SessionGraph(np.array(list(index), dtype=np.int64), A_out, A_in,
                        np.array(alias, dtype=np.int64), alias[-1])


class GatedGraphEncoder(nn.Module):
    """One gated propagation step, applied ``steps`` times.

    a_i = H [A_out_i V ; A_in_i V] + b, then a GRU-style update of v_i.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.H = nn.Linear(2 * dim, dim, bias=True)
        self.W_z = nn.Linear(dim, dim, bias=False)
        self.U_z = nn.Linear(dim, dim, bias=False)
        self.W_r = nn.Linear(dim, dim, bias=False)
        self.U_r = nn.Linear(dim, dim, bias=False)
        self.W_o = nn.Linear(dim, dim, bias=False)
        self.U_o = nn.Linear(dim, dim, bias=False)

    def step(self, V, A_out, A_in):
        a = self.H(torch.cat([A_out @ V, A_in @ V], dim=-1))
        z = torch.sigmoid(self.W_z(a) + self.U_z(V))
        r = torch.sigmoid(self.W_r(a) + self.U_r(V))
        cand = torch.tanh(self.W_o(a) + self.U_o(r * V))
        return (1 - z) * V + z * cand

    def forward(self, V, A_out, A_in, steps: int = 1):
        if V.shape[-1] != self.dim or A_out.shape[-1] != V.shape[-2] or A_in.shape != A_out.shape:
            raise ValueError(f"shape mismatch: V {tuple(V.shape)}, A_out {tuple(A_out.shape)}, "
                             f"A_in {tuple(A_in.shape)}, dim {self.dim}")
        if steps < 1:
            raise ValueError("steps must be >= 1")
        for _ in range(steps):
            V = self.step(V, A_out, A_in)
        return V


def propagate(graph: SessionGraph, node_vectors: torch.Tensor, params: GatedGraphEncoder,
              steps: int = 1) -> torch.Tensor:
    dtype = node_vectors.dtype
    return params(node_vectors, torch.as_tensor(graph.A_out, dtype=dtype),
                  torch.as_tensor(graph.A_in, dtype=dtype), steps)


class GraphBatch(NamedTuple):
    nodes: torch.Tensor   # B, n
    A_out: torch.Tensor   # B, n, n
    A_in: torch.Tensor    # B, n, n
    alias: torch.Tensor   # B, L


def collate_graphs(graphs: Sequence[SessionGraph], length: int, dtype=torch.float32) -> GraphBatch:
    B = len(graphs)
    n = max(len(g.nodes) for g in graphs)
    nodes = np.zeros((B, n), dtype=np.int64)
    A_out = np.zeros((B, n, n))
    A_in = np.zeros((B, n, n))
    alias = np.zeros((B, length), dtype=np.int64)
    for b, g in enumerate(graphs):
        k = len(g.nodes)
        nodes[b, :k] = g.nodes
        A_out[b, :k, :k] = g.A_out
        A_in[b, :k, :k] = g.A_in
        alias[b, : len(g.alias)] = g.alias
    return GraphBatch(torch.from_numpy(nodes), torch.as_tensor(A_out, dtype=dtype),
                      torch.as_tensor(A_in, dtype=dtype), torch.from_numpy(alias))


def graphs_for(inputs: np.ndarray) -> list[SessionGraph]:
    """Session graphs for zero-padded (N, L) ID rows."""
    return [build_session_graph(row[row != 0]) for row in inputs]


class SrgnnOutput(NamedTuple):
    probs: torch.Tensor       # B, V
    logits: torch.Tensor      # B, V
    alpha: torch.Tensor       # B, L raw readout weights
    attention: torch.Tensor   # B, L softmax-normalised over unmasked steps
    mask: torch.Tensor        # B, L


class SRGNN(nn.Module):
    def __init__(self, n_items: int, n_sides: int = 1, item_sides: Optional[np.ndarray] = None,
                 embedding_dim: int = 100, use_side: bool = False, steps: int = 1):
        super().__init__()
        if item_sides is not None and np.asarray(item_sides).shape[-1] > 1 and use_side:
            raise UnsupportedConfigError(MULTI_SIDE_MESSAGE)
        self.n_items = n_items
        self.use_side = use_side
        self.steps = steps
        self.item_embeddings = nn.Embedding(n_items, embedding_dim, padding_idx=0)
        self.item_gnn = GatedGraphEncoder(embedding_dim)
        dim = embedding_dim
        if use_side:
            self.side_embeddings = nn.Embedding(max(n_sides, 1), embedding_dim, padding_idx=0)
            self.side_gnn = clone_encoder(self.item_gnn)
            dim *= 2
        if item_sides is None:
            item_sides = np.zeros((n_items, 1), dtype=np.int64)
        self.register_buffer("item_sides", torch.as_tensor(np.asarray(item_sides)[:, :1],
                                                           dtype=torch.long))
        self.W_1 = nn.Linear(dim, dim, bias=False)
        self.W_2 = nn.Linear(dim, dim, bias=False)
        self.c = nn.Parameter(torch.zeros(dim))
        self.q = nn.Linear(dim, 1, bias=False)
        self.W_3 = nn.Linear(2 * dim, dim, bias=False)
        init_uniform_(self, embedding_dim)

    def _encode_graph(self, g: GraphBatch, embedding: nn.Embedding, encoder: GatedGraphEncoder):
        V = encoder(embedding(g.nodes), g.A_out, g.A_in, self.steps)
        idx = g.alias.unsqueeze(-1).expand(-1, -1, V.shape[-1])
        return V.gather(1, idx)

    def session_readout(self, seq, mask):
        """Raw soft-attention weights and the hybrid session vector s_h."""
        last = gather_last(seq, mask.sum(1))
        alpha = self.q(torch.sigmoid(self.W_1(last).unsqueeze(1) + self.W_2(seq) + self.c)).squeeze(-1)
        alpha = alpha * mask.to(alpha.dtype)
        s_g = (alpha.unsqueeze(-1) * seq).sum(1)
        return self.W_3(torch.cat([last, s_g], dim=-1)), alpha

    def candidate_embeddings(self) -> torch.Tensor:
        emb = self.item_embeddings.weight
        if self.use_side:
            emb = torch.cat([emb, self.side_embeddings(self.item_sides[:, 0])], dim=-1)
        return emb

    def forward(self, inputs: torch.Tensor, item_graphs: GraphBatch,
                side_graphs: Optional[GraphBatch] = None) -> SrgnnOutput:
        mask = inputs != 0
        if (mask.sum(1) == 0).any():
            raise ValueError("every example needs at least one unmasked step")
        item_seq = self._encode_graph(item_graphs, self.item_embeddings, self.item_gnn)
        side_seq = None
        if self.use_side:
            side_seq = self._encode_graph(side_graphs, self.side_embeddings, self.side_gnn)
        seq = fuse(item_seq, side_seq, mask)
        s_h, alpha = self.session_readout(seq, mask)
        logits = s_h @ self.candidate_embeddings().T
        valid = torch.ones_like(logits, dtype=torch.bool)
        valid[:, 0] = False
        probs = masked_softmax(logits, valid)
        return SrgnnOutput(probs, logits, alpha, masked_softmax(alpha, mask), mask)

    def batch_graphs(self, inputs: np.ndarray, side_inputs: Optional[np.ndarray] = None):
        """Graph batches for numpy (B, L) inputs and (B, L, 1) side inputs."""
        dtype = self.item_embeddings.weight.dtype
        L = inputs.shape[1]
        items = collate_graphs(graphs_for(inputs), L, dtype)
        sides = None
        if self.use_side:
            sides = collate_graphs(graphs_for(np.asarray(side_inputs)[..., 0]), L, dtype)
        return items, sides

    def scores(self, inputs, side_inputs=None) -> torch.Tensor:
        inputs_np = np.asarray(inputs)
        sides_np = None if side_inputs is None else np.asarray(side_inputs)
        items, sides = self.batch_graphs(inputs_np, sides_np)
        return self(torch.as_tensor(inputs_np), items, sides).probs


def score_and_normalize(s_h: torch.Tensor, candidate_embeddings: torch.Tensor) -> torch.Tensor:
    """softmax(s_h . v_i) over candidates; row 0 of ``candidate_embeddings`` is the pad and gets 0."""
    logits = s_h @ candidate_embeddings.T
    valid = torch.ones_like(logits, dtype=torch.bool)
    valid[..., 0] = False
    return masked_softmax(logits, valid)


def binary_cross_entropy_terms(probs: torch.Tensor, targets: torch.Tensor,
                               normaliser: Optional[float] = None) -> torch.Tensor:
    """-sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] per example, averaged.

    Probabilities are clamped to [1e-12, 1 - 1e-12]; the pad column is skipped.
    In float32 ``1 - 1e-12`` rounds to 1, so the upper margin widens to the
    dtype's machine epsilon there.
    """
    if (targets == 0).any():
        raise ValueError("target must not be the pad ID")
    n = probs.shape[0] if normaliser is None else normaliser
    upper = 1 - max(PROB_FLOOR, torch.finfo(probs.dtype).eps)
    p = probs[:, 1:].clamp(PROB_FLOOR, upper)
    y = torch.zeros_like(p).scatter(1, (targets - 1).unsqueeze(1), 1.0)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).sum() / n


def srgnn_loss(model: SRGNN, inputs, item_graphs, side_graphs, targets, side_inputs=None,
               side_targets=None, attention_weight: float = 0.0,
               normaliser: Optional[float] = None):
    if attention_weight < 0:
        raise ValueError("attention_weight must be >= 0")
    out = model(inputs, item_graphs, side_graphs)
    n = inputs.shape[0] if normaliser is None else normaliser
    l_ce = binary_cross_entropy_terms(out.probs, targets, n)
    total = l_ce
    terms = {"cross_entropy": l_ce}
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


def srgnn_predict(example, model: SRGNN, side_kind: str = "single") -> np.ndarray:
    if side_kind == "multi":
        raise UnsupportedConfigError(MULTI_SIDE_MESSAGE)
    from .data import ExampleSet

    batch = ExampleSet.from_examples([example])
    if batch.side_inputs.shape[-1] > 1:
        raise UnsupportedConfigError(MULTI_SIDE_MESSAGE)
    with torch.no_grad():
        return model.scores(batch.inputs, batch.side_inputs)[0].cpu().numpy()
