"""Graph decoder: z1 -> categorical node and edge distributions.

z1 is broadcast to V_max query tokens, each offset by a learned
positional embedding, and refined by a small transformer.  A node head
gives K logits per slot; an edge head reads the summed states of a
slot pair, so positions (i, j) and (j, i) produce the same logits by
construction.  Edge slots enumerate the strict upper triangle, with
category 0 meaning "no bond".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import NonFiniteActivation, ShapeMismatch
from .graphs import GraphBatch, MolecularGraph, edge_slot_indices, from_categorical
from .transformer import TransformerLayer


@dataclass(frozen=True)
class DecoderConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError(f"need at least one layer, got {self.n_layers}")
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


class GraphDecoder(nn.Module):
    def __init__(
        self,
        config: DecoderConfig,
        d: int,
        n_node_types: int,
        n_bond_types: int,
        v_max: int,
    ):
        super().__init__()
        self.config = config
        self.v_max = v_max
        self.in_proj = nn.Linear(d, config.d_model)
        self.pos_embed = nn.Embedding(v_max, config.d_model)
        self.layers = nn.ModuleList(
            TransformerLayer(config.d_model, config.n_heads, config.dropout)
            for _ in range(config.n_layers)
        )
        self.final_norm = nn.LayerNorm(config.d_model)
        self.node_head = nn.Linear(config.d_model, n_node_types)
        self.edge_hidden = nn.Linear(config.d_model, config.d_model)
        self.edge_head = nn.Linear(config.d_model, n_bond_types)
        iu, ju = edge_slot_indices(v_max)
        self.register_buffer("slot_i", torch.from_numpy(iu), persistent=False)
        self.register_buffer("slot_j", torch.from_numpy(ju), persistent=False)
        self.double()

    def decode_logits(self, z1: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits for every node and edge slot; masking is the caller's job."""
        x = self.in_proj(z1).unsqueeze(1) + self.pos_embed.weight
        for layer in self.layers:
            x = layer(x)
        x = self.final_norm(x)
        node_logits = self.node_head(x)
        pair = x[:, self.slot_i] + x[:, self.slot_j]
        edge_logits = self.edge_head(torch.nn.functional.gelu(self.edge_hidden(pair)))
        if not (torch.isfinite(node_logits).all() and torch.isfinite(edge_logits).all()):
            raise NonFiniteActivation("decoder produced non-finite logits")
        return node_logits, edge_logits

    def forward(self, z1: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.decode_logits(z1)

    def greedy_decode(
        self, z1: torch.Tensor, node_mask: np.ndarray
    ) -> list[MolecularGraph]:
        """Mode of each categorical, then graph assembly.

        Ties go to the lowest category index (numpy argmax picks the
        first maximum), which makes the all-uniform case decode to
        category 0 everywhere.
        """
        node_mask = np.asarray(node_mask, dtype=bool)
        if node_mask.ndim == 1:
            node_mask = np.broadcast_to(node_mask, (z1.shape[0], node_mask.shape[0]))
        with torch.no_grad():
            node_logits, edge_logits = self.decode_logits(z1)
        node_pick = np.argmax(node_logits.numpy(), axis=-1)
        edge_pick = np.argmax(edge_logits.numpy(), axis=-1)
        return [
            from_categorical(node_pick[b], edge_pick[b], node_mask[b])
            for b in range(z1.shape[0])
        ]


def log_likelihood(
    node_logits: torch.Tensor, edge_logits: torch.Tensor, truth: GraphBatch
) -> torch.Tensor:
    """Per-graph log-probability of the true categories under the decoder.

    Sum of log softmax-probabilities of the true node category over
    unmasked node slots plus the same over unmasked edge slots.  Masked
    slots are replaced by exact zeros before the reduction, so their
    logits cannot influence the value even at the bit level.
    """
    if node_logits.shape != truth.node_onehot.shape:
        raise ShapeMismatch(
            f"node logits {tuple(node_logits.shape)} vs truth {tuple(truth.node_onehot.shape)}"
        )
    if edge_logits.shape != truth.edge_onehot.shape:
        raise ShapeMismatch(
            f"edge logits {tuple(edge_logits.shape)} vs truth {tuple(truth.edge_onehot.shape)}"
        )
    zero = torch.tensor(0.0, dtype=node_logits.dtype)
    node_logp = torch.log_softmax(node_logits, dim=-1)
    node_true = (node_logp * truth.node_onehot).sum(dim=-1)
    node_sum = torch.where(truth.node_mask, node_true, zero).sum(dim=-1)
    edge_logp = torch.log_softmax(edge_logits, dim=-1)
    edge_true = (edge_logp * truth.edge_onehot).sum(dim=-1)
    edge_sum = torch.where(truth.edge_mask, edge_true, zero).sum(dim=-1)
    return node_sum + edge_sum
