"""Graph encoder: molecular graph batch -> z0 -> z1.

The encoder is a small pre-norm transformer over node slots.  Bond
categories enter as per-head additive attention biases, padded slots are
excluded from attention and pooling, and a masked mean over node states
followed by a linear projection produces the d-dimensional z0.  The
stochastic step to z1 is the reparameterized Gaussian
z1 = sqrt(1 - beta_1) * z0 + sqrt(beta_1) * noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import NonFiniteActivation
from .graphs import GraphBatch
from .schedule import NoiseSchedule
from .transformer import MASKED_KEY_BIAS, TransformerLayer


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 16
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError(f"latent dimension must be >= 1, got {self.d}")
        if self.n_layers < 1:
            raise ValueError(f"need at least one layer, got {self.n_layers}")
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


class GraphEncoder(nn.Module):
    """Deterministic map from a graph batch to z0 in R^d.

    v_max bounds the positional table; batches may be narrower, in which
    case the table is sliced, so the same molecule encodes identically
    regardless of how much padding its batch carries.
    """

    def __init__(self, config: EncoderConfig, n_node_types: int, n_bond_types: int, v_max: int):
        super().__init__()
        self.config = config
        self.v_max = v_max
        self.node_embed = nn.Linear(n_node_types, config.d_model)
        self.pos_embed = nn.Embedding(v_max, config.d_model)
        self.edge_bias = nn.Embedding(n_bond_types, config.n_heads)
        self.layers = nn.ModuleList(
            TransformerLayer(config.d_model, config.n_heads, config.dropout)
            for _ in range(config.n_layers)
        )
        self.final_norm = nn.LayerNorm(config.d_model)
        self.out_proj = nn.Linear(config.d_model, config.d)
        self.double()

    def encode(self, batch: GraphBatch) -> torch.Tensor:
        b, v = batch.node_onehot.shape[:2]
        if v > self.v_max:
            raise ValueError(f"batch width {v} exceeds positional table size {self.v_max}")
        x = self.node_embed(batch.node_onehot) + self.pos_embed.weight[:v]

        # B x H x V x V additive scores: learned per-head bond biases plus
        # the masking term that removes padded keys from every softmax.
        bias = self.edge_bias(batch.bond_category_matrix()).permute(0, 3, 1, 2)
        key_gate = torch.where(
            batch.node_mask, torch.tensor(0.0, dtype=torch.float64), MASKED_KEY_BIAS
        )
        bias = bias + key_gate.view(b, 1, 1, v)

        for layer in self.layers:
            x = layer(x, bias)
        x = self.final_norm(x)

        mask = batch.node_mask.to(torch.float64).unsqueeze(-1)
        pooled = (x * mask).sum(dim=1) / mask.sum(dim=1)
        z0 = self.out_proj(pooled)
        if not torch.isfinite(z0).all():
            raise NonFiniteActivation("encoder produced a non-finite latent")
        return z0

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        return self.encode(batch)


def sample_z1(
    z0: torch.Tensor, schedule: NoiseSchedule, noise: torch.Tensor
) -> torch.Tensor:
    """Reparameterized draw from the first-step posterior.

    z1 = sqrt(1 - beta_1) * z0 + sqrt(beta_1) * noise, elementwise; the
    caller supplies the standard-normal draws so gradients flow through
    z0 and tests can inject zeros.
    """
    beta1 = schedule.beta(1)
    noise = torch.as_tensor(noise, dtype=z0.dtype)
    return (1.0 - beta1) ** 0.5 * z0 + beta1**0.5 * noise
