"""Shared transformer building blocks.

Both the graph encoder and the graph decoder are small pre-norm
transformers over node slots; they differ only in how tokens are built
and in whether attention scores carry an additive bias (edge categories
for the encoder, nothing for the decoder).  The pieces here are written
for double precision on CPU.
"""

from __future__ import annotations

import math

import torch
from torch import nn

# Additive score for masked keys. exp(x - max) underflows to an exact 0.0
# in double precision at this magnitude, so masked keys receive literally
# zero attention weight rather than merely a small one.
MASKED_KEY_BIAS = -1e30


class SelfAttention(nn.Module):
    """Multi-head self-attention with an optional additive score bias.

    score_bias has shape B x H x V x V and is added to the scaled
    dot-product scores before the softmax.  Key masking is expressed
    through the same bias (large negative entries), which keeps the
    whole mechanism a single code path.
    """

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, score_bias: torch.Tensor | None = None) -> torch.Tensor:
        b, v, _ = x.shape
        h, dh = self.n_heads, self.d_head

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(b, v, h, dh).transpose(1, 2)

        q = split(self.query(x))
        k = split(self.key(x))
        val = split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if score_bias is not None:
            scores = scores + score_bias
        weights = torch.softmax(scores, dim=-1)
        mixed = (weights @ val).transpose(1, 2).reshape(b, v, h * dh)
        return self.out(mixed)


class TransformerLayer(nn.Module):
    """Pre-norm block: x + attn(norm(x)), then x + ffn(norm(x))."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.ff_norm = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )
        # Dropout is carried for config completeness; every shipped default
        # sets it to 0 so evaluation stays deterministic.  A nonzero rate
        # draws from torch's global generator, unlike everything else in
        # this package, which routes randomness through explicit arguments.
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, score_bias: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.drop(self.attn(self.attn_norm(x), score_bias))
        x = x + self.drop(self.ff(self.ff_norm(x)))
        return x
