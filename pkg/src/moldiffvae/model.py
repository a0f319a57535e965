"""Assembly of the four parameter groups and deterministic initialization.

The full model is encoder (graph -> z0), denoiser (z_t, t -> noise
estimate), decoder (z1 -> categorical logits), and a scalar regression
head on z1.  Training code addresses these as named groups so freezing
and checkpointing stay explicit.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .decoder import DecoderConfig, GraphDecoder
from .diffusion import Denoiser, DenoiserConfig
from .encoder import EncoderConfig, GraphEncoder
from .property_head import HeadConfig, RegressionHead

GROUP_NAMES = ("encoder", "decoder", "denoiser", "head")


class DiffusionAutoencoder(nn.Module):
    def __init__(
        self,
        encoder: GraphEncoder,
        decoder: GraphDecoder,
        denoiser: Denoiser,
        head: RegressionHead,
    ):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder
        self.denoiser = denoiser
        self.head = head

    def group(self, name: str) -> nn.Module:
        if name not in GROUP_NAMES:
            raise KeyError(f"unknown parameter group {name!r}; expected one of {GROUP_NAMES}")
        return getattr(self, name)

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Name-sorted snapshot of every parameter as a numpy array."""
        return {
            name: p.detach().numpy().copy()
            for name, p in sorted(self.named_parameters())
        }

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(tensors))
        extra = sorted(set(tensors) - set(own))
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch (missing {missing[:3]}, unexpected {extra[:3]})"
            )
        with torch.no_grad():
            for name, p in own.items():
                value = np.asarray(tensors[name], dtype=np.float64)
                if value.shape != tuple(p.shape):
                    raise ValueError(
                        f"shape mismatch for {name}: checkpoint {value.shape},"
                        f" model {tuple(p.shape)}"
                    )
                p.copy_(torch.from_numpy(value))


def build_model(
    encoder_config: EncoderConfig,
    decoder_config: DecoderConfig,
    denoiser_config: DenoiserConfig,
    head_config: HeadConfig,
    n_node_types: int,
    n_bond_types: int,
    v_max: int,
    n_steps: int,
) -> DiffusionAutoencoder:
    if denoiser_config.d != encoder_config.d:
        raise ValueError(
            f"denoiser latent dimension {denoiser_config.d} disagrees with"
            f" encoder dimension {encoder_config.d}"
        )
    encoder = GraphEncoder(encoder_config, n_node_types, n_bond_types, v_max)
    decoder = GraphDecoder(decoder_config, encoder_config.d, n_node_types, n_bond_types, v_max)
    denoiser = Denoiser(denoiser_config, n_steps)
    head = RegressionHead(encoder_config.d, head_config)
    return DiffusionAutoencoder(encoder, decoder, denoiser, head)


def init_parameters(root: nn.Module, rng: np.random.Generator) -> None:
    """Reset every parameter from the supplied generator, deterministically.

    Parameters are visited in sorted-name order so the same seed always
    yields the same weights.  Linear and embedding weights draw from a
    zero-mean normal with variance 1/fan_in (an embedding lookup is a
    linear map of a one-hot, so its fan_in is the table size); biases are
    zeroed and layer norms start at the identity.
    """
    owners: dict[str, tuple[nn.Module, str, nn.Parameter]] = {}
    for mod_name, mod in root.named_modules():
        for p_name, p in mod.named_parameters(recurse=False):
            full = f"{mod_name}.{p_name}" if mod_name else p_name
            owners[full] = (mod, p_name, p)
    with torch.no_grad():
        for full in sorted(owners):
            mod, p_name, p = owners[full]
            if isinstance(mod, nn.LayerNorm):
                if p_name == "weight":
                    p.fill_(1.0)
                else:
                    p.zero_()
            elif p_name == "bias":
                p.zero_()
            elif isinstance(mod, nn.Linear):
                std = 1.0 / math.sqrt(p.shape[1])
                p.copy_(torch.from_numpy(rng.normal(0.0, std, size=tuple(p.shape))))
            elif isinstance(mod, nn.Embedding):
                std = 1.0 / math.sqrt(p.shape[0])
                p.copy_(torch.from_numpy(rng.normal(0.0, std, size=tuple(p.shape))))
            else:
                raise ValueError(f"no initialization rule for parameter {full}")
