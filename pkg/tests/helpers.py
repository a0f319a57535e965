"""Shared builders for model-level tests: tiny configurations, hand-made
graphs, and parameter surgery (zeroing, constant outputs)."""

import numpy as np
import torch

from moldiffvae.decoder import DecoderConfig
from moldiffvae.diffusion import Denoiser, DenoiserConfig
from moldiffvae.encoder import EncoderConfig
from moldiffvae.graphs import MolecularGraph, to_batch
from moldiffvae.model import build_model, init_parameters
from moldiffvae.property_head import HeadConfig
from moldiffvae.schedule import linear_schedule


def tiny_model(
    d=4,
    v_max=4,
    n_node_types=3,
    n_bond_types=3,
    n_steps=3,
    seed=0,
    d_model=8,
    n_heads=2,
    n_layers=1,
    hidden=8,
    time_dim=4,
    head_hidden=6,
):
    model = build_model(
        EncoderConfig(d=d, n_layers=n_layers, n_heads=n_heads, d_model=d_model),
        DecoderConfig(n_layers=n_layers, n_heads=n_heads, d_model=d_model),
        DenoiserConfig(d=d, hidden=hidden, time_dim=time_dim),
        HeadConfig(hidden=head_hidden),
        n_node_types,
        n_bond_types,
        v_max,
        n_steps,
    )
    init_parameters(model, np.random.default_rng(seed))
    return model


def tiny_schedule(n_steps=3, beta_start=0.1, beta_end=0.3):
    return linear_schedule(n_steps, beta_start, beta_end)


def two_atom_graph(kind=1):
    return MolecularGraph(np.array([0, 1]), np.array([[0, kind], [kind, 0]]))


def path_graph(types, kinds):
    """Chain molecule: types[i] bonded to types[i+1] with kinds[i]."""
    n = len(types)
    matrix = np.zeros((n, n), dtype=np.int64)
    for i, k in enumerate(kinds):
        matrix[i, i + 1] = matrix[i + 1, i] = k
    return MolecularGraph(np.asarray(types, dtype=np.int64), matrix)


def tiny_batch(graphs=None, v_max=4, n_node_types=3, n_bond_types=3):
    if graphs is None:
        graphs = [two_atom_graph(), path_graph([0, 1, 2], [1, 2])]
    return to_batch(graphs, v_max, n_node_types, n_bond_types)


def zero_parameters(module: torch.nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def constant_denoiser(d, value, n_steps, hidden=8, time_dim=4) -> Denoiser:
    """A denoiser whose output is the fixed vector `value` at every (z, t)."""
    den = Denoiser(DenoiserConfig(d=d, hidden=hidden, time_dim=time_dim), n_steps)
    zero_parameters(den)
    with torch.no_grad():
        den.out.bias.copy_(torch.as_tensor(value, dtype=torch.float64))
    return den


def linear_skip_denoiser(d, matrix, n_steps, hidden=8, time_dim=4) -> Denoiser:
    """A denoiser computing exactly z_t @ matrix.T (pure skip path)."""
    den = Denoiser(DenoiserConfig(d=d, hidden=hidden, time_dim=time_dim), n_steps)
    zero_parameters(den)
    with torch.no_grad():
        den.skip.weight.copy_(torch.as_tensor(matrix, dtype=torch.float64))
    return den
