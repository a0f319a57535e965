"""Parameter assembly: grouped access, seeded init, snapshot round-trips."""

import numpy as np
import pytest
import torch

from helpers import tiny_model

from moldiffvae.decoder import DecoderConfig
from moldiffvae.diffusion import DenoiserConfig
from moldiffvae.encoder import EncoderConfig
from moldiffvae.model import GROUP_NAMES, build_model, init_parameters
from moldiffvae.property_head import HeadConfig


def test_groups_cover_all_parameters():
    model = tiny_model()
    total = sum(p.numel() for p in model.parameters())
    by_group = sum(
        p.numel() for name in GROUP_NAMES for p in model.group(name).parameters()
    )
    assert total == by_group
    with pytest.raises(KeyError):
        model.group("optimizer")


def test_init_is_seed_deterministic():
    a = tiny_model(seed=7).named_tensors()
    b = tiny_model(seed=7).named_tensors()
    c = tiny_model(seed=8).named_tensors()
    assert a.keys() == b.keys() == c.keys()
    for name in a:
        assert np.array_equal(a[name], b[name])
    assert any(not np.array_equal(a[name], c[name]) for name in a)


def test_init_zeroes_biases_and_sets_norms_to_identity():
    model = tiny_model(seed=3)
    for name, p in model.named_parameters():
        if "norm" in name:
            expected = 1.0 if name.endswith("weight") else 0.0
            assert torch.all(p == expected), name
        elif name.endswith("bias"):
            assert torch.all(p == 0.0), name


def test_init_weight_scale_tracks_fan_in():
    # Linear weights draw from variance 1/fan_in; with enough entries
    # the sample std should sit near 1/sqrt(fan_in).
    model = tiny_model(seed=5, d_model=32, n_heads=4)
    w = model.encoder.layers[0].ff[0].weight.detach()  # 128 x 32
    expected = 1.0 / np.sqrt(w.shape[1])
    assert float(w.std()) == pytest.approx(expected, rel=0.15)


def test_snapshot_round_trip():
    source = tiny_model(seed=1)
    clone = tiny_model(seed=2)
    clone.load_tensors(source.named_tensors())
    for (na, pa), (nb, pb) in zip(
        sorted(source.named_parameters()), sorted(clone.named_parameters())
    ):
        assert na == nb
        assert torch.equal(pa, pb)


def test_load_rejects_name_and_shape_mismatches():
    model = tiny_model()
    tensors = model.named_tensors()
    missing = dict(tensors)
    missing.pop(next(iter(sorted(missing))))
    with pytest.raises(ValueError):
        model.load_tensors(missing)

    wrong_shape = dict(tensors)
    name = next(iter(sorted(wrong_shape)))
    wrong_shape[name] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        model.load_tensors(wrong_shape)


def test_build_rejects_latent_dimension_disagreement():
    with pytest.raises(ValueError):
        build_model(
            EncoderConfig(d=8, d_model=8, n_heads=2, n_layers=1),
            DecoderConfig(n_layers=1, n_heads=2, d_model=8),
            DenoiserConfig(d=4, hidden=8, time_dim=4),
            HeadConfig(hidden=4),
            3,
            3,
            4,
            3,
        )


def test_everything_is_double_precision():
    model = tiny_model()
    for name, p in model.named_parameters():
        assert p.dtype == torch.float64, name
