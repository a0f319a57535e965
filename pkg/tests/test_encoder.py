"""Graph encoder: masking, determinism, the z0 -> z1 step, gradients."""

import numpy as np
import pytest
import torch

from helpers import tiny_batch, tiny_model, tiny_schedule, two_atom_graph, zero_parameters
from oracle_fd import autograd_grads, central_difference_grads, max_relative_error

from moldiffvae.encoder import sample_z1
from moldiffvae.errors import NonFiniteActivation
from moldiffvae.graphs import to_batch
from moldiffvae.schedule import NoiseSchedule


def test_zero_output_projection_gives_zero_latent():
    model = tiny_model()
    zero_parameters(model.encoder.out_proj)
    z0 = model.encoder.encode(tiny_batch())
    assert torch.all(z0 == 0.0)


def test_padding_width_does_not_change_latent():
    model = tiny_model(v_max=9)
    graphs = [two_atom_graph(), two_atom_graph(kind=2)]
    narrow = to_batch(graphs, 2, 3, 3)
    wide = to_batch(graphs, 9, 3, 3)
    z_narrow = model.encoder.encode(narrow)
    z_wide = model.encoder.encode(wide)
    assert torch.allclose(z_narrow, z_wide, rtol=1e-6, atol=1e-12)


def test_batch_rows_are_independent():
    model = tiny_model()
    g = two_atom_graph()
    batch = to_batch([g] * 5, 4, 3, 3)
    z0 = model.encoder.encode(batch)
    for row in range(1, 5):
        assert torch.equal(z0[row], z0[0])


def test_encode_is_bit_stable():
    model = tiny_model()
    batch = tiny_batch()
    a = model.encoder.encode(batch)
    b = model.encoder.encode(batch)
    assert torch.equal(a, b)


def test_non_finite_parameters_are_reported():
    model = tiny_model()
    with torch.no_grad():
        model.encoder.out_proj.weight[0, 0] = float("nan")
    with pytest.raises(NonFiniteActivation):
        model.encoder.encode(tiny_batch())


def test_sample_z1_zero_noise_scales_by_signal_coefficient():
    schedule = tiny_schedule()
    z0 = torch.tensor([[1.0, -2.0, 0.5, 3.0]], dtype=torch.float64)
    z1 = sample_z1(z0, schedule, torch.zeros_like(z0))
    expected = (1.0 - schedule.beta(1)) ** 0.5 * z0
    assert torch.allclose(z1, expected, rtol=0, atol=1e-15)


def test_sample_z1_direct_substitution():
    # beta_1 = 0.5, z0 = (1, 0), noise = (0, 1) -> (sqrt(.5), sqrt(.5))
    schedule = NoiseSchedule(np.array([0.5]))
    z0 = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    noise = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    z1 = sample_z1(z0, schedule, noise)
    root_half = 0.5**0.5
    assert torch.allclose(
        z1, torch.tensor([[root_half, root_half]], dtype=torch.float64), atol=1e-15
    )


def test_sample_z1_monte_carlo_moments():
    # Empirical mean and variance over 1e5 draws against the stated
    # Gaussian: mean sqrt(1 - beta_1) z0, variance beta_1 per coordinate.
    schedule = tiny_schedule()
    beta1 = schedule.beta(1)
    rng = np.random.default_rng(42)
    z0 = torch.tensor([[0.7, -1.3]], dtype=torch.float64)
    n = 100_000
    noise = torch.from_numpy(rng.standard_normal((n, 2)))
    draws = sample_z1(z0.expand(n, 2), schedule, noise)
    mean = draws.mean(dim=0)
    var = draws.var(dim=0, unbiased=False)
    expected_mean = (1.0 - beta1) ** 0.5 * z0[0]
    assert torch.allclose(mean, expected_mean, rtol=0.02, atol=0.01)
    assert torch.allclose(var, torch.full((2,), beta1, dtype=torch.float64), rtol=0.02)


def test_sample_z1_is_affine():
    schedule = tiny_schedule()
    rng = np.random.default_rng(3)
    z0 = torch.from_numpy(rng.standard_normal((4, 3)))
    noise = torch.from_numpy(rng.standard_normal((4, 3)))
    zeros = torch.zeros_like(z0)
    # homogeneity in z0 at zero noise
    a = 2.5
    assert torch.allclose(
        sample_z1(a * z0, schedule, zeros), a * sample_z1(z0, schedule, zeros), atol=1e-14
    )
    # superposition: f(z, n) = f(z, 0) + f(0, n)
    assert torch.allclose(
        sample_z1(z0, schedule, noise),
        sample_z1(z0, schedule, zeros) + sample_z1(zeros, schedule, noise),
        atol=1e-14,
    )


def test_encoder_gradient_matches_finite_differences():
    model = tiny_model(d_model=8, n_heads=2)
    batch = to_batch([two_atom_graph()], 2, 3, 3)
    params = [p for _, p in sorted(model.encoder.named_parameters())]

    def loss_tensor():
        z0 = model.encoder.encode(batch)
        return (z0**2).sum()

    analytic = autograd_grads(loss_tensor, params)
    numeric = central_difference_grads(lambda: float(loss_tensor().detach()), params)
    assert max_relative_error(analytic, numeric) <= 1e-4
