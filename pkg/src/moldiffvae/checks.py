"""Operator-facing diagnostics behind the `check` command.

Each check recomputes a quantity the pipeline relies on through an
independent route (looped products, Monte Carlo, finite differences)
and reports the observed discrepancy against a fixed tolerance.  These
run on fresh random parameters; they hold for any finite weights, so a
failure means the algebra itself is broken, not that training is bad.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .decoder import DecoderConfig, log_likelihood
from .diffusion import (
    DenoiserConfig,
    marginal_sample,
    predict_noise,
    reverse_mean,
    reverse_step,
    run_chain,
)
from .encoder import EncoderConfig, sample_z1
from .model import build_model, init_parameters
from .objective import denoise_term, prior_kl_closed_form
from .property_head import HeadConfig
from .schedule import NoiseSchedule, linear_schedule
from .smiles import DEFAULT_ATOMS, DEFAULT_BONDS, parse
from .graphs import to_batch


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


def _result(name: str, value: float, tolerance: float, detail: str = "") -> CheckResult:
    return CheckResult(
        name=name,
        value=float(value),
        tolerance=float(tolerance),
        passed=bool(value <= tolerance),
        detail=detail,
    )


def _loop_alpha_bar(betas: np.ndarray) -> float:
    product = 1.0
    for beta in betas.tolist():
        product *= 1.0 - beta
    return product


def check_schedule_products(corrupt_alpha_bars: bool = False) -> list[CheckResult]:
    """Stored cumulative products vs a plain left-fold over the betas."""
    results = []
    for n_steps in (1, 2, 50, 1000):
        schedule = linear_schedule(n_steps, 1e-4, 0.02)
        if corrupt_alpha_bars:
            schedule.alpha_bars[-1] *= 1.01
        worst = 0.0
        running = 1.0
        for t in range(1, n_steps + 1):
            running *= 1.0 - schedule.beta(t)
            rel = abs(schedule.alpha_bar(t) - running) / abs(running)
            worst = max(worst, rel)
        results.append(
            _result(
                f"schedule_product_T{n_steps}",
                worst,
                1e-12,
                "max relative gap between stored alpha_bar and looped product",
            )
        )
    return results


def check_forward_marginal(seed: int = 0) -> list[CheckResult]:
    """The stepwise chain matches the closed-form marginal."""
    results = []
    schedule = linear_schedule(50, 1e-4, 0.02)
    rng = np.random.default_rng(seed)
    z0 = torch.from_numpy(rng.standard_normal((3, 4)))

    # Noise-free: fifty composed steps must telescope to sqrt(abar_t) z0.
    noises = torch.zeros((schedule.n_steps, 3, 4), dtype=torch.float64)
    chain = run_chain(z0, schedule, noises)
    worst = 0.0
    for t in range(1, schedule.n_steps + 1):
        expected = np.sqrt(schedule.alpha_bar(t)) * z0
        gap = (chain.step(t) - expected).abs().max().item()
        scale = expected.abs().max().item()
        worst = max(worst, gap / scale)
    results.append(
        _result(
            "forward_telescope_T50",
            worst,
            1e-10,
            "zero-noise chain vs sqrt(alpha_bar) shrinkage of z0",
        )
    )

    # Monte Carlo: chain-sampled z_5 second moment vs 1 - abar_5.
    t_check = 5
    n_draws = 100_000
    short = linear_schedule(5, 0.05, 0.25)
    z0_row = torch.from_numpy(rng.standard_normal(4))
    z0_rep = z0_row.expand(n_draws, 4)
    draws = torch.from_numpy(rng.standard_normal((short.n_steps, n_draws, 4)))
    z_t = run_chain(z0_rep, short, draws).step(t_check)
    measured_var = z_t.var(dim=0, unbiased=True).mean().item()
    expected_var = 1.0 - short.alpha_bar(t_check)
    results.append(
        _result(
            "marginal_vs_chain_variance",
            abs(measured_var - expected_var) / expected_var,
            0.02,
            f"{n_draws} chain draws at t={t_check}, pooled per-dim variance",
        )
    )
    mean_gap = (z_t.mean(dim=0) - np.sqrt(short.alpha_bar(t_check)) * z0_row).abs().max().item()
    results.append(
        _result(
            "marginal_vs_chain_mean",
            mean_gap,
            0.02,
            f"worst per-dim gap to sqrt(alpha_bar_{t_check}) z0",
        )
    )
    return results


def check_reverse_algebra(seed: int = 0) -> list[CheckResult]:
    """Reverse-mean rescaling identity and the reverse-step variance."""
    results = []
    schedule = linear_schedule(5, 0.05, 0.25)
    rng = np.random.default_rng(seed)

    silent = build_model(
        EncoderConfig(d=4, d_model=8, n_heads=2, n_layers=1),
        DecoderConfig(d_model=8, n_heads=2, n_layers=1),
        DenoiserConfig(d=4, hidden=8, time_dim=4),
        HeadConfig(hidden=4),
        n_node_types=DEFAULT_ATOMS.K,
        n_bond_types=DEFAULT_BONDS.L,
        v_max=3,
        n_steps=schedule.n_steps,
    ).denoiser
    for p in silent.parameters():
        p.data.zero_()

    z_t = torch.from_numpy(rng.standard_normal((6, 4)))
    worst = 0.0
    for t in range(1, schedule.n_steps + 1):
        u = reverse_mean(z_t, t, schedule, silent)
        expected = z_t / np.sqrt(schedule.alpha(t))
        worst = max(worst, (u - expected).abs().max().item() / expected.abs().max().item())
    results.append(
        _result(
            "reverse_mean_silent_denoiser",
            worst,
            1e-12,
            "eps_hat == 0 must reduce the posterior mean to z_t / sqrt(alpha_t)",
        )
    )

    t_check = 3
    n_draws = 100_000
    z_fixed = torch.from_numpy(rng.standard_normal(4)).expand(n_draws, 4)
    noise = torch.from_numpy(rng.standard_normal((n_draws, 4)))
    z_prev = reverse_step(z_fixed, t_check, schedule, silent, noise)
    measured = z_prev.var(dim=0, unbiased=True).mean().item()
    expected = schedule.beta(t_check)
    results.append(
        _result(
            "reverse_step_variance",
            abs(measured - expected) / expected,
            0.02,
            f"{n_draws} draws at t={t_check}; variance must equal beta_t",
        )
    )
    return results


def check_prior_kl(seed: int = 0) -> CheckResult:
    """Closed-form prior KL vs a Monte Carlo density-ratio estimate."""
    schedule = linear_schedule(50, 1e-4, 0.02)
    rng = np.random.default_rng(seed)
    z0 = torch.from_numpy(rng.uniform(-2.0, 2.0, size=(5, 4)))
    closed = prior_kl_closed_form(z0, schedule).numpy()

    abar = schedule.alpha_bar(schedule.n_steps)
    mean = np.sqrt(abar) * z0.numpy()
    var = 1.0 - abar
    n_draws = 400_000
    worst = 0.0
    for row in range(z0.shape[0]):
        eps = rng.standard_normal((n_draws, 4))
        z = mean[row] + np.sqrt(var) * eps
        log_q = -0.5 * (((z - mean[row]) ** 2) / var + np.log(2 * np.pi * var)).sum(axis=1)
        log_p = -0.5 * ((z**2) + np.log(2 * np.pi)).sum(axis=1)
        mc = float(np.mean(log_q - log_p))
        worst = max(worst, abs(mc - closed[row]) / abs(closed[row]))
    return _result(
        "prior_kl_closed_vs_mc",
        worst,
        0.02,
        f"{n_draws} draws per row over 5 latent points",
    )


def _toy_setup(seed: int):
    schedule = linear_schedule(3, 0.1, 0.3)
    model = build_model(
        EncoderConfig(d=4, d_model=8, n_heads=2, n_layers=1),
        DecoderConfig(d_model=8, n_heads=2, n_layers=1),
        DenoiserConfig(d=4, hidden=8, time_dim=4),
        HeadConfig(hidden=4),
        n_node_types=DEFAULT_ATOMS.K,
        n_bond_types=DEFAULT_BONDS.L,
        v_max=3,
        n_steps=schedule.n_steps,
    )
    init_parameters(model, np.random.default_rng(seed))
    batch = to_batch([parse("C=O")], 3, DEFAULT_ATOMS.K, DEFAULT_BONDS.L)
    draw_rng = np.random.default_rng(seed + 1)
    noise1 = torch.from_numpy(draw_rng.standard_normal((1, 4)))
    t_draws = draw_rng.integers(1, schedule.n_steps + 1, size=1)
    noise_draws = torch.from_numpy(draw_rng.standard_normal((1, 4)))
    return schedule, model, batch, (noise1, t_draws, noise_draws)


def _toy_loss(model, batch, schedule, draws) -> torch.Tensor:
    noise1, t_draws, noise_draws = draws
    z0 = model.encoder.encode(batch)
    z1 = sample_z1(z0, schedule, noise1)
    node_logits, edge_logits = model.decoder.decode_logits(z1)
    recon = log_likelihood(node_logits, edge_logits, batch).mean()
    kl = prior_kl_closed_form(z0, schedule).mean()
    den = denoise_term(z0, schedule, model.denoiser, t_draws, noise_draws)
    return -(recon - kl - den)


def check_gradients(seed: int = 0, step: float = 1e-5) -> CheckResult:
    """Autograd vs central differences on a d=4 toy, every elbo parameter."""
    schedule, model, batch, draws = _toy_setup(seed)
    loss = _toy_loss(model, batch, schedule, draws)
    named = [
        (name, p)
        for name, p in sorted(model.named_parameters())
        if not name.startswith("head.")
    ]
    grads = torch.autograd.grad(loss, [p for _, p in named])
    analytic = {name: g.detach().numpy().copy() for (name, _), g in zip(named, grads)}

    global_scale = max(
        (float(np.abs(g).max()) for g in analytic.values()), default=0.0
    )
    global_scale = max(global_scale, 1e-8)

    worst = 0.0
    worst_name = ""
    with torch.no_grad():
        for name, param in named:
            flat = param.data.view(-1)
            numeric = np.zeros(flat.shape[0])
            for i in range(flat.shape[0]):
                original = flat[i].item()
                flat[i] = original + step
                loss_hi = float(_toy_loss(model, batch, schedule, draws))
                flat[i] = original - step
                loss_lo = float(_toy_loss(model, batch, schedule, draws))
                flat[i] = original
                numeric[i] = (loss_hi - loss_lo) / (2 * step)
            a = analytic[name].reshape(-1)
            scale = max(np.abs(a).max(), np.abs(numeric).max(), 1e-6 * global_scale)
            rel = float(np.abs(a - numeric).max() / scale)
            if rel > worst:
                worst, worst_name = rel, name
    return _result(
        "gradient_check_toy",
        worst,
        1e-4,
        f"worst tensor: {worst_name}",
    )


def run_checks(
    seed: int = 0,
    corrupt_alpha_bars: bool = False,
    include_gradient: bool = True,
) -> list[CheckResult]:
    results = list(check_schedule_products(corrupt_alpha_bars=corrupt_alpha_bars))
    results.extend(check_forward_marginal(seed))
    results.extend(check_reverse_algebra(seed))
    results.append(check_prior_kl(seed))
    if include_gradient:
        results.append(check_gradients(seed))
    return results
