"""The latent chain: forward noising, the denoiser, and reverse sampling.

Forward direction (fixed):
    z_t = sqrt(1 - beta_t) * z_{t-1} + sqrt(beta_t) * eps        (step)
    z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps             (marginal)

Reverse direction (learned):
    u = (z_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
    z_{t-1} = u + sqrt(beta_t) * noise                  (t >= 2)
    z_0-side output at t = 1 is the mean alone; the decoder consumes it
    deterministically, so no variance is added there.

Every stochastic operation takes its standard-normal draws as an
argument.  Nothing in this module owns RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import DegenerateSchedule, NonFiniteActivation, StepOutOfRange
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class DenoiserConfig:
    d: int = 16
    hidden: int = 64
    time_dim: int = 64

    def __post_init__(self) -> None:
        if self.d < 1 or self.hidden < 1:
            raise ValueError("denoiser dimensions must be positive")
        if self.time_dim < 2 or self.time_dim % 2 != 0:
            raise ValueError(f"time_dim must be even and >= 2, got {self.time_dim}")


def sinusoidal_features(t_norm: float, dim: int) -> torch.Tensor:
    """Fixed sin/cos features of the normalized step t/T.

    Frequencies sweep 1 .. 10000 geometrically so the unit interval is
    resolved at every scale the chain can distinguish.
    """
    half = dim // 2
    if half > 1:
        freqs = 10000.0 ** (np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    angles = t_norm * freqs
    feats = np.empty(dim, dtype=np.float64)
    feats[0::2] = np.sin(angles)
    feats[1::2] = np.cos(angles)
    return torch.from_numpy(feats)


class Denoiser(nn.Module):
    """eps_w(z_t, t): a two-hidden-layer MLP with an additive linear skip.

    The step index enters as a learned projection of sinusoidal features
    added to the first hidden pre-activation; the skip path W_skip z_t is
    summed into the output so predicting noise close to the input costs
    nothing to represent.
    """

    def __init__(self, config: DenoiserConfig, n_steps: int):
        super().__init__()
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        self.config = config
        self.n_steps = n_steps
        self.in_proj = nn.Linear(config.d, config.hidden)
        self.time_proj = nn.Linear(config.time_dim, config.hidden)
        self.mid = nn.Linear(config.hidden, config.hidden)
        self.out = nn.Linear(config.hidden, config.d)
        self.skip = nn.Linear(config.d, config.d, bias=False)
        self.double()

    def forward(self, z_t: torch.Tensor, t: int) -> torch.Tensor:
        if t < 1 or t > self.n_steps:
            raise StepOutOfRange(f"step {t} outside [1, {self.n_steps}]")
        feats = sinusoidal_features(t / self.n_steps, self.config.time_dim)
        h = torch.nn.functional.silu(self.in_proj(z_t) + self.time_proj(feats))
        h = torch.nn.functional.silu(self.mid(h))
        return self.out(h) + self.skip(z_t)


def predict_noise(z_t: torch.Tensor, t: int, denoiser: Denoiser) -> torch.Tensor:
    eps_hat = denoiser(z_t, t)
    if not torch.isfinite(eps_hat).all():
        raise NonFiniteActivation("denoiser produced a non-finite noise estimate")
    return eps_hat


def forward_step(
    z_prev: torch.Tensor, t: int, schedule: NoiseSchedule, noise: torch.Tensor
) -> torch.Tensor:
    """One transition of the fixed noising chain; valid for t in [2, T]."""
    if t < 2:
        raise StepOutOfRange(f"forward_step needs t >= 2, got {t} (z1 comes from sample_z1)")
    beta = schedule.beta(t)
    noise = torch.as_tensor(noise, dtype=z_prev.dtype)
    return math.sqrt(1.0 - beta) * z_prev + math.sqrt(beta) * noise


def marginal_sample(
    z0: torch.Tensor, t: int, schedule: NoiseSchedule, noise: torch.Tensor
) -> torch.Tensor:
    """Closed-form draw of z_t directly from z0.

    The supplied noise is exactly the eps_t whose prediction the
    denoising loss scores.
    """
    abar = schedule.alpha_bar(t)
    noise = torch.as_tensor(noise, dtype=z0.dtype)
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * noise


def reverse_mean(
    z_t: torch.Tensor, t: int, schedule: NoiseSchedule, denoiser: Denoiser
) -> torch.Tensor:
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    one_minus_abar = 1.0 - abar
    if one_minus_abar <= 0.0:
        raise DegenerateSchedule(
            f"1 - alpha_bar_{t} is {one_minus_abar}; the reverse mean is undefined"
        )
    eps_hat = predict_noise(z_t, t, denoiser)
    beta = schedule.beta(t)
    return (z_t - beta / math.sqrt(one_minus_abar) * eps_hat) / math.sqrt(alpha)


def reverse_step(
    z_t: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One learned denoising transition, variance beta_t.

    At t = 1 the mean is returned unchanged and any supplied noise is
    ignored: the result feeds a deterministic decoder, so adding spread
    there only hurts reconstruction.
    """
    u = reverse_mean(z_t, t, schedule, denoiser)
    if t == 1:
        return u
    if noise is None:
        raise ValueError(f"reverse_step at t={t} needs explicit noise")
    noise = torch.as_tensor(noise, dtype=z_t.dtype)
    return u + math.sqrt(schedule.beta(t)) * noise


def ancestral_sample(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    batch_size: int,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Draw z_T from the unit prior and denoise down to z1.

    The loop runs t = T .. 2, so a one-step chain performs no reverse
    transitions at all: its z1 is the prior draw itself.
    """
    d = denoiser.config.d
    z = torch.from_numpy(rng.standard_normal((batch_size, d)))
    with torch.no_grad():
        for t in range(schedule.n_steps, 1, -1):
            noise = torch.from_numpy(rng.standard_normal((batch_size, d)))
            z = reverse_step(z, t, schedule, denoiser, noise)
    return z


@dataclass
class LatentChain:
    """The full stack z_1 .. z_T with the noises that generated it.

    z and noises have shape T x B x d; z[0] is z_1 produced from z0 by
    the first-step rule, and each later row follows the forward
    transition from its predecessor.
    """

    z: torch.Tensor
    noises: torch.Tensor

    def __post_init__(self) -> None:
        if self.z.shape != self.noises.shape or self.z.ndim != 3:
            raise ValueError(
                f"chain arrays must share a T x B x d shape, got {tuple(self.z.shape)}"
                f" vs {tuple(self.noises.shape)}"
            )

    @property
    def n_steps(self) -> int:
        return int(self.z.shape[0])

    def step(self, t: int) -> torch.Tensor:
        if t < 1 or t > self.n_steps:
            raise StepOutOfRange(f"step {t} outside [1, {self.n_steps}]")
        return self.z[t - 1]


def run_chain(
    z0: torch.Tensor, schedule: NoiseSchedule, noises: torch.Tensor
) -> LatentChain:
    """Materialize the whole forward chain from explicit noise draws.

    noises must be T x B x d standard-normal values; row 0 drives the
    z0 -> z1 step and each subsequent row one forward transition.
    """
    t_total = schedule.n_steps
    noises = torch.as_tensor(noises, dtype=z0.dtype)
    if noises.ndim != 3 or noises.shape[0] != t_total or noises.shape[1:] != z0.shape:
        raise ValueError(
            f"need noise of shape ({t_total}, {tuple(z0.shape)[0]}, {tuple(z0.shape)[1]}),"
            f" got {tuple(noises.shape)}"
        )
    beta1 = schedule.beta(1)
    steps = [math.sqrt(1.0 - beta1) * z0 + math.sqrt(beta1) * noises[0]]
    for t in range(2, t_total + 1):
        steps.append(forward_step(steps[-1], t, schedule, noises[t - 1]))
    return LatentChain(z=torch.stack(steps), noises=noises)
