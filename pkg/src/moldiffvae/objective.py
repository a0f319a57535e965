"""The three-term training objective and the gradient step around it.

ELBO = E[log p(G | z1)] - KL[q(z_T | G) || N(0, I)] - E_t[|eps_t - eps_w(z_t, t)|^2]

The reconstruction term scores the decoder on a single z1 draw, the KL
term uses the closed-form Gaussian marginal at the end of the chain,
and the denoising term scores the noise net at one uniformly drawn step
per graph.  Training minimizes the negated, optionally reweighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .decoder import log_likelihood
from .diffusion import Denoiser, marginal_sample, predict_noise
from .encoder import sample_z1
from .errors import DegenerateSchedule, NonFiniteGradient, StepOutOfRange
from .graphs import GraphBatch
from .model import DiffusionAutoencoder
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class ElboBreakdown:
    recon: float
    prior_kl: float
    denoise: float
    elbo: float


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    n_steps: int = 1000
    seed: int = 0
    grad_clip: float = 5.0
    kl_weight: float = 1.0
    denoise_weight: float = 1.0

    def __post_init__(self) -> None:
        # lr = 0 is allowed deliberately: it freezes parameters while
        # still reporting the breakdown, which is useful for probes.
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")
        if self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be > 0, got {self.grad_clip}")
        if self.kl_weight < 0 or self.denoise_weight < 0:
            raise ValueError("loss weights must be >= 0")


def _scalar(value: torch.Tensor) -> float:
    return float(value.detach())


def prior_kl_closed_form(z0: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """KL of the chain's terminal marginal N(sqrt(abar_T) z0, (1-abar_T) I)
    against the unit prior, one value per batch row.

    Per dimension the standard Gaussian KL reduces to
    (abar_T * z0_i^2 - abar_T - ln(1 - abar_T)) / 2.
    """
    abar = schedule.alpha_bars[-1]
    one_minus = 1.0 - abar
    if one_minus <= 0.0:
        raise DegenerateSchedule(
            f"1 - alpha_bar_T is {one_minus}; the terminal marginal has no density"
        )
    per_dim = abar * z0**2 - abar - math.log(one_minus)
    return 0.5 * per_dim.sum(dim=-1)


def denoise_term(
    z0: torch.Tensor,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    t_draws: np.ndarray,
    noise_draws: torch.Tensor,
) -> torch.Tensor:
    """Batch mean of |eps - eps_w(z_t, t)|^2 at the drawn steps.

    Each row gets its own uniformly drawn t; rows sharing a step are
    evaluated together.  The squared error sums over the latent
    dimension, so a denoiser that always answers zero scores d in
    expectation.
    """
    t_arr = np.asarray(t_draws, dtype=np.int64)
    if t_arr.shape != (z0.shape[0],):
        raise ValueError(
            f"need one step draw per row, got shape {t_arr.shape} for batch {z0.shape[0]}"
        )
    if t_arr.size and (t_arr.min() < 1 or t_arr.max() > schedule.n_steps):
        raise StepOutOfRange(
            f"step draws must lie in [1, {schedule.n_steps}], got range"
            f" [{t_arr.min()}, {t_arr.max()}]"
        )
    noise = torch.as_tensor(noise_draws, dtype=z0.dtype)
    total = z0.new_zeros(())
    for t in np.unique(t_arr):
        idx = torch.from_numpy(np.flatnonzero(t_arr == t))
        z_t = marginal_sample(z0[idx], int(t), schedule, noise[idx])
        eps_hat = predict_noise(z_t, int(t), denoiser)
        total = total + ((noise[idx] - eps_hat) ** 2).sum()
    return total / z0.shape[0]


def elbo_parts(
    batch: GraphBatch,
    model: DiffusionAutoencoder,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    """Single-sample estimators of the three terms, kept as graph-connected
    tensors, plus the z1 draw they share.

    rng is consumed in a fixed order (z1 noise, step draws, denoising
    noise) so callers can reproduce a loss exactly from a seed.
    """
    b = batch.batch_size
    d = model.encoder.config.d
    z0 = model.encoder.encode(batch)
    noise1 = torch.from_numpy(rng.standard_normal((b, d)))
    z1 = sample_z1(z0, schedule, noise1)
    node_logits, edge_logits = model.decoder.decode_logits(z1)
    recon = log_likelihood(node_logits, edge_logits, batch).mean()
    prior_kl = prior_kl_closed_form(z0, schedule).mean()
    t_draws = rng.integers(1, schedule.n_steps + 1, size=b)
    noise_draws = torch.from_numpy(rng.standard_normal((b, d)))
    denoise = denoise_term(z0, schedule, model.denoiser, t_draws, noise_draws)
    return {"recon": recon, "prior_kl": prior_kl, "denoise": denoise}, z1


def elbo(
    batch: GraphBatch,
    model: DiffusionAutoencoder,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> ElboBreakdown:
    parts, _ = elbo_parts(batch, model, schedule, rng)
    recon = _scalar(parts["recon"])
    prior_kl = _scalar(parts["prior_kl"])
    denoise = _scalar(parts["denoise"])
    return ElboBreakdown(
        recon=recon,
        prior_kl=prior_kl,
        denoise=denoise,
        elbo=recon - prior_kl - denoise,
    )


class Trainer:
    """Adam-based maximizer of the (optionally reweighted) ELBO.

    Owns the optimizer state; step() runs one update and reports the
    pre-update breakdown together with the pre-clip gradient norm.
    """

    def __init__(
        self,
        model: DiffusionAutoencoder,
        schedule: NoiseSchedule,
        config: TrainConfig,
        parameters=None,
    ):
        self.model = model
        self.schedule = schedule
        self.config = config
        params = list(model.parameters() if parameters is None else parameters)
        self.params = [p for p in params if p.requires_grad]
        self.optimizer = torch.optim.Adam(
            self.params, lr=config.lr, betas=(0.9, 0.999), weight_decay=0.0
        )

    def loss_from_parts(self, parts: dict[str, torch.Tensor]) -> torch.Tensor:
        return -(
            parts["recon"]
            - self.config.kl_weight * parts["prior_kl"]
            - self.config.denoise_weight * parts["denoise"]
        )

    def step(
        self, batch: GraphBatch, rng: np.random.Generator
    ) -> tuple[ElboBreakdown, float]:
        parts, _ = elbo_parts(batch, self.model, self.schedule, rng)
        loss = self.loss_from_parts(parts)
        self.optimizer.zero_grad()
        loss.backward()
        bad = [
            name
            for name, p in self.model.named_parameters()
            if p.grad is not None and not torch.isfinite(p.grad).all()
        ]
        if bad:
            raise NonFiniteGradient(
                f"non-finite gradient in {len(bad)} parameter(s), first: {bad[0]}"
            )
        grad_norm = float(
            torch.nn.utils.clip_grad_norm_(self.params, self.config.grad_clip)
        )
        self.optimizer.step()
        recon = _scalar(parts["recon"])
        prior_kl = _scalar(parts["prior_kl"])
        denoise = _scalar(parts["denoise"])
        breakdown = ElboBreakdown(
            recon=recon,
            prior_kl=prior_kl,
            denoise=denoise,
            elbo=recon - prior_kl - denoise,
        )
        return breakdown, grad_norm
