"""Scalar property regression on z1, and the fine-tuning loss around it.

The head is a two-layer MLP from the d-dimensional latent to one real
value.  Fine-tuning optimizes -ELBO + lambda * MSE with the same z1
sample feeding both the decoder and the head; a supervised-only mode
(plain MSE on the zero-noise z1) exists as the from-scratch baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import torch
from torch import nn

from .errors import NonFiniteActivation
from .graphs import GraphBatch
from .schedule import NoiseSchedule

if TYPE_CHECKING:
    from .model import DiffusionAutoencoder


class EmptySplit(ValueError):
    """Evaluation asked for on a split with no records."""


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {self.hidden}")


UNFREEZE_MODES = ("all", "head_only")
OBJECTIVES = ("combined", "mse_only")


@dataclass(frozen=True)
class FinetuneConfig:
    mse_weight: float = 1.0
    unfreeze: str = "all"
    objective: str = "combined"
    lr: float = 1e-3
    n_steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self) -> None:
        if self.mse_weight < 0:
            raise ValueError(f"mse_weight must be >= 0, got {self.mse_weight}")
        if self.unfreeze not in UNFREEZE_MODES:
            raise ValueError(f"unfreeze must be one of {UNFREEZE_MODES}, got {self.unfreeze!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be > 0, got {self.grad_clip}")


class RegressionHead(nn.Module):
    def __init__(self, d: int, config: HeadConfig = HeadConfig()):
        super().__init__()
        self.config = config
        self.lin1 = nn.Linear(d, config.hidden)
        self.lin2 = nn.Linear(config.hidden, 1)
        self.double()

    def forward(self, z1: torch.Tensor) -> torch.Tensor:
        return self.lin2(torch.nn.functional.silu(self.lin1(z1))).squeeze(-1)


def predict(z1: torch.Tensor, head: RegressionHead) -> torch.Tensor:
    out = head(z1)
    if not torch.isfinite(out).all():
        raise NonFiniteActivation("regression head produced a non-finite prediction")
    return out


@dataclass(frozen=True)
class TargetScaler:
    """Affine map to zero-mean unit-variance targets, fit on training data.

    Reported errors stay in standardized units, so a constant mean
    predictor scores exactly 1.0 and anything useful scores below it.
    """

    mean: float
    std: float

    @classmethod
    def fit(cls, targets: torch.Tensor) -> "TargetScaler":
        t = torch.as_tensor(targets, dtype=torch.float64)
        if t.numel() == 0:
            raise EmptySplit("cannot fit a target scaler on an empty split")
        mean = float(t.mean())
        std = float(t.std(unbiased=False))
        if std == 0.0:
            raise ValueError("targets are constant; standardized regression is undefined")
        return cls(mean=mean, std=std)

    def transform(self, targets: torch.Tensor) -> torch.Tensor:
        return (torch.as_tensor(targets, dtype=torch.float64) - self.mean) / self.std

    def inverse(self, standardized: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor(standardized, dtype=torch.float64) * self.std + self.mean


def zero_noise_z1(batch: GraphBatch, model: "DiffusionAutoencoder", schedule: NoiseSchedule) -> torch.Tensor:
    """Deterministic z1: the first-step posterior mean sqrt(1 - beta_1) * z0."""
    z0 = model.encoder.encode(batch)
    return (1.0 - schedule.beta(1)) ** 0.5 * z0


def finetune_loss(
    batch: GraphBatch,
    targets: torch.Tensor,
    model: "DiffusionAutoencoder",
    schedule: NoiseSchedule,
    config: FinetuneConfig,
    rng,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Combined fine-tuning loss and its reported components.

    combined:  loss = -(recon - prior_kl - denoise) + mse_weight * MSE,
    with the z1 sample shared between the decoder and the head, and rng
    consumed exactly as in pretraining (so mse_weight = 0 reproduces the
    pretraining loss bit for bit under identical draws).

    mse_only:  loss = MSE on the zero-noise z1; no generative terms, no
    rng consumed.  This is the supervised-from-scratch baseline.
    """
    from .objective import elbo_parts

    targets = torch.as_tensor(targets, dtype=torch.float64)
    if config.objective == "mse_only":
        z1 = zero_noise_z1(batch, model, schedule)
        pred = predict(z1, model.head)
        mse = ((pred - targets) ** 2).mean()
        value = float(mse.detach())
        return mse, {"mse": value, "loss": value}

    parts, z1 = elbo_parts(batch, model, schedule, rng)
    pred = predict(z1, model.head)
    mse = ((pred - targets) ** 2).mean()
    elbo = parts["recon"] - parts["prior_kl"] - parts["denoise"]
    loss = -elbo + config.mse_weight * mse
    components = {
        "recon": float(parts["recon"].detach()),
        "prior_kl": float(parts["prior_kl"].detach()),
        "denoise": float(parts["denoise"].detach()),
        "elbo": float(elbo.detach()),
        "mse": float(mse.detach()),
        "loss": float(loss.detach()),
    }
    return loss, components


class FinetuneTrainer:
    """Adam loop over finetune_loss with per-mode parameter selection.

    unfreeze="all" optimizes every group; "head_only" leaves the
    pretrained representation untouched and fits the regressor alone.
    """

    def __init__(
        self,
        model: "DiffusionAutoencoder",
        schedule: NoiseSchedule,
        config: FinetuneConfig,
    ):
        self.model = model
        self.schedule = schedule
        self.config = config
        if config.unfreeze == "head_only":
            params = list(model.head.parameters())
        else:
            params = list(model.parameters())
        self.params = [p for p in params if p.requires_grad]
        self.optimizer = torch.optim.Adam(
            self.params, lr=config.lr, betas=(0.9, 0.999), weight_decay=0.0
        )

    def step(
        self, batch: GraphBatch, targets: torch.Tensor, rng
    ) -> tuple[dict[str, float], float]:
        from .errors import NonFiniteGradient

        loss, components = finetune_loss(
            batch, targets, self.model, self.schedule, self.config, rng
        )
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
        return components, grad_norm


def evaluate_mse(
    batches: Iterable[tuple[GraphBatch, torch.Tensor]],
    model: "DiffusionAutoencoder",
    schedule: NoiseSchedule,
) -> float:
    """Mean squared error over a split, evaluated at the zero-noise z1.

    Consumes no randomness; identical inputs give identical numbers.
    Targets must already be in the units the report wants (the callers
    standardize with training-split statistics).
    """
    total = 0.0
    count = 0
    with torch.no_grad():
        for batch, targets in batches:
            z1 = zero_noise_z1(batch, model, schedule)
            pred = predict(z1, model.head)
            targets = torch.as_tensor(targets, dtype=torch.float64)
            total += float(((pred - targets) ** 2).sum())
            count += int(targets.numel())
    if count == 0:
        raise EmptySplit("no records to evaluate")
    return total / count
