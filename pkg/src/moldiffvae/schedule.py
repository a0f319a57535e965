"""Variance schedules for the latent noising chain.

A schedule is the sequence beta_1 .. beta_T of per-step noise variances,
together with the derived quantities alpha_t = 1 - beta_t and the running
product alpha_bar_t.  Steps are indexed from 1, matching the way the chain
is written everywhere else in this package: z_1 is the encoder output after
the first noising step, z_T is the final latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSchedule, StepOutOfRange


class InvalidRange(ValueError):
    """Schedule endpoints outside (0, 1) or otherwise unusable."""


def _check_step(t: int, n_steps: int) -> None:
    if not isinstance(t, (int, np.integer)):
        raise StepOutOfRange(f"step index must be an integer, got {t!r}")
    if t < 1 or t > n_steps:
        raise StepOutOfRange(
            f"step {t} outside valid range [1, {n_steps}]"
        )


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable container for the beta sequence and its cumulative products.

    betas must lie strictly inside (0, 1).  alpha_bar is computed once at
    construction with a cumulative product; accessors take 1-based step
    indices and raise StepOutOfRange for anything outside [1, T].
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise InvalidRange("schedule needs a 1-d array of at least one beta")
        if not np.all(np.isfinite(betas)):
            raise InvalidRange("schedule contains non-finite values")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise InvalidRange("all betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        object.__setattr__(self, "alphas", alphas)
        alpha_bars = np.cumprod(alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        if alpha_bars[-1] <= 0.0:
            # Cannot happen with betas in (0,1) and finite T, but guards
            # against pathological external construction via __setattr__.
            raise DegenerateSchedule("alpha_bar underflowed to zero")

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)

    def beta(self, t: int) -> float:
        _check_step(t, self.n_steps)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        _check_step(t, self.n_steps)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        _check_step(t, self.n_steps)
        return float(self.alpha_bars[t - 1])

    def validate(self) -> None:
        """Re-check internal consistency; raises DegenerateSchedule on failure.

        Exists as a hook for integrity checks over deserialized state, where
        a corrupted array can bypass __post_init__.
        """
        if self.betas.ndim != 1 or self.betas.size < 1:
            raise DegenerateSchedule("beta array lost its shape")
        if not np.all(np.isfinite(self.betas)):
            raise DegenerateSchedule("beta array contains non-finite values")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise DegenerateSchedule("beta outside (0, 1)")
        if not np.allclose(self.alphas, 1.0 - self.betas, rtol=0, atol=0):
            raise DegenerateSchedule("alpha array inconsistent with betas")
        if not np.allclose(
            self.alpha_bars, np.cumprod(1.0 - self.betas), rtol=1e-15, atol=0
        ):
            raise DegenerateSchedule("alpha_bar array inconsistent with betas")


def linear_schedule(n_steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Evenly spaced betas from beta_start to beta_end inclusive.

    With n_steps == 1 the single beta is beta_start; beta_end is ignored in
    that case rather than rejected, so shrinking T in a config never turns a
    valid range into an error.
    """
    if n_steps < 1:
        raise InvalidRange(f"n_steps must be >= 1, got {n_steps}")
    if not (0.0 < beta_start < 1.0) or not (0.0 < beta_end < 1.0):
        raise InvalidRange(
            f"endpoints must lie in (0, 1), got ({beta_start}, {beta_end})"
        )
    if n_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
    return NoiseSchedule(betas)


def prior_convergence_gap(schedule: NoiseSchedule) -> float:
    """alpha_bar at the final step: how far q(z_T) sits from the unit prior.

    Zero would mean the chain has fully forgotten the encoder output; the
    closed-form KL against N(0, I) grows with this value, so it is the
    single number to inspect when the prior term refuses to shrink.
    """
    return float(schedule.alpha_bars[-1])
