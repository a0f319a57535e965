"""Exceptions shared across the numeric modules."""


class NonFiniteActivation(RuntimeError):
    """A network forward pass produced NaN or infinity."""


class NonFiniteGradient(RuntimeError):
    """A backward pass produced NaN or infinite gradients."""


class ShapeMismatch(ValueError):
    """Tensor arguments do not have the shapes the operation requires."""


class StepOutOfRange(ValueError):
    """A diffusion step index t lies outside the valid range for the schedule."""


class DegenerateSchedule(ValueError):
    """The schedule makes a quantity (e.g. 1 - alpha_bar_t) underflow to zero."""
