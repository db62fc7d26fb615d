"""Adamax optimizer and cosine learning-rate schedule.

Adamax is the infinity-norm variant of Adam: the first moment is the
usual EMA of gradients and the second state is a running maximum of
gradient magnitudes, updated as ``u = max(beta2 * u, |g|)``. Only the
first moment needs bias correction. Complex parameters are updated
through their real/imaginary float views, which matches treating each
complex entry as two real coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NumericalError

__all__ = ["Adamax", "CosineSchedule", "cosine_lr"]


@dataclass(frozen=True)
class CosineSchedule:
    lr_max: float = 1e-2
    lr_min: float = 1e-4
    total_epochs: int = 400

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")
        if self.lr_max <= 0 or self.lr_min <= 0 or self.lr_min > self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")


def cosine_lr(epoch, schedule):
    """Half-cosine decay from ``lr_max`` at epoch 0 to ``lr_min`` at the end."""
    total = schedule.total_epochs
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    if total == 1:
        return schedule.lr_max
    span = schedule.lr_max - schedule.lr_min
    return schedule.lr_min + 0.5 * span * (1.0 + np.cos(np.pi * epoch / (total - 1)))


def _float_view(arr):
    if np.iscomplexobj(arr):
        return arr.view(np.float64)
    return arr


class Adamax:
    """Adamax over a named parameter dict; state keyed by parameter name."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.params = dict(params)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.state = {
            name: {
                "m": np.zeros_like(_float_view(p.data)),
                "u": np.zeros_like(_float_view(p.data)),
            }
            for name, p in self.params.items()
        }

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr):
        """Apply one update from the accumulated gradients at rate ``lr``."""
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.t += 1
        correction = 1.0 - self.beta1**self.t
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            g = _float_view(grad)
            st = self.state[name]
            st["m"] *= self.beta1
            st["m"] += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * st["u"], np.abs(g), out=st["u"])
            update = (lr / correction) * st["m"] / (st["u"] + self.eps)
            new = p.data.copy()
            _float_view(new)[...] -= update
            new.flags.writeable = False
            p.data = new
