"""Training-recipe reference functions: losses and learning-rate schedule.

The engine never optimizes anything; these exist so the recipe that
produced a set of weights is reproducible and checkable. All reductions
run in float64 and return python floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _flatten_pair(pred, target):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {g.shape}")
    if p.ndim < 1 or p.shape[0] < 1:
        raise ValueError("expected (classes, ...) arrays")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("predictions must lie in [0, 1]")
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ValueError("targets must be binary (0/1) arrays")
    c = p.shape[0]
    return p.reshape(c, -1), g.reshape(c, -1)


def generalized_dice_loss(pred, target, *, eps=1e-8):
    """1 - generalized dice overlap with per-class weights 1 / (sum g + eps)^2.

    Small classes dominate the weighting, which is the point: a few hundred
    enhancing-tumor voxels should not drown under the background-sized
    classes. eps sits only in the denominator, so a perfect prediction
    carries a residue of roughly eps / (2 sum_c 1/mass_c); the default is
    small enough to keep that residue below 1e-6 for realistic masses.
    """
    p, g = _flatten_pair(pred, target)
    class_mass = g.sum(axis=1)
    w = 1.0 / (class_mass + eps) ** 2
    intersection = (w * (p * g).sum(axis=1)).sum()
    denominator = (w * (p + g).sum(axis=1)).sum()
    return float(1.0 - 2.0 * intersection / (denominator + eps))


def binary_cross_entropy(pred, target, *, eps=1e-7):
    """Mean over every class and voxel of -[g ln(p+eps) + (1-g) ln(1-p+eps)].

    The eps arguments to the logarithms are clamped so they never exceed 1,
    keeping the loss nonnegative at the boundary p in {0, 1}.
    """
    p, g = _flatten_pair(pred, target)
    pos = np.log(np.minimum(p + eps, 1.0))
    neg = np.log(np.minimum(1.0 - p + eps, 1.0))
    return float(-(g * pos + (1.0 - g) * neg).mean())


def combined_loss(pred, target):
    """Equal-weight sum of generalized dice and binary cross entropy."""
    return generalized_dice_loss(pred, target) + binary_cross_entropy(pred, target)


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 0.0085
    max_epochs: int = 450
    warmup_epochs: int = 5
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not (0 <= self.warmup_epochs < self.max_epochs):
            raise ValueError(
                f"warmup_epochs must be in [0, max_epochs), got {self.warmup_epochs}"
            )
        if self.power <= 0:
            raise ValueError(f"power must be positive, got {self.power}")


def poly_lr(epoch, schedule: ScheduleConfig = ScheduleConfig()) -> float:
    """Linear warmup to base_lr, then polynomial decay (1 - e/E)^power."""
    e = int(epoch)
    if not (0 <= e < schedule.max_epochs):
        raise ValueError(f"epoch must be in [0, {schedule.max_epochs}), got {epoch}")
    if e < schedule.warmup_epochs:
        return schedule.base_lr * (e + 1) / schedule.warmup_epochs
    return schedule.base_lr * (1.0 - e / schedule.max_epochs) ** schedule.power
