"""Dynamic weighting between global and local alignment.

Epoch-mean discriminator losses are turned into proxy A-distances
``2 * (1 - 2 * L)`` and the weight is the global distance's share of the
global distance plus the mean local distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

DENOM_EPS = 1e-9


def a_distance(loss: float) -> float:
    """Proxy A-distance of a discriminator loss, clamped to [0, 2]."""
    L = min(max(float(loss), 0.0), 1.0)
    return min(max(2.0 * (1.0 - 2.0 * L), 0.0), 2.0)


def estimate(
    global_loss: float,
    per_class_losses: Sequence[float],
    class_mask: Optional[Sequence[bool]] = None,
    previous: float = 1.0,
) -> float:
    """Weight for the local term given epoch-mean losses.

    ``class_mask[c]`` is True for classes that take part in the local mean.
    When both distances vanish the ``previous`` weight is returned.
    """
    losses = list(per_class_losses)
    mask = [True] * len(losses) if class_mask is None else list(class_mask)
    if len(mask) != len(losses):
        raise ValueError(f"mask has {len(mask)} entries for {len(losses)} classes")
    local = [a_distance(L) for L, keep in zip(losses, mask) if keep]
    if not local:
        raise ValueError("every class is masked; the local distance is undefined")
    dg = a_distance(global_loss)
    # scaled by the class count so equal distances give exactly 1/2
    num = len(local) * dg
    denom = num + math.fsum(local)
    if denom / len(local) < DENOM_EPS:
        return previous
    return min(max(num / denom, 0.0), 1.0)


@dataclass
class OmegaState:
    """Per-run accumulator; ``history`` holds (epoch, omega) with (0, 1.0) first."""

    num_classes: int
    current_omega: float = 1.0
    mask_fraction: float = 1e-6
    ema: Optional[float] = None
    global_loss_sum: float = 0.0
    batch_count: int = 0
    sample_count: int = 0
    per_class_loss_sums: np.ndarray = None
    class_mass: np.ndarray = None
    history: List[Tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.current_omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.current_omega}")
        if self.ema is not None and not 0.0 <= self.ema < 1.0:
            raise ValueError(f"ema coefficient must lie in [0, 1), got {self.ema}")
        self._reset()
        if not self.history:
            self.history.append((0, self.current_omega))

    def _reset(self):
        self.global_loss_sum = 0.0
        self.batch_count = 0
        self.sample_count = 0
        self.per_class_loss_sums = np.zeros(self.num_classes)
        self.class_mass = np.zeros(self.num_classes)

    def accumulate(self, batch_global_loss, batch_per_class_losses, batch_class_mass, batch_size=None):
        per_class = np.asarray(batch_per_class_losses, dtype=np.float64)
        mass = np.asarray(batch_class_mass, dtype=np.float64)
        if per_class.shape != (self.num_classes,) or mass.shape != (self.num_classes,):
            raise ValueError(f"need {self.num_classes} per-class losses and masses")
        vals = np.append(per_class, batch_global_loss)
        if not np.isfinite(vals).all() or (vals < 0).any():
            raise ValueError(f"batch losses must be finite and non-negative, got {vals.tolist()}")
        self.global_loss_sum += float(batch_global_loss)
        self.per_class_loss_sums += per_class
        self.class_mass += mass
        self.batch_count += 1
        self.sample_count += int(round(mass.sum())) if batch_size is None else int(batch_size)
        return self

    @property
    def epoch_global_loss(self) -> float:
        if self.batch_count == 0:
            raise ValueError("no batches accumulated this epoch")
        return self.global_loss_sum / self.batch_count

    @property
    def epoch_per_class_losses(self) -> np.ndarray:
        if self.batch_count == 0:
            raise ValueError("no batches accumulated this epoch")
        return self.per_class_loss_sums / self.batch_count

    def epoch_update(self) -> float:
        """Close the epoch: estimate, record, reset; returns the weight for the next epoch."""
        g = self.epoch_global_loss
        per_class = self.epoch_per_class_losses
        mask = self.class_mass >= self.mask_fraction * self.sample_count
        new = estimate(g, per_class, mask, previous=self.current_omega)
        if self.ema is not None:
            new = self.ema * self.current_omega + (1.0 - self.ema) * new
        self.current_omega = new
        self.history.append((len(self.history), new))
        self._reset()
        return new
