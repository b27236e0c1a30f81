"""Validation-driven learning-rate control."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ReduceLrOnPlateau"]


@dataclass
class ReduceLrOnPlateau:
    """Halve-on-stagnation schedule.

    The rate is multiplied by ``factor`` whenever the tracked value has not
    improved by more than ``threshold`` for ``patience`` consecutive
    updates, then the stagnation counter resets.  The rate never drops below
    ``min_lr``.  The first observation establishes the baseline.
    """

    lr: float
    factor: float = 0.5
    patience: int = 10
    min_lr: float = 1e-6
    threshold: float = 1e-8
    best: float | None = None
    stagnant: int = 0

    def update(self, value):
        """Record one validation value; returns the rate to use next."""
        if self.best is None or value < self.best - self.threshold:
            self.best = value
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stagnant = 0
        return self.lr
