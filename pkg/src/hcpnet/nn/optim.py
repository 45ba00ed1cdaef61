"""Momentum SGD with step-decayed, per-group learning rates."""

import math
from dataclasses import dataclass, field

from ..errors import ConfigError


@dataclass
class ScheduleSpec:
    base_lr: dict = field(default_factory=lambda: {0: 0.01})
    decay_factor: float = 0.1
    decay_period_epochs: int = 20
    total_epochs: int = 60
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        if not 0 < self.decay_factor < 1:
            raise ConfigError("decay_factor must lie in (0, 1)")
        if self.decay_period_epochs < 1 or self.total_epochs < 1:
            raise ConfigError("epoch counts must be positive")
        for g, lr in self.base_lr.items():
            if lr < 0:
                raise ConfigError(f"negative learning rate for group {g}")

    def lr_at(self, group, epoch):
        if group not in self.base_lr:
            raise ConfigError(f"no learning rate configured for group {group}")
        return self.base_lr[group] * self.decay_factor ** math.floor(epoch / self.decay_period_epochs)


def sgd_step(params, schedule, epoch):
    """m <- mu*m - lr*(grad + wd*value); value <- value + m."""
    for p in params:
        lr = schedule.lr_at(p.group, epoch)
        dt = p.value.dtype.type
        p.momentum_buf *= dt(schedule.momentum)
        p.momentum_buf -= dt(lr) * (p.grad + dt(schedule.weight_decay) * p.value)
        p.value += p.momentum_buf
    return params
