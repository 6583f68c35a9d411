"""Per-epoch inverse-temperature and learning-rate schedules.

Both schedules support stretching: with factor ``s`` the value at epoch ``n``
is the unstretched value at epoch ``n // s``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class BetaSchedule:
    beta_start: float = 0.7
    beta_end: float = 1e4
    anneal_epochs: int = 128
    mode: str = "log"
    stretch_s: int = 1

    def __post_init__(self):
        if not 0 < self.beta_start <= self.beta_end:
            raise ValueError("need 0 < beta_start <= beta_end")
        if self.anneal_epochs < 1:
            raise ValueError("anneal_epochs must be at least 1")
        if self.mode not in ("log", "linear"):
            raise ValueError(f"unknown beta schedule mode {self.mode!r}")
        if self.stretch_s < 1:
            raise ValueError("stretch factor must be a positive integer")


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 1e-3
    drop_epoch: int = 80
    drop_interval: int = 40
    drop_factor: float = 10.0
    stretch_s: int = 1

    def __post_init__(self):
        if not self.initial_lr > 0 or not self.drop_factor > 0:
            raise ValueError("learning rate and drop factor must be positive")
        if self.drop_interval < 1:
            raise ValueError("drop_interval must be at least 1")
        if self.stretch_s < 1:
            raise ValueError("stretch factor must be a positive integer")


def beta_at(s: BetaSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    m = min(epoch // s.stretch_s, s.anneal_epochs)
    if m == 0:
        return float(s.beta_start)
    if m == s.anneal_epochs:
        return float(s.beta_end)
    frac = m / s.anneal_epochs
    if s.mode == "log":
        return float(s.beta_start ** (1.0 - frac) * s.beta_end ** frac)
    return float(s.beta_start + frac * (s.beta_end - s.beta_start))


def lr_at(s: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    m = epoch // s.stretch_s
    if m < s.drop_epoch:
        return float(s.initial_lr)
    drops = 1 + (m - s.drop_epoch) // s.drop_interval
    return float(s.initial_lr / s.drop_factor ** drops)


def stretched(schedule, s: int):
    """Copy of a beta or learning-rate schedule replayed at 1/s speed."""
    if int(s) != s or s < 1:
        raise ValueError("stretch factor must be a positive integer")
    return replace(schedule, stretch_s=int(s))
