"""Action selection over a discrete grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PosteriorStats:
    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        std = np.asarray(self.stddev, dtype=float).reshape(-1)
        if mean.shape != std.shape:
            raise ValueError("mean and stddev lengths differ")
        if np.any(std < 0):
            raise ValueError("stddev must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", std)

    def __len__(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ConstantBeta:
    value: float = 2.0

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class LogarithmicBeta:
    """``scale * log(|A| t^2 pi^2 / (6 delta))``."""

    scale: float = 1.0
    delta: float = 0.1

    def __post_init__(self):
        if not (self.scale > 0 and 0 < self.delta < 1):
            raise ValueError("need scale > 0 and 0 < delta < 1")


BetaSchedule = ConstantBeta | LogarithmicBeta


def beta_at(schedule: BetaSchedule, t: int, grid_size: int) -> float:
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    if isinstance(schedule, ConstantBeta):
        return float(schedule.value)
    value = schedule.scale * math.log(grid_size * t * t * math.pi**2 / (6.0 * schedule.delta))
    if value <= 0:
        raise ValueError(f"logarithmic schedule is non-positive at t={t}")
    return value


def ucb_scores(stats: PosteriorStats, beta: float) -> np.ndarray:
    return stats.mean + math.sqrt(beta) * stats.stddev


def ucb_select(stats: PosteriorStats, beta: float) -> int:
    """Index maximising ``mean + sqrt(beta) * stddev``; ties go to the lowest index."""
    if len(stats) == 0:
        raise ValueError("empty action grid")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    scores = ucb_scores(stats, beta)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite acquisition score")
    return int(np.argmax(scores))


def random_select(grid_size: int, rng: np.random.Generator) -> int:
    if grid_size < 1:
        raise ValueError("grid_size must be at least 1")
    # always exactly one uniform draw, so trial streams stay aligned
    return min(int(rng.random() * grid_size), grid_size - 1)
