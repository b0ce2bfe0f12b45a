"""Simulators for the four synthetic settings A-D.

Every setting shares the context sampler ``Uniform(-3, 3.25)``, a 61-point
grid over the same interval for actions (and, for diagnostics, contexts), and
unmatched intermediate rewards drawn from ``Uniform(-2, 2)^{d_r}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LOW, HIGH, GRID_POINTS = -3.0, 3.25, 61
INTERMEDIATE_NOISE = 0.25
PRIOR_LOW, PRIOR_HIGH = -2.0, 2.0

MeanMap = Callable[[float, float], np.ndarray]


def _mean_a(s, a):
    return np.array([np.sin(np.pi * s) + np.cos(np.pi * a)])


def _mean_b(s, a):
    return np.array([np.sin(s + a), np.sin(s - a)])


def _mean_c(s, a):
    return np.array([np.sin(s), np.cos(a)])


def _mean_d(s, a):
    return np.array([np.sin(s), np.cos(a), np.sin(a), np.cos(s), np.sin(s) + np.cos(s)])


def _reward_a(r):
    return 1.5 * np.sin(r[0]) + 1.0


def _reward_b(r):
    # depends on the first coordinate only
    return 1.5 * (np.tanh(5 * np.pi * r[0]) + np.cos(np.pi * r[0])) + 1.0


def _reward_sum_sin(r):
    return 1.5 * np.sum(np.sin(np.pi * r)) + 1.0


@dataclass(frozen=True)
class EnvironmentSpec:
    setting: str
    dim: int
    intermediate_mean: MeanMap
    reward_mean: Callable[[np.ndarray], float]
    ultimate_noise: float
    intermediate_noise: float = INTERMEDIATE_NOISE

    @property
    def action_grid(self) -> np.ndarray:
        return np.linspace(LOW, HIGH, GRID_POINTS)

    @property
    def context_grid(self) -> np.ndarray:
        return np.linspace(LOW, HIGH, GRID_POINTS)

    def describe(self) -> dict:
        return {
            "setting": self.setting,
            "d_r": self.dim,
            "action_grid": [LOW, HIGH, GRID_POINTS],
            "context_grid": [LOW, HIGH, GRID_POINTS],
            "intermediate_noise": self.intermediate_noise,
            "ultimate_noise": self.ultimate_noise,
            "unmatched_prior": [PRIOR_LOW, PRIOR_HIGH],
        }


SETTINGS: dict[str, EnvironmentSpec] = {
    "A": EnvironmentSpec("A", 1, _mean_a, _reward_a, 0.05),
    "B": EnvironmentSpec("B", 2, _mean_b, _reward_b, 1.0),
    "C": EnvironmentSpec("C", 2, _mean_c, _reward_sum_sin, 1.0),
    "D": EnvironmentSpec("D", 5, _mean_d, _reward_sum_sin, 1.0),
}


def get_setting(name: str) -> EnvironmentSpec:
    try:
        return SETTINGS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown setting {name!r}; choose from {sorted(SETTINGS)}") from None


def sample_context(spec: EnvironmentSpec, rng: np.random.Generator) -> float:
    return float(rng.uniform(LOW, HIGH))


def sample_intermediate(spec: EnvironmentSpec, s: float, a: float, rng: np.random.Generator,
                        noise: bool = True) -> np.ndarray:
    mean = spec.intermediate_mean(float(s), float(a))
    if not noise:
        return mean
    return mean + spec.intermediate_noise * rng.standard_normal(spec.dim)


def sample_ultimate(spec: EnvironmentSpec, r, rng: np.random.Generator, noise: bool = True) -> float:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if r.shape != (spec.dim,):
        raise ValueError(f"setting {spec.setting} expects intermediate dimension {spec.dim}, got {r.shape}")
    mean = float(spec.reward_mean(r))
    if not noise:
        return mean
    return mean + spec.ultimate_noise * float(rng.standard_normal())


def sample_unmatched_prior(spec: EnvironmentSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(PRIOR_LOW, PRIOR_HIGH, spec.dim)


def oracle_expected_reward(spec: EnvironmentSpec, s: float, a: float, n_mc: int,
                           rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo estimate of E[y | s, a] and its standard error."""
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    ys = np.array([sample_ultimate(spec, sample_intermediate(spec, s, a, rng), rng) for _ in range(n_mc)])
    se = float(ys.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("nan")
    return float(ys.mean()), se
