"""Gaussian-process regression of the reward function on (intermediate, ultimate) pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cbmp.kernels import Factor, KernelSpec, as_points, cross_gram, factorize, gram


@dataclass(frozen=True)
class UnmatchedDataset:
    """Pairs ``(intermediate reward, ultimate reward)``."""

    intermediate: np.ndarray  # (m, d_r)
    ultimate: np.ndarray  # (m,)

    def __post_init__(self):
        r = np.asarray(self.intermediate, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        y = np.asarray(self.ultimate, dtype=float).reshape(-1)
        if r.shape[0] != y.shape[0]:
            raise ValueError(f"{r.shape[0]} intermediate rewards but {y.shape[0]} ultimate rewards")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "intermediate", r)
        object.__setattr__(self, "ultimate", y)

    def __len__(self) -> int:
        return self.ultimate.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "UnmatchedDataset":
        return cls(np.empty((0, dim)), np.empty(0))

    def append(self, r, y: float) -> "UnmatchedDataset":
        r = np.asarray(r, dtype=float).reshape(1, -1)
        return UnmatchedDataset(np.vstack([self.intermediate, r]), np.append(self.ultimate, y))


@dataclass(frozen=True)
class FPosterior:
    """Posterior of f given an :class:`UnmatchedDataset`.

    ``weights`` is ``(R + noise I)^{-1} y`` with ``R`` the Gram matrix of
    ``kernel`` over ``training_points``.
    """

    training_points: np.ndarray
    weights: np.ndarray
    noise: float
    kernel: KernelSpec
    factor: Factor = field(repr=False)

    def mean(self, points) -> np.ndarray:
        return posterior_mean_at(self, points)

    def cov(self, points) -> np.ndarray:
        return posterior_cov_at(self, points)


def fit_f(data: UnmatchedDataset, kernel: KernelSpec, noise: float = 0.1) -> FPosterior:
    if len(data) == 0:
        raise ValueError("fit_f needs at least one (intermediate, ultimate) pair")
    if noise <= 0:
        raise ValueError("noise must be positive")
    pts = data.intermediate.copy()
    factor = factorize(gram(kernel, pts), noise)
    return FPosterior(pts, factor.solve(data.ultimate), float(noise), kernel, factor)


def _check_dim(fp: FPosterior, points) -> np.ndarray:
    p = as_points(points)
    if p.shape[1] != fp.training_points.shape[1]:
        raise ValueError(
            f"query dimension {p.shape[1]} does not match training dimension "
            f"{fp.training_points.shape[1]}"
        )
    return p


def posterior_mean_at(fp: FPosterior, points) -> np.ndarray:
    p = _check_dim(fp, points)
    return cross_gram(fp.kernel, p, fp.training_points) @ fp.weights


def posterior_cov_at(fp: FPosterior, points) -> np.ndarray:
    """Posterior covariance of f at ``points`` (symmetrised)."""
    p = _check_dim(fp, points)
    k_pt = cross_gram(fp.kernel, p, fp.training_points)
    cov = gram(fp.kernel, p) - k_pt @ fp.factor.solve(k_pt.T)
    return 0.5 * (cov + cov.T)
