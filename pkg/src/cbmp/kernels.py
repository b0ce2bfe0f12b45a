"""Kernel evaluations, Gram assembly and jittered SPD solves.

Points are handled as ``(n, d)`` float arrays. A 1-D array of length ``n`` is
read as ``n`` one-dimensional points, and a scalar as a single 1-D point.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

_SQRT5 = np.sqrt(5.0)

# relative to the mean diagonal of the matrix being factorised
JITTER_START = 1e-10
JITTER_MAX = 1e-4
JITTER_GROWTH = 10.0


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a kernel system stays indefinite after jitter escalation."""


class Family(str, enum.Enum):
    SQUARED_EXPONENTIAL = "se"
    MATERN52 = "matern52"
    NUCLEAR_DOMINANT_SE = "nuclear_se"


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel description.

    For ``NUCLEAR_DOMINANT_SE`` the ``lengthscale`` and ``amplitude`` are those
    of the squared-exponential base kernel; build it with :meth:`nuclear`.
    """

    family: Family
    lengthscale: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")

    @classmethod
    def se(cls, lengthscale: float = 1.0, amplitude: float = 1.0) -> "KernelSpec":
        return cls(Family.SQUARED_EXPONENTIAL, lengthscale, amplitude)

    @classmethod
    def matern52(cls, lengthscale: float = 1.0, amplitude: float = 1.0) -> "KernelSpec":
        return cls(Family.MATERN52, lengthscale, amplitude)

    def nuclear(self) -> "KernelSpec":
        """Self-convolution kernel built on this squared-exponential base."""
        if self.family is not Family.SQUARED_EXPONENTIAL:
            raise ValueError("nuclear dominant kernel requires a squared-exponential base")
        return KernelSpec(Family.NUCLEAR_DOMINANT_SE, self.lengthscale, self.amplitude)

    def base(self) -> "KernelSpec":
        if self.family is Family.NUCLEAR_DOMINANT_SE:
            return KernelSpec(Family.SQUARED_EXPONENTIAL, self.lengthscale, self.amplitude)
        return self

    def with_lengthscale(self, lengthscale: float) -> "KernelSpec":
        return KernelSpec(self.family, float(lengthscale), self.amplitude)

    def variance(self, dim: int = 1) -> float:
        """Value of k(x, x) for points of dimension ``dim``."""
        if self.family is Family.NUCLEAR_DOMINANT_SE:
            return self.amplitude**2 * (np.sqrt(np.pi) * self.lengthscale) ** dim
        return self.amplitude


def as_points(x) -> np.ndarray:
    """Coerce ``x`` to a finite ``(n, d)`` float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise ValueError(f"points must be at most 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite values")
    return arr


def _as_point(x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"a point must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point contains non-finite values")
    return arr


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _from_sq_dists(spec: KernelSpec, d2: np.ndarray, dim: int) -> np.ndarray:
    ell = spec.lengthscale
    if spec.family is Family.SQUARED_EXPONENTIAL:
        return spec.amplitude * np.exp(-d2 / (2.0 * ell * ell))
    if spec.family is Family.MATERN52:
        u = np.sqrt(d2) / ell
        return spec.amplitude * (1.0 + _SQRT5 * u + 5.0 * u * u / 3.0) * np.exp(-_SQRT5 * u)
    # self-convolution of the SE base under Lebesgue measure
    return spec.variance(dim) * np.exp(-d2 / (4.0 * ell * ell))


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """Evaluate ``spec`` at a single pair of points."""
    p1, p2 = _as_point(x1), _as_point(x2)
    if p1.shape != p2.shape:
        raise ValueError(f"dimension mismatch: {p1.shape[0]} vs {p2.shape[0]}")
    d2 = float(np.dot(p1 - p2, p1 - p2))
    return float(_from_sq_dists(spec, np.array(d2), p1.shape[0]))


def nuclear_dominant_eval(base: KernelSpec, y1, y2) -> float:
    """Evaluate the nuclear dominant kernel of an SE ``base`` at ``(y1, y2)``.

    This is the integral of ``k(y1, u) k(u, y2)`` over ``u`` in R^d, which for
    the SE kernel is ``amp^2 (sqrt(pi) ell)^d exp(-|y1 - y2|^2 / (4 ell^2))``.
    """
    if base.family is not Family.SQUARED_EXPONENTIAL:
        raise ValueError("nuclear dominant kernel requires a squared-exponential base")
    return kernel_eval(base.nuclear(), y1, y2)


def cross_gram(spec: KernelSpec, points_a, points_b) -> np.ndarray:
    a, b = as_points(points_a), as_points(points_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("cross_gram needs non-empty point sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return _from_sq_dists(spec, _sq_dists(a, b), a.shape[1])


def gram(spec: KernelSpec, points) -> np.ndarray:
    k = cross_gram(spec, points, points)
    # exact symmetry; round-off in the distance sum can differ across the diagonal
    return 0.5 * (k + k.T)


def hadamard(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


class Factor(NamedTuple):
    """Cholesky factor of ``A + (ridge + jitter) I``."""

    cho: tuple
    ridge: float
    jitter: float

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve(self.cho, b, check_finite=False)

    @property
    def n(self) -> int:
        return self.cho[0].shape[0]


def factorize(a, ridge: float = 0.0) -> Factor:
    """Cholesky-factorise ``a + ridge I``, escalating jitter on failure.

    Jitter starts at ``JITTER_START * mean(diag(a))`` and grows tenfold per
    retry up to ``JITTER_MAX * mean(diag(a))``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    n = a.shape[0]
    scale = float(np.mean(np.diag(a))) if n else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    base = a + ridge * np.eye(n)
    jitter = 0.0
    while True:
        try:
            cho = linalg.cho_factor(base + jitter * np.eye(n), lower=True, check_finite=False)
            if not np.all(np.isfinite(cho[0])):
                raise np.linalg.LinAlgError("non-finite Cholesky factor")
            if jitter > 0:
                logger.debug("factorised with jitter %.3g", jitter)
            return Factor(cho, ridge, jitter)
        except (np.linalg.LinAlgError, ValueError):
            jitter = JITTER_START * scale if jitter == 0.0 else jitter * JITTER_GROWTH
            if jitter > JITTER_MAX * scale * (1 + 1e-9):
                raise SingularMatrixError(
                    f"matrix of size {n} not positive definite after jitter "
                    f"{JITTER_MAX * scale:.3g}"
                ) from None


def regularized_solve(a, b, ridge: float = 0.0, *, return_jitter: bool = False):
    """Return ``(a + ridge I)^{-1} b`` through a jittered Cholesky solve."""
    f = factorize(a, ridge)
    x = f.solve(np.asarray(b, dtype=float))
    return (x, f.jitter) if return_jitter else x
