"""Contextual CME-UCB statistics.

The baseline scores an action ``a`` under context ``s_t`` with

    mean  = Phi(s_t, a)^T (K + lam I)^{-1} K_{r r~} (K_{r~ r~} + lam_f I)^{-1} y
    sigma = lam^{-1/2} sqrt(k_s(s_t, s_t) k_a(a, a) - Phi^T (K + lam I)^{-1} Phi)

where ``K = K_ss * K_aa`` (entrywise) and ``Phi(s, a)_i = k_s(s_i, s) k_a(a_i, a)``.
The leading term of the variance is the exact joint kernel value, so the
bracket is an ordinary GP posterior variance and never negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cbmp.gp_regression import UnmatchedDataset
from cbmp.kernels import Factor, KernelSpec, as_points, cross_gram, factorize, gram


def _rows(x, n_expected=None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if n_expected is not None and arr.shape[0] != n_expected:
        raise ValueError(f"expected {n_expected} rows, got {arr.shape[0]}")
    return arr


@dataclass(frozen=True)
class MatchedDataset:
    """Sequentially collected ``(context, action, intermediate reward)`` triples."""

    contexts: np.ndarray  # (n, d_s)
    actions: np.ndarray  # (n, d_a)
    intermediate: np.ndarray  # (n, d_r)

    def __post_init__(self):
        s = _rows(self.contexts)
        a = _rows(self.actions, s.shape[0])
        r = _rows(self.intermediate, s.shape[0])
        for arr in (s, a, r):
            if not np.all(np.isfinite(arr)):
                raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "contexts", s)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "intermediate", r)

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @classmethod
    def empty(cls, d_s: int = 1, d_a: int = 1, d_r: int = 1) -> "MatchedDataset":
        return cls(np.empty((0, d_s)), np.empty((0, d_a)), np.empty((0, d_r)))

    def append(self, s, a, r) -> "MatchedDataset":
        return MatchedDataset(
            np.vstack([self.contexts, np.reshape(s, (1, -1))]),
            np.vstack([self.actions, np.reshape(a, (1, -1))]),
            np.vstack([self.intermediate, np.reshape(r, (1, -1))]),
        )


@dataclass(frozen=True)
class Kernels:
    """Kernels on contexts, actions and intermediate rewards."""

    context: KernelSpec
    action: KernelSpec
    reward: KernelSpec
    # kernel of f and of the embedding's prior; defaults to reward.nuclear()
    nuclear: KernelSpec | None = None

    def nuclear_kernel(self) -> KernelSpec:
        return self.nuclear if self.nuclear is not None else self.reward.base().nuclear()


def joint_features(d1: MatchedDataset, k_s: KernelSpec, k_a: KernelSpec, s, a) -> np.ndarray:
    """Vector with entries ``k_s(s_i, s) * k_a(a_i, a)`` over the triples of ``d1``."""
    if len(d1) == 0:
        raise ValueError("joint features need a non-empty matched dataset")
    return joint_feature_matrix(d1, k_s, k_a, s, np.reshape(a, (1, -1)))[:, 0]


def joint_feature_matrix(d1: MatchedDataset, k_s: KernelSpec, k_a: KernelSpec, s, actions) -> np.ndarray:
    """Joint features for many actions at one context, shape ``(n, q)``."""
    s = np.reshape(np.asarray(s, dtype=float), (1, -1))
    ks = cross_gram(k_s, d1.contexts, s)  # (n, 1)
    ka = cross_gram(k_a, d1.actions, as_points(actions))  # (n, q)
    return ks * ka


def _require(d1: MatchedDataset, d2: UnmatchedDataset | None = None):
    if len(d1) == 0:
        raise ValueError("matched dataset is empty")
    if d2 is not None and len(d2) == 0:
        raise ValueError("unmatched dataset is empty")


@dataclass(frozen=True)
class CMERoundState:
    """Per-round cache of the CME-UCB factorisations for one context."""

    d1: MatchedDataset
    kernels: Kernels
    lam: float
    context: np.ndarray
    factor: Factor = field(repr=False)
    # K_{r r~} (K_{r~ r~} + lam_f I)^{-1} y, absent when no unmatched data given
    reward_weights: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(cls, d1: MatchedDataset, d2: UnmatchedDataset | None, kernels: Kernels,
              lam: float, lam_f: float, s_t) -> "CMERoundState":
        _require(d1, d2)
        if lam <= 0:
            raise ValueError("lam must be positive")
        k = gram(kernels.context, d1.contexts) * gram(kernels.action, d1.actions)
        factor = factorize(k, lam)
        weights = None
        if d2 is not None:
            k_tt = gram(kernels.reward, d2.intermediate)
            alpha = factorize(k_tt, lam_f).solve(d2.ultimate)
            weights = cross_gram(kernels.reward, d1.intermediate, d2.intermediate) @ alpha
        return cls(d1, kernels, float(lam), np.atleast_1d(np.asarray(s_t, dtype=float)), factor, weights)

    def features(self, actions) -> np.ndarray:
        return joint_feature_matrix(self.d1, self.kernels.context, self.kernels.action,
                                    self.context, actions)

    def _prior_joint(self, actions) -> np.ndarray:
        pts = as_points(actions)
        # stationary kernels: k(x, x) does not depend on x
        ks = self.kernels.context.variance(self.context.shape[0])
        return np.full(pts.shape[0], ks * self.kernels.action.variance(pts.shape[1]))

    def mean(self, actions) -> np.ndarray:
        if self.reward_weights is None:
            raise ValueError("round state was built without unmatched data")
        phi = self.features(actions)
        return phi.T @ self.factor.solve(self.reward_weights)

    def variance_term(self, actions) -> np.ndarray:
        """The bracket ``G`` under the square root, before clamping."""
        phi = self.features(actions)
        reduction = np.einsum("iq,iq->q", phi, self.factor.solve(phi))
        return self._prior_joint(actions) - reduction

    def stddev(self, actions) -> np.ndarray:
        g = self.variance_term(actions)
        return np.sqrt(np.maximum(g, 0.0) / self.lam)

    def stats(self, actions) -> tuple[np.ndarray, np.ndarray]:
        return self.mean(actions), self.stddev(actions)


def cme_mean(d1: MatchedDataset, d2: UnmatchedDataset, kernels: Kernels, lam: float,
             lam_f: float, s_t, a) -> float:
    state = CMERoundState.build(d1, d2, kernels, lam, lam_f, s_t)
    return float(state.mean(np.reshape(a, (1, -1)))[0])


def cme_stddev(d1: MatchedDataset, kernels: Kernels, lam: float, s_t, a) -> float:
    state = CMERoundState.build(d1, None, kernels, lam, 1.0, s_t)
    return float(state.stddev(np.reshape(a, (1, -1)))[0])
