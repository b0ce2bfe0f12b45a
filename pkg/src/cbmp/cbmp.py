"""Moment-matched posterior of g(a) = <f, mu_{R | s_t, a}> for CBMP-UCB.

f is a GP fitted on the unmatched pairs with the nuclear dominant kernel
``rk`` of the reward kernel ``k``; the conditional mean embedding is a
Bayesian CME whose posterior covariance over the joint (context, action)
input is ``F - G`` times the nuclear kernel. With ``r_hat = (r, r~)`` the
stacked intermediate rewards, ``E_a = Phi(s_t, a)^T (K + lam I)^{-1}`` and
``Khat = k(r_hat, r_hat)``, ``Rhat = rk(r_hat, r_hat)``:

    mean(a)      = E_a k(r, r_hat) Khat^{-1} m_f(r_hat)
    cov(a, a')   = E_a C^T Rbar C E_a'^T
                   + (q_prior + t_prior) F(a, a') - (q_proj + t_proj) G(a, a')

    C       = Khat^{-1} rk(r_hat, r) rk(r, r)^{-1} k(r, r)
    c_f     = Khat^{-1} m_f(r_hat)
    P       = rk(r_hat, r) rk(r, r)^{-1} rk(r, r_hat)
    q_prior = c_f^T Rhat c_f            q_proj = c_f^T P c_f
    t_prior = tr(Khat^{-1} Rhat Khat^{-1} Rbar)
    t_proj  = tr(P Khat^{-1} Rbar Khat^{-1})
    F(a,a') = k_s(s_t, s_t) k_a(a, a')
    G(a,a') = Phi(s_t, a)^T (K + lam I)^{-1} Phi(s_t, a')

``m_f`` and ``Rbar`` are the posterior mean and covariance of f. ``c_f`` uses
the regularised nuclear Gram ``rk(r~, r~) + lam_f I`` so that it agrees with
the fitted f. ``Khat`` and ``rk(r, r)`` are not regularised in the model;
they get a relative ``jitter`` ridge plus jitter escalation, since r_hat holds
duplicates whenever the sequential pairs also enter the unmatched set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from cbmp.cme import Kernels, MatchedDataset, joint_feature_matrix
from cbmp.gp_regression import FPosterior, UnmatchedDataset, fit_f
from cbmp.kernels import Factor, as_points, cross_gram, factorize, gram

logger = logging.getLogger(__name__)

# clamp threshold for negative variances, relative to the prior scale
NEGATIVE_TOL = 1e-8


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class RoundState:
    """Everything needed to score actions at one context, built once per round."""

    d1: MatchedDataset
    d2: UnmatchedDataset
    kernels: Kernels
    lam: float
    lam_f: float
    context: np.ndarray
    r_hat: np.ndarray
    f_posterior: FPosterior = field(repr=False)
    joint_factor: Factor = field(repr=False)
    r_hat_factor: Factor = field(repr=False)
    matched_nuclear_factor: Factor = field(repr=False)
    coef_map: np.ndarray = field(repr=False)  # C, (|r_hat|, n)
    f_coef: np.ndarray = field(repr=False)  # c_f, (|r_hat|,)
    q_prior: float = 0.0
    q_proj: float = 0.0
    t_prior: float = 0.0
    t_proj: float = 0.0
    mean_weights: np.ndarray = field(default=None, repr=False)  # (K+lam I)^{-1} k(r, r_hat) c_f
    d1_cov: np.ndarray = field(default=None, repr=False)  # (K+lam I)^{-1} C^T Rbar C (K+lam I)^{-1}
    diagnostics: dict = field(default_factory=lambda: {"clamped": 0}, compare=False, repr=False)

    def features(self, actions) -> np.ndarray:
        return joint_feature_matrix(self.d1, self.kernels.context, self.kernels.action,
                                    self.context, actions)

    def mean(self, actions) -> np.ndarray:
        return self.features(actions).T @ self.mean_weights

    def _joint_prior(self, actions_a, actions_b) -> np.ndarray:
        ks = self.kernels.context.variance(self.context.shape[0])
        return ks * cross_gram(self.kernels.action, actions_a, actions_b)

    def cov(self, actions_a, actions_b=None) -> np.ndarray:
        """Matrix of ``cov(a, a')`` over two action sets."""
        a = as_points(actions_a)
        b = a if actions_b is None else as_points(actions_b)
        phi_a, phi_b = self.features(a), self.features(b)
        first = phi_a.T @ self.d1_cov @ phi_b
        g = phi_a.T @ self.joint_factor.solve(phi_b)
        f = self._joint_prior(a, b)
        out = first + (self.q_prior + self.t_prior) * f - (self.q_proj + self.t_proj) * g
        return _sym(out) if actions_b is None else out

    def variance(self, actions) -> np.ndarray:
        """Diagonal of :meth:`cov` without forming the full matrix."""
        a = as_points(actions)
        phi = self.features(a)
        first = np.einsum("iq,iq->q", phi, self.d1_cov @ phi)
        g = np.einsum("iq,iq->q", phi, self.joint_factor.solve(phi))
        f = self.kernels.context.variance(self.context.shape[0]) * self.kernels.action.variance(a.shape[1])
        return first + (self.q_prior + self.t_prior) * f - (self.q_proj + self.t_proj) * g

    def stddev(self, actions) -> np.ndarray:
        var = self.variance(actions)
        negative = var < 0
        if np.any(negative):
            self.diagnostics["clamped"] += int(negative.sum())
            scale = self.q_prior + self.t_prior + 1.0
            if np.any(var < -NEGATIVE_TOL * scale):
                logger.warning("clamped variance %.3g below round-off tolerance", var.min())
        return np.sqrt(np.maximum(var, 0.0))

    def stats(self, actions) -> tuple[np.ndarray, np.ndarray]:
        return self.mean(actions), self.stddev(actions)


def build_round_state(d1: MatchedDataset, d2: UnmatchedDataset, kernels: Kernels,
                      lam: float, lam_f: float, jitter: float, s_t) -> RoundState:
    """Assemble and cache the closed-form pieces for context ``s_t``.

    ``jitter`` is a ridge on ``Khat`` and ``rk(r, r)`` relative to their mean
    diagonal; factorisation failures escalate further.
    """
    if len(d1) == 0 or len(d2) == 0:
        raise ValueError("CBMP round state needs non-empty matched and unmatched datasets")
    if d1.intermediate.shape[1] != d2.intermediate.shape[1]:
        raise ValueError("intermediate reward dimension differs between datasets")
    if lam <= 0 or lam_f <= 0 or jitter < 0:
        raise ValueError("lam and lam_f must be positive and jitter non-negative")
    k_r = kernels.reward.base()
    rk = kernels.nuclear_kernel()
    n = len(d1)
    r = d1.intermediate
    r_hat = np.vstack([r, d2.intermediate])
    dim = r.shape[1]

    fp = fit_f(d2, rk, lam_f)
    k_joint = gram(kernels.context, d1.contexts) * gram(kernels.action, d1.actions)
    joint_factor = factorize(k_joint, lam)

    k_hat = gram(k_r, r_hat)
    r_hat_gram = gram(rk, r_hat)
    r_hat_r = r_hat_gram[:, :n]
    k_hat_factor = factorize(k_hat, jitter * k_r.variance(dim))
    rrr_factor = factorize(r_hat_gram[:n, :n], jitter * rk.variance(dim))

    f_coef = k_hat_factor.solve(fp.mean(r_hat))
    coef_map = k_hat_factor.solve(r_hat_r @ rrr_factor.solve(k_hat[:n, :n]))
    proj = _sym(r_hat_r @ rrr_factor.solve(r_hat_r.T))
    r_bar = fp.cov(r_hat)

    q_prior = float(f_coef @ r_hat_gram @ f_coef)
    q_proj = float(f_coef @ proj @ f_coef)
    kinv_rbar = k_hat_factor.solve(r_bar)  # Khat^{-1} Rbar
    t_prior = float(np.sum(k_hat_factor.solve(r_hat_gram) * kinv_rbar.T))
    # tr(P Khat^{-1} Rbar Khat^{-1}) = tr(Khat^{-1} P Khat^{-1} Rbar)
    t_proj = float(np.sum(k_hat_factor.solve(proj) * kinv_rbar.T))

    mean_weights = joint_factor.solve(k_hat[:n, :] @ f_coef)
    inner = _sym(coef_map.T @ r_bar @ coef_map)
    d1_cov = _sym(joint_factor.solve(joint_factor.solve(inner).T))

    return RoundState(
        d1=d1, d2=d2, kernels=kernels, lam=float(lam), lam_f=float(lam_f),
        context=np.atleast_1d(np.asarray(s_t, dtype=float)), r_hat=r_hat,
        f_posterior=fp, joint_factor=joint_factor, r_hat_factor=k_hat_factor,
        matched_nuclear_factor=rrr_factor, coef_map=coef_map, f_coef=f_coef,
        q_prior=q_prior, q_proj=q_proj, t_prior=t_prior, t_proj=t_proj,
        mean_weights=mean_weights, d1_cov=d1_cov,
    )


def cbmp_mean(state: RoundState, a) -> float:
    return float(state.mean(np.reshape(a, (1, -1)))[0])


def cbmp_cov(state: RoundState, a, a_prime) -> float:
    return float(state.cov(np.reshape(a, (1, -1)), np.reshape(a_prime, (1, -1)))[0, 0])


def cbmp_stddev(state: RoundState, a) -> float:
    return float(state.stddev(np.reshape(a, (1, -1)))[0])
