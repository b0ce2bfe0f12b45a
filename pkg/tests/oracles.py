"""Independent reference implementations used to check the library.

Nothing here imports from ``cbmp``: kernels are written out from their
formulas, linear solves use Gaussian elimination or explicit inverses, and
the moment oracle samples the discretised model directly.
"""

import math

import numpy as np


def se(x, y, ell=1.0, amp=1.0):
    d2 = sum((a - b) ** 2 for a, b in zip(np.atleast_1d(x), np.atleast_1d(y)))
    return amp * math.exp(-d2 / (2 * ell * ell))


def matern52(x, y, ell=1.0, amp=1.0):
    u = math.sqrt(sum((a - b) ** 2 for a, b in zip(np.atleast_1d(x), np.atleast_1d(y)))) / ell
    return amp * (1 + math.sqrt(5) * u + 5 * u * u / 3) * math.exp(-math.sqrt(5) * u)


def nuclear_se(x, y, ell=1.0, amp=1.0):
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    return amp**2 * (math.sqrt(math.pi) * ell) ** len(x) * math.exp(-d2 / (4 * ell * ell))


def mat(kern, xs, ys, **kw):
    return np.array([[kern(x, y, **kw) for y in ys] for x in xs])


def gauss_solve(a, b):
    """Dense Gaussian elimination with partial pivoting."""
    a = [list(map(float, row)) for row in np.asarray(a)]
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    bb = [list(np.atleast_1d(row)) for row in (b[:, None] if vec else b)]
    n = len(a)
    for col in range(n):
        piv = max(range(col, n), key=lambda i: abs(a[i][col]))
        a[col], a[piv] = a[piv], a[col]
        bb[col], bb[piv] = bb[piv], bb[col]
        for i in range(col + 1, n):
            f = a[i][col] / a[col][col]
            a[i] = [x - f * y for x, y in zip(a[i], a[col])]
            bb[i] = [x - f * y for x, y in zip(bb[i], bb[col])]
    x = [None] * n
    for i in reversed(range(n)):
        acc = list(bb[i])
        for j in range(i + 1, n):
            acc = [p - a[i][j] * q for p, q in zip(acc, x[j])]
        x[i] = [p / a[i][i] for p in acc]
    out = np.array(x)
    return out[:, 0] if vec else out


def gp_posterior(train, y, query, noise, kern, **kw):
    """Textbook GP posterior mean and covariance with an explicit inverse."""
    inv = np.linalg.inv(mat(kern, train, train, **kw) + noise * np.eye(len(train)))
    kq = mat(kern, query, train, **kw)
    return kq @ inv @ y, mat(kern, query, query, **kw) - kq @ inv @ kq.T


def cme_chain(s, a, r, rt, y, s_t, a_q, lam, lam_f, ks, ka, kr):
    """CME-UCB mean and stddev from explicit matrix inverses."""
    n = len(s)
    kmat = mat(ks, s, s) * mat(ka, a, a)
    phi = np.array([ks(s[i], s_t) * ka(a[i], a_q) for i in range(n)])
    inv = np.linalg.inv(kmat + lam * np.eye(n))
    inv_f = np.linalg.inv(mat(kr, rt, rt) + lam_f * np.eye(len(rt)))
    mean = phi @ inv @ mat(kr, r, rt) @ inv_f @ y
    g = ks(s_t, s_t) * ka(a_q, a_q) - phi @ inv @ phi
    return mean, math.sqrt(max(g, 0.0) / lam)


def cbmp_chain(s, a, r, rt, y, s_t, actions, lam, lam_f, ell_s=1.0, ell_a=1.0, ell_r=1.0, nuc_amp=1.0):
    """Closed-form CBMP mean/covariance via explicit inverses, term by term.

    Returns a dict with every intermediate quantity so tests can compare them
    one at a time.
    """
    ks = lambda x, z: se(x, z, ell_s)  # noqa: E731
    ka = lambda x, z: se(x, z, ell_a)  # noqa: E731
    kr = lambda x, z: se(x, z, ell_r)  # noqa: E731
    rk = lambda x, z: nuclear_se(x, z, ell_r, nuc_amp)  # noqa: E731
    n, m = len(r), len(rt)
    rh = list(r) + list(rt)
    kmat = mat(ks, s, s) * mat(ka, a, a)
    k_inv = np.linalg.inv(kmat + lam * np.eye(n))
    khat_inv = np.linalg.inv(mat(kr, rh, rh))
    rrr_inv = np.linalg.inv(mat(rk, r, r))
    rhat = mat(rk, rh, rh)
    rhr = mat(rk, rh, r)
    rht = mat(rk, rh, rt)
    f_inv = np.linalg.inv(mat(rk, rt, rt) + lam_f * np.eye(m))
    rbar = rhat - rht @ f_inv @ rht.T
    theta1 = khat_inv @ rhr @ rrr_inv @ mat(kr, r, r)
    theta4 = khat_inv @ rht @ f_inv @ y
    p = rhr @ rrr_inv @ rhr.T
    out = {
        "theta1": theta1,
        "theta4": theta4,
        "theta2a": theta4 @ rhat @ theta4,
        "theta2b": theta4 @ p @ theta4,
        "theta3a": np.trace(khat_inv @ rhat @ khat_inv @ rbar),
        "theta3b": np.trace(p @ khat_inv @ rbar @ khat_inv),
        "rbar": rbar,
    }
    phis = np.array([[ks(s[i], s_t) * ka(a[i], q) for i in range(n)] for q in actions])
    e = phis @ k_inv
    out["mean"] = e @ mat(kr, r, rh) @ khat_inv @ rht @ f_inv @ y
    f = np.array([[ks(s_t, s_t) * ka(p1, p2) for p2 in actions] for p1 in actions])
    g = phis @ k_inv @ phis.T
    out["cov"] = (e @ theta1.T @ rbar @ theta1 @ e.T
                  + (out["theta2a"] + out["theta3a"]) * f
                  - (out["theta2b"] + out["theta3b"]) * g)
    return out


def grid_moment_oracle(s, a, r, rt, y, s_t, actions, lam, lam_f, grid, n_draws, rng,
                       ell_s=1.0, ell_a=1.0, ell_r=1.0, nuc_amp=1.0, rcond=1e-10):
    """Monte-Carlo draws of <f, mu(s_t, a, .)> in a grid discretisation (1-D rewards).

    f is drawn from its exact GP posterior on the grid. The embedding is drawn
    on the grid from the posterior of the function-valued regression
    ``k(r_i, .) = mu(x_i, .) + sqrt(lam) eps_i`` with ``mu ~ GP(0, k_x (x) rk)``
    and ``eps_i ~ GP(0, rk)``, every observed function being seen on the whole
    grid. The RKHS inner product is ``f(grid)^T pinv(K_grid) mu(grid)``.

    Returns an array of shape ``(n_draws, len(actions))``.
    """
    grid = np.asarray(grid, dtype=float)
    n, m, q = len(r), len(rt), len(actions)
    ks = lambda x, z: se(x, z, ell_s)  # noqa: E731
    ka = lambda x, z: se(x, z, ell_a)  # noqa: E731

    def kr_mat(p, z):
        return np.exp(-np.subtract.outer(p, z) ** 2 / (2 * ell_r**2))

    def rk_mat(p, z):
        return nuc_amp**2 * math.sqrt(math.pi) * ell_r * np.exp(-np.subtract.outer(p, z) ** 2 / (4 * ell_r**2))

    # f posterior on the grid
    f_inv = np.linalg.inv(rk_mat(rt, rt) + lam_f * np.eye(m))
    rgt = rk_mat(grid, rt)
    f_mean = rgt @ f_inv @ y
    f_cov = rk_mat(grid, grid) - rgt @ f_inv @ rgt.T
    f_draws = _mvn(rng, f_mean, f_cov, n_draws)  # (draws, G)

    # joint input posterior: observed functions on the full grid, separable noise
    kx = mat(ks, s, s) * mat(ka, a, a)
    x_inv = np.linalg.inv(kx + lam * np.eye(n))
    phis = np.array([[ks(s[i], s_t) * ka(a[i], qa) for i in range(n)] for qa in actions])  # (q, n)
    w = phis @ x_inv  # posterior mean weights over observed functions
    mu_mean = w @ kr_mat(r, grid)  # (q, G)
    prior = np.array([[ks(s_t, s_t) * ka(p1, p2) for p2 in actions] for p1 in actions])
    x_cov = prior - w @ phis.T  # (q, q) input-side posterior covariance
    # mu(., grid) ~ MN(mu_mean, x_cov, rk_grid): L_x Z L_g^T
    lx = _psd_sqrt(x_cov)
    lg = _psd_sqrt(rk_mat(grid, grid))
    z = rng.standard_normal((n_draws, q, grid.size))
    mu_draws = mu_mean[None] + (lx @ z) @ lg.T

    k_pinv = np.linalg.pinv(kr_mat(grid, grid), rcond=rcond, hermitian=True)
    return np.einsum("dh,dqh->dq", f_draws @ k_pinv, mu_draws)


def projected_moment_oracle(s, a, r, rt, y, s_t, actions, lam, lam_f, n_draws, rng,
                            ell_s=1.0, ell_a=1.0, ell_r=1.0, nuc_amp=1.0):
    """Draws of ``f(r_hat)^T k(r_hat, r_hat)^{-1} mu(s_t, a, r_hat)``.

    Here f is read only through its values at the stacked points r_hat, and
    the embedding is conditioned on its observed functions at the matched
    points r only. The covariance of these draws is exactly the closed-form
    covariance, so this checks every variance term by sampling.
    """
    n, m = len(r), len(rt)
    rh = np.concatenate([r, rt])
    ks = lambda x, z: se(x, z, ell_s)  # noqa: E731
    ka = lambda x, z: se(x, z, ell_a)  # noqa: E731

    def kr_mat(p, z):
        return np.exp(-np.subtract.outer(p, z) ** 2 / (2 * ell_r**2))

    def rk_mat(p, z):
        return nuc_amp**2 * math.sqrt(math.pi) * ell_r * np.exp(-np.subtract.outer(p, z) ** 2 / (4 * ell_r**2))

    f_inv = np.linalg.inv(rk_mat(rt, rt) + lam_f * np.eye(m))
    f_mean = rk_mat(rh, rt) @ f_inv @ y
    f_cov = rk_mat(rh, rh) - rk_mat(rh, rt) @ f_inv @ rk_mat(rt, rh)
    f_draws = _mvn(rng, f_mean, f_cov, n_draws)

    kx = mat(ks, s, s) * mat(ka, a, a)
    x_inv = np.linalg.inv(kx + lam * np.eye(n))
    phis = np.array([[ks(s[i], s_t) * ka(a[i], qa) for i in range(n)] for qa in actions])
    w = phis @ x_inv
    prior = np.array([[ks(s_t, s_t) * ka(p1, p2) for p2 in actions] for p1 in actions])
    g = w @ phis.T
    # observing k(r_i, .) at r only: vec-Gaussian conditioning with separable blocks
    rrr_inv = np.linalg.inv(rk_mat(r, r))
    rhr = rk_mat(rh, r)
    mu_mean = w @ (rhr @ rrr_inv @ kr_mat(r, r)).T  # (q, |r_hat|)
    proj = rhr @ rrr_inv @ rhr.T
    q, h = len(actions), rh.size
    cov = np.kron(prior, rk_mat(rh, rh)) - np.kron(g, proj)
    mu_draws = _mvn(rng, mu_mean.reshape(-1), cov, n_draws).reshape(n_draws, q, h)
    k_inv = np.linalg.inv(kr_mat(rh, rh))
    return np.einsum("dh,dqh->dq", f_draws @ k_inv, mu_draws)


def _psd_sqrt(c):
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    return v * np.sqrt(np.clip(w, 0, None))


def _mvn(rng, mean, cov, n):
    return mean + rng.standard_normal((n, mean.size)) @ _psd_sqrt(cov).T
