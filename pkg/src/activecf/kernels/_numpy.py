"""Pure-numpy kernels. Reference path; numba versions must agree to rounding."""

import numpy as np

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_TINY = 1e-300


def em_estep(values, users, items, log_simplex, mu, sigma, beta=1.0):
    """Responsibilities and total log-likelihood for every triple.

    Parameters
    ----------
    values : (T,) normalized ratings
    users, items : (T,) internal ids
    log_simplex : (U, K) log p(z|y)
    mu, sigma : (K, M) per-(class, item) Gaussian parameters
    beta : tempering exponent on the rating densities; the returned
        log-likelihood is only the data log-likelihood when beta == 1

    Returns
    -------
    resp : (T, K)
    loglik : float
    """
    m = mu[:, items].T
    s = sigma[:, items].T
    dev = (values[:, None] - m) / s
    logp = beta * (-0.5 * dev * dev - np.log(s) - LOG_SQRT_2PI) + log_simplex[users]
    top = logp.max(axis=1)
    w = np.exp(logp - top[:, None])
    tot = w.sum(axis=1)
    resp = w / tot[:, None]
    return resp, float(np.sum(top + np.log(tot)))


def fold_in_fixed_point(p, theta0, tol, max_iter):
    """Iterate theta <- mean_i resp_i(theta) until the max change is below ``tol``.

    ``p`` is (N, K) class likelihoods of the N revealed ratings, each row
    scaled arbitrarily (responsibilities are scale free).
    """
    theta = np.array(theta0, dtype=np.float64)
    n = p.shape[0]
    it = 0
    while it < max_iter:
        it += 1
        joint = p * theta
        s = joint.sum(axis=1)
        s[s <= 0.0] = _TINY
        new = (joint / s[:, None]).sum(axis=0) / n
        new /= new.sum()
        diff = np.max(np.abs(new - theta))
        theta = new
        if diff < tol:
            break
    return theta, it


def fast_update_batch(p, alpha, theta0, tol, max_iter):
    """One-example Dirichlet-prior EM, one row of ``p`` per hypothetical (item, rating).

    Maximizes log(sum_z p_z theta_z) + sum_z (alpha_z - 1) log theta_z for
    each row of ``p`` (B, K). Rows stop individually once converged.
    """
    b, k = p.shape
    prior = alpha - 1.0
    norm = 1.0 + prior.sum()
    theta = np.tile(np.asarray(theta0, dtype=np.float64), (b, 1))
    iters = np.zeros(b, dtype=np.int64)
    active = np.arange(b)
    it = 0
    while active.size and it < max_iter:
        it += 1
        th = theta[active]
        joint = p[active] * th
        s = joint.sum(axis=1)
        s[s <= 0.0] = _TINY
        new = (joint / s[:, None] + prior) / norm
        new /= new.sum(axis=1)[:, None]
        diff = np.max(np.abs(new - th), axis=1)
        theta[active] = new
        iters[active] = it
        active = active[diff >= tol]
    return theta, iters
