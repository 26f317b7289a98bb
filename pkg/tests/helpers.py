"""Shared test utilities."""

import numpy as np


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_spd(rng, d, lam_min=0.5, lam_max=2.0):
    """SPD matrix with eigenvalues drawn uniformly from [lam_min, lam_max]."""
    q = random_orthogonal(rng, d)
    lams = rng.uniform(lam_min, lam_max, size=d)
    m = (q * lams) @ q.T
    return 0.5 * (m + m.T)


def finite_difference_gradient(fn, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(up) - fn(dn)) / (2.0 * h)
    return grad


def finite_difference_hessian(grad_fn, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    hess = np.empty((d, d))
    for i in range(d):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        hess[:, i] = (grad_fn(up) - grad_fn(dn)) / (2.0 * h)
    return 0.5 * (hess + hess.T)
