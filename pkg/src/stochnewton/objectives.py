"""Sub-sampled objectives: average-of-log-losses problems.

An objective is an average (1/n) * sum_j log g_j(theta) of per-sample
log-convex losses. Optimizers only ever see batch means of the
per-sample value, gradient, and Hessian, packaged as a
``BatchObservation``. Three families are built in:

* least squares (Gaussian linear regression negative log-likelihood),
* natural-parameter exponential-family maximum likelihood,
* canonical generalized linear models with scalar response.

Batch means are accumulated in ascending index order so that repeated
evaluations are bit-identical regardless of caller or thread count.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .linalg import PositiveDefiniteError, sym, try_cholesky

__all__ = [
    "NumericalError",
    "BatchObservation",
    "SubsampledObjective",
    "sample_batch",
    "evaluate_batch",
    "LeastSquaresData",
    "load_least_squares_csv",
    "LeastSquaresObjective",
    "ExpFamily",
    "gaussian_family",
    "bernoulli_family",
    "ExpFamilyObjective",
    "ScalarFamily",
    "gaussian_scalar_family",
    "bernoulli_scalar_family",
    "GlmData",
    "GlmObjective",
    "FisherCheckReport",
    "fisher_identity_check",
]


class NumericalError(RuntimeError):
    """Non-finite quantity produced while evaluating an objective."""

    def __init__(self, message, theta=None, index=None):
        if theta is not None:
            message = f"{message} at theta={np.asarray(theta)!r}"
        if index is not None:
            message = f"{message} (sample index {index})"
        super().__init__(message)
        self.theta = None if theta is None else np.array(theta)
        self.index = index


@dataclass(frozen=True)
class BatchObservation:
    """Batch-mean gradient ``f``, regularized SPD batch-mean Hessian ``q``,
    and batch-mean objective value for one mini-batch."""

    f: np.ndarray
    q: np.ndarray
    value: float


def sample_batch(rng, n, size):
    """Draw ``size`` indices i.i.d. uniformly from {0, ..., n-1} with replacement."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    if n < 1:
        raise ValueError("sample count must be >= 1")
    return rng.integers(0, n, size=size)


class SubsampledObjective:
    """Base class for averaged log-loss objectives.

    Subclasses set ``n`` and ``d`` and implement ``value_grad_hess``.
    Per-sample Hessians must be symmetric positive semidefinite.
    """

    n: int
    d: int

    def value_grad_hess(self, theta, j):
        """Per-sample (log g_j(theta), gradient, Hessian)."""
        raise NotImplementedError

    def value(self, theta, j):
        return self.value_grad_hess(theta, j)[0]

    def grad_hess(self, theta, j):
        _, g, h = self.value_grad_hess(theta, j)
        return g, h

    def batch_value(self, theta, indices):
        """Mean of log g_j(theta) over ``indices`` (evaluated in the given order)."""
        total = 0.0
        for j in indices:
            total += self.value_grad_hess(theta, int(j))[0]
        return total / len(indices)

    def batch_value_fn(self, indices):
        """Callable theta -> batch_value(theta, indices), for repeated use.

        Subclasses may capture batch slices up front; the returned
        function must agree with ``batch_value`` exactly.
        """
        return lambda theta: self.batch_value(theta, indices)


def _regularize_hessian(q):
    """Ridge an almost-PSD batch Hessian until Cholesky succeeds.

    Adds eps*I with eps = 1e-8 * (1 + trace(q)/d), doubling eps up to
    ten times before giving up.
    """
    if try_cholesky(q) is not None:
        return q
    d = q.shape[0]
    eps = 1e-8 * (1.0 + float(np.trace(q)) / d)
    eye = np.eye(d)
    for _ in range(10):
        candidate = q + eps * eye
        if try_cholesky(candidate) is not None:
            return candidate
        eps *= 2.0
    raise PositiveDefiniteError(
        "batch Hessian is not positive definite even after ridge regularization"
    )


def evaluate_batch(obj, theta, batch):
    """Batch-mean value, gradient, and regularized Hessian at ``theta``.

    Per-sample terms are summed in ascending index order (duplicates
    included), which makes the result a pure function of (theta, batch
    multiset). The mean Hessian is ridge-regularized to PD if needed.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != obj.d:
        raise ValueError(f"theta must be a length-{obj.d} vector")
    if not np.isfinite(theta).all():
        raise ValueError("theta contains non-finite entries")
    idx = np.sort(np.asarray(batch, dtype=np.intp).ravel())
    if idx.size == 0:
        raise ValueError("batch is empty")
    if idx[0] < 0 or idx[-1] >= obj.n:
        raise ValueError(f"batch index out of range for n={obj.n}")

    f = np.zeros(obj.d)
    q = np.zeros((obj.d, obj.d))
    value = 0.0
    for j in idx:
        v, g, h = obj.value_grad_hess(theta, int(j))
        value += v
        f += g
        q += h
    size = float(idx.size)
    value /= size
    f /= size
    q = sym(q / size)
    if not (np.isfinite(value) and np.isfinite(f).all() and np.isfinite(q).all()):
        raise NumericalError("non-finite batch evaluation", theta=theta)
    return BatchObservation(f=f, q=_regularize_hessian(q), value=value)


# ---------------------------------------------------------------------------
# Least squares
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeastSquaresData:
    """Regression data: covariate rows ``xs`` (n, d) and responses ``ys`` (n,)."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.asarray(self.ys, dtype=float).ravel()
        if xs.shape[0] != ys.shape[0]:
            raise ValueError("xs and ys disagree on the sample count")
        if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
            raise ValueError("data contains non-finite entries")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self):
        return self.xs.shape[0]

    @property
    def d(self):
        return self.xs.shape[1]


def load_least_squares_csv(path):
    """Read a least-squares dataset from CSV with header ``x_1,...,x_d,y``."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: missing header row")
        names = [c.strip() for c in header.split(",")]
        d = len(names) - 1
        expected = [f"x_{i}" for i in range(1, d + 1)] + ["y"]
        if d < 1 or names != expected:
            raise ValueError(
                f"{path}: header must be x_1,...,x_d,y; got {names}"
            )
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape[1] != d + 1:
        raise ValueError(f"{path}: rows do not match the header width")
    return LeastSquaresData(xs=rows[:, :d], ys=rows[:, d])


class LeastSquaresObjective(SubsampledObjective):
    """log g_j(theta) = (y_j - theta.x_j)^2 / 2.

    Gradient (x_j x_j^T) theta - x_j y_j, Hessian x_j x_j^T (cached;
    it does not depend on theta).
    """

    def __init__(self, data):
        self.data = data
        self.n = data.n
        self.d = data.d
        self._outers = data.xs[:, :, None] * data.xs[:, None, :]

    def value_grad_hess(self, theta, j):
        x = self.data.xs[j]
        r = float(np.dot(x, theta)) - self.data.ys[j]
        return 0.5 * r * r, x * r, self._outers[j]

    def batch_value(self, theta, indices):
        r = self.data.xs[indices] @ theta - self.data.ys[indices]
        return 0.5 * float(np.dot(r, r)) / len(r)

    def batch_value_fn(self, indices):
        xs = self.data.xs[indices]
        ys = self.data.ys[indices]
        k = len(ys)

        def value(theta):
            r = xs @ theta - ys
            return 0.5 * float(np.dot(r, r)) / k

        return value


# ---------------------------------------------------------------------------
# Exponential families (natural parameterization)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpFamily:
    """Natural-parameter exponential family.

    ``t`` maps a batch of raw samples (m, k) to sufficient statistics
    (m, d); ``a`` is the log-normalizer with evaluators ``grad_a`` and
    ``hess_a``; ``sample(rng, theta, size)`` draws from the member at
    ``theta``. grad_a and hess_a are the mean and covariance of t under
    that member, which is what makes the Newton direction a natural
    gradient here.
    """

    d: int
    k: int
    t: Callable
    a: Callable
    grad_a: Callable
    hess_a: Callable
    sample: Callable
    name: str = ""


def gaussian_family(d=1):
    """Gaussian with identity covariance; the natural parameter is the mean."""
    return ExpFamily(
        d=d,
        k=d,
        t=lambda xs: np.atleast_2d(xs),
        a=lambda theta: 0.5 * float(np.dot(theta, theta)),
        grad_a=lambda theta: np.asarray(theta, dtype=float),
        hess_a=lambda theta: np.eye(d),
        sample=lambda rng, theta, size: theta + rng.standard_normal((size, d)),
        name="gaussian",
    )


def bernoulli_family():
    """Bernoulli in the natural (log-odds) parameterization."""
    return ExpFamily(
        d=1,
        k=1,
        t=lambda xs: np.atleast_2d(np.asarray(xs, dtype=float).reshape(-1, 1)),
        a=lambda theta: float(np.logaddexp(0.0, theta[0])),
        grad_a=lambda theta: np.array([float(expit(theta[0]))]),
        hess_a=lambda theta: np.array([[float(expit(theta[0])) * (1.0 - float(expit(theta[0])))]]),
        sample=lambda rng, theta, size: (
            rng.random((size, 1)) < expit(theta[0])
        ).astype(float),
        name="bernoulli",
    )


class ExpFamilyObjective(SubsampledObjective):
    """Negative log-likelihood for i.i.d. exponential-family samples.

    log g_j(theta) = A(theta) - <theta, T(x_j)> up to the carrier term,
    which is constant in theta and therefore omitted. The per-sample
    Hessian is hess_a(theta) for every j.
    """

    def __init__(self, family, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[1] != family.k:
            raise ValueError(
                f"samples must have {family.k} columns, got {samples.shape[1]}"
            )
        self.family = family
        self.samples = samples
        self.n = samples.shape[0]
        self.d = family.d
        self._ts = np.asarray(family.t(samples), dtype=float).reshape(self.n, self.d)

    def value_grad_hess(self, theta, j):
        fam = self.family
        a_val = float(fam.a(theta))
        grad = np.asarray(fam.grad_a(theta), dtype=float) - self._ts[j]
        hess = sym(np.asarray(fam.hess_a(theta), dtype=float))
        if not (np.isfinite(a_val) and np.isfinite(grad).all() and np.isfinite(hess).all()):
            raise NumericalError("log-normalizer evaluation is non-finite", theta=theta, index=j)
        value = a_val - float(np.dot(theta, self._ts[j]))
        return value, grad, hess


# ---------------------------------------------------------------------------
# Canonical GLMs (scalar response)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarFamily:
    """Scalar exponential-family component for canonical GLMs.

    ``t``, ``a``, ``a_prime``, ``a_double_prime`` act elementwise on
    arrays; ``sample(rng, eta, size)`` draws responses at natural
    parameter eta.
    """

    t: Callable
    a: Callable
    a_prime: Callable
    a_double_prime: Callable
    sample: Callable
    name: str = ""


def gaussian_scalar_family():
    """Unit-variance Gaussian response; the canonical link is the identity."""
    return ScalarFamily(
        t=lambda y: np.asarray(y, dtype=float),
        a=lambda eta: 0.5 * np.square(eta),
        a_prime=lambda eta: np.asarray(eta, dtype=float),
        a_double_prime=lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
        sample=lambda rng, eta, size: eta + rng.standard_normal(size),
        name="gaussian",
    )


def bernoulli_scalar_family():
    """Bernoulli response; the canonical link is the logit."""
    return ScalarFamily(
        t=lambda y: np.asarray(y, dtype=float),
        a=lambda eta: np.logaddexp(0.0, eta),
        a_prime=expit,
        a_double_prime=lambda eta: expit(eta) * (1.0 - expit(eta)),
        sample=lambda rng, eta, size: (rng.random(size) < expit(eta)).astype(float),
        name="bernoulli",
    )


@dataclass(frozen=True)
class GlmData:
    """Covariate rows ``xs`` (n, d), scalar responses ``ys`` (n,), and the
    scalar family tying them together."""

    xs: np.ndarray
    ys: np.ndarray
    family: ScalarFamily

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.asarray(self.ys, dtype=float).ravel()
        if xs.shape[0] != ys.shape[0]:
            raise ValueError("xs and ys disagree on the sample count")
        if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
            raise ValueError("data contains non-finite entries")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)


class GlmObjective(SubsampledObjective):
    """Canonical GLM negative log-likelihood with eta_j = theta.x_j.

    log g_j(theta) = A(eta_j) - eta_j T(y_j) up to the carrier term;
    gradient x_j (A'(eta_j) - T(y_j)); Hessian (x_j x_j^T) A''(eta_j).
    The identity-link Gaussian case coincides with least squares.
    """

    def __init__(self, data):
        self.data = data
        self.n = data.xs.shape[0]
        self.d = data.xs.shape[1]
        self._t_ys = np.asarray(data.family.t(data.ys), dtype=float).ravel()
        self._outers = data.xs[:, :, None] * data.xs[:, None, :]

    def value_grad_hess(self, theta, j):
        fam = self.data.family
        x = self.data.xs[j]
        eta = float(np.dot(x, theta))
        a_val = float(fam.a(eta))
        mean = float(fam.a_prime(eta))
        var = float(fam.a_double_prime(eta))
        if not (np.isfinite(a_val) and np.isfinite(mean) and np.isfinite(var)):
            raise NumericalError(
                "natural parameter left the family's domain", theta=theta, index=j
            )
        value = a_val - eta * self._t_ys[j]
        grad = x * (mean - self._t_ys[j])
        hess = self._outers[j] * var
        return value, grad, hess

    def batch_value(self, theta, indices):
        fam = self.data.family
        etas = self.data.xs[indices] @ theta
        vals = np.asarray(fam.a(etas), dtype=float) - etas * self._t_ys[indices]
        return float(np.sum(vals)) / len(vals)


# ---------------------------------------------------------------------------
# Fisher-identity diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FisherCheckReport:
    """Monte-Carlo check that the score variance matches hess_a at the truth.

    Diagnostic only; it never gates optimization.
    """

    sample_variance: np.ndarray
    expected: np.ndarray
    deviation: np.ndarray
    standard_error: np.ndarray
    draws: int

    def within(self, n_se):
        """True if every entry deviates by at most n_se standard errors."""
        return bool(np.all(self.deviation <= n_se * self.standard_error))


def fisher_identity_check(family, theta_star, draws, rng=None):
    """Compare the MC variance of the score at ``theta_star`` to hess_a.

    Draws ``draws`` samples from the family member at theta_star, forms
    the score grad_a(theta) - T(x) per sample, and reports the
    entrywise deviation of its sample covariance from hess_a(theta_star)
    together with the Monte-Carlo standard error of each entry.
    """
    if draws < 1000:
        raise ValueError("fisher_identity_check needs at least 1000 draws")
    if rng is None:
        rng = np.random.default_rng()
    theta_star = np.asarray(theta_star, dtype=float)
    xs = family.sample(rng, theta_star, draws)
    ts = np.asarray(family.t(xs), dtype=float).reshape(draws, family.d)
    scores = np.asarray(family.grad_a(theta_star), dtype=float)[None, :] - ts
    dev = scores - scores.mean(axis=0)
    var_hat = dev.T @ dev / draws
    # SE of each covariance entry from the second moment of dev_i*dev_j.
    sq = dev * dev
    second = sq.T @ sq / draws
    se = np.sqrt(np.maximum(second - var_hat * var_hat, 0.0) / draws)
    expected = sym(np.asarray(family.hess_a(theta_star), dtype=float))
    return FisherCheckReport(
        sample_variance=var_hat,
        expected=expected,
        deviation=np.abs(var_hat - expected),
        standard_error=se,
        draws=draws,
    )
