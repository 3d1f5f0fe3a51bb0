"""Gaussian-process binary classifier with a Laplace approximation.

Implemented directly rather than through scikit-learn, because the acquisition
step needs the latent posterior (mean, variance and cross-covariance between
two query points), which library classifiers do not expose.

Notation: ``a_hat`` is the latent mode at the training inputs, ``W`` the
diagonal of sigma(a)(1 - sigma(a)), and ``F1 = (W^-1 + K)^-1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import DimensionMismatch, NotPositiveSemidefinite, SingleClassData

SQRT5 = math.sqrt(5.0)
K_JITTER = 1e-10


class NonConvergenceWarning(RuntimeWarning):
    """Newton iteration for the latent mode stopped at ``max_iter`` above tolerance."""


def matern52(r, length_scale: float = 1.0):
    s = SQRT5 * np.asarray(r, dtype=float) / length_scale
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


@dataclass(frozen=True)
class Kernel:
    """Matern nu=5/2 kernel with unit amplitude, so ``k(x, x) == 1``."""

    length_scale: float = 1.0

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")

    def __call__(self, A, B) -> np.ndarray:
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        if A.shape[1] != B.shape[1]:
            raise DimensionMismatch(f"kernel inputs of width {A.shape[1]} and {B.shape[1]}")
        return matern52(cdist(A, B), self.length_scale)


def kernel_eval(kern: Kernel, x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch("kernel_eval needs vectors of equal length")
    return float(matern52(np.linalg.norm(x - y), kern.length_scale))


@dataclass(frozen=True)
class LatentPosterior:
    mu_a: np.ndarray
    var_a: np.ndarray


@dataclass(frozen=True)
class ProbPosterior:
    mu: np.ndarray
    var: np.ndarray


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray
    t: np.ndarray
    kernel: Kernel
    scale: np.ndarray
    a_hat: np.ndarray
    K: np.ndarray
    W: np.ndarray
    F1: np.ndarray
    residual: np.ndarray
    converged: bool
    n_iter: int
    fixed_point_residual: float
    log_marginal: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _scaled(self, Xq) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.X.shape[1]:
            raise DimensionMismatch(f"query has {Xq.shape[1]} columns, model has {self.X.shape[1]}")
        return Xq / self.scale

    def k_train(self, Xq) -> np.ndarray:
        """Kernel between training inputs and query rows, shape (n, q)."""
        return self.kernel(self.X / self.scale, self._scaled(Xq))


def _newton_step(K, t, a):
    s = expit(a)
    w = s * (1.0 - s)
    sw = np.sqrt(w)
    B = np.eye(len(a)) + sw[:, None] * K * sw[None, :]
    L = cho_factor(B, lower=True)
    b = w * a + (t - s)
    Kb = K @ b
    return Kb - K @ (sw * cho_solve(L, sw * Kb)), L


def fit_laplace(X, t, kern: Kernel | None = None, max_iter: int = 10, tol: float = 1e-6,
                scale=None) -> GpModel:
    """Fit the Laplace-approximated GP classifier.

    Parameters
    ----------
    X : (n, d) array
    t : (n,) array of {0, 1}
    kern : Kernel, default Matern 5/2 with unit length scale
    max_iter, tol : Newton iteration limits; the last iterate is kept (with a
        :class:`NonConvergenceWarning`) when ``tol`` is not met.
    scale : optional (d,) per-feature divisor applied to inputs before the kernel.
    """
    kern = kern or Kernel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    if X.shape[0] != t.shape[0]:
        raise DimensionMismatch("X and t lengths differ")
    if X.shape[0] < 2 or len(np.unique(t)) < 2:
        raise SingleClassData("Laplace fit needs at least two samples of both classes")
    d = X.shape[1]
    scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
    Xs = X / scale
    n = X.shape[0]
    K = kern(Xs, Xs) + K_JITTER * np.eye(n)

    a = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        a_new, _ = _newton_step(K, t, a)
        step = np.linalg.norm(a_new - a)
        a = a_new
        if step < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"Laplace mode not converged after {max_iter} iterations",
                      NonConvergenceWarning, stacklevel=2)

    a_next, L = _newton_step(K, t, a)
    s = expit(a)
    w = s * (1.0 - s)
    sw = np.sqrt(w)
    F1 = sw[:, None] * cho_solve(L, np.diag(sw))
    F1 = 0.5 * (F1 + F1.T)
    residual = t - s
    log_marg = float(-0.5 * a @ residual
                     + np.sum(t * a - np.logaddexp(0.0, a))
                     - np.sum(np.log(np.diag(L[0]))))
    return GpModel(X=X, t=t, kernel=kern, scale=scale, a_hat=a, K=K, W=w, F1=F1,
                   residual=residual, converged=converged, n_iter=it,
                   fixed_point_residual=float(np.linalg.norm(a_next - a)),
                   log_marginal=log_marg)


def select_length_scale(X, t, grid=(0.25, 0.5, 1.0, 2.0, 4.0), scale=None, **kw) -> GpModel:
    """Refit over a grid of length scales and keep the best Laplace marginal likelihood."""
    best = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        for ell in grid:
            m = fit_laplace(X, t, Kernel(ell), scale=scale, **kw)
            if best is None or m.log_marginal > best.log_marginal:
                best = m
    return best


def latent_posterior(model: GpModel, Xq) -> LatentPosterior:
    kn = model.k_train(Xq)
    mu_a = kn.T @ model.residual
    var_a = 1.0 - np.einsum("iq,iq->q", kn, model.F1 @ kn)
    return LatentPosterior(mu_a, np.maximum(var_a, 0.0))


def probit_prob(mu_a, var_a):
    return expit(np.asarray(mu_a) / np.sqrt(1.0 + np.pi * np.asarray(var_a) / 8.0))


def predict_prob(model: GpModel, Xq) -> np.ndarray:
    """Class-1 probability with the probit correction for latent uncertainty."""
    post = latent_posterior(model, Xq)
    return probit_prob(post.mu_a, post.var_a)


def predict_prob_label0(model: GpModel, Xq) -> np.ndarray:
    return 1.0 - predict_prob(model, Xq)


def delta_moments(post: LatentPosterior) -> ProbPosterior:
    mu = expit(post.mu_a)
    return ProbPosterior(mu, post.var_a * (mu * (1.0 - mu)) ** 2)


def prob_moments(model: GpModel, Xq) -> ProbPosterior:
    """Probability-space mean sigma(mu_a) and delta-method variance."""
    return delta_moments(latent_posterior(model, Xq))


def latent_cross_cov(model: GpModel, Xq, x_min) -> np.ndarray:
    kq = model.k_train(Xq)
    km = model.k_train(x_min)
    kqm = model.kernel(model._scaled(Xq), model._scaled(x_min))[:, 0]
    return kqm - kq.T @ (model.F1 @ km[:, 0])


def cross_cov(model: GpModel, Xq, x_min) -> np.ndarray:
    """Probability-space covariance between f(x) for each query row and f(x_min)."""
    c = latent_cross_cov(model, Xq, x_min)
    mq = expit(latent_posterior(model, Xq).mu_a)
    mm = expit(latent_posterior(model, x_min).mu_a)
    return c * mq * (1.0 - mq) * mm * (1.0 - mm)


def cholesky_with_jitter(cov, jitter: float = 1e-6) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise NotPositiveSemidefinite("covariance is not symmetric")
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        pass
    try:
        return cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveSemidefinite("Cholesky failed even after jitter") from None


def sample_correlated(mean, cov, n: int, jitter: float = 1e-6, rng=None) -> np.ndarray:
    """Draw ``n`` rows from N(mean, cov) as ``mean + L z``; jitter is added only on failure."""
    rng = np.random.default_rng(rng)
    mean = np.asarray(mean, dtype=float).ravel()
    L = cholesky_with_jitter(cov, jitter)
    z = rng.standard_normal((n, mean.shape[0]))
    return mean + z @ L.T
