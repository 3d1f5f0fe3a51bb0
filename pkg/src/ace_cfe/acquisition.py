"""Monte-Carlo expected improvement and its maximisation over mixed inputs.

The improvement at ``x`` is measured against the incumbent ``x_min`` (the
observed point with the lowest cost under the current penalty) using joint,
correlated draws of the surrogate at both points. Maximisation runs a
multi-start bounded quasi-Newton search on the continuous relaxation, then a
greedy floor/ceil branch-and-bound over categorical coordinates.

Inside one local search the MC draws are held fixed (common random numbers), so
the objective is deterministic and the line search is well posed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import qmc, truncnorm

from .cost import CostParams, LofIndex, normalized_l1, normalized_l2
from .gp import GpModel, cholesky_with_jitter, latent_posterior

SAMPLING_METHODS = ("truncated_normal", "latin_hypercube", "uniform", "dataset")


@dataclass(frozen=True)
class AcqConfig:
    mc_samples: int = 1000
    restarts: int = 10
    gradient_tolerance: float = 1e-20
    sampling_method: str = "truncated_normal"
    sampling_factor: float = 1.0
    rng_seed: int | None = None
    fd_step: float = 1e-6
    max_local_iter: int = 200

    def __post_init__(self):
        if self.mc_samples < 1 or self.restarts < 1:
            raise ValueError("mc_samples and restarts must be >= 1")
        if self.sampling_method not in SAMPLING_METHODS:
            raise ValueError(f"sampling_method must be one of {SAMPLING_METHODS}")
        if not self.sampling_factor > 0:
            raise ValueError("sampling_factor must be positive")


@dataclass(frozen=True)
class Incumbent:
    x_min: np.ndarray
    index: int
    mu_min: float
    var_min: float
    d_min: float
    g_min: float
    cost_min: float


class _NoImprovement:
    def __repr__(self):
        return "NoImprovement"

    def __bool__(self):
        return False


NoImprovement = _NoImprovement()


@dataclass(frozen=True)
class Candidate:
    x: np.ndarray
    ei: float
    f_at_best: float
    restarts_used: int = 0
    leaves: int = 0


def select_incumbent(model: GpModel, X, x_ref, params: CostParams) -> Incumbent:
    """Lowest-cost observed point using posterior means (first index wins ties)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    post = latent_posterior(model, X)
    mu = expit(post.mu_a)
    var = post.var_a * (mu * (1.0 - mu)) ** 2
    d = normalized_l2(X, x_ref, params.stds)
    g = normalized_l1(X, x_ref, params.stds)
    cost = d + params.beta * g + params.lam * np.abs(0.5 - mu)
    i = int(np.argmin(cost))
    return Incumbent(X[i].copy(), i, float(mu[i]), float(var[i]), float(d[i]), float(g[i]),
                     float(cost[i]))


def factor_2x2(cov, jitter: float = 1e-6) -> np.ndarray:
    """Lower Cholesky factor of a 2x2 covariance that tolerates exact degeneracy.

    Zero variances and perfectly correlated pairs are factored exactly; only a
    genuinely indefinite matrix goes through the jittered general routine.
    """
    v1, c, v2 = float(cov[0, 0]), float(cov[0, 1]), float(cov[1, 1])
    if v1 < 0 or v2 < 0:
        return cholesky_with_jitter(cov, jitter)
    s1 = math.sqrt(v1)
    l21 = c / s1 if s1 > 0 else 0.0
    r = v2 - l21 * l21
    if r < 0:
        if r < -1e-9 * max(v2, 1e-300):
            return cholesky_with_jitter(cov, jitter)
        r = 0.0
    elif r <= 1e-12 * v2:
        r = 0.0
    return np.array([[s1, 0.0], [l21, math.sqrt(r)]])


_EI_CHUNK = 256


def _factor_batch(cov, jitter: float = 1e-6) -> np.ndarray:
    """Row-wise ``factor_2x2`` for a (q, 2, 2) stack; odd rows take the scalar path."""
    v1, c, v2 = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    s1 = np.sqrt(np.maximum(v1, 0.0))
    l21 = np.where(s1 > 0, c / np.where(s1 > 0, s1, 1.0), 0.0)
    r = v2 - l21 * l21
    odd = (v1 < 0) | (v2 < 0) | (r < -1e-9 * np.maximum(v2, 1e-300))
    r = np.where(r <= 1e-12 * v2, 0.0, r)
    L = np.zeros_like(cov)
    L[:, 0, 0] = s1
    L[:, 1, 0] = l21
    L[:, 1, 1] = np.sqrt(np.maximum(r, 0.0))
    for i in np.flatnonzero(odd):
        L[i] = factor_2x2(cov[i], jitter)
    return L


def ei_from_moments(mu, cov, det_x: float, det_min: float, lam: float, z,
                    jitter: float = 1e-6, same_point: bool = False):
    """MC estimate of E[max(0, J(x_min) - J(x))] from the joint Gaussian of (f(x), f(x_min)).

    ``det_x``/``det_min`` are the deterministic cost parts ``d + beta g``;
    ``z`` is an (m, 2) array of standard normal draws.
    Returns ``(ei, f_at_best)``, the latter being the f(x) draw with the
    largest improvement.
    """
    L = factor_2x2(np.asarray(cov, dtype=float), jitter)
    f_x = mu[0] + L[0, 0] * z[:, 0]
    f_m = f_x if same_point else mu[1] + L[1, 0] * z[:, 0] + L[1, 1] * z[:, 1]
    imp = np.maximum(0.0, (det_min + lam * np.abs(f_m - 0.5)) - (det_x + lam * np.abs(f_x - 0.5)))
    return float(imp.mean()), float(f_x[int(np.argmax(imp))])


class EiEvaluator:
    """Callable MC-EI at single points, with incumbent quantities cached."""

    def __init__(self, model: GpModel, incumbent: Incumbent, x_ref, params: CostParams,
                 lof_index: LofIndex | None = None):
        self.model = model
        self.inc = incumbent
        self.x_ref = np.asarray(x_ref, dtype=float).ravel()
        self.params = params
        self.lof = lof_index
        self._km = model.k_train(incumbent.x_min)[:, 0]
        self._F1km = model.F1 @ self._km
        post = latent_posterior(model, incumbent.x_min)
        self._mu_a_min = float(post.mu_a[0])
        self._var_a_min = float(post.var_a[0])
        self.det_min = incumbent.d_min + params.beta * incumbent.g_min

    def feasible(self, x) -> bool:
        return self.lof is None or self.params.tau == -np.inf or \
            float(self.lof.scores(x)[0]) > self.params.tau

    def moments_batch(self, Xq):
        """Probability-space means (q, 2) and covariances (q, 2, 2) of (f(x), f(x_min))."""
        m = self.model
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        kx = m.k_train(Xq)
        mu_a = kx.T @ m.residual
        var_a = np.maximum(1.0 - np.einsum("iq,iq->q", kx, m.F1 @ kx), 0.0)
        kxm = m.kernel(m._scaled(Xq), m._scaled(self.inc.x_min))[:, 0]
        c_a = kxm - kx.T @ self._F1km
        mu = expit(np.stack([mu_a, np.full_like(mu_a, self._mu_a_min)], axis=1))
        gp = mu * (1.0 - mu)
        cov = np.empty((Xq.shape[0], 2, 2))
        cov[:, 0, 0] = var_a * gp[:, 0] ** 2
        cov[:, 0, 1] = cov[:, 1, 0] = c_a * gp[:, 0] * gp[:, 1]
        cov[:, 1, 1] = self._var_a_min * gp[:, 1] ** 2
        return mu, cov

    def moments(self, x):
        mu, cov = self.moments_batch(x)
        return mu[0], cov[0]

    def batch(self, Xq, z):
        """EI and f-at-best for each row of ``Xq`` under the same draws ``z``."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        q = Xq.shape[0]
        ei = np.zeros(q)
        fb = np.full(q, np.nan)
        ok = np.ones(q, dtype=bool)
        if self.lof is not None and self.params.tau != -np.inf:
            ok = self.lof.scores(Xq) > self.params.tau
        if not ok.any():
            return ei, fb
        stds = self.params.stds
        det = (normalized_l2(Xq[ok], self.x_ref, stds)
               + self.params.beta * normalized_l1(Xq[ok], self.x_ref, stds))
        mu, cov = self.moments_batch(Xq[ok])
        same = np.all(Xq[ok] == self.inc.x_min, axis=1)
        det[same] = self.det_min
        idx = np.flatnonzero(ok)
        lam = self.params.lam
        z0, z1 = np.ascontiguousarray(z[:, 0]), np.ascontiguousarray(z[:, 1])
        for s in range(0, len(idx), _EI_CHUNK):
            sl = slice(s, s + _EI_CHUNK)
            L = _factor_batch(cov[sl])
            f_x = mu[sl, 0, None] + L[:, 0, 0, None] * z0
            f_m = mu[sl, 1, None] + L[:, 1, 0, None] * z0 + L[:, 1, 1, None] * z1
            if same[sl].any():
                f_m[same[sl]] = f_x[same[sl]]
            # J(x_min) - J(x), clipped at 0, built in place
            imp = np.abs(f_m - 0.5)
            imp *= lam
            imp += self.det_min
            j_x = np.abs(f_x - 0.5)
            j_x *= lam
            j_x += det[sl, None]
            imp -= j_x
            np.maximum(imp, 0.0, out=imp)
            rows = idx[sl]
            ei[rows] = imp.mean(axis=1)
            fb[rows] = f_x[np.arange(len(rows)), np.argmax(imp, axis=1)]
        return ei, fb

    def __call__(self, x, z):
        ei, fb = self.batch(np.asarray(x, dtype=float).ravel()[None, :], z)
        return float(ei[0]), float(fb[0])


def mc_expected_improvement(x, model: GpModel, incumbent: Incumbent, x_ref, params: CostParams,
                            config: AcqConfig, lof_index: LofIndex | None = None, z=None,
                            rng=None):
    """Returns ``(ei, f_at_best)``; LOF-infeasible points have ``ei == 0``."""
    if z is None:
        z = np.random.default_rng(config.rng_seed if rng is None else rng).standard_normal(
            (config.mc_samples, 2))
    return EiEvaluator(model, incumbent, x_ref, params, lof_index)(x, z)


# ---------------------------------------------------------------- samplers

def sample_truncated_normal(mean, std, bounds, n: int, factor: float = 1.0, rng=None,
                            min_std: float = 1e-3) -> np.ndarray:
    """Per-dimension truncated normal draws; degenerate dimensions return the mean."""
    rng = np.random.default_rng(rng)
    mean = np.asarray(mean, dtype=float).ravel()
    bounds = np.asarray(bounds, dtype=float)
    sd = np.maximum(np.asarray(std, dtype=float) * factor, min_std)
    out = np.empty((n, mean.shape[0]))
    for j in range(mean.shape[0]):
        lo, hi = bounds[j]
        if lo == hi:
            out[:, j] = mean[j]
            continue
        a, b = (lo - mean[j]) / sd[j], (hi - mean[j]) / sd[j]
        col = truncnorm.rvs(a, b, loc=mean[j], scale=sd[j], size=n, random_state=rng)
        bad = (col < lo) | (col > hi)
        while bad.any():
            col[bad] = truncnorm.rvs(a, b, loc=mean[j], scale=sd[j], size=int(bad.sum()),
                                     random_state=rng)
            bad = (col < lo) | (col > hi)
        out[:, j] = col
    return out


def sample_latin_hypercube(bounds, n: int, rng=None) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float)
    u = qmc.LatinHypercube(d=bounds.shape[0], seed=np.random.default_rng(rng)).random(n)
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


def sample_uniform(bounds, n: int, rng=None) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(rng)
    return rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, bounds.shape[0]))


# ---------------------------------------------------------------- local search

def local_minimize(fun: Callable, x0, bounds, step=None, gtol: float = 1e-20,
                   maxiter: int = 200):
    """L-BFGS-B over the non-degenerate coordinates only; returns ``(x, f(x))``.

    ``fun`` is vectorised: it maps a (q, d) array to (q,) values. Gradients are
    forward differences with absolute per-dimension ``step`` (backward where
    the forward point would leave the box), evaluated in one batched call.
    """
    bounds = np.asarray(bounds, dtype=float)
    base = np.clip(np.asarray(x0, dtype=float).ravel(), bounds[:, 0], bounds[:, 1])
    free = np.flatnonzero(bounds[:, 0] < bounds[:, 1])
    if not len(free):
        return base, float(fun(base[None, :])[0])
    step = np.full(base.shape, 1e-6) if step is None else np.asarray(step, dtype=float)
    h = step[free]
    hi = bounds[free, 1]

    def f_and_g(v):
        x = base.copy()
        x[free] = v
        hs = np.where(v + h > hi, -h, h)
        P = np.repeat(x[None, :], len(free) + 1, axis=0)
        P[1 + np.arange(len(free)), free] += hs
        vals = np.asarray(fun(P), dtype=float)
        return vals[0], (vals[1:] - vals[0]) / hs

    res = minimize(f_and_g, base[free], jac=True, method="L-BFGS-B", bounds=bounds[free],
                   options={"gtol": gtol, "maxiter": maxiter})
    x = base.copy()
    x[free] = np.clip(res.x, bounds[free, 0], bounds[free, 1])
    val = float(res.fun)
    if not np.array_equal(x[free], res.x):
        val = float(fun(x[None, :])[0])
    return x, val


@dataclass
class BnbResult:
    x: np.ndarray
    value: float
    leaves: list = field(default_factory=list)


def _int_range(v: float, lo: float, hi: float):
    r = round(v)
    if abs(v - r) < 1e-9:
        a = b = int(r)
    else:
        a, b = math.floor(v), math.ceil(v)
    return range(max(a, int(math.ceil(lo))), min(b, int(math.floor(hi))) + 1)


def branch_and_bound(root, bounds, categorical_cols, objective: Callable, step=None,
                     gtol: float = 1e-20, maxiter: int = 200) -> BnbResult:
    """Greedy depth-first floor/ceil branching on categorical coordinates (minimisation).

    Each branch fixes one categorical coordinate to an integer and re-optimises
    the still-free coordinates from the parent's point; leaves have every
    categorical fixed and are re-optimised once more before comparison.
    """
    cats = list(categorical_cols)
    leaves = []

    def rec(point, bnds, level):
        if level == len(cats):
            x, val = local_minimize(objective, point, bnds, step, gtol, maxiter)
            leaves.append((val, x))
            return
        col = cats[level]
        for v in _int_range(point[col], bnds[col, 0], bnds[col, 1]):
            p = point.copy()
            b = bnds.copy()
            p[col] = v
            b[col] = (v, v)
            x, _ = local_minimize(objective, p, b, step, gtol, maxiter)
            rec(x, b, level + 1)

    root = np.asarray(root, dtype=float).copy()
    if not cats:
        x, val = local_minimize(objective, root, bounds, step, gtol, maxiter)
        return BnbResult(x, val, [(val, x)])
    rec(root, np.asarray(bounds, dtype=float).copy(), 0)
    best = min(range(len(leaves)), key=lambda i: leaves[i][0])
    return BnbResult(leaves[best][1], leaves[best][0], leaves)


# ---------------------------------------------------------------- maximisation

def _draw_start(method, x_ref, bounds, factor, rng, pool):
    if method == "truncated_normal":
        std = np.sqrt(np.abs(x_ref))
        return sample_truncated_normal(x_ref, std, bounds, 1, factor, rng)[0]
    if method == "latin_hypercube":
        return sample_latin_hypercube(bounds, 1, rng)[0]
    if method == "dataset" and pool is not None and len(pool):
        x = np.asarray(pool[rng.integers(len(pool))], dtype=float).copy()
        frozen = bounds[:, 0] == bounds[:, 1]
        x[frozen] = bounds[frozen, 0]
        return np.clip(x, bounds[:, 0], bounds[:, 1])
    return sample_uniform(bounds, 1, rng)[0]


def maximize_acquisition(model: GpModel, X, x_ref, bounds, categorical_cols, params: CostParams,
                         config: AcqConfig, rng=None, lof_index: LofIndex | None = None,
                         pool=None, exclude=()):
    """Next query point, or :data:`NoImprovement` when no restart finds ei > 0.

    ``bounds`` must already have non-actionable features frozen. Starts that
    coincide with acquired points (or rows of ``exclude``) are skipped, and so
    are final candidates that duplicate one.
    """
    rng = np.random.default_rng(config.rng_seed if rng is None else rng)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    bounds = np.asarray(bounds, dtype=float)
    incumbent = select_incumbent(model, X, x_ref, params)
    ev = EiEvaluator(model, incumbent, x_ref, params, lof_index)
    seen = {tuple(r) for r in X}
    seen.update(tuple(np.asarray(r, dtype=float)) for r in exclude)
    free = bounds[:, 0] < bounds[:, 1]
    cats = [c for c in categorical_cols if free[c]]
    step = config.fd_step * np.asarray(model.scale, dtype=float)

    factor = config.sampling_factor
    roots = []
    for _round in range(2):
        for _ in range(config.restarts):
            z = rng.standard_normal((config.mc_samples, 2))
            x0 = _draw_start(config.sampling_method, x_ref, bounds, factor, rng, pool)
            if tuple(x0) in seen:
                continue

            def neg_ei(P, z=z):
                return -ev.batch(P, z)[0]

            x, val = local_minimize(neg_ei, x0, bounds, step, config.gradient_tolerance,
                                    config.max_local_iter)
            if -val > 0 and ev.feasible(x):
                roots.append((val, len(roots), x, z))
        if roots:
            break
        factor *= 2.0
    if not roots:
        return NoImprovement

    roots.sort(key=lambda r: (r[0], r[1]))
    for val, _i, root, z in roots:
        if not cats:
            # the local search already ran on the continuous relaxation, which is the whole problem
            if tuple(root) not in seen:
                ei, f_best = ev(root, z)
                return Candidate(root, ei, f_best, len(roots), 1)
            continue

        def neg_ei(P, z=z):
            return -ev.batch(P, z)[0]

        res = branch_and_bound(root, bounds, cats, neg_ei, step, config.gradient_tolerance,
                               config.max_local_iter)
        if -res.value > 0 and tuple(res.x) not in seen:
            ei, f_best = ev(res.x, z)
            return Candidate(res.x, ei, f_best, len(roots), len(res.leaves))
    return NoImprovement
