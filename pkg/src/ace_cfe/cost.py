"""Extended counterfactual cost: normalised proximity, sparsity, LOF plausibility.

The LOF used here is the classical Breunig et al. definition in novelty mode
(a query is never part of its own neighbourhood), with two conventions:

* every point tied with the k-th nearest distance belongs to the neighbourhood;
* local reachability density is ``1 / (mean reach-dist + 1e-10)``, as in
  scikit-learn, so duplicated reference points do not produce infinities.

Scores use the negated convention: inliers sit near -1, outliers far below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroVariance, DimensionMismatch

STD_EPS = 1e-10
LRD_EPS = 1e-10


class _Infeasible:
    """Absorbing cost value for hard-constraint violations (greater than any float)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("INFEASIBLE")


INFEASIBLE = _Infeasible()


def is_infeasible(value) -> bool:
    return value is INFEASIBLE


def _valid_mask(stds) -> np.ndarray:
    stds = np.asarray(stds, dtype=float)
    valid = stds > STD_EPS
    if not valid.any():
        raise AllZeroVariance("All features have near-zero std.")
    return valid


def normalized_l2(X, x_ref, stds) -> np.ndarray:
    """Row-wise feature-normalised Euclidean distance, skipping zero-variance features."""
    valid = _valid_mask(stds)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    diff = (X[:, valid] - np.asarray(x_ref, dtype=float).ravel()[valid]) / np.asarray(stds)[valid]
    return np.sqrt(np.sum(diff * diff, axis=1))


def normalized_l1(X, x_ref, stds) -> np.ndarray:
    valid = _valid_mask(stds)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    diff = np.abs(X[:, valid] - np.asarray(x_ref, dtype=float).ravel()[valid]) / np.asarray(stds)[valid]
    return np.sum(diff, axis=1)


def norm_l2(x, x_ref, stds) -> float:
    return float(normalized_l2(x, x_ref, stds)[0])


def norm_l1(x, x_ref, stds) -> float:
    return float(normalized_l1(x, x_ref, stds)[0])


def _pairwise(A, B) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


class LofIndex:
    """Precomputed k-distances and reachability densities of a reference set."""

    def __init__(self, X, k: int = 20):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if n < 2:
            raise ValueError("LOF needs at least two reference points")
        # same cap as scikit-learn: k is at most n - 1
        self.k = int(min(k, n - 1))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        self.X = X
        rows = max(1, 4_000_000 // max(1, n * X.shape[1]))

        def self_distances(s):
            D = _pairwise(X[s:s + rows], X)
            D[np.arange(D.shape[0]), np.arange(s, s + D.shape[0])] = np.inf
            return D

        kdist = np.empty(n)
        for s in range(0, n, rows):
            kdist[s:s + rows] = np.partition(self_distances(s), self.k - 1, axis=1)[:, self.k - 1]
        self.kdist = kdist
        lrd = np.empty(n)
        for s in range(0, n, rows):
            D = self_distances(s)
            mask = D <= kdist[s:s + D.shape[0], None]
            reach = np.maximum(kdist[None, :], D)
            lrd[s:s + D.shape[0]] = 1.0 / (
                np.where(mask, reach, 0.0).sum(axis=1) / mask.sum(axis=1) + LRD_EPS)
        self.lrd = lrd

    def __len__(self):
        return self.X.shape[0]

    def neighbors(self, x) -> np.ndarray:
        """Indices of the (tie-inclusive) k-neighbourhood of a single query."""
        d = _pairwise(np.atleast_2d(np.asarray(x, dtype=float)), self.X)[0]
        kd = np.partition(d, self.k - 1)[self.k - 1]
        return np.flatnonzero(d <= kd)

    def scores(self, Xq) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.X.shape[1]:
            raise DimensionMismatch("LOF query has the wrong number of features")
        out = np.empty(Xq.shape[0])
        rows = max(1, 4_000_000 // max(1, len(self) * Xq.shape[1]))
        for s in range(0, Xq.shape[0], rows):
            D = _pairwise(Xq[s:s + rows], self.X)
            kd = np.partition(D, self.k - 1, axis=1)[:, self.k - 1]
            mask = D <= kd[:, None]
            cnt = mask.sum(axis=1)
            mean_reach = np.where(mask, np.maximum(self.kdist[None, :], D), 0.0).sum(axis=1) / cnt
            lrd_x = 1.0 / (mean_reach + LRD_EPS)
            lof = np.where(mask, self.lrd[None, :], 0.0).sum(axis=1) / cnt / lrd_x
            # query sitting on a fully duplicated neighbourhood: inlier by convention
            out[s:s + rows] = np.where(mean_reach == 0.0, -1.0, -lof)
        return out


def lof_score(index: LofIndex, x) -> float:
    return float(index.scores(x)[0])


def plausibility_penalty(index: LofIndex, x, tau: float):
    """0 for inliers (score > tau), INFEASIBLE otherwise."""
    if tau == -np.inf:
        return 0.0
    return 0.0 if lof_score(index, x) > tau else INFEASIBLE


def affinity_from_score(score):
    return np.clip(np.exp(1.0 + np.asarray(score, dtype=float)), 0.0, 1.0)


def affinity(index: LofIndex, x) -> float:
    return float(affinity_from_score(lof_score(index, x)))


@dataclass(frozen=True)
class CostParams:
    lam: float = 10.0
    beta: float = 5.0
    tau: float = -1.5
    lof_k: int = 20
    stds: np.ndarray = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.lof_k < 1:
            raise ValueError("lof_k must be >= 1")

    def with_lambda(self, lam: float) -> "CostParams":
        return CostParams(lam, self.beta, self.tau, self.lof_k, self.stds)


def cost_j(x, x_ref, f_value: float, params: CostParams, index: LofIndex | None = None):
    """d(x, x_ref) + lambda |f - 0.5| + beta g(x - x_ref) + plausibility penalty."""
    if not 0.0 <= f_value <= 1.0:
        raise ValueError("f_value must lie in [0, 1]")
    if index is not None and plausibility_penalty(index, x, params.tau) is INFEASIBLE:
        return INFEASIBLE
    return (norm_l2(x, x_ref, params.stds)
            + params.lam * abs(f_value - 0.5)
            + params.beta * norm_l1(x, x_ref, params.stds))
