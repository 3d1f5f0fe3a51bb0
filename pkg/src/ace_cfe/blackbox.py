"""Query access to the classifier under explanation, with exact evaluation accounting.

Every labelled point costs one evaluation. ``classify(..., audit=True)`` is
reserved for bookkeeping checks that must not be charged to the method (for
example the final validity re-check); those are tallied separately.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AdapterFailure, DimensionMismatch, SingleClassData
from .schema import Dataset


@dataclass
class QueryCounter:
    total: int = 0
    audit: int = 0
    includes_init: bool = True
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, n: int, audit: bool = False) -> None:
        with self._lock:
            if audit:
                self.audit += n
            else:
                self.total += n


class BlackBox:
    """Base adapter. Subclasses implement ``_predict`` on a 2-D float array."""

    kind = "abstract"

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.counter = QueryCounter()

    def classify(self, points, audit: bool = False) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if P.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} columns, got {P.shape[1]}")
        labels = np.asarray(self._predict(P), dtype=int).ravel()
        if labels.shape[0] != P.shape[0]:
            raise AdapterFailure("adapter returned a wrong number of labels")
        self.counter.add(P.shape[0], audit=audit)
        return labels

    @property
    def queries(self) -> int:
        return self.counter.total

    def reset_counter(self) -> None:
        self.counter = QueryCounter()

    def _predict(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class FunctionBlackBox(BlackBox):
    """Wraps any vectorised ``f(points) -> {0,1}`` callable."""

    kind = "in-process"

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_features: int):
        super().__init__(n_features)
        self.fn = fn

    def _predict(self, P):
        out = np.asarray(self.fn(P)).ravel()
        if not np.isin(out, (0, 1)).all():
            raise AdapterFailure("classifier returned a non-binary label")
        return out


class KnnBlackBox(BlackBox):
    """k-nearest-neighbour majority vote on standardised features; ties go to 0."""

    kind = "in-process"

    def __init__(self, X: np.ndarray, t: np.ndarray, k: int = 5):
        X = np.asarray(X, dtype=float)
        super().__init__(X.shape[1])
        self.k = k
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale = np.where(std > 1e-12, std, 1.0)
        self.Z = (X - self.mean) / self.scale
        self.t = np.asarray(t, dtype=int)

    def _predict(self, P):
        Q = (P - self.mean) / self.scale
        out = np.empty(Q.shape[0], dtype=int)
        chunk = max(1, 2_000_000 // max(1, self.Z.size))
        for start in range(0, Q.shape[0], chunk):
            q = Q[start:start + chunk]
            d2 = ((q[:, None, :] - self.Z[None, :, :]) ** 2).sum(axis=2)
            # stable sort so equidistant training points keep data order
            idx = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
            votes = self.t[idx].sum(axis=1)
            out[start:start + chunk] = (2 * votes > self.k).astype(int)
        return out


def fit_reference_classifier(data: Dataset, k: int = 5) -> KnnBlackBox:
    if len(np.unique(data.t)) < 2:
        raise SingleClassData("reference classifier needs both classes")
    if not 1 <= k <= len(data):
        raise ValueError(f"k must be in [1, {len(data)}]")
    return KnnBlackBox(data.X, data.t, k=k)


class SubprocessBlackBox(BlackBox):
    """Line protocol: one CSV row per line to the child's stdin, "0"/"1" back per line.

    The child is started once, with the schema path as its first argument.
    """

    kind = "subprocess"

    def __init__(self, command, schema_path, n_features: int):
        super().__init__(n_features)
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self.proc = subprocess.Popen(
                argv + [str(schema_path)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterFailure(f"cannot launch {argv[0]!r}: {exc}") from exc

    def _predict(self, P):
        out = []
        try:
            for row in P:
                self.proc.stdin.write(",".join(repr(float(v)) for v in row) + "\n")
                self.proc.stdin.flush()
                reply = self.proc.stdout.readline()
                if reply == "":
                    raise AdapterFailure("classifier process closed its output")
                reply = reply.strip()
                if reply not in ("0", "1"):
                    raise AdapterFailure(f"malformed classifier reply {reply!r}")
                out.append(int(reply))
        except (BrokenPipeError, OSError) as exc:
            raise AdapterFailure(f"classifier process failed: {exc}") from exc
        return np.array(out, dtype=int)

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
