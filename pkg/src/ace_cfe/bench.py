"""Evaluation metrics, the aggregated CFE score and the fixed/mixed instance protocols."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .blackbox import BlackBox, fit_reference_classifier
from .cost import LofIndex, affinity_from_score
from .engine import CfeResult, EngineConfig, run
from .errors import AceError, SingleMethod
from .growing_spheres import GsConfig, run_gs
from .schema import Dataset, FeatureSchema

METHODS = ("ace", "gs")


@dataclass(frozen=True)
class BenchmarkRecord:
    method: str
    dataset: str
    instance_id: int
    seed: int
    queries: int
    d2: float
    g1: float
    d2_normalized: float
    g1_normalized: float
    affinity: float
    valid: bool


COLUMNS = tuple(f.name for f in fields(BenchmarkRecord))


@dataclass(frozen=True)
class ScoreWeights:
    """Weights of (queries, d2, g1, 1 - affinity, 1 - validity)."""

    w1: float = 0.35
    w2: float = 0.25
    w3: float = 0.15
    w4: float = 0.125
    w5: float = 0.125

    def __post_init__(self):
        w = self.as_array()
        if (w < 0).any():
            raise ValueError("score weights must be non-negative")
        if not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("score weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4, self.w5])


def compute_metrics(result: CfeResult, x_ref, dataset_stds, lof_index: LofIndex | None,
                    dataset: str = "", instance_id: int = 0, seed: int = 0) -> BenchmarkRecord:
    """Raw and std-normalised distances, affinity against ``lof_index``'s reference set."""
    x = np.asarray(result.x_cfe, dtype=float)
    diff = x - np.asarray(x_ref, dtype=float).ravel()
    stds = np.asarray(dataset_stds, dtype=float)
    ok = stds > 1e-10
    aff = math.nan
    if lof_index is not None:
        aff = float(affinity_from_score(lof_index.scores(x)[0]))
    return BenchmarkRecord(
        method=result.method, dataset=dataset, instance_id=int(instance_id), seed=int(seed),
        queries=int(result.queries),
        d2=float(np.linalg.norm(diff)), g1=float(np.abs(diff).sum()),
        d2_normalized=float(np.linalg.norm(diff[ok] / stds[ok])),
        g1_normalized=float(np.abs(diff[ok] / stds[ok]).sum()),
        affinity=aff, valid=bool(result.valid))


# ---------------------------------------------------------------- aggregation

def method_means(records: Sequence[BenchmarkRecord], normalized: bool = True) -> dict:
    """Per-method averages: queries and validity over all runs, distances/affinity over valid runs."""
    out = {}
    for m in dict.fromkeys(r.method for r in records):
        rs = [r for r in records if r.method == m]
        good = [r for r in rs if r.valid]
        d2 = [r.d2_normalized if normalized else r.d2 for r in good]
        g1 = [r.g1_normalized if normalized else r.g1 for r in good]
        out[m] = {
            "queries": float(np.mean([r.queries for r in rs])),
            "d2": float(np.mean(d2)) if good else math.nan,
            "g1": float(np.mean(g1)) if good else math.nan,
            "affinity": float(np.mean([r.affinity for r in good])) if good else math.nan,
            "validity": len(good) / len(rs),
        }
    return out


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def score_from_means(means: Mapping[str, Mapping[str, float]],
                     weights: ScoreWeights | None = None) -> dict:
    """CFE score per method from averaged metrics; lower is better.

    Queries, d2 and g1 are min-max normalised across methods; affinity and
    validity already live on [0, 1] and enter as ``1 - value``. Methods
    without a single valid run get ``nan`` and take no part in the scaling.
    """
    weights = weights or ScoreWeights()
    if len(means) < 2:
        raise SingleMethod("the CFE score compares at least two methods")
    names = list(means)
    scored = [m for m in names if means[m]["validity"] > 0]
    out = {m: math.nan for m in names}
    if not scored:
        return out
    cols = {k: _minmax(np.array([means[m][k] for m in scored], dtype=float))
            for k in ("queries", "d2", "g1")}
    w = weights.as_array()
    for i, m in enumerate(scored):
        out[m] = float(w[0] * cols["queries"][i] + w[1] * cols["d2"][i] + w[2] * cols["g1"][i]
                       + w[3] * (1.0 - means[m]["affinity"]) + w[4] * (1.0 - means[m]["validity"]))
    return out


def cfe_score(records: Sequence[BenchmarkRecord], weights: ScoreWeights | None = None) -> dict:
    return score_from_means(method_means(records), weights)


def summarize(records: Sequence[BenchmarkRecord]) -> dict:
    """Mean and (population) std of every numeric metric."""
    out = {}
    for key in ("queries", "d2", "g1", "d2_normalized", "g1_normalized", "affinity", "valid"):
        v = np.array([float(getattr(r, key)) for r in records])
        out[key] = (float(np.mean(v)), float(np.std(v)))
    return out


# ---------------------------------------------------------------- protocols

BlackBoxFactory = Callable[[Dataset], BlackBox]


def _default_factory(train: Dataset) -> BlackBox:
    return fit_reference_classifier(train, k=5)


def _run_method(method, x_ref, schema, bb, seed, data, engine_config, gs_config):
    if method == "ace":
        return run(x_ref, schema, bb, replace(engine_config or EngineConfig(), rng_seed=seed),
                   data=data)
    if method == "gs":
        return run_gs(x_ref, schema, bb, replace(gs_config or GsConfig(), rng_seed=seed),
                      data=data)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _close(bb):
    close = getattr(bb, "close", None)
    if close is not None:
        close()


def _one(method, x_ref, schema, bb, seed, data, lof, dataset, instance_id,
         engine_config, gs_config) -> BenchmarkRecord:
    try:
        res = _run_method(method, x_ref, schema, bb, seed, data, engine_config, gs_config)
    except AceError:
        # a failed run still counts against validity; its distances are undefined
        return BenchmarkRecord(method, dataset, int(instance_id), int(seed), bb.queries,
                               math.nan, math.nan, math.nan, math.nan, math.nan, False)
    return compute_metrics(res, x_ref, data.stds, lof, dataset, instance_id, seed)


def run_fixed_test(method: str, data: Dataset, schema: FeatureSchema, instance, repeats: int = 100,
                   seeds: Sequence[int] | None = None, blackbox_factory: BlackBoxFactory | None = None,
                   engine_config: EngineConfig | None = None, gs_config: GsConfig | None = None,
                   dataset: str = "", instance_id: int = -1) -> list[BenchmarkRecord]:
    """Explain one instance ``repeats`` times with different seeds against one black box."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    seeds = list(range(repeats)) if seeds is None else list(seeds)
    if len(seeds) != repeats:
        raise ValueError("need exactly one seed per repeat")
    factory = blackbox_factory or _default_factory
    x_ref = np.asarray(instance, dtype=float).ravel()
    lof = LofIndex(data.X, (engine_config or EngineConfig()).lof_k)
    out = []
    for s in seeds:
        bb = factory(data)
        try:
            out.append(_one(method, x_ref, schema, bb, s, data, lof, dataset, instance_id,
                            engine_config, gs_config))
        finally:
            _close(bb)
    return out


def sample_instances(n_rows: int, n_instances: int, seed: int) -> np.ndarray:
    if n_instances > n_rows:
        raise ValueError(f"cannot sample {n_instances} instances from {n_rows} rows")
    return np.random.default_rng(seed).choice(n_rows, size=n_instances, replace=False)


def run_mixed_test(method: str, data: Dataset, schema: FeatureSchema, n_instances: int = 100,
                   seed: int = 0, blackbox_factory: BlackBoxFactory | None = None,
                   engine_config: EngineConfig | None = None, gs_config: GsConfig | None = None,
                   dataset: str = "") -> list[BenchmarkRecord]:
    """Explain ``n_instances`` rows sampled without replacement, one run each.

    Each instance is withheld from the black box's training data and from the
    pool ACE may initialise from. Distances are normalised by whole-dataset
    stds and affinity is measured against the whole dataset.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    factory = blackbox_factory or _default_factory
    idx = sample_instances(len(data), n_instances, seed)
    lof = LofIndex(data.X, (engine_config or EngineConfig()).lof_k)
    out = []
    for j, i in enumerate(idx):
        train = data.without(int(i))
        bb = factory(train)
        x_ref = np.array(data.X[i])
        run_seed = seed * 100_003 + j
        try:
            res = _run_method(method, x_ref, schema, bb, run_seed, train, engine_config, gs_config)
        except AceError:
            out.append(BenchmarkRecord(method, dataset, int(i), run_seed, bb.queries,
                                       math.nan, math.nan, math.nan, math.nan, math.nan, False))
            continue
        finally:
            _close(bb)
        out.append(compute_metrics(res, x_ref, data.stds, lof, dataset, int(i), run_seed))
    return out


# ---------------------------------------------------------------- I/O

def write_records(path, records: Sequence[BenchmarkRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            d = asdict(r)
            w.writerow([repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in COLUMNS])


def read_records(path) -> list[BenchmarkRecord]:
    conv = {"method": str, "dataset": str, "instance_id": int, "seed": int, "queries": int,
            "valid": lambda s: s == "True"}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            out.append(BenchmarkRecord(**{c: conv.get(c, float)(row[c]) for c in COLUMNS}))
    return out


def _cell(mean, std, digits=2):
    if math.isnan(mean):
        return "-"
    return f"{mean:.{digits}f} ({std:.{digits}f})"


def render_table(records: Sequence[BenchmarkRecord], weights: ScoreWeights | None = None) -> str:
    """Plain-text comparison: h#, d2, g1, affinity, validity (mean (std)) and the CFE score."""
    methods = list(dict.fromkeys(r.method for r in records))
    scores = cfe_score(records, weights) if len(methods) > 1 else None
    header = ["method", "h#", "d2", "g1", "alpha", "V"] + (["S"] if scores else [])
    rows = []
    for m in methods:
        rs = [r for r in records if r.method == m]
        good = [r for r in rs if r.valid]

        def ms(vals):
            return (float(np.mean(vals)), float(np.std(vals))) if len(vals) else (math.nan, 0.0)

        v = [float(r.valid) for r in rs]
        row = [m,
               _cell(*ms([r.queries for r in rs]), digits=0),
               _cell(*ms([r.d2_normalized for r in good])),
               _cell(*ms([r.g1_normalized for r in good])),
               _cell(*ms([r.affinity for r in good])),
               _cell(*ms(v))]
        if scores:
            row.append("-" if math.isnan(scores[m]) else f"{scores[m]:.3f}")
        rows.append(row)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
