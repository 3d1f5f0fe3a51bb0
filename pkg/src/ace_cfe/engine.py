"""End-to-end counterfactual search loop.

Outer loop: run a penalty inner loop, harvest a decision-boundary candidate
from a scrambled Sobol design, spend one query to verify its label. A valid
candidate replaces the running best only if it is strictly closer to the
instance; the search stops at the first valid candidate that is not closer.
Invalid candidates never stop the search before the budget.

Note on the outer stopping rule: read literally as a loop guard,
``while h(x~) = h(x_s^n) and ||x_s^n - x~|| < ||x_s^o - x~||`` would exit as
soon as any candidate is valid. Here the search instead continues until a
valid candidate fails to improve on the previous one.

Inner loop: acquire, query, refit, then raise lambda <- min(lambda**p,
lambda_max). It stops once lambda has reached lambda_max and the last step
moved at most ``epsilon``, or after ``max_inner_iter`` iterations. The
default cap of 8 covers one full ramp from lambda0 to lambda_max (seven
updates) plus one iteration at lambda_max.

The running best is seeded with the closest label-flipped point of the
initial sample, since those are already verified counterfactuals.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .acquisition import AcqConfig, NoImprovement, maximize_acquisition, sample_truncated_normal
from .blackbox import BlackBox
from .cost import CostParams, LofIndex, affinity_from_score
from .errors import BudgetExhausted, NoValidCfe, SingleClassInit
from .gp import GpModel, Kernel, NonConvergenceWarning, fit_laplace, predict_prob, select_length_scale
from .schema import Dataset, FeatureSchema, check_instance, effective_bounds, feature_stds

INIT_METHODS = ("truncated_normal", "dataset")


@dataclass(frozen=True)
class EngineConfig:
    n0: int = 30
    lambda0: float = 10.0
    lambda_max: float = 1e15
    growth_p: float = 1.5
    epsilon: float = 1e-3
    mc: int = 1000
    sobol_n: int = 8000
    beta: float = 5.0
    tau: float = -1.5
    lof_k: int = 20
    max_queries: int = 1000
    rng_seed: int | None = 0
    init: str = "truncated_normal"
    init_factor: float = 1.0
    restarts: int = 10
    sampling_method: str = "truncated_normal"
    sampling_factor: float = 1.0
    boundary_quantile: float = 0.01
    max_inner_iter: int = 8
    max_outer_iter: int = 50
    length_scale: float = 1.0
    optimize_length_scale: bool = False

    def __post_init__(self):
        if not self.lambda0 > 1:
            raise ValueError("lambda0 must exceed 1 for the power schedule to grow")
        if not self.growth_p > 1:
            raise ValueError("growth_p must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sobol_n < 1:
            raise ValueError("sobol_n must be >= 1")
        if self.n0 < 2:
            raise ValueError("n0 must be >= 2")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")
        if not 0 <= self.boundary_quantile <= 1:
            raise ValueError("boundary_quantile must be in [0, 1]")
        if self.max_inner_iter < 1 or self.max_outer_iter < 1:
            raise ValueError("iteration caps must be >= 1")
        # surfaces acquisition-level errors (mc, restarts, sampler) at construction
        self.acq_config()

    def acq_config(self) -> AcqConfig:
        return AcqConfig(mc_samples=self.mc, restarts=self.restarts,
                         sampling_method=self.sampling_method,
                         sampling_factor=self.sampling_factor)


@dataclass
class CfeResult:
    method: str
    x_cfe: list
    valid: bool
    queries: int
    d2: float
    g1: float
    d2_normalized: float
    g1_normalized: float
    affinity: float
    posterior_prob: float | None
    instance: list
    instance_label: int
    outer_iterations: int = 0
    audit_queries: int = 0
    stop_reason: str = ""
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def lambda_schedule(lambda0: float, p: float, lambda_max: float, n: int) -> list[float]:
    """First ``n + 1`` penalties: lambda0, then lambda <- min(lambda**p, lambda_max)."""
    lams = [float(lambda0)]
    for _ in range(n):
        lams.append(min(lams[-1] ** p, lambda_max))
    return lams


def reference_scale(schema: FeatureSchema, data: Dataset | None = None) -> np.ndarray:
    """Per-feature scale used to standardise GP inputs and sampling widths.

    Dataset standard deviations when available, otherwise the standard
    deviation of a uniform distribution over the schema bounds.
    """
    b = schema.bounds
    fallback = (b[:, 1] - b[:, 0]) / math.sqrt(12.0)
    scale = fallback if data is None else np.where(data.stds > 1e-10, data.stds, fallback)
    return np.where(scale > 1e-10, scale, 1.0)


class _Session:
    """Budgeted black-box access plus the growing acquired dataset."""

    def __init__(self, bb: BlackBox, max_queries: int, trace: list):
        self.bb = bb
        self.start = bb.queries
        self.max_queries = max_queries
        self.trace = trace
        self.X = None
        self.y = None

    @property
    def spent(self) -> int:
        return self.bb.queries - self.start

    def query(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        if self.spent + P.shape[0] > self.max_queries:
            raise BudgetExhausted(f"budget of {self.max_queries} queries exhausted")
        return self.bb.classify(P)

    def add(self, P, labels):
        P = np.atleast_2d(P)
        if self.X is None:
            self.X, self.y = P.copy(), np.asarray(labels, dtype=int).copy()
        else:
            self.X = np.vstack([self.X, P])
            self.y = np.concatenate([self.y, labels])


def initialize(x_ref, schema: FeatureSchema, config: EngineConfig, session: _Session, rng,
               data: Dataset | None = None, scale=None, bounds=None, max_rounds: int = 5):
    """Label ``n0`` starting points; resample (doubling the spread) while only one class is seen."""
    x_ref = np.asarray(x_ref, dtype=float)
    bounds = effective_bounds(schema, x_ref) if bounds is None else bounds
    scale = reference_scale(schema, data) if scale is None else scale
    cats = schema.categorical_columns
    factor = config.init_factor
    if config.init == "dataset":
        if data is None:
            raise ValueError("dataset initialisation needs data")
        order = rng.permutation(len(data))
    used = 0
    for rnd in range(max_rounds):
        if config.init == "dataset":
            rows = order[used:used + config.n0]
            used += len(rows)
            if len(rows) == 0:
                break
            P = data.X[rows]
        else:
            P = sample_truncated_normal(x_ref, scale, bounds, config.n0, factor, rng)
            for j in cats:
                lo, hi = bounds[j]
                P[:, j] = rng.integers(int(lo), int(hi) + 1, size=config.n0)
        labels = session.query(P)
        session.add(P, labels)
        session.trace.append({"phase": "init", "round": rnd, "n": int(len(P)),
                              "positives": int(labels.sum())})
        if len(np.unique(session.y)) == 2:
            return session.X, session.y
        factor *= 2.0
    raise SingleClassInit("initial sample contains a single class")


def _fit(X, y, scale, config: EngineConfig) -> GpModel:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        if config.optimize_length_scale:
            return select_length_scale(X, y, scale=scale)
        return fit_laplace(X, y, Kernel(config.length_scale), scale=scale)


def _cost_stds(X, scale):
    s = feature_stds(X)
    if not (s > 1e-10).any():
        # every acquired point identical in every feature: fall back to the reference scale
        return scale
    return s


def run_inner_penalty_loop(session: _Session, x_ref, bounds, categorical_cols, scale,
                           config: EngineConfig, rng, outer: int = 0, pool=None) -> GpModel:
    acq = config.acq_config()
    lam = config.lambda0
    x_prev = None
    for k in range(config.max_inner_iter):
        X, y = session.X, session.y
        model = _fit(X, y, scale, config)
        params = CostParams(lam, config.beta, config.tau, config.lof_k, _cost_stds(X, scale))
        lof = LofIndex(X, config.lof_k)
        cand = maximize_acquisition(model, X, x_ref, bounds, categorical_cols, params, acq,
                                    rng=rng, lof_index=lof, pool=pool, exclude=[x_ref])
        entry = {"phase": "inner", "outer": outer, "iter": k, "lambda": lam}
        if cand is NoImprovement:
            step = 0.0
            entry.update(candidate=None, ei=0.0, label=None)
        else:
            label = session.query(cand.x)
            session.add(cand.x, label)
            step = math.inf if x_prev is None else float(np.linalg.norm(cand.x - x_prev))
            x_prev = cand.x
            entry.update(candidate=cand.x.tolist(), ei=cand.ei, label=int(label[0]))
        entry["step"] = step
        session.trace.append(entry)
        lam = min(lam ** config.growth_p, config.lambda_max)
        if lam >= config.lambda_max and step <= config.epsilon:
            break
    return _fit(session.X, session.y, scale, config)


def snap_categorical(u, lo: float, hi: float) -> np.ndarray:
    """Map unit-interval draws onto the integer levels lo..hi by ``round(u * (levels - 1))``."""
    values = np.arange(int(lo), int(hi) + 1, dtype=float)
    return values[np.round(np.asarray(u, dtype=float) * (len(values) - 1)).astype(int)]


def sobol_design(bounds, n: int, categorical_cols=(), seed=None) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence of length 2**ceil(log2 n), mapped to bounds.

    Categorical columns snap to ``values[round(u * (levels - 1))]``; degenerate
    bounds give a constant column.
    """
    bounds = np.asarray(bounds, dtype=float)
    d = bounds.shape[0]
    m = max(0, int(math.ceil(math.log2(n))))
    base = qmc.Sobol(d=d, scramble=True, seed=seed).random_base2(m)[:n]
    out = np.empty_like(base)
    cats = set(categorical_cols)
    for j, (lo, hi) in enumerate(bounds):
        if lo == hi:
            out[:, j] = lo
        elif j in cats:
            out[:, j] = snap_categorical(base[:, j], lo, hi)
        else:
            out[:, j] = lo + base[:, j] * (hi - lo)
    return out


def sample_decision_boundary(model: GpModel, schema: FeatureSchema, bounds, x_ref, sobol_n: int,
                             seed=None, quantile: float = 0.01, lof_index: LofIndex | None = None,
                             tau: float = -np.inf) -> np.ndarray:
    """Sobol point nearest to ``x_ref`` among those whose predicted probability is closest to 0.5.

    When ``lof_index`` is given, LOF outliers (score <= tau) are discarded
    first, unless that would discard everything.
    """
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    P = sobol_design(bounds, sobol_n, schema.categorical_columns, seed)
    if lof_index is not None and tau > -np.inf:
        keep = lof_index.scores(P) > tau
        if keep.any():
            P = P[keep]
    gap = np.abs(predict_prob(model, P) - 0.5)
    thr = np.quantile(gap, quantile)
    sel = P[gap <= thr]
    d = np.linalg.norm(sel - x_ref, axis=1)
    return sel[int(np.argmin(d))].copy()


def _summarize(method, x, x_ref, label0, valid, spent, norm_stds, affinity_index, model,
               trace, outer, audit, stop_reason) -> CfeResult:
    x = np.asarray(x, dtype=float)
    diff = x - x_ref
    valid_std = norm_stds > 1e-10
    d2n = float(np.linalg.norm(diff[valid_std] / norm_stds[valid_std])) if valid_std.any() else math.nan
    g1n = float(np.abs(diff[valid_std] / norm_stds[valid_std]).sum()) if valid_std.any() else math.nan
    aff = math.nan
    if affinity_index is not None:
        aff = float(affinity_from_score(affinity_index.scores(x)[0]))
    prob = float(predict_prob(model, x)[0]) if model is not None else None
    return CfeResult(method=method, x_cfe=x.tolist(), valid=bool(valid), queries=int(spent),
                     d2=float(np.linalg.norm(diff)), g1=float(np.abs(diff).sum()),
                     d2_normalized=d2n, g1_normalized=g1n, affinity=aff, posterior_prob=prob,
                     instance=x_ref.tolist(), instance_label=int(label0),
                     outer_iterations=outer, audit_queries=audit, stop_reason=stop_reason,
                     trace=trace)


def instance_label_of(bb: BlackBox, x_ref, instance_label, trace) -> int:
    """Label of the explained instance; looked up as an uncharged audit query if not supplied."""
    if instance_label is not None:
        return int(instance_label)
    label = int(bb.classify(x_ref, audit=True)[0])
    trace.append({"phase": "audit", "what": "instance_label", "label": label})
    return label


def run(x_ref, schema: FeatureSchema, bb: BlackBox, config: EngineConfig | None = None,
        data: Dataset | None = None, instance_label: int | None = None,
        strict: bool = False) -> CfeResult:
    """Search for a counterfactual of ``x_ref``.

    Parameters
    ----------
    data : optional dataset; provides the standardisation scale, the pool for
        ``init="dataset"`` and the reference manifold for the affinity metric.
    instance_label : the black-box label of ``x_ref`` if already known.
    strict : raise :class:`NoValidCfe` instead of returning an invalid result.
    """
    config = config or EngineConfig()
    x_ref = check_instance(x_ref, schema)
    rng = np.random.default_rng(config.rng_seed)
    bounds = effective_bounds(schema, x_ref)
    scale = reference_scale(schema, data)
    cats = schema.categorical_columns
    trace: list = []
    audit_start = bb.counter.audit
    label0 = instance_label_of(bb, x_ref, instance_label, trace)
    session = _Session(bb, config.max_queries, trace)

    best, best_dist = None, math.inf
    last_cand = None
    X0 = None
    model = None
    outer = 0
    stop = "budget"
    try:
        initialize(x_ref, schema, config, session, rng, data, scale, bounds)
        X0 = session.X.copy()
        flipped = session.X[session.y != label0]
        if len(flipped):
            dist = np.linalg.norm(flipped - x_ref, axis=1)
            i = int(np.argmin(dist))
            best, best_dist = flipped[i].copy(), float(dist[i])
            trace.append({"phase": "seed", "candidate": best.tolist(), "distance": best_dist})
        pool = data.X if data is not None else None
        for outer in range(1, config.max_outer_iter + 1):
            model = run_inner_penalty_loop(session, x_ref, bounds, cats, scale, config, rng,
                                           outer, pool)
            lof = LofIndex(session.X, config.lof_k)
            cand = sample_decision_boundary(model, schema, bounds, x_ref, config.sobol_n,
                                            seed=int(rng.integers(2**31)),
                                            quantile=config.boundary_quantile,
                                            lof_index=lof, tau=config.tau)
            label = int(session.query(cand)[0])
            session.add(cand, [label])
            last_cand = cand
            dist = float(np.linalg.norm(cand - x_ref))
            improved = label != label0 and dist < best_dist
            trace.append({"phase": "boundary", "outer": outer, "candidate": cand.tolist(),
                          "label": label, "distance": dist, "accepted": improved})
            if label != label0:
                if improved:
                    best, best_dist = cand, dist
                else:
                    stop = "converged"
                    break
        else:
            stop = "max_outer_iter"
    except BudgetExhausted:
        stop = "budget"
    except SingleClassInit:
        stop = "single_class_init"
    if X0 is None:
        X0 = session.X
    if model is None and session.X is not None and len(np.unique(session.y)) == 2:
        model = _fit(session.X, session.y, scale, config)

    if data is not None:
        norm_stds = data.stds
        aff_ref = data.X
    else:
        norm_stds = feature_stds(session.X) if session.X is not None else np.zeros(len(schema))
        aff_ref = X0
    aff_index = LofIndex(aff_ref, config.lof_k) if aff_ref is not None and len(aff_ref) >= 2 else None

    if best is not None:
        audit_label = int(bb.classify(best, audit=True)[0])
        trace.append({"phase": "audit", "what": "validity", "label": audit_label,
                      "ok": audit_label != label0})
        x_out, valid = best, audit_label != label0
    else:
        x_out, valid = (last_cand if last_cand is not None else x_ref), False

    result = _summarize("ace", x_out, x_ref, label0, valid, session.spent, norm_stds, aff_index,
                        model, trace, outer, bb.counter.audit - audit_start, stop)
    if strict and not result.valid:
        raise NoValidCfe("no counterfactual found within the query budget", result)
    return result
