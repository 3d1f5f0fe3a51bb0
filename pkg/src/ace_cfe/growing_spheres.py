"""Growing Spheres baseline: sample expanding l2 annuli around the instance until the label flips.

Sampling happens in standardised coordinates (per-feature scale), only over
actionable features. Points are uniform in the annulus: direction uniform on
the sphere, radius with density proportional to r**(d-1) on (r_prev, r].
After the first hit an optional bisection toward the instance shrinks the
counterfactual while keeping it valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blackbox import BlackBox
from .cost import LofIndex
from .engine import CfeResult, _Session, _summarize, instance_label_of, reference_scale
from .errors import BudgetExhausted, NoValidCfe
from .schema import Dataset, FeatureSchema, check_instance, effective_bounds, feature_stds


@dataclass(frozen=True)
class GsConfig:
    eta0: float = 0.1
    n_layer: int = 20
    growth: float = 1.5
    max_queries: int = 10000
    bisection_steps: int = 5
    rng_seed: int | None = 0
    lof_k: int = 20

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.n_layer < 1:
            raise ValueError("n_layer must be >= 1")
        if not self.growth > 1:
            raise ValueError("growth must exceed 1")


def sample_annulus(n: int, dim: int, r_in: float, r_out: float, rng) -> np.ndarray:
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    u = rng.uniform(size=n)
    r = (r_in ** dim + u * (r_out ** dim - r_in ** dim)) ** (1.0 / dim)
    return direction * r[:, None]


def _project(P, x_ref, bounds, cats):
    P = np.clip(P, bounds[:, 0], bounds[:, 1])
    for j in cats:
        P[:, j] = np.round(P[:, j])
    frozen = bounds[:, 0] == bounds[:, 1]
    P[:, frozen] = x_ref[frozen]
    return P


def run_gs(x_ref, schema: FeatureSchema, bb: BlackBox, config: GsConfig | None = None,
           data: Dataset | None = None, instance_label: int | None = None,
           strict: bool = False) -> CfeResult:
    config = config or GsConfig()
    x_ref = check_instance(x_ref, schema)
    rng = np.random.default_rng(config.rng_seed)
    bounds = effective_bounds(schema, x_ref)
    scale = reference_scale(schema, data)
    cats = schema.categorical_columns
    free = np.flatnonzero(bounds[:, 0] < bounds[:, 1])
    trace: list = []
    audit_start = bb.counter.audit
    label0 = instance_label_of(bb, x_ref, instance_label, trace)
    session = _Session(bb, config.max_queries, trace)

    hit = None
    r_in, r_out = 0.0, config.eta0
    layer = 0
    stop = "budget"
    try:
        while hit is None and len(free):
            Z = np.zeros((config.n_layer, len(schema)))
            Z[:, free] = sample_annulus(config.n_layer, len(free), r_in, r_out, rng)
            P = _project(x_ref + Z * scale, x_ref, bounds, cats)
            labels = session.query(P)
            session.add(P, labels)
            flipped = np.flatnonzero(labels != label0)
            trace.append({"phase": "layer", "layer": layer, "r_in": r_in, "r_out": r_out,
                          "hits": int(len(flipped))})
            if len(flipped):
                hit = P[flipped[0]].copy()
                break
            layer += 1
            r_in, r_out = r_out, r_out * config.growth
            # the whole box is covered once the inner radius exceeds its standardised diagonal
            span = (bounds[:, 1] - bounds[:, 0]) / scale
            if r_in > np.linalg.norm(span):
                stop = "exhausted_space"
                break
        if hit is not None:
            stop = "found"
            lo, hi = 0.0, 1.0
            hit0 = hit.copy()
            for _ in range(config.bisection_steps):
                mid = 0.5 * (lo + hi)
                p = _project((x_ref + mid * (hit0 - x_ref))[None, :], x_ref, bounds, cats)
                lab = int(session.query(p)[0])
                session.add(p, [lab])
                if lab != label0:
                    hi = mid
                    hit = p[0].copy()
                else:
                    lo = mid
    except BudgetExhausted:
        pass

    norm_stds = data.stds if data is not None else (
        feature_stds(session.X) if session.X is not None else np.zeros(len(schema)))
    ref = data.X if data is not None else session.X
    aff_index = LofIndex(ref, config.lof_k) if ref is not None and len(ref) >= 2 else None
    if hit is not None:
        audit_label = int(bb.classify(hit, audit=True)[0])
        valid = audit_label != label0
        trace.append({"phase": "audit", "what": "validity", "label": audit_label, "ok": valid})
        x_out = hit
    else:
        valid, x_out = False, x_ref
    result = _summarize("gs", x_out, x_ref, label0, valid, session.spent, norm_stds, aff_index,
                        None, trace, layer, bb.counter.audit - audit_start, stop)
    if strict and not result.valid:
        raise NoValidCfe("growing spheres found no counterfactual", result)
    return result
