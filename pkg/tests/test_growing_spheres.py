import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from ace_cfe.blackbox import FunctionBlackBox
from ace_cfe.errors import NoValidCfe
from ace_cfe.growing_spheres import GsConfig, run_gs, sample_annulus
from ace_cfe.schema import FeatureSchema, FeatureSpec

CUBE = FeatureSchema(tuple(FeatureSpec(f"x{i}", "continuous", -5, 5) for i in range(3)))
DELTA = 1.0


def halfspace():
    return FunctionBlackBox(lambda P: (P[:, 0] > DELTA).astype(int), 3)


def test_hyperplane_distance_with_bisection():
    for seed in range(30):
        r = run_gs([0.0, 0.0, 0.0], CUBE, halfspace(), GsConfig(rng_seed=seed))
        assert r.valid
        assert DELTA <= r.d2 <= 1.5 * DELTA + 0.25 * DELTA


def test_hyperplane_distance_without_bisection():
    d = [run_gs([0.0, 0.0, 0.0], CUBE, halfspace(), GsConfig(rng_seed=s, bisection_steps=0)).d2
         for s in range(30)]
    assert min(d) >= DELTA
    # the first layer reaching past the plane may only graze it; allow one more layer
    assert max(d) <= 1.5 ** 2 * DELTA
    assert np.median(d) <= 1.5 * DELTA


def test_constant_blackbox():
    bb = FunctionBlackBox(lambda P: np.zeros(len(P), dtype=int), 3)
    with pytest.raises(NoValidCfe):
        run_gs([0.0, 0.0, 0.0], CUBE, bb, GsConfig(max_queries=500), strict=True)
    res = run_gs([0.0, 0.0, 0.0], CUBE, FunctionBlackBox(lambda P: np.zeros(len(P), dtype=int), 3))
    assert not res.valid and res.stop_reason == "exhausted_space"


def test_exact_accounting():
    bb = halfspace()
    r = run_gs([0.0, 0.0, 0.0], CUBE, bb, GsConfig(rng_seed=1))
    layers = [e for e in r.trace if e["phase"] == "layer"]
    sampled = 20 * len(layers)
    assert r.queries == bb.queries == sampled + 5
    assert r.queries >= sampled
    assert r.audit_queries == 2
    radii = [e["r_out"] for e in layers]
    assert all(b > a for a, b in zip(radii, radii[1:]))


def test_budget():
    bb = FunctionBlackBox(lambda P: np.zeros(len(P), dtype=int), 3)
    r = run_gs([0.0, 0.0, 0.0], CUBE, bb, GsConfig(max_queries=50))
    assert r.queries <= 50 and r.stop_reason == "budget"


def test_schema_respected():
    S = FeatureSchema((FeatureSpec("a", "continuous", -2, 2),
                       FeatureSpec("k", "categorical", 0, 3, categories=tuple("wxyz")),
                       FeatureSpec("f", "continuous", 0, 5, actionable=False)))
    bb = FunctionBlackBox(lambda P: (P[:, 0] + 0.6 * P[:, 1] > 1.0).astype(int), 3)
    r = run_gs([-1.0, 0.0, 2.5], S, bb, GsConfig(rng_seed=0))
    x = np.array(r.x_cfe)
    assert r.valid and float(x[1]).is_integer() and x[2] == 2.5
    assert (x >= S.bounds[:, 0]).all() and (x <= S.bounds[:, 1]).all()


def test_bisection_never_returns_invalid():
    for seed in range(10):
        bb = halfspace()
        r = run_gs([0.0, 0.0, 0.0], CUBE, bb, GsConfig(rng_seed=seed, bisection_steps=12))
        assert r.valid and r.x_cfe[0] > DELTA


@given(st.integers(1, 6), st.floats(0, 2), st.floats(0.1, 2), st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_annulus_uniform(dim, r_in, width, seed):
    r_out = r_in + width
    Z = sample_annulus(4000, dim, r_in, r_out, np.random.default_rng(seed))
    r = np.linalg.norm(Z, axis=1)
    assert r.min() >= r_in - 1e-12 and r.max() <= r_out + 1e-12
    # radius^d is uniform on (r_in^d, r_out^d] for a uniform annulus
    u = (r ** dim - r_in ** dim) / (r_out ** dim - r_in ** dim)
    assert kstest(u, "uniform").pvalue > 1e-4
    if dim > 1:
        assert np.abs((Z / r[:, None]).mean(axis=0)).max() < 0.1


def test_config_validation():
    with pytest.raises(ValueError):
        GsConfig(eta0=0)
    with pytest.raises(ValueError):
        GsConfig(growth=1.0)
    with pytest.raises(ValueError):
        GsConfig(n_layer=0)
