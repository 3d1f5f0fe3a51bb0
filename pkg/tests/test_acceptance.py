"""End-to-end acceptance checks, one test per criterion.

Each test appends ``CRITERION n: PASS/FAIL detail`` to the terminal summary
and then asserts, so a failure is both reported and counted.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from ace_cfe import engine, synthetic
from ace_cfe.acquisition import NoImprovement, branch_and_bound, ei_from_moments, local_minimize
from ace_cfe.bench import BenchmarkRecord, method_means, run_mixed_test, score_from_means
from ace_cfe.blackbox import FunctionBlackBox, KnnBlackBox
from ace_cfe.cost import LofIndex, affinity_from_score
from ace_cfe.engine import EngineConfig, _Session, initialize, lambda_schedule, reference_scale, run
from ace_cfe.gp import fit_laplace, latent_posterior, predict_prob, probit_prob
from ace_cfe.growing_spheres import GsConfig, run_gs
from ace_cfe.schema import FeatureSchema, FeatureSpec
from conftest import ACCEPTANCE_LINES
from oracles import laplace_bruteforce, lof_bruteforce, logistic_normal_gh, sigmoid

X_MOONS = np.array([0.55, 0.25])


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1

def test_criterion_1_laplace_oracle():
    rng = np.random.default_rng(101)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        n = int(rng.integers(3, 13))
        X = rng.uniform(-2, 2, size=(n, 2))
        t = rng.integers(0, 2, size=n)
        t[:2] = [0, 1]
        Xq = rng.uniform(-2.5, 2.5, size=(10, 2))
        m = fit_laplace(X, t)
        post = latent_posterior(m, Xq)
        a, mu, var, prob = laplace_bruteforce(X, t, Xq)
        for got, want in ((m.a_hat, a), (post.mu_a, mu), (post.var_a, var),
                          (predict_prob(m, Xq), prob)):
            worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-6 and elapsed < 10,
           f"max |diff| {worst:.2e} (tol 1e-6) over 20 datasets in {elapsed:.2f}s (limit 10s)")


# ---------------------------------------------------------------- 2

def test_criterion_2_probit_vs_quadrature():
    rng = np.random.default_rng(202)
    mu = rng.uniform(-5, 5, 100)
    sd = rng.uniform(0, 3, 100)
    err = np.array([abs(float(probit_prob(m, s * s)) - logistic_normal_gh(m, s * s))
                    for m, s in zip(mu, sd)])
    i = int(np.argmax(err))
    in_model_range = err[sd <= 1.0].max()
    report(2, err.max() <= 5e-3,
           f"max |probit - GH64| {err.max():.4f} at mu_a={mu[i]:.2f}, sigma_a={sd[i]:.2f} "
           f"(tol 5e-3); {np.sum(err > 5e-3)}/100 over; max over sigma_a<=1 "
           f"(reachable with a unit-amplitude kernel) {in_model_range:.4f}")


# ---------------------------------------------------------------- 3

def test_criterion_3_mc_ei():
    z = np.random.default_rng(0).standard_normal((1000, 2))
    mu = np.array([0.7, 0.2])
    exact_err = 0.0
    for det_x, det_min, lam in ((1.0, 4.0, 10.0), (9.0, 4.0, 10.0), (0.3, 0.31, 1e3)):
        ei, _ = ei_from_moments(mu, np.zeros((2, 2)), det_x, det_min, lam, z)
        j_x, j_min = det_x + lam * abs(mu[0] - 0.5), det_min + lam * abs(mu[1] - 0.5)
        exact_err = max(exact_err, abs(ei - max(0.0, j_min - j_x)))

    mu = np.array([0.45, 0.3])
    cov = np.array([[0.02, 0.005], [0.005, 0.01]])
    r = np.random.default_rng(3)
    ref = np.mean([ei_from_moments(mu, cov, 1.0, 1.5, 10.0, r.standard_normal((10**6, 2)))[0]
                   for _ in range(10)])
    ms = [10**3, 10**4, 10**5]
    rmse = []
    for m in ms:
        errs = [ei_from_moments(mu, cov, 1.0, 1.5, 10.0, r.standard_normal((m, 2)))[0] - ref
                for _ in range(40)]
        rmse.append(math.sqrt(np.mean(np.square(errs))))
    slope = float(np.polyfit(np.log(ms), np.log(rmse), 1)[0])
    ok = exact_err <= 1e-12 and rmse[0] > rmse[1] > rmse[2] and abs(slope + 0.5) <= 0.1
    report(3, ok, f"degenerate max err {exact_err:.1e} (tol 1e-12); RMSE {rmse[0]:.2e}/"
                  f"{rmse[1]:.2e}/{rmse[2]:.2e} at m=1e3/1e4/1e5, slope {slope:.3f} (-0.5 +- 0.1)")


# ---------------------------------------------------------------- 4

def test_criterion_4_lof_oracle():
    R = np.random.default_rng(2024).normal(0.0, 1.0, size=(200, 2))
    Q = np.random.default_rng(2025).uniform(-3, 3, size=(50, 2))
    idx = LofIndex(R, 20)
    want, hoods = lof_bruteforce(R, Q, 20)
    got = idx.scores(Q)
    same_hoods = all(sorted(idx.neighbors(q).tolist()) == h for q, h in zip(Q, hoods))
    rel = float(np.max(np.abs(got - want) / np.abs(want)))
    aff_want = np.clip(np.exp(1.0 + want), 0.0, 1.0)
    aff_diff = float(np.max(np.abs(affinity_from_score(got) - aff_want)))
    report(4, same_hoods and rel <= 1e-12 and aff_diff <= 1e-12,
           f"identical neighbour sets on 50/50 queries: {same_hoods}; max rel score diff "
           f"{rel:.1e}; max affinity diff {aff_diff:.1e} (float summation order only)")


# ---------------------------------------------------------------- 5

def mixed_problem(rng):
    k = int(rng.integers(1, 4))
    levels = rng.integers(2, 5, size=k)
    a = rng.uniform(0.1, 5, k)
    m = rng.uniform(0, 1, k) * (levels - 1)
    c = rng.uniform(-1, 1, 2)
    y_hi = rng.uniform(0.5, 3)

    def f(P):
        P = np.atleast_2d(P)
        cat, y1, y2 = P[:, :k], P[:, k], P[:, k + 1]
        # continuous targets depend on the categoricals and may sit outside the box
        return ((a * (cat - m) ** 2).sum(axis=1) + (y1 - c[0] * cat[:, 0] - 0.2) ** 2
                + 2.0 * (y2 - 0.5 * y1 - c[1] * cat[:, -1]) ** 2)

    bounds = np.array([[0, L - 1] for L in levels] + [[-y_hi, y_hi], [-y_hi, y_hi]], float)
    return f, k, levels, bounds


def enumerate_mixed(f, k, levels, bounds):
    best = math.inf
    for combo in itertools.product(*[range(int(L)) for L in levels]):
        g = lambda y: float(f(np.array([[*combo, *y]]))[0])
        res = minimize(g, np.zeros(2), method="L-BFGS-B", bounds=bounds[k:].tolist(),
                       options={"ftol": 1e-15, "gtol": 1e-12})
        best = min(best, res.fun)
    return best


def test_criterion_5_bnb_vs_enumeration():
    rng = np.random.default_rng(505)
    gaps = []
    for _ in range(20):
        f, k, levels, bounds = mixed_problem(rng)
        root, _ = local_minimize(f, bounds.mean(axis=1), bounds)
        res = branch_and_bound(root, bounds, list(range(k)), f)
        assert all(float(v).is_integer() for v in res.x[:k])
        gaps.append(res.value - enumerate_mixed(f, k, levels, bounds))
    worst = float(np.max(np.abs(gaps)))
    report(5, worst <= 1e-6, f"max |B&B - enumeration| {worst:.1e} over 20 problems (tol 1e-6)")


# ---------------------------------------------------------------- 6

def test_criterion_6_penalty_schedule(monkeypatch):
    lams = lambda_schedule(10.0, 1.5, 1e15, 10)
    first = next(k for k, lam in enumerate(lams) if lam >= 1e15)
    exps = all(math.isclose(lams[k], 10 ** (1.5 ** k), rel_tol=1e-12) for k in range(7))

    # with no admissible candidate the step is zero, so only lambda can end the loop
    monkeypatch.setattr(engine, "maximize_acquisition", lambda *a, **k: NoImprovement)
    schema = FeatureSchema((FeatureSpec("a", "continuous", -2, 2),
                            FeatureSpec("b", "continuous", -2, 2)))
    bb = FunctionBlackBox(lambda P: (P[:, 0] + P[:, 1] > 0.5).astype(int), 2)
    cfg = EngineConfig(n0=10, mc=200, sobol_n=512, restarts=3)
    s = _Session(bb, cfg.max_queries, [])
    x_ref = np.array([-1.0, -1.0])
    rng = np.random.default_rng(0)
    initialize(x_ref, schema, cfg, s, rng)
    engine.run_inner_penalty_loop(s, x_ref, schema.bounds, [], reference_scale(schema), cfg, rng)
    iters = sum(e["phase"] == "inner" for e in s.trace)
    report(6, first == 7 and exps and iters >= 7,
           f"lambda reaches 1e15 after {first} updates (expected 7); inner loop ran {iters} "
           f"iterations before the lambda exit (>= 7)")


# ---------------------------------------------------------------- 7 and 8

class CountingKnn(KnnBlackBox):
    """k-NN black box that independently counts every row it labels."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.rows_seen = 0

    def _predict(self, P):
        self.rows_seen += len(P)
        return super()._predict(P)


@pytest.fixture(scope="module")
def moons_runs(moons_fixture):
    data, schema = moons_fixture
    out = {"ace": [], "gs": []}
    t0 = time.perf_counter()
    for seed in range(20):
        bb = CountingKnn(data.X, data.t, k=synthetic.MOONS_K)
        res = run(X_MOONS, schema, bb, EngineConfig(n0=4, rng_seed=seed), data=data)
        out["ace"].append((res, bb))
        bb = CountingKnn(data.X, data.t, k=synthetic.MOONS_K)
        res = run_gs(X_MOONS, schema, bb, GsConfig(rng_seed=seed), data=data)
        out["gs"].append((res, bb))
    out["elapsed"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_criterion_7_moons(moons_runs):
    ace = [r for r, _ in moons_runs["ace"]]
    gs = [r for r, _ in moons_runs["gs"]]
    v_ace = np.mean([r.valid for r in ace])
    v_gs = np.mean([r.valid for r in gs])
    q_ace = float(np.median([r.queries for r in ace]))
    q_gs = float(np.median([r.queries for r in gs]))
    d2 = float(np.median([r.d2 for r in ace]))
    elapsed = moons_runs["elapsed"]
    checks = {"ace validity": v_ace == 1.0, "ace median h#": q_ace <= 60,
              "ace median d2": d2 <= 1.2, "gs validity": v_gs == 1.0,
              "gs/ace h# ratio": q_gs >= 3 * q_ace, "runtime": elapsed < 120}
    failed = [k for k, ok in checks.items() if not ok]
    report(7, not failed,
           f"ACE V={v_ace:.2f} median h#={q_ace:g} median d2={d2:.3f}; GS V={v_gs:.2f} "
           f"median h#={q_gs:g} (ratio {q_gs / q_ace:.2f}, need >= 3); {elapsed:.0f}s"
           + (f"; failing: {', '.join(failed)}" if failed else ""))


@pytest.mark.slow
def test_criterion_8_query_accounting(moons_runs):
    bad = 0
    total = 0
    for method in ("ace", "gs"):
        for res, bb in moons_runs[method]:
            total += 1
            if not (res.queries == bb.queries == bb.counter.total
                    and bb.rows_seen == res.queries + res.audit_queries):
                bad += 1
    report(8, bad == 0, f"{total - bad}/{total} runs with reported h# == adapter counter "
                        f"== instrumented rows minus uncharged audits")


# ---------------------------------------------------------------- 9

def score_fixture():
    means = {
        "A": {"queries": 20.0, "d2": 1.0, "g1": 2.0, "affinity": 0.9, "validity": 1.0},
        "B": {"queries": 100.0, "d2": 0.5, "g1": 3.0, "affinity": 0.6, "validity": 0.8},
    }
    # A: 0.35*0 + 0.25*1 + 0.15*0 + 0.125*0.1 + 0.125*0
    # B: 0.35*1 + 0.25*0 + 0.15*1 + 0.125*0.4 + 0.125*0.2
    want = {"A": 0.2625, "B": 0.575}
    got = score_from_means(means)
    # same fixture through the record path: B has one invalid run in five
    recs = [BenchmarkRecord("A", "", 0, 0, 20, 0, 0, 1.0, 2.0, 0.9, True)] * 5
    recs += [BenchmarkRecord("B", "", 0, 0, 100, 0, 0, 0.5, 3.0, 0.6, True)] * 4
    recs += [BenchmarkRecord("B", "", 0, 0, 100, *[math.nan] * 5, False)]
    got2 = score_from_means(method_means(recs))
    return max(abs(got[m] - want[m]) for m in want) + max(abs(got2[m] - want[m]) for m in want)


@pytest.mark.slow
def test_criterion_9_synthetic_mixed_instance():
    score_err = score_fixture()
    parts, ok = [], score_err <= 1e-12
    for name in ("continuous", "mixed"):
        data, schema = synthetic.DATASETS[name]()
        recs = run_mixed_test("ace", data, schema, n_instances=30, seed=0,
                              engine_config=EngineConfig(n0=30, init="dataset"), dataset=name)
        m = method_means(recs)["ace"]
        ok &= m["validity"] >= 0.95 and m["affinity"] >= 0.9 and m["queries"] <= 150
        parts.append(f"{name}: V={m['validity']:.2f} alpha={m['affinity']:.3f} "
                     f"h#={m['queries']:.1f}")
    report(9, ok, "; ".join(parts) + f"; score fixture err {score_err:.1e} (tol 1e-12)")


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism(moons_fixture):
    data, schema = moons_fixture
    texts = []
    for _ in range(2):
        bb = KnnBlackBox(data.X, data.t, k=synthetic.MOONS_K)
        texts.append(run(X_MOONS, schema, bb, EngineConfig(n0=4, rng_seed=7), data=data)
                     .to_json().encode())
    gs = [run_gs(X_MOONS, schema, KnnBlackBox(data.X, data.t, k=synthetic.MOONS_K),
                 GsConfig(rng_seed=7), data=data).to_json().encode() for _ in range(2)]
    report(10, texts[0] == texts[1] and gs[0] == gs[1],
           f"ACE JSON identical: {texts[0] == texts[1]} ({len(texts[0])} bytes); "
           f"GS JSON identical: {gs[0] == gs[1]}")
