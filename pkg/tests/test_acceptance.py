"""Acceptance criteria 1-9.

Each test records its verdict with the ``criterion`` fixture so the run ends
with one PASS/FAIL line per criterion, then asserts.  Run only these with
``pytest -m acceptance``; ``-m "acceptance and not slow"`` skips the
multi-minute load-spike replays.
"""

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catcache.controller import AdaptiveController, ControllerConfig, LoadSignal
from catcache.economics import CostModel, break_even_hybrid, break_even_vdb, traffic_reduction, viability_table
from catcache.index import HNSWIndex, IndexParams
from catcache.policy import CategoryConfig, PolicyRegistry, effective_policy_for
from catcache.simulate import ModelSpec, load_scenario, run_load_spike_scenario, run_simulation
from catcache.workload import CategorySpec, generate_workload, zipf_head_mass

import test_cache
from oracles import break_even, brute_force_knn, mean_lookup_latency
from test_simulate import MODELS, cache_for, crafted_20pct

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
DAY = 86_400


# 1 ---------------------------------------------------------------------------

def test_criterion_1_break_even_exactness(criterion):
    loaded = CostModel(load_multiplier=5.0)
    cases = [
        (break_even_vdb(200), break_even(30, 200), 0.154),
        (break_even_vdb(500), break_even(30, 500), 0.061),
        (break_even_hybrid(200), break_even(2, 200), 0.010),
        (break_even_hybrid(500), break_even(2, 500), 0.004),
        (loaded.break_even_hybrid(loaded.loaded(200)), break_even(2, 1000), 0.002),
    ]
    errs = [abs(got - float(exact)) for got, exact, _ in cases]
    rounded = [round(got, 3) == r for got, _, r in cases]
    ok = max(errs) <= 1e-9 and all(rounded)
    criterion.record(1, ok, f"max |err| {max(errs):.1e}, rounded values "
                            f"{[round(g, 3) for g, _, _ in cases]}")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_latency_arithmetic(criterion):
    hybrid = run_simulation(crafted_20pct(), cache_for(), MODELS, mode="hybrid").per_category["c"]
    from catcache.cache import VDB_COSTS
    vdb = run_simulation(crafted_20pct(), cache_for(VDB_COSTS), MODELS, mode="vdb_baseline",
                         vdb_threshold=0.85).per_category["c"]
    ok = (hybrid["hit_rate"] == vdb["hit_rate"] == 0.2
          and hybrid["mean_lookup_latency"] == float(mean_lookup_latency(Fraction(1, 5), 7, 2)) == 3.0
          and vdb["mean_lookup_latency"] == float(mean_lookup_latency(Fraction(1, 5), 35, 30)) == 31.0)
    criterion.record(2, ok, f"hybrid {hybrid['mean_lookup_latency']} ms, "
                            f"vdb_baseline {vdb['mean_lookup_latency']} ms at h={hybrid['hit_rate']}")
    assert ok


# 3 ---------------------------------------------------------------------------

TABLE = [("code_generation", 0.35, 0.55), ("api_documentation", 0.25, 0.45),
         ("conversational_chat", 0.15, 0.12), ("financial_data", 0.10, 0.08),
         ("legal_queries", 0.08, 0.10), ("medical_queries", 0.04, 0.06),
         ("specialized_domains", 0.03, 0.07)]


def test_criterion_3_table_viability(criterion):
    rows = viability_table([(c, s, h, 200.0) for c, s, h in TABLE])
    vdb = [r.vdb_viable for r in rows]
    hybrid = [r.hybrid_viable for r in rows]
    ok = vdb == [True, True] + [False] * 5 and all(hybrid)
    criterion.record(3, ok, f"vdb-viable {sum(vdb)}/7 (head), hybrid-viable {sum(hybrid)}/7")
    assert ok


# 4 ---------------------------------------------------------------------------

CODE = CategoryConfig("code", 0.90, 7 * DAY, 1.0, delta_max=0.05, beta_max=2.0)


def test_criterion_4_adaptive_endpoints(criterion):
    lo = effective_policy_for(CODE, 0.0)
    hi = effective_policy_for(CODE, 1.0)
    ok = (lo.threshold, lo.ttl) == (0.90, 7 * DAY) and (hi.threshold, hi.ttl) == (0.85, 14 * DAY)
    criterion.record(4, ok, f"lambda=0 -> ({lo.threshold}, {lo.ttl / DAY:g}d), "
                            f"lambda=1 -> ({hi.threshold}, {hi.ttl / DAY:g}d)")
    assert ok


# latency-only load factor with a window shorter than the signal spacing, so
# the raw lambda equals latency_p / l_target for the latest signal
INSTANT = ControllerConfig(l_target=1000.0, q_target=100, w_l=1.0, w_q=0.0, averaging_window=1.0)


@settings(max_examples=200, deadline=None)
@given(start=st.floats(0.1, 1.0), delta=st.floats(-0.05, 0.05))
def _hysteresis_holds(start, delta):
    ctl = AdaptiveController(INSTANT, PolicyRegistry([CODE]))
    applied = ctl.ingest_signal(LoadSignal("code", start * 1000.0, 0, 0))
    assert applied == pytest.approx(start)
    target = min(1.0, max(0.0, start + delta))
    after = ctl.ingest_signal(LoadSignal("code", target * 1000.0, 0, 10_000))
    assert ctl.state("code").raw_lambda == pytest.approx(target)
    assert after == applied


def test_criterion_4_hysteresis(criterion):
    try:
        _hysteresis_holds()
        ok, detail = True, "raw-lambda moves of up to 0.05 left applied lambda unchanged"
    except AssertionError as exc:
        ok, detail = False, f"hysteresis violated: {exc}"
    criterion.record(4, ok, detail)
    assert ok, detail


# 5 ---------------------------------------------------------------------------

def test_criterion_5_traffic_reduction_formula(criterion):
    a = traffic_reduction(0.40, 0.10)
    b = traffic_reduction(0.45, 0.05)
    ok = abs(a - 1 / 6) <= 1e-9 and abs(b - 1 / 11) <= 1e-9
    criterion.record(5, ok, f"projection {a:.6f}, {b:.6f}")
    assert ok


SPIKE_SEEDS = [5, 6, 7]


@pytest.mark.slow
@pytest.mark.parametrize("seed", SPIKE_SEEDS)
def test_criterion_5_load_spike(criterion, seed):
    sc = load_scenario(ROOT / "scenarios" / "load_spike.json")
    sc.seed = seed
    sp = sc.spike
    res = run_load_spike_scenario(sc.workload(), sc.make_cache, sc.models,
                                  (sp["model_id"], sp["alpha"], sp["start_s"], sp["duration_s"]),
                                  sc.controller)
    ok = 0.07 <= res.reduction <= 0.11
    criterion.record(5, ok, f"spike seed {seed}: model traffic {res.off_fraction:.3f} -> "
                            f"{res.on_fraction:.3f}, reduction {res.reduction:.1%}")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_zipf_head_mass(criterion):
    w = generate_workload([CategorySpec("code", 1.0, zipf_alpha=1.2, pool_size=10_000)],
                          100_000, seed=1, dimension=16)
    counts = np.bincount(w.canonical, minlength=10_000)
    top = np.sort(counts)[::-1][:1_000]
    measured = top.sum() / counts.sum()
    analytic = zipf_head_mass(10_000, 1.2)
    ok = abs(measured - 0.45) <= 0.05
    criterion.record(6, ok, f"top-10% share {measured:.3f} (analytic {analytic:.3f}), target 0.45 +/- 0.05")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_hnsw_quality(criterion):
    specs = [CategorySpec("code", 0.35, zipf_alpha=1.2, cluster_density=0.12, paraphrase_noise=0.4),
             CategorySpec("api", 0.25, zipf_alpha=1.2, cluster_density=0.15, paraphrase_noise=0.4),
             CategorySpec("chat", 0.40, repetition="uniform", pool_size=20_000, cluster_density=0.38,
                          paraphrase_noise=0.5)]
    w = generate_workload(specs, 11_000, seed=3, dimension=384)
    data, queries = w.embeddings[:10_000], w.embeddings[10_000:]
    unit = data / np.linalg.norm(data, axis=1, keepdims=True)
    idx = HNSWIndex(IndexParams(dimension=384))
    for i, v in enumerate(data):
        idx.insert(v, i)

    hits = 0
    for q in queries:
        found = {e for e, _ in idx.knn_search(q, 10)}
        hits += len(found & set(brute_force_knn(data, q, 10)))
    recall = hits / (10 * len(queries))

    sound, calls = 0, 0
    for q in queries:
        for tau in (0.5, 0.8, 0.9, 0.95):
            res = idx.threshold_search(q, tau)
            calls += 1
            if res is None:
                sound += 1
                continue
            eid, sim = res
            exact = float(unit[eid] @ (q / np.linalg.norm(q)))
            sound += sim >= tau and exact >= tau - 1e-12
    ok = recall >= 0.95 and sound == calls
    criterion.record(7, ok, f"recall@10 {recall:.4f} (floor 0.95), threshold soundness {sound}/{calls}")
    assert ok


# 8 ---------------------------------------------------------------------------

_policy_safety = test_cache.test_property_policy_safety
_eviction_argmin = test_cache.test_property_eviction_matches_bruteforce_argmin


@pytest.mark.parametrize("name, prop", [("policy safety", _policy_safety),
                                        ("eviction argmin", _eviction_argmin)])
def test_criterion_8_policy_safety_suite(criterion, name, prop):
    try:
        prop()
        ok, detail = True, f"{name} held"
    except AssertionError as exc:
        ok, detail = False, f"{name} violated: {exc}"
    criterion.record(8, ok, detail)
    assert ok, detail


# 9 ---------------------------------------------------------------------------

S_PER_SECOND = 0.20 / 300


def measured_stale_fraction(ttl_s):
    spec = CategorySpec("news", 1.0, repetition="uniform", pool_size=20, cluster_density=0.3,
                        staleness_rate=S_PER_SECOND, model_id="m")
    pol = CategoryConfig("news", 0.99, ttl_s, 1.0, model_id="m")
    from catcache.cache import SemanticCache
    from catcache.docstore import SimulatedDocStore
    w = generate_workload([spec], 20_000, seed=2, dimension=8, qps=5.0)
    cache = SemanticCache(PolicyRegistry([pol]), SimulatedDocStore(),
                          index_params=IndexParams(dimension=8, m=8, ef_construction=32))
    return run_simulation(w, cache, [ModelSpec("m", 200.0)]).per_category["news"]["stale_hits_fraction"]


def test_criterion_9_staleness(criterion):
    short, long_ = measured_stale_fraction(300), measured_stale_fraction(900)
    ok = abs(short - 0.20) <= 0.3 * 0.20 and abs(long_ - 0.60) <= 0.3 * 0.60
    criterion.record(9, ok, f"stale-hit fraction {short:.3f} at 5 min, {long_:.3f} at 15 min "
                            f"(targets 0.20 and 0.60 +/- 30%)")
    assert ok
