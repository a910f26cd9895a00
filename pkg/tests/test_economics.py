import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from catcache.economics import (CostModel, break_even_hybrid, break_even_sweep, break_even_vdb,
                                expected_latency_hybrid, expected_latency_vdb, hit_rate_delta,
                                never_viable, run_workload_file, staleness_fraction,
                                traffic_reduction, viability_table)
from catcache.errors import DomainError, ValidationError

from oracles import break_even

TABLE1 = [
    ("code_generation", 0.35, 0.55, 200), ("api_documentation", 0.25, 0.45, 200),
    ("conversational_chat", 0.15, 0.12, 200), ("financial_data", 0.10, 0.08, 200),
    ("legal_queries", 0.08, 0.10, 200), ("medical_queries", 0.04, 0.06, 200),
    ("specialized_domains", 0.03, 0.07, 200),
]


@pytest.mark.parametrize("t", [50, 100, 200, 500, 1000, 2000])
def test_break_even_matches_exact_fraction(t):
    assert break_even_vdb(t) == pytest.approx(float(break_even(30, t)), abs=1e-12)
    assert break_even_hybrid(t) == pytest.approx(float(break_even(2, t)), abs=1e-12)


def test_expected_latency_at_break_even_equals_model_latency():
    for t in (100, 200, 777):
        assert expected_latency_vdb(break_even_vdb(t), t) == pytest.approx(t)
        assert expected_latency_hybrid(break_even_hybrid(t), t) == pytest.approx(t)


def test_domain_errors():
    with pytest.raises(DomainError):
        break_even_vdb(5)
    with pytest.raises(DomainError):
        expected_latency_hybrid(1.2, 200)
    with pytest.raises(DomainError):
        traffic_reduction(1.0, 0.0)
    with pytest.raises(DomainError):
        traffic_reduction(0.9, 0.2)


def test_never_viable_when_model_is_fast():
    assert never_viable(break_even_vdb(30))  # 30 / 25 > 1
    assert not never_viable(break_even_hybrid(30))


def test_load_multiplier_scales_model_latency():
    costs = CostModel(load_multiplier=5.0)
    assert costs.loaded(200) == 1000
    assert costs.break_even_hybrid(costs.loaded(200)) == pytest.approx(2 / 995, abs=1e-12)


def test_traffic_reduction_values():
    assert traffic_reduction(0.40, 0.10) == pytest.approx(1 / 6, abs=1e-12)
    assert traffic_reduction(0.45, 0.05) == pytest.approx(1 / 11, abs=1e-12)
    assert traffic_reduction(0.3, 0.0) == 0.0


def test_hit_rate_delta_is_linear_and_capped():
    assert hit_rate_delta(1.0, 0.05) == pytest.approx(0.05)
    assert hit_rate_delta(2.0, 0.05) == pytest.approx(0.10)
    assert hit_rate_delta(10.0, 0.5, h0=0.8) == pytest.approx(0.2)


def test_staleness_linear_and_clamped():
    assert staleness_fraction(0.2 / 300, 300) == pytest.approx(0.2)
    assert staleness_fraction(0.2 / 300, 900) == pytest.approx(0.6)
    assert staleness_fraction(0.2 / 300, 3000) == 1.0


def test_viability_table_matches_columns():
    rows = viability_table(TABLE1)
    assert [r.vdb_viable for r in rows] == [True, True, False, False, False, False, False]
    assert all(r.hybrid_viable for r in rows)


def test_viability_requires_shares_to_sum_to_one():
    with pytest.raises(ValidationError) as exc:
        viability_table(TABLE1[:-1])
    assert exc.value.constraint == "traffic_share_sum"


def test_sweep_is_decreasing():
    sweep = break_even_sweep(range(50, 1001, 50))
    vdb = [r["be_vdb"] for r in sweep]
    assert vdb == sorted(vdb, reverse=True)
    assert all(r["be_hybrid"] < r["be_vdb"] for r in sweep)


def test_workload_file_roundtrip(tmp_path):
    wl = tmp_path / "w.json"
    wl.write_text(json.dumps({"t_llm": 200, "categories": [
        {"category": c, "traffic_share": s, "hit_rate": h} for c, s, h, _ in TABLE1]}))
    out = tmp_path / "o.csv"
    run_workload_file(wl, out)
    with open(out) as fh:
        got = list(csv.DictReader(fh))
    assert list(got[0]) == ["category", "traffic_share", "hit_rate", "be_vdb", "be_hybrid",
                            "vdb_viable", "hybrid_viable"]
    assert [r["vdb_viable"] for r in got] == ["true", "true"] + ["false"] * 5
    assert float(got[0]["be_vdb"]) == pytest.approx(30 / 195, abs=1e-12)
    assert (tmp_path / "o_sweep.csv").exists()


@given(h=st.floats(0, 1), t=st.floats(5.01, 1e5))
def test_property_hybrid_always_cheaper_than_vdb(h, t):
    assert expected_latency_hybrid(h, t) < expected_latency_vdb(h, t)
    assert break_even_hybrid(t) < break_even_vdb(t)


@given(h=st.floats(0, 1), t=st.floats(5.01, 1e5))
def test_property_viability_iff_latency_below_model(h, t):
    # strictly above break-even <=> strictly faster than calling the model
    be = break_even_hybrid(t)
    lat = expected_latency_hybrid(h, t)
    if abs(h - be) > 1e-9:
        assert (h > be) == (lat < t)
