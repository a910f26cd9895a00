"""Closed-form latency and break-even analysis for semantic caching.

Two architectures are compared:

* vector database: every lookup pays a remote search, hits add a fetch
  ``L_vdb(h) = remote + h * fetch + (1 - h) * T``
* hybrid (local index + external documents)
  ``L_hybrid(h) = local + h * fetch + (1 - h) * T``

Caching pays off once ``L(h) < T``, i.e. above the break-even hit rate
``search_cost / (T - fetch)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class CostModel:
    remote_search_cost: float = 30.0
    local_search_cost: float = 2.0
    doc_fetch_cost: float = 5.0
    load_multiplier: float = 1.0

    def __post_init__(self):
        if min(self.remote_search_cost, self.local_search_cost, self.doc_fetch_cost) < 0:
            raise ValidationError("negative_cost")
        if self.load_multiplier < 1:
            raise ValidationError("load_multiplier_below_one")

    def loaded(self, t_base: float) -> float:
        """Model latency under load, ``alpha * T_base``."""
        return self.load_multiplier * t_base

    def _check_t(self, t_llm: float) -> None:
        if not t_llm > self.doc_fetch_cost:
            raise DomainError(f"T_llm must exceed the fetch cost {self.doc_fetch_cost}, got {t_llm}")

    def latency_vdb(self, h: float, t_llm: float) -> float:
        _check_h(h)
        return self.remote_search_cost + h * self.doc_fetch_cost + (1.0 - h) * t_llm

    def latency_hybrid(self, h: float, t_llm: float) -> float:
        _check_h(h)
        return self.local_search_cost + h * self.doc_fetch_cost + (1.0 - h) * t_llm

    def break_even_vdb(self, t_llm: float) -> float:
        self._check_t(t_llm)
        return self.remote_search_cost / (t_llm - self.doc_fetch_cost)

    def break_even_hybrid(self, t_llm: float) -> float:
        self._check_t(t_llm)
        return self.local_search_cost / (t_llm - self.doc_fetch_cost)


DEFAULT_COSTS = CostModel()


def _check_h(h: float) -> None:
    if not 0.0 <= h <= 1.0:
        raise DomainError(f"hit rate must lie in [0, 1], got {h}")


def expected_latency_vdb(h: float, t_llm: float, costs: CostModel = DEFAULT_COSTS) -> float:
    return costs.latency_vdb(h, t_llm)


def expected_latency_hybrid(h: float, t_llm: float, costs: CostModel = DEFAULT_COSTS) -> float:
    return costs.latency_hybrid(h, t_llm)


def break_even_vdb(t_llm: float, costs: CostModel = DEFAULT_COSTS) -> float:
    """Minimum hit rate for a remote vector database to beat no caching.

    Values >= 1 mean caching can never pay off at this model latency.
    """
    return costs.break_even_vdb(t_llm)


def break_even_hybrid(t_llm: float, costs: CostModel = DEFAULT_COSTS) -> float:
    return costs.break_even_hybrid(t_llm)


def never_viable(break_even: float) -> bool:
    return break_even >= 1.0


def traffic_reduction(h0: float, delta_h: float) -> float:
    """Relative drop in model traffic when the hit rate rises by ``delta_h``."""
    if not 0.0 <= h0 < 1.0:
        raise DomainError(f"baseline hit rate must lie in [0, 1), got {h0}")
    if delta_h < 0 or h0 + delta_h > 1.0 + 1e-12:
        raise DomainError(f"hit-rate gain must lie in [0, 1 - h0], got {delta_h}")
    return delta_h / (1.0 - h0)


def hit_rate_delta(k: float, delta: float, h0: float = 0.0) -> float:
    """Linear hit-rate gain ``k * delta``, capped so ``h0 + gain <= 1``."""
    if k < 0 or delta < 0:
        raise DomainError("k and delta must be >= 0")
    return min(k * delta, max(0.0, 1.0 - h0))


def staleness_fraction(s: float, ttl: float) -> float:
    """Linear staleness proxy ``s * ttl`` clamped to 1 (s per unit of ttl)."""
    if s < 0 or ttl < 0:
        raise DomainError("s and ttl must be >= 0")
    return min(1.0, s * ttl)


@dataclass(frozen=True)
class ViabilityRow:
    category: str
    traffic_share: float
    hit_rate: float
    t_llm: float
    be_vdb: float
    be_hybrid: float
    vdb_viable: bool
    hybrid_viable: bool


CSV_COLUMNS = ("category", "traffic_share", "hit_rate", "be_vdb", "be_hybrid",
               "vdb_viable", "hybrid_viable")


def viability_table(rows: Iterable[Sequence], costs: CostModel = DEFAULT_COSTS) -> list[ViabilityRow]:
    """Classify ``(category, traffic_share, hit_rate, T_llm)`` rows.

    A category is viable under an architecture when its hit rate strictly
    exceeds that architecture's break-even.
    """
    rows = [tuple(r) for r in rows]
    total = math.fsum(r[1] for r in rows)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError("traffic_share_sum", f"shares sum to {total!r}, expected 1")
    out = []
    for cat, share, h, t in rows:
        _check_h(h)
        be_v = costs.break_even_vdb(t)
        be_h = costs.break_even_hybrid(t)
        out.append(ViabilityRow(cat, share, h, t, be_v, be_h, h > be_v, h > be_h))
    return out


def break_even_sweep(t_values: Iterable[float], costs: CostModel = DEFAULT_COSTS) -> list[dict]:
    return [{"t_llm": t, "be_vdb": costs.break_even_vdb(t), "be_hybrid": costs.break_even_hybrid(t)}
            for t in t_values]


def write_viability_csv(rows: Sequence[ViabilityRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.category, repr(r.traffic_share), repr(r.hit_rate), repr(r.be_vdb),
                        repr(r.be_hybrid), str(r.vdb_viable).lower(), str(r.hybrid_viable).lower()])


def write_sweep_csv(sweep: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["t_llm", "be_vdb", "be_hybrid"])
        w.writeheader()
        w.writerows(sweep)


DEFAULT_SWEEP = tuple(range(50, 1001, 50))


def run_workload_file(workload_path, out_csv, sweep_path: Optional[str] = None) -> list[ViabilityRow]:
    """CLI driver: read a workload JSON and write the viability and sweep CSVs.

    Workload JSON::

        {"t_llm": 200,                      # default per-category model latency
         "load_multiplier": 1.0,            # optional; scales every t_llm
         "costs": {"remote_search_cost": 30, ...},   # optional CostModel fields
         "categories": [{"category": "code", "traffic_share": 0.35,
                         "hit_rate": 0.55, "t_llm": 200}, ...],
         "sweep": [50, 100, ...]}           # optional T_llm values
    """
    data = json.loads(Path(workload_path).read_text())
    if not isinstance(data, dict) or "categories" not in data:
        raise ValidationError("malformed_workload", "expected an object with 'categories'")
    costs = CostModel(**data.get("costs", {}), load_multiplier=float(data.get("load_multiplier", 1.0)))
    default_t = float(data.get("t_llm", 200.0))
    rows = [(c["category"], float(c["traffic_share"]), float(c["hit_rate"]),
             costs.loaded(float(c.get("t_llm", default_t)))) for c in data["categories"]]
    table = viability_table(rows, costs)
    write_viability_csv(table, out_csv)
    out_csv = Path(out_csv)
    sweep_path = sweep_path or out_csv.with_name(out_csv.stem + "_sweep.csv")
    write_sweep_csv(break_even_sweep(data.get("sweep", DEFAULT_SWEEP), costs), sweep_path)
    return table
