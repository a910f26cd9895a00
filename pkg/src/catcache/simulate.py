"""Virtual-clock replay of a workload through the cache.

Modes:

``hybrid``
    local threshold search (2 ms), document fetch on a hit (+5 ms)
``vdb_baseline``
    same index and policies, but a remote nearest-neighbour search (30 ms)
    followed by one fixed threshold; a hit costs 35 ms
``no_cache``
    every query goes to its model

Misses call the bound model, whose latency is ``T_base * alpha(t)``, and
the response is inserted. Responses carry ground truth (canonical query
and content version) so the driver can count stale hits and false
positives. Every ``window_s`` of simulated time each model emits a load
signal to the controller, if one is attached.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .cache import HYBRID_COSTS, VDB_COSTS, SemanticCache
from .controller import AdaptiveController, ControllerConfig, LoadSignal
from .docstore import SimulatedDocStore
from .errors import ValidationError
from .index import IndexParams
from .policy import CategoryConfig, PolicyRegistry
from .workload import CategorySpec, Workload, generate_workload

logger = logging.getLogger(__name__)

MODES = ("hybrid", "vdb_baseline", "no_cache")


@dataclass(frozen=True)
class ModelSpec:
    """Downstream model. ``load_schedule`` holds ``(start_s, end_s, alpha)``
    segments; outside them alpha is 1. ``capacity_qps`` (optional) is the
    unloaded service rate used to derive queue depth."""

    model_id: str
    t_base: float
    load_schedule: tuple = ()
    capacity_qps: Optional[float] = None

    def __post_init__(self):
        if not self.t_base > 5:
            raise ValidationError("t_base_too_small", self.model_id)
        segs = tuple(tuple(float(x) for x in s) for s in self.load_schedule)
        for start, end, alpha in segs:
            if end < start or alpha < 1:
                raise ValidationError("bad_load_segment", f"{self.model_id}: {(start, end, alpha)}")
        object.__setattr__(self, "load_schedule", segs)
        if self.capacity_qps is not None and self.capacity_qps <= 0:
            raise ValidationError("capacity_nonpositive", self.model_id)

    def alpha(self, t_s: float) -> float:
        a = 1.0
        for start, end, alpha in self.load_schedule:
            if start <= t_s < end:
                a = max(a, alpha)
        return a

    def latency(self, t_s: float) -> float:
        return self.t_base * self.alpha(t_s)

    def with_segment(self, start_s: float, end_s: float, alpha: float) -> "ModelSpec":
        return ModelSpec(self.model_id, self.t_base,
                         self.load_schedule + ((start_s, end_s, alpha),), self.capacity_qps)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(data["model_id"], float(data["t_base"]),
                   tuple(tuple(s) for s in data.get("load_schedule", ())),
                   data.get("capacity_qps"))


@dataclass
class CategoryOutcome:
    queries: int = 0
    hits: int = 0
    model_calls: int = 0
    stale_hits: int = 0
    false_positives: int = 0
    lookup_latency_ms: float = 0.0
    total_latency_ms: float = 0.0
    expected_stale: float = 0.0  # sum over hits of P(content changed since insert)

    def summary(self) -> dict:
        q = self.queries
        h = self.hits
        return {
            "queries": q,
            "hits": h,
            "model_calls": self.model_calls,
            "hit_rate": h / q if q else 0.0,
            "model_traffic_fraction": self.model_calls / q if q else 0.0,
            "mean_lookup_latency": self.lookup_latency_ms / q if q else 0.0,
            "mean_charged_latency": self.total_latency_ms / q if q else 0.0,
            "stale_hits": self.stale_hits,
            "stale_hits_fraction": self.stale_hits / h if h else 0.0,
            "expected_stale_fraction": self.expected_stale / h if h else 0.0,
            "false_positives": self.false_positives,
            "false_positive_rate": self.false_positives / h if h else 0.0,
        }


@dataclass
class SimReport:
    mode: str
    seed: int
    n_queries: int
    total_time_s: float
    controller: bool
    per_category: dict
    per_model: dict
    windows: list
    hit: np.ndarray = field(repr=False)
    lookup_latency: np.ndarray = field(repr=False)
    model_latency: np.ndarray = field(repr=False)

    def category(self, cid: str) -> dict:
        return self.per_category[cid]

    def outcomes(self) -> dict:
        """Everything but the controller flag; equal for runs with equal results."""
        return {"per_category": self.per_category, "per_model": self.per_model,
                "hit": self.hit.tolist(), "lookup_latency": self.lookup_latency.tolist()}

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "n_queries": self.n_queries,
            "total_simulated_time_s": self.total_time_s,
            "controller": self.controller,
            "per_category": self.per_category,
            "per_model": self.per_model,
        }

    def write(self, out_dir, prefix: str = "") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prefix}report.json").write_text(json.dumps(self.to_json(), indent=2))
        with open(out / f"{prefix}timeseries.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=WINDOW_COLUMNS)
            w.writeheader()
            w.writerows(self.windows)


WINDOW_COLUMNS = ["window_start_s", "window_end_s", "model_id", "alpha", "latency_p",
                  "queue_depth", "raw_lambda", "lambda", "category", "effective_tau",
                  "effective_ttl_s", "queries", "hit_rate", "traffic_fraction"]


def _response(spec_id: str, canonical: int, version: int) -> bytes:
    return json.dumps({"category": spec_id, "canonical": canonical, "version": version},
                      separators=(",", ":")).encode()


def run_simulation(workload: Workload, cache: Optional[SemanticCache], models: Sequence[ModelSpec],
                   controller: Optional[AdaptiveController] = None, mode: str = "hybrid",
                   vdb_threshold: float = 0.85, window_s: float = 10.0) -> SimReport:
    """Replay ``workload``; the cache is mutated in place."""
    if mode not in MODES:
        raise ValidationError("unknown_mode", mode)
    if mode != "no_cache" and cache is None:
        raise ValidationError("cache_required", mode)
    model_by_id = {m.model_id: m for m in models}
    specs = workload.specs
    for s in specs:
        if s.model_id not in model_by_id:
            raise ValidationError("unbound_model", f"{s.category_id} -> {s.model_id}")
    cat_ids = [s.category_id for s in specs]
    cat_model = [s.model_id for s in specs]
    rates = [s.staleness_rate for s in specs]

    n = len(workload)
    hit = np.zeros(n, dtype=bool)
    lookup_lat = np.zeros(n)
    model_lat = np.zeros(n)
    outcome = {c: CategoryOutcome() for c in cat_ids}
    model_calls = {m: 0 for m in model_by_id}
    model_lat_sum = {m: 0.0 for m in model_by_id}

    window_ms = window_s * 1000.0
    windows: list[dict] = []
    backlog = {m: 0.0 for m in model_by_id}
    w_calls = {m: 0 for m in model_by_id}
    w_cat = {c: [0, 0, 0] for c in cat_ids}  # queries, hits, model calls
    registry = cache.registry if cache is not None else None

    def close_window(start_ms: float) -> None:
        end_ms = start_ms + window_ms
        t_s = start_ms / 1000.0
        signals = {}
        for mid, m in model_by_id.items():
            alpha = m.alpha(t_s)
            lat = m.t_base * alpha
            arrivals = w_calls[mid]
            in_flight = arrivals / window_s * lat / 1000.0
            if m.capacity_qps is not None:
                served = m.capacity_qps * window_s / alpha
                backlog[mid] = max(0.0, backlog[mid] + arrivals - served)
            q = backlog[mid] + in_flight
            signals[mid] = (alpha, lat, q)
            if controller is not None:
                controller.ingest_signal(LoadSignal(mid, lat, q, int(end_ms)))
            w_calls[mid] = 0
        for ci, cid in enumerate(cat_ids):
            mid = cat_model[ci]
            alpha, lat, q = signals[mid]
            st = controller.state(mid) if controller is not None else None
            lam = controller.current_lambda(mid) if controller is not None else 0.0
            cnt = w_cat[cid]
            pol = registry.effective_policy(cid, lam) if registry is not None else None
            windows.append({
                "window_start_s": t_s, "window_end_s": end_ms / 1000.0, "model_id": mid,
                "alpha": alpha, "latency_p": lat, "queue_depth": q,
                "raw_lambda": st.raw_lambda if st else 0.0, "lambda": lam, "category": cid,
                "effective_tau": pol.threshold if pol else "", "effective_ttl_s": pol.ttl if pol else "",
                "queries": cnt[0], "hit_rate": cnt[1] / cnt[0] if cnt[0] else 0.0,
                "traffic_fraction": cnt[2] / cnt[0] if cnt[0] else 0.0,
            })
            w_cat[cid] = [0, 0, 0]

    fixed = vdb_threshold if mode == "vdb_baseline" else None
    win_start = 0.0
    times = workload.times
    for i in range(n):
        now = float(times[i])
        while now >= win_start + window_ms:
            close_window(win_start)
            win_start += window_ms
        ci = int(workload.category[i])
        cid = cat_ids[ci]
        mid = cat_model[ci]
        canon = int(workload.canonical[i])
        ver = int(workload.version[i])
        oc = outcome[cid]
        oc.queries += 1
        w_cat[cid][0] += 1
        served = False
        if mode != "no_cache":
            lam = controller.current_lambda(mid) if controller is not None else 0.0
            res = cache.lookup(workload.embeddings[i], cid, now, lam, fixed_threshold=fixed)
            lookup_lat[i] = res.charged_latency
            if res.hit:
                served = True
                truth = json.loads(res.response_body)
                if truth["canonical"] != canon or truth["category"] != cid:
                    oc.false_positives += 1
                else:
                    if truth["version"] < ver:
                        oc.stale_hits += 1
                    age_s = (now - cache.entry(res.entry_id).created_at) / 1000.0
                    oc.expected_stale += 1.0 - math.exp(-rates[ci] * age_s)
        if served:
            hit[i] = True
            oc.hits += 1
            w_cat[cid][1] += 1
        else:
            lat = model_by_id[mid].latency(now / 1000.0)
            model_lat[i] = lat
            oc.model_calls += 1
            w_cat[cid][2] += 1
            w_calls[mid] += 1
            model_calls[mid] += 1
            model_lat_sum[mid] += lat
            if mode != "no_cache":
                cache.insert(workload.embeddings[i], cid, b"", _response(cid, canon, ver), now)
        oc.lookup_latency_ms += lookup_lat[i]
        oc.total_latency_ms += lookup_lat[i] + model_lat[i]
    if n:
        close_window(win_start)

    per_model = {mid: {"queries_served": model_calls[mid],
                       "mean_latency": model_lat_sum[mid] / model_calls[mid] if model_calls[mid] else 0.0}
                 for mid in model_by_id}
    return SimReport(mode, workload.seed, n, float(times[-1]) / 1000.0 if n else 0.0,
                     controller is not None, {c: outcome[c].summary() for c in cat_ids},
                     per_model, windows, hit, lookup_lat, model_lat)


def model_traffic_fraction(report: SimReport, workload: Workload, model_id: str,
                           start_s: float = 0.0, end_s: float = math.inf) -> float:
    """Share of queries routed to ``model_id`` that reached it in ``[start_s, end_s)``."""
    cats = [i for i, s in enumerate(workload.specs) if s.model_id == model_id]
    t = workload.times / 1000.0
    mask = np.isin(workload.category, cats) & (t >= start_s) & (t < end_s)
    total = int(mask.sum())
    return float((~report.hit[mask]).sum() / total) if total else 0.0


# -- scenarios --------------------------------------------------------------

@dataclass
class Scenario:
    specs: list
    policies: list
    models: list
    seed: int = 0
    n_queries: int = 10_000
    dimension: int = 64
    qps: float = 50.0
    mode: str = "hybrid"
    cache_capacity: int = 1_000_000
    vdb_threshold: float = 0.85
    window_s: float = 10.0
    index: IndexParams = field(default_factory=lambda: IndexParams(dimension=64))
    controller: Optional[ControllerConfig] = None
    spike: Optional[dict] = None  # {"model_id", "alpha", "start_s", "duration_s"}

    def workload(self) -> Workload:
        return generate_workload(self.specs, self.n_queries, self.seed, self.dimension, self.qps)

    def make_cache(self, mode: Optional[str] = None) -> SemanticCache:
        mode = mode or self.mode
        costs = VDB_COSTS if mode == "vdb_baseline" else HYBRID_COSTS
        return SemanticCache(PolicyRegistry(self.policies), SimulatedDocStore(),
                             capacity=self.cache_capacity, index_params=self.index, costs=costs)

    def make_controller(self, registry: Optional[PolicyRegistry] = None) -> AdaptiveController:
        return AdaptiveController(self.controller or ControllerConfig(), registry)


def scenario_from_dict(data: dict) -> Scenario:
    """Parse a scenario document.

    Each entry of ``categories`` is a workload spec with a nested ``policy``
    object holding the category's cache config (``category_id`` implied).
    """
    try:
        specs, policies = [], []
        for raw in data["categories"]:
            raw = dict(raw)
            policy = dict(raw.pop("policy", {}))
            spec = CategorySpec.from_dict(raw)
            policy.setdefault("category_id", spec.category_id)
            policy.setdefault("model_id", spec.model_id)
            policies.append(CategoryConfig.from_dict(policy))
            specs.append(spec)
        models = [ModelSpec.from_dict(m) for m in data["models"]]
    except KeyError as exc:
        raise ValidationError("missing_field", str(exc)) from None
    dim = int(data.get("dimension", 64))
    idx = dict(data.get("index", {}))
    idx["dimension"] = dim
    ctl = data.get("controller")
    known = {f.name for f in fields(Scenario)} - {"specs", "policies", "models", "index", "controller"}
    extra = set(data) - known - {"categories", "models", "index", "controller"}
    if extra:
        raise ValidationError("unknown_field", ", ".join(sorted(extra)))
    return Scenario(
        specs=specs, policies=policies, models=models,
        seed=int(data.get("seed", 0)), n_queries=int(data.get("n_queries", 10_000)),
        dimension=dim, qps=float(data.get("qps", 50.0)), mode=data.get("mode", "hybrid"),
        cache_capacity=int(data.get("cache_capacity", 1_000_000)),
        vdb_threshold=float(data.get("vdb_threshold", 0.85)),
        window_s=float(data.get("window_s", 10.0)),
        index=IndexParams(**idx),
        controller=ControllerConfig.from_dict(ctl) if ctl else None,
        spike=data.get("spike"),
    )


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("malformed_json", str(exc)) from None
    return scenario_from_dict(data)


@dataclass
class SpikeResult:
    off: SimReport
    on: SimReport
    model_id: str
    start_s: float
    end_s: float
    off_fraction: float
    on_fraction: float

    @property
    def reduction(self) -> float:
        """Relative drop in the spiked model's traffic during the spike."""
        return (self.off_fraction - self.on_fraction) / self.off_fraction if self.off_fraction else 0.0

    def to_json(self) -> dict:
        return {"model_id": self.model_id, "start_s": self.start_s, "end_s": self.end_s,
                "traffic_fraction_controller_off": self.off_fraction,
                "traffic_fraction_controller_on": self.on_fraction,
                "traffic_reduction": self.reduction}


def run_load_spike_scenario(workload: Workload, make_cache: Callable[[], SemanticCache],
                            models: Sequence[ModelSpec], spike: tuple,
                            controller_config: ControllerConfig = ControllerConfig(),
                            mode: str = "hybrid", vdb_threshold: float = 0.85,
                            window_s: float = 10.0) -> SpikeResult:
    """Replay the same stream with the controller off and on under a load spike.

    ``spike`` is ``(model_id, alpha, start_s, duration_s)``.
    """
    model_id, alpha, start_s, duration_s = spike
    if model_id not in {m.model_id for m in models}:
        raise ValidationError("unknown_spike_model", model_id)
    end_s = start_s + duration_s
    spiked = [m.with_segment(start_s, end_s, alpha) if m.model_id == model_id else m for m in models]

    off = run_simulation(workload, make_cache(), spiked, None, mode, vdb_threshold, window_s)
    cache_on = make_cache()
    controller = AdaptiveController(controller_config, cache_on.registry)
    on = run_simulation(workload, cache_on, spiked, controller, mode, vdb_threshold, window_s)
    return SpikeResult(off, on, model_id, start_s, end_s,
                       model_traffic_fraction(off, workload, model_id, start_s, end_s),
                       model_traffic_fraction(on, workload, model_id, start_s, end_s))


def run_scenario(scenario: Scenario, out_dir) -> dict:
    """Run a scenario file's experiment and write reports under ``out_dir``."""
    workload = scenario.workload()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scenario.spike:
        sp = scenario.spike
        res = run_load_spike_scenario(
            workload, lambda: scenario.make_cache(), scenario.models,
            (sp["model_id"], float(sp["alpha"]), float(sp["start_s"]), float(sp["duration_s"])),
            scenario.controller or ControllerConfig(), scenario.mode, scenario.vdb_threshold,
            scenario.window_s)
        res.off.write(out, "controller_off_")
        res.on.write(out, "controller_on_")
        summary = res.to_json()
        (out / "spike_summary.json").write_text(json.dumps(summary, indent=2))
        return summary
    cache = scenario.make_cache() if scenario.mode != "no_cache" else None
    controller = None
    if scenario.controller is not None:
        controller = scenario.make_controller(cache.registry if cache else None)
    report = run_simulation(workload, cache, scenario.models, controller, scenario.mode,
                            scenario.vdb_threshold, scenario.window_s)
    report.write(out)
    return report.to_json()
