"""Category-aware semantic cache: lookup, insert and eviction.

The cache wires one :class:`~catcache.index.HNSWIndex` per category, a
:class:`~catcache.policy.PolicyRegistry` and a
:class:`~catcache.docstore.DocumentStore` holding the payloads. Separate
graphs keep a miss in a small category from wandering through the nodes of
a large one.

Timestamps (``now``, ``created_at``) are milliseconds; TTLs are seconds.
Every lookup reports the simulated latency it would cost: local search only
on a miss, local search plus one document fetch on a hit.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .docstore import DocNotFound, DocumentStore, SimulatedDocStore
from .errors import StorageError, UsageError
from .index import HNSWIndex, IndexParams, normalize
from .policy import CategoryConfig, EffectivePolicy, PolicyRegistry

logger = logging.getLogger(__name__)

HIT = "hit"
MISS = "miss"
MISS_REASONS = ("caching_disabled", "no_candidate", "expired", "dangling_doc")

STORED = "stored"
REJECTED_COMPLIANCE = "rejected_compliance"
EVICTED_THEN_STORED = "rejected_quota_evicted_then_stored"
REJECTED_QUOTA = "rejected_quota"

HIT_RATE_FLOOR = 0.001


@dataclass(frozen=True)
class LookupCosts:
    """Simulated cost of the two lookup stages, in ms.

    ``remote`` selects vector-database semantics: the search returns the
    document together with the match, so a found-but-expired entry already
    paid the fetch.
    """

    search: float = 2.0
    fetch: float = 5.0
    remote: bool = False


HYBRID_COSTS = LookupCosts()
VDB_COSTS = LookupCosts(search=30.0, fetch=5.0, remote=True)


@dataclass
class CacheEntryMeta:
    entry_id: int
    category: str
    doc_id: str
    created_at: int
    last_hit_at: int
    hit_count: int = 0


@dataclass(frozen=True)
class LookupResult:
    outcome: str
    charged_latency: float
    miss_reason: Optional[str] = None
    response_body: Optional[bytes] = None
    matched_similarity: Optional[float] = None
    entry_id: Optional[int] = None
    policy: Optional[EffectivePolicy] = None

    @property
    def hit(self) -> bool:
        return self.outcome == HIT


@dataclass
class CategoryStats:
    category: str
    lookups: int = 0
    hits: int = 0
    misses_by_reason: Counter = field(default_factory=Counter)
    insertions: int = 0
    evictions: int = 0
    current_entry_count: int = 0

    @property
    def observed_hit_rate(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "lookups": self.lookups,
            "hits": self.hits,
            "misses_by_reason": {r: self.misses_by_reason.get(r, 0) for r in MISS_REASONS},
            "insertions": self.insertions,
            "evictions": self.evictions,
            "current_entry_count": self.current_entry_count,
            "observed_hit_rate": self.observed_hit_rate,
        }


def eviction_score(priority: float, age_s: float, hit_rate: float) -> float:
    """priority * (1/age) * max(hit_rate, floor); zero age scores infinite."""
    inv_age = math.inf if age_s <= 0 else 1.0 / age_s
    return priority * inv_age * max(hit_rate, HIT_RATE_FLOOR)


class SemanticCache:
    """Semantic cache with per-category thresholds, TTLs and quotas.

    Args:
        registry: category policies.
        store: document backend; defaults to a simulated in-memory store.
        capacity: global maximum entry count. A category may hold at most
            ``floor(quota_fraction * capacity)`` entries.
        index_params: HNSW parameters (dimension lives here).
        costs: simulated latency model reported in :class:`LookupResult`.
        backend: HNSW kernel backend.
    """

    def __init__(self, registry: Optional[PolicyRegistry] = None,
                 store: Optional[DocumentStore] = None, capacity: int = 100_000,
                 index_params: IndexParams = IndexParams(),
                 costs: LookupCosts = HYBRID_COSTS, backend: str = "auto"):
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.registry = registry if registry is not None else PolicyRegistry()
        self.store = store if store is not None else SimulatedDocStore()
        self.capacity = capacity
        self.costs = costs
        self.index_params = index_params
        self.backend = backend
        self._indexes: dict[str, HNSWIndex] = {}
        self._meta: dict[int, CacheEntryMeta] = {}
        self._queues: dict[str, list[tuple[int, int]]] = {}  # (created_at, id) min-heaps
        self._stats: dict[str, CategoryStats] = {}
        self._ids = itertools.count(1)
        self._write = threading.Lock()  # serializes inserts/evictions
        self._stats_lock = threading.Lock()

    # -- helpers ---------------------------------------------------------

    @property
    def dimension(self) -> int:
        return self.index_params.dimension

    def __len__(self) -> int:
        return len(self._meta)

    def index_for(self, category: str) -> Optional[HNSWIndex]:
        return self._indexes.get(category)

    def _stat(self, category: str) -> CategoryStats:
        st = self._stats.get(category)
        if st is None:
            with self._stats_lock:
                st = self._stats.setdefault(category, CategoryStats(category))
        return st

    def quota_limit(self, category: str) -> int:
        cfg = self.registry.get_config(category)
        return int(math.floor(cfg.quota_fraction * self.capacity + 1e-9))

    def entries(self) -> list[CacheEntryMeta]:
        return list(self._meta.values())

    def entry(self, entry_id: int) -> Optional[CacheEntryMeta]:
        return self._meta.get(entry_id)

    def stats(self, category: Optional[str] = None):
        """Stats for one category, or a dict of all known categories."""
        if category is not None:
            return self._stat(category)
        return dict(self._stats)

    def _miss(self, st: CategoryStats, reason: str, cost: float, policy=None) -> LookupResult:
        with self._stats_lock:
            st.lookups += 1
            st.misses_by_reason[reason] += 1
        return LookupResult(MISS, cost, miss_reason=reason, policy=policy)

    # -- lookup ----------------------------------------------------------

    def lookup(self, embedding, category: str, now: int, lam: float = 0.0,
               fixed_threshold: Optional[float] = None) -> LookupResult:
        """Category-aware lookup.

        With ``fixed_threshold`` the index returns its single nearest
        neighbour and the threshold is applied afterwards (post-search
        filtering, as a remote vector database would); otherwise the
        category's effective threshold stops the traversal early.
        """
        q = normalize(embedding, self.dimension)
        cfg = self.registry.get_config(category)
        st = self._stat(category)
        if not cfg.allow_caching:
            return self._miss(st, "caching_disabled", 0.0)
        policy = self.registry.effective_policy(category, lam)
        index = self._indexes.get(category)
        costs = self.costs

        found = None
        if index is not None:
            if fixed_threshold is None:
                found = index.threshold_search(q, policy.threshold)
            else:
                top = index.knn_search(q, 1)
                if top and top[0][1] >= fixed_threshold:
                    found = top[0]
        if found is None:
            return self._miss(st, "no_candidate", costs.search, policy)

        entry_id, sim = found
        meta = self._meta.get(entry_id)
        if meta is None:  # evicted between search and metadata read
            return self._miss(st, "no_candidate", costs.search, policy)
        age_s = (now - meta.created_at) / 1000.0
        if age_s > policy.ttl:
            with self._write:
                self._evict_ids([entry_id], count_as_eviction=True)
            cost = costs.search + (costs.fetch if costs.remote else 0.0)
            return self._miss(st, "expired", cost, policy)

        try:
            record = self.store.fetch(meta.doc_id)
        except (DocNotFound, StorageError) as exc:
            logger.warning("dangling document for entry %d: %s", entry_id, exc)
            with self._write:
                self._evict_ids([entry_id], count_as_eviction=True)
            return self._miss(st, "dangling_doc", costs.search + costs.fetch, policy)

        with self._stats_lock:
            st.lookups += 1
            st.hits += 1
            meta.hit_count += 1
            meta.last_hit_at = max(meta.last_hit_at, now)
        return LookupResult(HIT, costs.search + costs.fetch, response_body=record.response_body,
                            matched_similarity=sim, entry_id=entry_id, policy=policy)

    # -- insert / evict --------------------------------------------------

    def insert(self, embedding, category: str, request_body: bytes, response_body: bytes,
               now: int) -> str:
        """Store a response for ``category``; returns the insert outcome."""
        q = normalize(embedding, self.dimension)
        cfg = self.registry.get_config(category)
        if not cfg.allow_caching:
            return REJECTED_COMPLIANCE
        limit = self.quota_limit(category)
        if limit < 1:
            return REJECTED_QUOTA
        with self._write:
            evicted = False
            st = self._stat(category)
            while st.current_entry_count >= limit:
                self._evict_min(now, only=category)
                evicted = True
            while len(self._meta) >= self.capacity:
                self._evict_min(now)
                evicted = True

            record = self.store.new_record(request_body, response_body, now)
            doc_id = self.store.put(record)  # StorageError propagates; nothing indexed
            entry_id = next(self._ids)
            index = self._indexes.get(category)
            if index is None:
                index = self._indexes[category] = HNSWIndex(self.index_params, self.backend)
            try:
                index.insert(q, entry_id)
            except Exception:
                self.store.delete(doc_id)
                raise
            self._meta[entry_id] = CacheEntryMeta(entry_id, category, doc_id, now, now)
            heapq.heappush(self._queues.setdefault(category, []), (now, entry_id))
            with self._stats_lock:
                st.insertions += 1
                st.current_entry_count += 1
        return EVICTED_THEN_STORED if evicted else STORED

    def evict_one(self, now: int) -> int:
        """Evict the entry with the lowest eviction score; returns its id."""
        with self._write:
            return self._evict_min(now)

    def _queue_head(self, category: str) -> Optional[CacheEntryMeta]:
        q = self._queues.get(category)
        while q:
            meta = self._meta.get(q[0][1])
            if meta is not None:
                return meta
            heapq.heappop(q)  # lazily drop entries removed by other paths
        return None

    def eviction_candidates(self, now: int, only: Optional[str] = None):
        """``(score, created_at, entry_id)`` for each category's oldest entry.

        Within a category every factor but age is shared, so the oldest
        entry is that category's minimum-score entry.
        """
        out = []
        cats = [only] if only is not None else list(self._queues)
        for cat in cats:
            meta = self._queue_head(cat)
            if meta is None:
                continue
            cfg = self.registry.get_config(cat)
            rate = self._stat(cat).observed_hit_rate
            score = eviction_score(cfg.priority, (now - meta.created_at) / 1000.0, rate)
            out.append((score, meta.created_at, meta.entry_id))
        return out

    def _evict_min(self, now: int, only: Optional[str] = None) -> int:
        cands = self.eviction_candidates(now, only)
        if not cands:
            raise UsageError("cannot evict from an empty cache")
        _, _, victim = min(cands)
        self._evict_ids([victim], count_as_eviction=True)
        return victim

    def _evict_ids(self, ids, count_as_eviction: bool) -> int:
        n = 0
        for entry_id in ids:
            meta = self._meta.pop(entry_id, None)
            if meta is None:
                continue
            self._indexes[meta.category].remove(entry_id)
            try:
                self.store.delete(meta.doc_id)
            except StorageError as exc:
                logger.warning("failed to delete document %s: %s", meta.doc_id, exc)
            st = self._stat(meta.category)
            with self._stats_lock:
                st.current_entry_count -= 1
                if count_as_eviction:
                    st.evictions += 1
            n += 1
        return n

    def sweep_expired(self, now: int) -> int:
        """Remove entries older than the largest TTL their category allows."""
        removed = 0
        with self._write:
            for cat in list(self._queues):
                cfg = self.registry.get_config(cat)
                limit_ms = cfg.base_ttl * cfg.beta_max * 1000.0
                while True:
                    meta = self._queue_head(cat)
                    if meta is None or now - meta.created_at <= limit_ms:
                        break
                    removed += self._evict_ids([meta.entry_id], count_as_eviction=True)
        return removed

    def purge_category(self, category: str) -> int:
        """Drop every entry of ``category`` (used when caching is disabled)."""
        with self._write:
            ids = [m.entry_id for m in self._meta.values() if m.category == category]
            return self._evict_ids(ids, count_as_eviction=True)

    def register_category(self, config: CategoryConfig) -> None:
        """Register ``config`` and enforce it on entries already cached."""
        self.registry.register(config)
        if not config.allow_caching:
            self.purge_category(config.category_id)
        else:
            with self._write:
                limit = self.quota_limit(config.category_id)
                while self._stat(config.category_id).current_entry_count > limit:
                    self._evict_min(_latest(self._meta), only=config.category_id)


def _latest(meta: dict) -> int:
    return max((m.created_at for m in meta.values()), default=0)
