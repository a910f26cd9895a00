"""In-memory HNSW index over unit-normalized embeddings.

Besides the usual k-NN search the index offers :meth:`HNSWIndex.threshold_search`,
which returns the first node reached during traversal whose cosine similarity
to the query meets a per-query threshold. Nodes carry an integer label so a
single shared graph can serve several categories; searches may be restricted
to one label while still navigating through the others.

Removal is by tombstone. Tombstoned nodes keep routing traffic but are never
returned; once they exceed ``compaction_ratio`` of all nodes the graph is
rebuilt from the live nodes in their original insertion order.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rwlock import RWLock
from .errors import UsageError
from .kernels import get_kernels

_NO_EARLY_EXIT = 2.0  # above any cosine similarity


def normalize(vector, dimension: Optional[int] = None) -> np.ndarray:
    """Return ``vector`` as a float64 unit vector, validating its shape."""
    v = np.array(vector, dtype=np.float64).ravel()
    if dimension is not None and v.shape[0] != dimension:
        raise UsageError(f"dimension mismatch: expected {dimension}, got {v.shape[0]}")
    norm = float(np.linalg.norm(v))
    if not math.isfinite(norm) or norm == 0.0:
        raise UsageError("embedding must be finite and non-zero")
    return v / norm


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two unit vectors (their dot product)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


@dataclass(frozen=True)
class IndexParams:
    dimension: int = 384
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    level_mult: Optional[float] = None  # defaults to 1 / ln(m)
    seed: int = 0
    compaction_ratio: float = 0.2

    def __post_init__(self):
        if self.m < 2:
            raise UsageError("m must be >= 2")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise UsageError("candidate-list sizes must be >= 1")
        if self.dimension < 2:
            raise UsageError("dimension must be >= 2")

    @property
    def mult(self) -> float:
        return self.level_mult if self.level_mult is not None else 1.0 / math.log(self.m)


class HNSWIndex:
    """HNSW graph keyed by caller-supplied integer entry ids.

    Args:
        params: graph hyperparameters and RNG seed.
        backend: kernel backend, "auto", "compiled" or "python".
    """

    def __init__(self, params: IndexParams = IndexParams(), backend: str = "auto"):
        self.params = params
        self._k = get_kernels(backend)
        self.backend = "python" if self._k.__name__.endswith("_hnsw_py") else "compiled"
        self._lock = RWLock()
        self._rng = random.Random(params.seed)
        self._reset(capacity=64)

    # -- storage ---------------------------------------------------------

    def _reset(self, capacity: int) -> None:
        d = self.params.dimension
        self._cap = capacity
        self._n = 0  # slots used, including tombstones
        self._vectors = np.zeros((capacity, d), dtype=np.float64)
        self._deleted = np.zeros(capacity, dtype=np.uint8)
        self._labels = np.zeros(capacity, dtype=np.int32)
        self._levels = np.zeros(capacity, dtype=np.int16)
        self._ids = np.zeros(capacity, dtype=np.int64)
        self._tls = threading.local()
        self._nbrs: list[np.ndarray] = []
        self._counts: list[np.ndarray] = []
        self._slot_of: dict[int, int] = {}
        self._entry = -1
        self._max_level = -1
        self._tombstones = 0

    def _mmax(self, level: int) -> int:
        return 2 * self.params.m if level == 0 else self.params.m

    def _grow(self) -> None:
        new = self._cap * 2

        def widen(a):
            out = np.zeros((new,) + a.shape[1:], dtype=a.dtype)
            out[: self._cap] = a
            return out

        self._vectors = widen(self._vectors)
        self._deleted = widen(self._deleted)
        self._labels = widen(self._labels)
        self._levels = widen(self._levels)
        self._ids = widen(self._ids)
        self._nbrs = [widen(a) for a in self._nbrs]
        self._counts = [widen(a) for a in self._counts]
        self._cap = new

    def _add_layer(self) -> None:
        lvl = len(self._nbrs)
        self._nbrs.append(np.full((self._cap, self._mmax(lvl)), -1, dtype=np.int32))
        self._counts.append(np.zeros(self._cap, dtype=np.int32))

    def _visit_buffer(self):
        # per-thread visited marks: concurrent readers must not share tags
        tls = self._tls
        buf = getattr(tls, "buf", None)
        if buf is None or buf.shape[0] < self._cap:
            buf = tls.buf = np.zeros(self._cap, dtype=np.uint32)
            tls.tag = 0
        tls.tag += 1
        if tls.tag >= 0xFFFFFFFF:
            buf[:] = 0
            tls.tag = 1
        return buf, tls.tag

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # (0, 1]
        return int(-math.log(u) * self.params.mult)

    # -- public API ------------------------------------------------------

    def __len__(self) -> int:
        return len(self._slot_of)

    def __contains__(self, entry: int) -> bool:
        return entry in self._slot_of

    @property
    def dimension(self) -> int:
        return self.params.dimension

    @property
    def tombstones(self) -> int:
        return self._tombstones

    def vector(self, entry: int) -> np.ndarray:
        """Stored (normalized) vector for ``entry``."""
        with self._lock.read():
            try:
                return self._vectors[self._slot_of[entry]].copy()
            except KeyError:
                raise UsageError(f"unknown entry id {entry}") from None

    def insert(self, embedding, entry: int, label: int = 0) -> None:
        """Add ``entry`` with the given embedding (normalized on the way in)."""
        v = normalize(embedding, self.params.dimension)
        entry = int(entry)
        with self._lock.write():
            if entry in self._slot_of:
                raise UsageError(f"duplicate entry id {entry}")
            self._insert_slot(v, entry, int(label))

    def remove(self, entry: int) -> None:
        """Tombstone ``entry``; compacts the graph past the tombstone ratio."""
        with self._lock.write():
            slot = self._slot_of.pop(int(entry), None)
            if slot is None:
                raise UsageError(f"unknown entry id {entry}")
            self._deleted[slot] = 1
            self._tombstones += 1
            if not self._slot_of:
                self._reset(capacity=64)
            elif self._tombstones > self.params.compaction_ratio * self._n:
                self._compact()

    def threshold_search(self, query, tau: float, label: Optional[int] = None):
        """First eligible node reached with similarity >= tau.

        Returns ``(entry_id, similarity)`` or ``None``. The returned
        similarity is recomputed with :func:`cosine_similarity` and is never
        below ``tau``.
        """
        if not 0.0 < tau <= 1.0:
            raise UsageError("tau must lie in (0, 1]")
        q = normalize(query, self.params.dimension)
        want = -1 if label is None else int(label)
        with self._lock.read():
            if not self._slot_of:
                return None
            slot = self._descend(q, want, tau)
            if slot is None:
                return None
            sim = cosine_similarity(q, self._vectors[slot])
            if sim < tau:  # kernel/numpy rounding disagreement at the boundary
                return None
            return int(self._ids[slot]), sim

    def knn_search(self, query, k: int, label: Optional[int] = None):
        """Approximate k nearest live entries as ``[(entry_id, sim), ...]``.

        Sorted by similarity descending, ties by entry id ascending. When
        ``k`` covers every live entry the scan is exhaustive.
        """
        if k < 1:
            raise UsageError("k must be >= 1")
        q = normalize(query, self.params.dimension)
        want = -1 if label is None else int(label)
        with self._lock.read():
            if not self._slot_of:
                return []
            if k >= len(self._slot_of):
                slots = np.fromiter(self._slot_of.values(), dtype=np.int32)
                if want >= 0:
                    slots = slots[self._labels[slots] == want]
                sims = self._vectors[slots] @ q
            else:
                ep = self._entry
                for lvl in range(self._max_level, 0, -1):
                    ep = self._k.greedy_closest(
                        q, self._vectors, self._nbrs[lvl], self._counts[lvl], ep,
                        self._deleted, self._labels, want, _NO_EARLY_EXIT)[0]
                slots, sims, _, _ = self._k.search_layer(
                    q, self._vectors, self._nbrs[0], self._counts[0],
                    np.array([ep], dtype=np.int32), max(self.params.ef_search, k),
                    *self._visit_buffer(), self._deleted, self._labels,
                    want, True, _NO_EARLY_EXIT)
            ids = self._ids[slots]
        order = sorted(zip((-sims).tolist(), ids.tolist()))[:k]
        return [(int(i), -ns) for ns, i in order]

    # -- internals -------------------------------------------------------

    def _descend(self, q: np.ndarray, want: int, tau: float) -> Optional[int]:
        ep = self._entry
        for lvl in range(self._max_level, 0, -1):
            ep, _, hit, _ = self._k.greedy_closest(
                q, self._vectors, self._nbrs[lvl], self._counts[lvl], ep,
                self._deleted, self._labels, want, tau)
            if hit >= 0:
                return hit
        _, _, hit, _ = self._k.search_layer(
            q, self._vectors, self._nbrs[0], self._counts[0],
            np.array([ep], dtype=np.int32), self.params.ef_search,
            *self._visit_buffer(), self._deleted, self._labels,
            want, True, tau)
        return hit if hit >= 0 else None

    def _insert_slot(self, v: np.ndarray, entry: int, label: int) -> None:
        if self._n == self._cap:
            self._grow()
        slot = self._n
        self._n += 1
        level = self._draw_level()
        self._vectors[slot] = v
        self._labels[slot] = label
        self._levels[slot] = level
        self._ids[slot] = entry
        self._deleted[slot] = 0
        while len(self._nbrs) <= level:
            self._add_layer()

        if self._entry < 0:
            self._entry, self._max_level = slot, level
            self._slot_of[entry] = slot
            return

        k = self._k
        ep = self._entry
        for lvl in range(self._max_level, level, -1):
            ep = k.greedy_closest(v, self._vectors, self._nbrs[lvl], self._counts[lvl],
                                  ep, self._deleted, self._labels, -1, _NO_EARLY_EXIT)[0]
        eps = np.array([ep], dtype=np.int32)
        for lvl in range(min(level, self._max_level), -1, -1):
            slots, sims, _, _ = k.search_layer(
                v, self._vectors, self._nbrs[lvl], self._counts[lvl],
                eps, self.params.ef_construction,
                *self._visit_buffer(), self._deleted, self._labels,
                -1, False, _NO_EARLY_EXIT)
            chosen = k.select_neighbors(slots, sims, self._vectors, self._mmax(lvl))
            nb, ct = self._nbrs[lvl], self._counts[lvl]
            nb[slot, : len(chosen)] = chosen
            ct[slot] = len(chosen)
            mmax = self._mmax(lvl)
            for other in chosen.tolist():
                k.add_link(self._vectors, nb, ct, other, slot, mmax)
            if len(slots):
                eps = slots

        # publish only after the node is fully linked
        self._slot_of[entry] = slot
        if level > self._max_level:
            self._entry, self._max_level = slot, level

    def _compact(self) -> None:
        live = sorted(self._slot_of.values())
        vectors = self._vectors[live].copy()
        labels = self._labels[live].copy()
        ids = self._ids[live].copy()
        cap = 64
        while cap < len(live):
            cap *= 2
        self._reset(capacity=cap)
        for v, e, lab in zip(vectors, ids.tolist(), labels.tolist()):
            self._insert_slot(v, e, lab)
