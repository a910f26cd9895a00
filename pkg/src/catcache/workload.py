"""Deterministic synthetic workloads for the cache simulator.

Geometry: every category has a random unit centre. Each canonical query
gets a fixed anchor ``normalize(centre + sigma * g)`` with ``g`` an
isotropic Gaussian of unit expected norm; ``sigma`` is calibrated by
bisection so the mean cosine distance from an anchor to its 10th nearest
neighbour in the pool matches ``cluster_density``. A concrete query is a
paraphrase of its anchor, ``normalize(anchor + noise * r * u)``, where ``u``
is a random unit direction and ``r`` a per-query log-normal magnitude
(median 1, log-scale ``paraphrase_spread``): most rephrasings are close,
a few wander far.

Repetition: canonical indices are drawn from a Zipf law
``P(rank) ~ rank^-alpha`` over the pool, or uniformly.

Staleness: each canonical query's content version follows a Poisson
process with rate ``staleness_rate`` per second; every query records the
version current at its arrival.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ValidationError

KNN_RANK = 10


@dataclass(frozen=True)
class CategorySpec:
    category_id: str
    traffic_share: float
    repetition: str = "zipf"  # "zipf" | "uniform"
    zipf_alpha: float = 1.2
    pool_size: int = 10_000
    cluster_density: float = 0.12  # target mean 10th-NN cosine distance
    staleness_rate: float = 0.0  # per second
    model_id: str = "default"
    paraphrase_noise: float = 0.0
    paraphrase_spread: float = 1.0

    def validate(self) -> None:
        if not self.category_id:
            raise ValidationError("category_id_empty")
        if not 0.0 < self.traffic_share <= 1.0:
            raise ValidationError("traffic_share_out_of_range", self.category_id)
        if self.repetition not in ("zipf", "uniform"):
            raise ValidationError("unknown_repetition", self.repetition)
        if self.repetition == "zipf" and not self.zipf_alpha > 0:
            raise ValidationError("zipf_alpha_nonpositive", self.category_id)
        if self.pool_size < 1:
            raise ValidationError("pool_size_nonpositive", self.category_id)
        if not 0.0 < self.cluster_density < 1.0:
            raise ValidationError("cluster_density_out_of_range", self.category_id)
        if self.staleness_rate < 0:
            raise ValidationError("staleness_rate_negative", self.category_id)
        if self.paraphrase_noise < 0 or self.paraphrase_spread < 0:
            raise ValidationError("paraphrase_negative", self.category_id)

    @classmethod
    def from_dict(cls, data: dict) -> "CategorySpec":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValidationError("unknown_field", ", ".join(sorted(extra)))
        try:
            spec = cls(**data)
        except TypeError as exc:
            raise ValidationError("missing_field", str(exc)) from None
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Query:
    index: int
    time_ms: float
    category: str
    canonical: int
    version: int
    embedding: np.ndarray


@dataclass
class Workload:
    """A query stream held column-wise.

    ``category`` indexes ``specs``; ``times`` are milliseconds from the
    start of the simulation and non-decreasing.
    """

    specs: tuple
    times: np.ndarray
    category: np.ndarray
    canonical: np.ndarray
    version: np.ndarray
    embeddings: np.ndarray
    seed: int = 0
    density: dict = field(default_factory=dict)  # measured 10th-NN distance per category

    def __post_init__(self):
        n = len(self.times)
        for name in ("category", "canonical", "version"):
            if len(getattr(self, name)) != n:
                raise ValidationError("ragged_workload", name)
        if self.embeddings.shape[0] != n:
            raise ValidationError("ragged_workload", "embeddings")
        if n and np.any(np.diff(self.times) < 0):
            raise ValidationError("unordered_times")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dimension(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def category_ids(self) -> list[str]:
        return [s.category_id for s in self.specs]

    def query(self, i: int) -> Query:
        return Query(i, float(self.times[i]), self.specs[self.category[i]].category_id,
                     int(self.canonical[i]), int(self.version[i]), self.embeddings[i])

    def __iter__(self) -> Iterator[Query]:
        for i in range(len(self)):
            yield self.query(i)

    def digest(self) -> str:
        """SHA-256 over the raw stream bytes (determinism checks)."""
        h = hashlib.sha256()
        for arr in (self.times, self.category, self.canonical, self.version, self.embeddings):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    @classmethod
    def from_queries(cls, specs: Sequence[CategorySpec], times, categories, canonical,
                     embeddings, versions=None, seed: int = 0) -> "Workload":
        """Build a hand-crafted stream; ``categories`` are category ids."""
        idx = {s.category_id: i for i, s in enumerate(specs)}
        n = len(times)
        emb = np.asarray(embeddings, dtype=np.float64)
        emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        return cls(tuple(specs), np.asarray(times, dtype=np.float64),
                   np.asarray([idx[c] for c in categories], dtype=np.int32),
                   np.asarray(canonical, dtype=np.int64),
                   np.zeros(n, np.int64) if versions is None else np.asarray(versions, np.int64),
                   emb, seed)


def zipf_probabilities(pool_size: int, alpha: float) -> np.ndarray:
    ranks = np.arange(1, pool_size + 1, dtype=np.float64)
    w = ranks ** -alpha
    return w / w.sum()


def zipf_head_mass(pool_size: int, alpha: float, head_fraction: float = 0.1) -> float:
    """Analytic share of draws landing on the top ``head_fraction`` of ranks."""
    p = zipf_probabilities(pool_size, alpha)
    return float(p[: max(1, int(round(head_fraction * pool_size)))].sum())


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def knn_distance(anchors: np.ndarray, probes: np.ndarray, k: int = KNN_RANK) -> float:
    """Mean cosine distance from each probe row (a member of ``anchors``) to its k-th neighbour."""
    n = anchors.shape[0]
    k = min(k, n - 1)
    if k < 1:
        return 0.0
    sims = anchors[probes] @ anchors.T
    sims[np.arange(len(probes)), probes] = -np.inf  # exclude self
    kth = -np.partition(-sims, k - 1, axis=1)[:, k - 1]
    return float(np.mean(1.0 - kth))


def calibrate_anchors(pool_size: int, target: float, dimension: int,
                      rng: np.random.Generator, probes: int = 256, iters: int = 30):
    """Draw a pool of anchors whose mean 10th-NN cosine distance is ``target``.

    Returns ``(anchors, sigma, achieved_distance)``. If the target is beyond
    what the geometry can reach the closest extreme is returned.
    """
    centre = rng.normal(size=dimension)
    centre /= np.linalg.norm(centre)
    g = rng.normal(size=(pool_size, dimension)) / math.sqrt(dimension)
    probe_idx = rng.choice(pool_size, size=min(probes, pool_size), replace=False)

    def build(sigma):
        return _unit_rows(centre + sigma * g)

    if pool_size <= 1:
        return build(1.0), 1.0, 0.0
    lo, hi = math.log(1e-4), math.log(1e3)
    best = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        dist = knn_distance(build(math.exp(mid)), probe_idx)
        if best is None or abs(dist - target) < abs(best[1] - target):
            best = (math.exp(mid), dist)
        if dist < target:
            lo = mid
        else:
            hi = mid
        if abs(dist - target) < 2e-3 * target:
            break
    sigma, dist = best
    return build(sigma), sigma, dist


def _versions(times_s: np.ndarray, canonical: np.ndarray, rate: float,
              rng: np.random.Generator) -> np.ndarray:
    """Content version at each arrival under a per-canonical Poisson process."""
    n = len(times_s)
    if rate <= 0 or n == 0:
        return np.zeros(n, dtype=np.int64)
    order = np.lexsort((np.arange(n), canonical))  # by canonical, then arrival
    t = times_s[order]
    c = canonical[order]
    first = np.ones(n, dtype=bool)
    first[1:] = c[1:] != c[:-1]
    dt = np.empty(n)
    dt[first] = t[first]  # changes since time zero
    dt[~first] = np.diff(t)[~first[1:]]
    events = rng.poisson(rate * dt)
    # cumulative sum restarting at each canonical group
    csum = np.cumsum(events)
    group_start = np.maximum.accumulate(np.where(first, np.arange(n), 0))
    base = csum[group_start] - events[group_start]
    out = np.empty(n, dtype=np.int64)
    out[order] = csum - base
    return out


def generate_workload(specs: Sequence[CategorySpec], n_queries: int, seed: int,
                      dimension: int = 64, qps: float = 50.0) -> Workload:
    """Generate ``n_queries`` arrivals (Poisson at ``qps``) across ``specs``."""
    specs = tuple(specs)
    if not specs:
        raise ValidationError("no_categories")
    for s in specs:
        s.validate()
    ids = [s.category_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate_category")
    shares = np.array([s.traffic_share for s in specs])
    if abs(math.fsum(shares) - 1.0) > 1e-9:
        raise ValidationError("traffic_share_sum", f"{math.fsum(shares)!r}")
    if n_queries < 1:
        raise ValidationError("n_queries_nonpositive")
    if dimension < 2 or qps <= 0:
        raise ValidationError("bad_stream_params")

    root = np.random.SeedSequence(seed)
    stream_ss, *cat_ss = root.spawn(1 + len(specs))
    rng = np.random.default_rng(stream_ss)
    times = np.cumsum(rng.exponential(1000.0 / qps, size=n_queries))
    cats = rng.choice(len(specs), size=n_queries, p=shares / shares.sum()).astype(np.int32)

    canonical = np.zeros(n_queries, dtype=np.int64)
    version = np.zeros(n_queries, dtype=np.int64)
    emb = np.empty((n_queries, dimension), dtype=np.float64)
    density = {}
    for ci, (spec, ss) in enumerate(zip(specs, cat_ss)):
        crng = np.random.default_rng(ss)
        anchors, _, achieved = calibrate_anchors(spec.pool_size, spec.cluster_density, dimension, crng)
        density[spec.category_id] = achieved
        mask = cats == ci
        m = int(mask.sum())
        if spec.repetition == "zipf":
            canon = crng.choice(spec.pool_size, size=m, p=zipf_probabilities(spec.pool_size, spec.zipf_alpha))
        else:
            canon = crng.integers(0, spec.pool_size, size=m)
        canonical[mask] = canon
        u = _unit_rows(crng.normal(size=(m, dimension))) if m else np.empty((0, dimension))
        r = np.exp(spec.paraphrase_spread * crng.normal(size=m))
        emb[mask] = _unit_rows(anchors[canon] + (spec.paraphrase_noise * r)[:, None] * u) if m else u
        version[mask] = _versions(times[mask] / 1000.0, canon, spec.staleness_rate, crng)
    return Workload(specs, times, cats, canonical, version, emb, seed, density)
