# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled HNSW graph kernels.

Every function here has a numpy twin in ``_hnsw_py`` with the same signature
and the same traversal/tie-breaking order. Similarities are inner products of
unit vectors. Heap entries are ``(sim, -slot)`` so that equal similarities
resolve toward the smaller slot, matching ``heapq`` on ``(-sim, slot)``.
"""

import numpy as np
cimport numpy as cnp
from libcpp.pair cimport pair
from libcpp.queue cimport priority_queue
from libcpp.vector cimport vector

cnp.import_array()

ctypedef pair[double, int] item


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    # eight independent partial sums break the add dependency chain
    cdef Py_ssize_t j = 0
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0
    while j + 8 <= d:
        s0 += a[j] * b[j]
        s1 += a[j + 1] * b[j + 1]
        s2 += a[j + 2] * b[j + 2]
        s3 += a[j + 3] * b[j + 3]
        s4 += a[j + 4] * b[j + 4]
        s5 += a[j + 5] * b[j + 5]
        s6 += a[j + 6] * b[j + 6]
        s7 += a[j + 7] * b[j + 7]
        j += 8
    while j < d:
        s0 += a[j] * b[j]
        j += 1
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


cdef inline bint _eligible(Py_ssize_t slot, const unsigned char[::1] deleted,
                           const int[::1] labels, int want_label) noexcept nogil:
    return deleted[slot] == 0 and (want_label < 0 or labels[slot] == want_label)


def similarities(const double[::1] q, const double[:, ::1] vectors, const int[::1] slots):
    """Inner products between ``q`` and the given rows."""
    cdef Py_ssize_t i, n = slots.shape[0], d = q.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = _dot(&q[0], &vectors[slots[i], 0], d)
    return out


def greedy_closest(const double[::1] q, const double[:, ::1] vectors,
                   const int[:, ::1] nbrs, const int[::1] counts, int entry,
                   const unsigned char[::1] deleted, const int[::1] labels,
                   int want_label, double tau):
    """Greedy descent on one layer.

    Returns ``(closest_slot, closest_sim, hit_slot, hit_sim)``; ``hit_slot``
    is -1 unless an eligible node with similarity >= tau was visited.
    """
    cdef Py_ssize_t d = q.shape[0]
    cdef const double* qp = &q[0]
    cdef int cur = entry, row, n, i
    cdef double cur_sim = _dot(qp, &vectors[cur, 0], d), s
    cdef bint changed = True
    if cur_sim >= tau and _eligible(cur, deleted, labels, want_label):
        return cur, cur_sim, cur, cur_sim
    while changed:
        changed = False
        row = cur  # scan the row we started from even if cur moves
        for i in range(counts[row]):
            n = nbrs[row, i]
            s = _dot(qp, &vectors[n, 0], d)
            if s >= tau and _eligible(n, deleted, labels, want_label):
                return n, s, n, s
            if s > cur_sim:
                cur = n
                cur_sim = s
                changed = True
    return cur, cur_sim, -1, 0.0


def search_layer(const double[::1] q, const double[:, ::1] vectors,
                 const int[:, ::1] nbrs, const int[::1] counts,
                 const int[::1] entries, int ef,
                 unsigned int[::1] visited, unsigned int tag,
                 const unsigned char[::1] deleted, const int[::1] labels,
                 int want_label, bint filter_results, double tau):
    """Beam search on one layer with optional early exit at ``tau``.

    Returns ``(slots, sims, hit_slot, hit_sim)`` with ``slots``/``sims``
    sorted by similarity descending. When ``filter_results`` is set only
    eligible nodes enter the result beam; ineligible ones are still expanded.
    """
    cdef Py_ssize_t d = q.shape[0]
    cdef const double* qp = &q[0]
    cdef priority_queue[item] cand
    cdef priority_queue[item] res
    cdef Py_ssize_t k
    cdef int e, c, n, i
    cdef double s
    cdef bint elig
    cdef item top

    for k in range(entries.shape[0]):
        e = entries[k]
        if visited[e] == tag:
            continue
        visited[e] = tag
        s = _dot(qp, &vectors[e, 0], d)
        elig = _eligible(e, deleted, labels, want_label)
        if elig and s >= tau:
            return _empty_i(), _empty_f(), e, s
        cand.push(item(s, -e))
        if elig or not filter_results:
            res.push(item(-s, e))
            if <int>res.size() > ef:
                res.pop()

    while not cand.empty():
        top = cand.top()
        if <int>res.size() >= ef and top.first < -res.top().first:
            break
        cand.pop()
        c = -top.second
        for i in range(counts[c]):
            n = nbrs[c, i]
            if visited[n] == tag:
                continue
            visited[n] = tag
            s = _dot(qp, &vectors[n, 0], d)
            elig = _eligible(n, deleted, labels, want_label)
            if elig and s >= tau:
                return _empty_i(), _empty_f(), n, s
            if <int>res.size() < ef or s > -res.top().first:
                cand.push(item(s, -n))
                if elig or not filter_results:
                    res.push(item(-s, n))
                    if <int>res.size() > ef:
                        res.pop()

    cdef Py_ssize_t m = res.size()
    slots = np.empty(m, dtype=np.int32)
    sims = np.empty(m, dtype=np.float64)
    cdef int[::1] so = slots
    cdef double[::1] si = sims
    for k in range(m - 1, -1, -1):
        top = res.top()
        res.pop()
        so[k] = top.second
        si[k] = -top.first
    return slots, sims, -1, 0.0


cdef object _empty_i():
    return np.empty(0, dtype=np.int32)


cdef object _empty_f():
    return np.empty(0, dtype=np.float64)


cdef int _select(const int* cand_ids, const double* cand_sims, Py_ssize_t n,
                 const double[:, ::1] vectors, Py_ssize_t d, int m,
                 int* out) noexcept nogil:
    # Keep a candidate only if it is closer to the base point than to every
    # neighbour already kept.
    cdef Py_ssize_t i, j
    cdef int kept = 0, c
    cdef bint good
    for i in range(n):
        if kept >= m:
            break
        c = cand_ids[i]
        good = True
        for j in range(kept):
            if _dot(&vectors[c, 0], &vectors[out[j], 0], d) > cand_sims[i]:
                good = False
                break
        if good:
            out[kept] = c
            kept += 1
    return kept


def select_neighbors(const int[::1] cand_ids, const double[::1] cand_sims,
                     const double[:, ::1] vectors, int m):
    """Diversity heuristic over candidates sorted by similarity descending."""
    cdef Py_ssize_t n = cand_ids.shape[0]
    out = np.empty(min(n, m), dtype=np.int32)
    if n == 0:
        return out
    cdef int[::1] o = out
    cdef int kept = _select(&cand_ids[0], &cand_sims[0], n, vectors,
                            vectors.shape[1], m, &o[0])
    return out[:kept]


def add_link(const double[:, ::1] vectors, int[:, ::1] nbrs, int[::1] counts,
             int src, int dst, int mmax):
    """Add edge src->dst, re-pruning src's list with the heuristic on overflow."""
    cdef int cnt = counts[src], i, j, kept
    cdef Py_ssize_t d = vectors.shape[1]
    for i in range(cnt):
        if nbrs[src, i] == dst:
            return
    if cnt < mmax:
        nbrs[src, cnt] = dst
        counts[src] = cnt + 1
        return
    cdef vector[item] pool
    cdef const double* base = &vectors[src, 0]
    for i in range(cnt):
        pool.push_back(item(_dot(base, &vectors[nbrs[src, i], 0], d), nbrs[src, i]))
    pool.push_back(item(_dot(base, &vectors[dst, 0], d), dst))
    _sort_desc(pool)
    cdef vector[int] ids
    cdef vector[double] sims
    cdef vector[int] out
    ids.resize(pool.size())
    sims.resize(pool.size())
    out.resize(mmax)
    for j in range(<int>pool.size()):
        ids[j] = pool[j].second
        sims[j] = pool[j].first
    kept = _select(ids.data(), sims.data(), pool.size(), vectors, d, mmax, out.data())
    for i in range(kept):
        nbrs[src, i] = out[i]
    counts[src] = kept


cdef void _sort_desc(vector[item]& pool) noexcept:
    # Insertion sort: pools are at most mmax + 1 long. Order is similarity
    # descending, then slot ascending.
    cdef Py_ssize_t i, j, n = pool.size()
    cdef item key
    for i in range(1, n):
        key = pool[i]
        j = i - 1
        while j >= 0 and (pool[j].first < key.first or
                          (pool[j].first == key.first and pool[j].second > key.second)):
            pool[j + 1] = pool[j]
            j -= 1
        pool[j + 1] = key
