"""Pure numpy HNSW kernels; the fallback when ``_hnsw_ext`` is not built.

Signatures, traversal order and tie-breaking match the compiled module so
both backends build the same graph from the same insertion sequence.
"""

from __future__ import annotations

import heapq

import numpy as np


def _eligible(slot: int, deleted: np.ndarray, labels: np.ndarray, want_label: int) -> bool:
    return deleted[slot] == 0 and (want_label < 0 or labels[slot] == want_label)


def similarities(q: np.ndarray, vectors: np.ndarray, slots: np.ndarray) -> np.ndarray:
    return vectors[slots] @ q


def greedy_closest(q, vectors, nbrs, counts, entry, deleted, labels, want_label, tau):
    cur = int(entry)
    cur_sim = float(vectors[cur] @ q)
    if cur_sim >= tau and _eligible(cur, deleted, labels, want_label):
        return cur, cur_sim, cur, cur_sim
    changed = True
    while changed:
        changed = False
        row = nbrs[cur, : counts[cur]]
        sims = vectors[row] @ q
        for n, s in zip(row.tolist(), sims.tolist()):
            if s >= tau and _eligible(n, deleted, labels, want_label):
                return n, s, n, s
            if s > cur_sim:
                cur, cur_sim = n, s
                changed = True
    return cur, cur_sim, -1, 0.0


def search_layer(q, vectors, nbrs, counts, entries, ef, visited, tag,
                 deleted, labels, want_label, filter_results, tau):
    # ``visited``/``tag`` are accepted for signature parity; a set is cheaper here.
    seen: set[int] = set()
    cand: list[tuple[float, int]] = []
    res: list[tuple[float, int]] = []
    empty = (np.empty(0, np.int32), np.empty(0, np.float64))

    for e in np.asarray(entries).tolist():
        if e in seen:
            continue
        seen.add(e)
        s = float(vectors[e] @ q)
        elig = _eligible(e, deleted, labels, want_label)
        if elig and s >= tau:
            return (*empty, e, s)
        heapq.heappush(cand, (-s, e))
        if elig or not filter_results:
            heapq.heappush(res, (s, -e))
            if len(res) > ef:
                heapq.heappop(res)

    while cand:
        neg_s, c = cand[0]
        if len(res) >= ef and -neg_s < res[0][0]:
            break
        heapq.heappop(cand)
        row = [n for n in nbrs[c, : counts[c]].tolist() if n not in seen]
        if not row:
            continue
        sims = (vectors[row] @ q).tolist()
        for n, s in zip(row, sims):
            seen.add(n)
            elig = _eligible(n, deleted, labels, want_label)
            if elig and s >= tau:
                return (*empty, n, s)
            if len(res) < ef or s > res[0][0]:
                heapq.heappush(cand, (-s, n))
                if elig or not filter_results:
                    heapq.heappush(res, (s, -n))
                    if len(res) > ef:
                        heapq.heappop(res)

    ordered = sorted(((-s, -neg_n) for s, neg_n in res))
    slots = np.fromiter((n for _, n in ordered), dtype=np.int32, count=len(ordered))
    sims = np.fromiter((-ns for ns, _ in ordered), dtype=np.float64, count=len(ordered))
    return slots, sims, -1, 0.0


def select_neighbors(cand_ids, cand_sims, vectors, m):
    kept: list[int] = []
    if len(cand_ids) == 0:
        return np.empty(0, np.int32)
    ids = np.asarray(cand_ids)
    for c, sim_c in zip(ids.tolist(), np.asarray(cand_sims).tolist()):
        if len(kept) >= m:
            break
        if kept and float(np.max(vectors[kept] @ vectors[c])) > sim_c:
            continue
        kept.append(c)
    return np.asarray(kept, dtype=np.int32)


def add_link(vectors, nbrs, counts, src, dst, mmax):
    cnt = int(counts[src])
    row = nbrs[src, :cnt].tolist()
    if dst in row:
        return
    if cnt < mmax:
        nbrs[src, cnt] = dst
        counts[src] = cnt + 1
        return
    pool = row + [dst]
    sims = (vectors[pool] @ vectors[src]).tolist()
    order = sorted(zip(sims, pool), key=lambda t: (-t[0], t[1]))
    ids = np.asarray([p for _, p in order], dtype=np.int32)
    ss = np.asarray([s for s, _ in order], dtype=np.float64)
    kept = select_neighbors(ids, ss, vectors, mmax)
    nbrs[src, : len(kept)] = kept
    counts[src] = len(kept)
