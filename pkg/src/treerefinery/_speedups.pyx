# cython: language_level=3
# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""C implementation of the bottom-up refinement pass on flat arrays.

Mirrors the pure-Python reference in ``treerefinery.lincr`` exactly: same
queue discipline, same left-to-right tie-breaking, same instrumentation
counters.  Input trees arrive as concatenated per-vertex arrays; candidate
state is written into caller-allocated arrays so the wrapper can
materialize the tree and the per-input correspondences.
"""

import numpy as np


def refine(int n, int k,
           long long[::1] offsets,
           int[::1] parent_flat,
           int[::1] post_flat,
           int[:, ::1] leaf_vertex,
           int[::1] roots,
           long long[::1] card,
           unsigned long long[:, ::1] jwords,
           int[:, ::1] proj,
           int[::1] cand_parent,
           int[::1] corr,
           long long[::1] counters):
    """Run the bottom-up pass plus verification.

    Returns 0 on success (the candidate arrays then describe the refined
    tree) or a failure code: 1 parent not strictly smaller, 2 too many
    vertices, 3 not phylogenetic, 4 display check failed, 5 corrupt
    correspondence.  ``counters`` receives (enqueued_total,
    distinct_enqueued, select_iterations, n_candidates,
    existing_parent_hits).
    """
    cdef Py_ssize_t total = offsets[k]
    cdef Py_ssize_t words = jwords.shape[1]
    cdef Py_ssize_t i, w, pos
    cdef long long base
    cdef int rho = n
    cdef int v, u, u_i, x, p, a, ax, lv
    cdef long long c, lmin, cv, off, tmp
    cdef int head = 0, tail = 0
    cdef int next_id = n + 1
    cdef long long seen = n
    cdef long long enq_total = n
    cdef long long sel_iters = 0
    cdef long long existing_hits = 0
    cdef int best_tree, found
    cdef bint any_unset, corrupt

    cdef long long[::1] ell = np.zeros(total, dtype=np.int64)
    cdef int[::1] queue = np.empty(2 * n, dtype=np.int32)
    cdef int[::1] images = np.empty(k, dtype=np.int32)
    cdef unsigned long long[::1] ju = np.zeros(words, dtype=np.uint64)
    cdef long long[::1] ccnt
    cdef long long[::1] cstart
    cdef int[::1] order
    cdef int[::1] anc
    cdef int[::1] stamp

    cdef unsigned long long one = 1
    cdef unsigned long long full_last
    if k % 64 == 0:
        full_last = ~(<unsigned long long>0)
    else:
        full_last = (one << (k % 64)) - 1

    try:
        # leaf counts per input tree: postorder puts children before parents
        for i in range(k):
            base = offsets[i]
            for pos in range(offsets[i], offsets[i + 1]):
                v = post_flat[pos]
                if ell[base + v] == 0:
                    ell[base + v] = 1
                p = parent_flat[base + v]
                if p >= 0:
                    ell[base + p] += ell[base + v]

        # init: leaves are candidates 0..n-1, the shared root is candidate n
        for v in range(n):
            card[v] = 1
            for w in range(words - 1):
                jwords[v, w] = ~(<unsigned long long>0)
            jwords[v, words - 1] = full_last
            queue[tail] = v
            tail += 1
        card[rho] = n
        for w in range(words - 1):
            jwords[rho, w] = ~(<unsigned long long>0)
        jwords[rho, words - 1] = full_last
        for i in range(k):
            base = offsets[i]
            for v in range(n):
                lv = leaf_vertex[i, v]
                proj[v, i] = lv
                corr[base + lv] = v
            proj[rho, i] = roots[i]
            corr[base + roots[i]] = rho

        # bottom-up parent construction
        while head < tail:
            v = queue[head]
            head += 1
            lmin = 0
            best_tree = -1
            for w in range(words):
                ju[w] = 0
            cv = card[v]
            for i in range(k):
                if (jwords[v, i >> 6] >> (i & 63)) & 1:
                    u_i = parent_flat[offsets[i] + proj[v, i]]
                else:
                    u_i = proj[v, i]
                images[i] = u_i
                c = ell[offsets[i] + u_i]
                if best_tree < 0 or c < lmin:
                    lmin = c
                    best_tree = i
                    for w in range(words):
                        ju[w] = 0
                    ju[i >> 6] = one << (i & 63)
                elif c == lmin:
                    ju[i >> 6] |= one << (i & 63)
            sel_iters += k
            if cv >= lmin:
                return 1
            found = -1
            any_unset = False
            corrupt = False
            for i in range(k):
                if (ju[i >> 6] >> (i & 63)) & 1:
                    u = corr[offsets[i] + images[i]]
                    if u < 0:
                        any_unset = True
                    elif found < 0:
                        found = u
                    elif found != u:
                        corrupt = True
                        break
            if corrupt or (found >= 0 and any_unset):
                return 5
            if found >= 0:
                existing_hits += 1
                cand_parent[v] = found
            else:
                u = next_id
                next_id += 1
                seen += 1
                if seen > 2 * n - 2:
                    return 2
                card[u] = lmin
                for w in range(words):
                    jwords[u, w] = ju[w]
                for i in range(k):
                    if (ju[i >> 6] >> (i & 63)) & 1:
                        proj[u, i] = images[i]
                        corr[offsets[i] + images[i]] = u
                    elif (jwords[v, i >> 6] >> (i & 63)) & 1:
                        proj[u, i] = parent_flat[offsets[i] + proj[v, i]]
                    else:
                        proj[u, i] = proj[v, i]
                queue[tail] = u
                tail += 1
                enq_total += 1
                cand_parent[v] = u

        # phylogenetic check: no unary vertices among the candidates
        ccnt = np.zeros(next_id, dtype=np.int64)
        for v in range(next_id):
            if cand_parent[v] >= 0:
                ccnt[cand_parent[v]] += 1
        for v in range(n, next_id):
            if ccnt[v] == 1:
                return 3

        # candidates in decreasing cluster-size order (stable counting sort);
        # parents strictly precede children because cardinalities decrease
        cstart = np.zeros(n + 2, dtype=np.int64)
        for v in range(next_id):
            cstart[card[v]] += 1
        off = 0
        for c in range(n, 0, -1):
            tmp = cstart[c]
            cstart[c] = off
            off += tmp
        order = np.empty(next_id, dtype=np.int32)
        for v in range(next_id):
            order[cstart[card[v]]] = v
            cstart[card[v]] += 1

        # display check per input tree: contract (implicitly, via nearest
        # kept ancestors) every candidate absent from the tree, then verify
        # the surviving parent relation matches the tree's through the
        # correspondence, injectively
        anc = np.empty(next_id, dtype=np.int32)
        stamp = np.full(total, -1, dtype=np.int32)
        for i in range(k):
            base = offsets[i]
            for pos in range(base, offsets[i + 1]):
                if corr[pos] < 0:
                    return 4
            for pos in range(next_id):
                v = order[pos]
                if v == rho:
                    continue
                p = cand_parent[v]
                if p == rho or ((jwords[p, i >> 6] >> (i & 63)) & 1):
                    anc[v] = p
                else:
                    anc[v] = anc[p]
            for pos in range(next_id):
                v = order[pos]
                if v == rho:
                    continue
                if not ((jwords[v, i >> 6] >> (i & 63)) & 1):
                    continue
                x = proj[v, i]
                if stamp[base + x] == i:
                    return 4
                stamp[base + x] = <int>i
                a = anc[v]
                if a == rho:
                    ax = roots[i]
                else:
                    ax = proj[a, i]
                if parent_flat[base + x] != ax:
                    return 4
        return 0
    finally:
        counters[0] = enq_total
        counters[1] = seen
        counters[2] = sel_iters
        counters[3] = next_id
        counters[4] = existing_hits
