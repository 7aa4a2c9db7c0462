"""Single-pass bottom-up common refinement of k trees on one leaf set.

The candidate tree's parent function is built leaf-upward: every candidate
vertex carries its cluster cardinality, the set of input trees containing
its cluster (a bitmask over tree indices), and one projection vertex per
input tree (the lowest ancestor of its cluster there).  Selecting a parent
is a k-way minimum over cardinalities; identity of candidates across trees
is tracked through per-tree correspondence tables, so the whole pass costs
O(k * n) time and space.  A verification phase then confirms the candidate
is phylogenetic and displays every input; failures are reported as typed
incompatibility reasons rather than a bare flag.

Two interchangeable engines execute the pass: this module's pure-Python
reference, and a C kernel (``treerefinery._speedups``) selected at import
when the compiled extension is present.  Both produce identical trees,
correspondences, and instrumentation counters.
"""

from collections import deque, namedtuple
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tree import (
    Correspondence,
    Tree,
    check_display,
    cluster_masks,
    ensure_common_leaf_set,
    is_phylogenetic,
    leaf_counts,
    match_by_clusters,
)

try:
    from . import _speedups
except ImportError:  # pure-Python install
    _speedups = None

HAVE_SPEEDUPS = _speedups is not None


class Incompatibility(Enum):
    """Why no common refinement was produced."""

    PARENT_NOT_STRICTLY_SMALLER = "parent-not-strictly-smaller"
    TOO_MANY_VERTICES = "too-many-vertices"
    NOT_PHYLOGENETIC = "not-phylogenetic"
    DISPLAY_CHECK_FAILED = "display-check-failed"
    CORRUPT_CORRESPONDENCE = "corrupt-correspondence"
    TRIPLES_INCONSISTENT = "triples-inconsistent"
    CLUSTER_CONFLICT = "cluster-conflict"


@dataclass
class RefineStats:
    """Instrumentation counters of one refinement run."""

    engine: str = ""
    enqueued_total: int = 0
    distinct_enqueued: int = 0
    select_iterations: int = 0
    created_inner: int = 0
    existing_parent_hits: int = 0
    comparability_violations: int = 0


class RefineOutcome:
    """Refined tree plus per-input correspondences, or a typed reason.

    ``correspondences[i]`` pairs vertices of input i (side A) with vertices
    of the refined tree (side B); they are materialized lazily.
    """

    __slots__ = ("tree", "reason", "witness", "stats", "_corr", "_corr_thunk")

    def __init__(self, tree=None, reason=None, witness=None, stats=None, corr_thunk=None):
        self.tree = tree
        self.reason = reason
        self.witness = witness
        self.stats = stats if stats is not None else RefineStats()
        self._corr = None
        self._corr_thunk = corr_thunk

    @property
    def refined(self):
        return self.tree is not None

    @property
    def correspondences(self):
        if self._corr is None and self._corr_thunk is not None:
            self._corr = self._corr_thunk()
            self._corr_thunk = None
        return self._corr

    def __repr__(self):
        if self.refined:
            return f"RefineOutcome(refined, {self.tree.n_vertices} vertices)"
        return f"RefineOutcome(incompatible: {self.reason.value})"


ParentChoice = namedtuple("ParentChoice", "tree vertex card mask images")
"""Result of one parent selection: representative input tree and vertex,
the minimal cardinality, the bitmask of trees attaining it, and the
per-tree candidate vertices examined."""


class RefinementState:
    """Working state of the bottom-up pass.

    Candidate vertex ids: leaves are 0..n-1 (their dense leaf ids), the
    shared root is n, created inner vertices follow.  Per candidate v:
    ``card[v]`` is the cluster cardinality, ``in_trees[v]`` the bitmask of
    input trees whose cluster set contains v's cluster, ``proj[v][i]`` the
    projection of v into tree i, ``parent[v]`` the candidate parent.
    ``corr[i]`` maps vertices of input i back to candidates (-1 unset).
    """

    def __init__(self, trees):
        index = ensure_common_leaf_set(trees)
        k = len(trees)
        n = len(index)
        self.trees = trees
        self.index = index
        self.k = k
        self.n = n
        self.full_mask = (1 << k) - 1
        self.root_id = n
        self.tree_parent = [t._parent for t in trees]
        self.tree_card = [leaf_counts(t) for t in trees]
        self.tree_root = [t.root for t in trees]
        leaf_vertex = []
        for t in trees:
            by_id = [-1] * n
            for v in t.leaves():
                by_id[t.leaf_id(v)] = v
            leaf_vertex.append(by_id)
        self.leaf_vertex = leaf_vertex

        # candidates: n leaves, then the shared root
        self.card = [1] * n + [n]
        self.in_trees = [self.full_mask] * (n + 1)
        self.proj = [[leaf_vertex[i][l] for i in range(k)] for l in range(n)]
        self.proj.append(list(self.tree_root))
        self.parent = [-1] * (n + 1)
        self.corr = [[-1] * t.n_vertices for t in trees]
        for i in range(k):
            row = self.corr[i]
            for l in range(n):
                row[leaf_vertex[i][l]] = l
            row[self.tree_root[i]] = self.root_id

        self.queue = deque(range(n))
        self.seen = n  # every vertex ever enqueued; the root never is
        self.enqueued_total = n
        self.select_iterations = 0
        self.existing_parent_hits = 0
        self.debug_masks = None

    def new_candidate(self, choice):
        """Create the candidate for a freshly discovered parent cluster."""
        u = len(self.card)
        self.card.append(choice.card)
        self.in_trees.append(choice.mask)
        self.proj.append(None)
        self.parent.append(-1)
        for i in _mask_bits(choice.mask):
            self.corr[i][choice.images[i]] = u
        self.queue.append(u)
        self.seen += 1
        self.enqueued_total += 1
        return u


def _mask_bits(mask):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def select_parent(state, v):
    """One k-way minimum: the parent candidate of v per input tree is the
    parent of v's image where the tree contains v's cluster, and v's
    projection otherwise; the winner is the smallest cluster cardinality,
    ties collecting into the membership mask."""
    k = state.k
    images = [0] * k
    in_v = state.in_trees[v]
    proj_v = state.proj[v]
    best_card = -1
    best_tree = -1
    best_vertex = -1
    mask = 0
    for i in range(k):
        if (in_v >> i) & 1:
            u_i = state.tree_parent[i][proj_v[i]]
        else:
            u_i = proj_v[i]
        images[i] = u_i
        c = state.tree_card[i][u_i]
        if best_tree < 0 or c < best_card:
            best_card = c
            best_tree = i
            best_vertex = u_i
            mask = 1 << i
        elif c == best_card:
            mask |= 1 << i
    state.select_iterations += k
    return ParentChoice(best_tree, best_vertex, best_card, mask, images)


def update_p(state, u, v, choice):
    """Fill the projections of the new candidate u from its first-processed
    child v: u's own image where the tree contains u's cluster, else the
    parent of v's image where it contains v's cluster, else v's projection.
    The overlapping cases agree, so evaluation order does not matter."""
    k = state.k
    in_u = state.in_trees[u]
    in_v = state.in_trees[v]
    proj_v = state.proj[v]
    proj_u = [0] * k
    for i in range(k):
        if (in_u >> i) & 1:
            proj_u[i] = choice.images[i]
        elif (in_v >> i) & 1:
            proj_u[i] = state.tree_parent[i][proj_v[i]]
        else:
            proj_u[i] = proj_v[i]
    state.proj[u] = proj_u


_CORRUPT = -2


def _resolve_candidate(state, choice):
    """Identify the selected parent among existing candidates via the
    correspondence entries of all minimum-attaining trees: -1 if entirely
    new, the candidate id if consistently known, _CORRUPT on disagreement
    or partial registration (impossible when a refinement exists)."""
    found = -1
    any_unset = False
    for i in _mask_bits(choice.mask):
        w = state.corr[i][choice.images[i]]
        if w < 0:
            any_unset = True
        elif found < 0:
            found = w
        elif found != w:
            return _CORRUPT
    if found >= 0 and any_unset:
        return _CORRUPT
    return found


def _count_incomparable(state, choice):
    masks = state.debug_masks
    ms = [masks[i][choice.images[i]] for i in range(state.k)]
    bad = 0
    for i in range(state.k):
        for j in range(i + 1, state.k):
            inter = ms[i] & ms[j]
            if inter != ms[i] and inter != ms[j]:
                bad += 1
    return bad


def _materialize(parent_ids, n_candidates, index):
    n = len(index)
    children = [[] for _ in range(n_candidates)]
    labels = [index.label_of(l) for l in range(n)]
    labels.extend([None] * (n_candidates - n))
    for v in range(n_candidates):
        pv = parent_ids[v]
        if pv >= 0:
            children[pv].append(v)
    return Tree(children, labels, index, validate=False)


def _stats_from_state(state, engine):
    return RefineStats(
        engine=engine,
        enqueued_total=state.enqueued_total,
        distinct_enqueued=state.seen,
        select_iterations=state.select_iterations,
        created_inner=len(state.card) - state.n - 1,
        existing_parent_hits=state.existing_parent_hits,
        comparability_violations=getattr(state, "comparability_violations", 0),
    )


def _refine_pure(trees, debug=False):
    state = RefinementState(trees)
    n = state.n
    if debug:
        state.debug_masks = [cluster_masks(t) for t in trees]
        state.comparability_violations = 0

    while state.queue:
        v = state.queue.popleft()
        choice = select_parent(state, v)
        if debug:
            state.comparability_violations += _count_incomparable(state, choice)
        if state.card[v] >= choice.card:
            return RefineOutcome(
                reason=Incompatibility.PARENT_NOT_STRICTLY_SMALLER,
                stats=_stats_from_state(state, "py"),
            )
        u = _resolve_candidate(state, choice)
        if u == _CORRUPT:
            return RefineOutcome(
                reason=Incompatibility.CORRUPT_CORRESPONDENCE,
                stats=_stats_from_state(state, "py"),
            )
        if u >= 0:
            state.existing_parent_hits += 1
        else:
            u = state.new_candidate(choice)
            if state.seen > 2 * n - 2:
                return RefineOutcome(
                    reason=Incompatibility.TOO_MANY_VERTICES,
                    stats=_stats_from_state(state, "py"),
                )
            update_p(state, u, v, choice)
        state.parent[v] = u

    stats = _stats_from_state(state, "py")
    tree = _materialize(state.parent, len(state.card), state.index)
    if not is_phylogenetic(tree):
        return RefineOutcome(reason=Incompatibility.NOT_PHYLOGENETIC, stats=stats)
    n_cand = len(state.card)
    corrs = []
    for i in range(state.k):
        in_i = 1 << i
        proj = state.proj
        b_to_a = [
            proj[v][i] if state.in_trees[v] & in_i else -1 for v in range(n_cand)
        ]
        corrs.append(Correspondence.from_arrays(state.corr[i], b_to_a))
    for i, t in enumerate(trees):
        if not check_display(tree, t, corrs[i]):
            return RefineOutcome(
                reason=Incompatibility.DISPLAY_CHECK_FAILED, stats=stats
            )
    return RefineOutcome(tree=tree, stats=stats, corr_thunk=lambda: corrs)


_STATUS_REASONS = {
    1: Incompatibility.PARENT_NOT_STRICTLY_SMALLER,
    2: Incompatibility.TOO_MANY_VERTICES,
    3: Incompatibility.NOT_PHYLOGENETIC,
    4: Incompatibility.DISPLAY_CHECK_FAILED,
    5: Incompatibility.CORRUPT_CORRESPONDENCE,
}


def _refine_compiled(trees):
    index = trees[0].index
    k = len(trees)
    n = len(index)
    words = (k + 63) // 64

    offsets = np.zeros(k + 1, dtype=np.int64)
    parents = []
    postorders = []
    leaf_vertex = np.empty((k, n), dtype=np.int32)
    roots = np.empty(k, dtype=np.int32)
    for i, t in enumerate(trees):
        par, post, by_id = t.kernel_arrays()
        offsets[i + 1] = offsets[i] + par.shape[0]
        parents.append(par)
        postorders.append(post)
        leaf_vertex[i, :] = by_id
        roots[i] = t.root
    parent_flat = np.concatenate(parents)
    post_flat = np.concatenate(postorders)
    total = int(offsets[k])

    cap = 2 * n
    card = np.zeros(cap, dtype=np.int64)
    jwords = np.zeros((cap, words), dtype=np.uint64)
    proj = np.full((cap, k), -1, dtype=np.int32)
    cand_parent = np.full(cap, -1, dtype=np.int32)
    corr = np.full(total, -1, dtype=np.int32)
    counters = np.zeros(8, dtype=np.int64)

    status = _speedups.refine(
        n, k, offsets, parent_flat, post_flat, leaf_vertex, roots,
        card, jwords, proj, cand_parent, corr, counters,
    )
    n_cand = int(counters[3])
    stats = RefineStats(
        engine="c",
        enqueued_total=int(counters[0]),
        distinct_enqueued=int(counters[1]),
        select_iterations=int(counters[2]),
        created_inner=n_cand - n - 1,
        existing_parent_hits=int(counters[4]),
    )
    if status != 0:
        return RefineOutcome(reason=_STATUS_REASONS[status], stats=stats)

    tree = _materialize(cand_parent[:n_cand].tolist(), n_cand, index)

    def corr_thunk():
        corrs = []
        for i in range(k):
            a_to_b = corr[offsets[i] : offsets[i + 1]].tolist()
            member = (jwords[:n_cand, i >> 6] >> np.uint64(i & 63)) & np.uint64(1)
            b_to_a = np.where(member.astype(bool), proj[:n_cand, i], -1).tolist()
            corrs.append(Correspondence.from_arrays(a_to_b, b_to_a))
        return corrs

    return RefineOutcome(tree=tree, stats=stats, corr_thunk=corr_thunk)


def _trivial_outcome(trees):
    """k == 1 or a single-leaf instance: the input is its own refinement."""
    src = trees[0]
    tree = Tree(src._children, src._labels, src.index, validate=False)

    def corr_thunk():
        corrs = []
        for t in trees:
            c = Correspondence(t.n_vertices, tree.n_vertices)
            for v in range(t.n_vertices):
                c.link(v, v)
            corrs.append(c)
        return corrs

    return RefineOutcome(
        tree=tree, stats=RefineStats(engine="trivial"), corr_thunk=corr_thunk
    )


def binary_shortcut(trees):
    """Optional fast path: when some input already has 2n-1 vertices it is
    binary, hence maximal, and the only possible refinement.  Returns None
    when no input is binary, otherwise the same outcome classification as
    :func:`lincr_refine` (correspondence bookkeeping and the per-input
    display checks still run)."""
    index = ensure_common_leaf_set(trees)
    n = len(index)
    candidate = None
    for t in trees:
        if t.n_vertices == 2 * n - 1:
            candidate = t
            break
    if candidate is None:
        return None
    stats = RefineStats(engine="binary-shortcut")
    corrs = []
    for t in trees:
        c = match_by_clusters(candidate, t)
        if not check_display(candidate, t, c):
            return RefineOutcome(
                reason=Incompatibility.DISPLAY_CHECK_FAILED, stats=stats
            )
        corrs.append(c)
    return RefineOutcome(tree=candidate, stats=stats, corr_thunk=lambda: corrs)


def lincr_refine(trees, engine="auto", debug=False, use_binary_shortcut=False):
    """Minimal common refinement of phylogenetic trees on one leaf set.

    Returns a :class:`RefineOutcome`: refined tree plus correspondences on
    success, a typed :class:`Incompatibility` otherwise.  A leaf-set
    mismatch between the inputs raises :class:`~treerefinery.tree.LeafSetError`
    instead (that is an input error, not an incompatibility).

    ``engine`` selects the execution path: "auto" prefers the compiled
    kernel when available, "py" forces the pure-Python reference, "c"
    requires the kernel.  ``debug`` (pure engine only) counts cluster
    comparability violations among the candidates examined per step.
    ``use_binary_shortcut`` tries :func:`binary_shortcut` first.
    """
    index = ensure_common_leaf_set(trees)
    if engine not in ("auto", "py", "c"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "c" and not HAVE_SPEEDUPS:
        raise RuntimeError("compiled kernel requested but not available")
    if len(trees) == 1 or len(index) == 1:
        return _trivial_outcome(trees)
    if use_binary_shortcut:
        shortcut = binary_shortcut(trees)
        if shortcut is not None:
            return shortcut
    if debug or engine == "py" or (engine == "auto" and not HAVE_SPEEDUPS):
        return _refine_pure(trees, debug=debug)
    return _refine_compiled(trees)
