"""Brute-force reference for the common refinement.

Builds the union of all input cluster sets explicitly, tests the hierarchy
property pairwise, and reconstructs the tree as the Hasse diagram of set
inclusion.  Quadratic in the number of distinct clusters and proud of it:
this module is the ground truth for differential testing, not a
performance path.
"""

from dataclasses import dataclass, field

from .lincr import Incompatibility, RefineOutcome, RefineStats
from .tree import LeafIndex, Tree, clusters, ensure_common_leaf_set, match_by_clusters


@dataclass
class ClusterUniverse:
    """Deduplicated clusters of a tree family, largest first.

    ``masks`` is sorted by decreasing cardinality, ties by numeric bit
    pattern; ``multiplicity[m]`` counts the input trees containing m.
    """

    masks: list
    multiplicity: dict
    n: int
    index: LeafIndex = field(repr=False)

    def __len__(self):
        return len(self.masks)


def union_clusters(trees):
    """Union of the cluster sets of all inputs, deduplicated and sorted."""
    index = ensure_common_leaf_set(trees)
    multiplicity = {}
    for t in trees:
        for m in clusters(t):
            multiplicity[m] = multiplicity.get(m, 0) + 1
    masks = sorted(multiplicity, key=lambda m: (-m.bit_count(), m))
    return ClusterUniverse(masks, multiplicity, len(index), index)


def hierarchy_violation(universe):
    """First pair of clusters that overlap without nesting, or None.

    Literal pairwise scan with short-circuit; the witness pair is returned
    in the universe's sort order.
    """
    masks = universe.masks
    m = len(masks)
    for i in range(m):
        a = masks[i]
        for j in range(i + 1, m):
            b = masks[j]
            inter = a & b
            if inter and inter != a and inter != b:
                return (a, b)
    return None


def is_hierarchy(universe):
    """Are all clusters pairwise nested or disjoint?"""
    return hierarchy_violation(universe) is None


def hasse_tree(universe):
    """Tree whose clusters are exactly the universe (requires a hierarchy).

    Scanning in decreasing cardinality, each cluster attaches to the most
    recently seen strict superset, which in a hierarchy is its unique
    minimal one.
    """
    masks = universe.masks
    n = universe.n
    if not masks:
        raise ValueError("empty cluster universe")
    full = (1 << n) - 1
    if masks[0] != full:
        raise ValueError("universe does not contain the full leaf set")
    children = [[] for _ in masks]
    labels = [None] * len(masks)
    singletons = 0
    for idx, m in enumerate(masks):
        if m.bit_count() == 1:
            labels[idx] = universe.index.label_of(m.bit_length() - 1)
            singletons += 1
        if idx == 0:
            continue
        parent = -1
        for j in range(idx - 1, -1, -1):
            if masks[j] & m == m:
                parent = j
                break
        if parent < 0 or masks[parent] == m:
            raise ValueError("universe is not a hierarchy")
        children[parent].append(idx)
    if singletons != n:
        raise ValueError("universe does not contain all singleton clusters")
    return Tree(children, labels, universe.index, validate=False)


def refine_oracle(trees):
    """Common refinement by explicit cluster-set union, or the witnessing
    incompatible pair.  Mirrors the outcome type of the fast path."""
    universe = union_clusters(trees)
    stats = RefineStats(engine="oracle")
    witness = hierarchy_violation(universe)
    if witness is not None:
        return RefineOutcome(
            reason=Incompatibility.CLUSTER_CONFLICT, witness=witness, stats=stats
        )
    tree = hasse_tree(universe)
    return RefineOutcome(
        tree=tree,
        stats=stats,
        corr_thunk=lambda: [match_by_clusters(tree, t) for t in trees],
    )
