"""The classical BUILD recursion over rooted triples, as a baseline.

Inputs are broken down to small sets of representative triples (one chain
of triples per inner vertex, anchored by an outside witness leaf); BUILD
then recursively splits the leaf set into the connected components of the
triple graph.  The result, when the triples are consistent, is the unique
least resolved tree displaying them, which for trees on a common leaf set
is exactly their common refinement.  A final display check per input makes
the baseline sound even against a defective representative set.
"""

from collections import namedtuple

from .lincr import Incompatibility, RefineOutcome, RefineStats
from .tree import Tree, check_display, clusters, ensure_common_leaf_set, match_by_clusters

Triple = namedtuple("Triple", "x y z")
"""Rooted triple xy|z over dense leaf ids, normalized to x < y."""


def make_triple(a, b, z):
    if a == b or a == z or b == z:
        raise ValueError("triple leaves must be pairwise distinct")
    return Triple(a, b, z) if a < b else Triple(b, a, z)


def representative_triples(t):
    """Small identifying triple set of a phylogenetic tree, sorted.

    For each non-root inner vertex with children c1..cm: take the smallest
    leaf id inside each child as its representative, the smallest leaf id
    of a sibling subtree as the outside witness z, and emit the chain
    x_j x_{j+1} | z.  At most n-2 triples per tree; empty for stars and
    fewer than three leaves.
    """
    min_leaf = [0] * t.n_vertices
    for v in t.postorder():
        if t.is_leaf(v):
            min_leaf[v] = t.leaf_id(v)
        else:
            min_leaf[v] = min(min_leaf[c] for c in t.children(v))
    # two smallest child representatives per vertex, for the sibling witness
    top2 = {}
    for v in range(t.n_vertices):
        cs = t.children(v)
        if len(cs) >= 2:
            best = sorted(min_leaf[c] for c in cs)[:2]
            top2[v] = (best[0], best[1])
    out = set()
    for v in range(t.n_vertices):
        if v == t.root or t.is_leaf(v):
            continue
        first, second = top2[t.parent(v)]
        z = second if min_leaf[v] == first else first
        reps = [min_leaf[c] for c in t.children(v)]
        for j in range(len(reps) - 1):
            out.add(make_triple(reps[j], reps[j + 1], z))
    return sorted(out)


def all_triples(t):
    """Every triple displayed by ``t``, by enumeration over clusters.

    Cubic; intended for tests and tiny trees only.
    """
    n = t.n_leaves
    full = (1 << n) - 1
    out = set()
    for mask in clusters(t):
        if mask == full or mask.bit_count() < 2:
            continue
        inside = _bits(mask)
        outside = _bits(full & ~mask)
        for a_pos in range(len(inside)):
            for b_pos in range(a_pos + 1, len(inside)):
                for z in outside:
                    out.add(make_triple(inside[a_pos], inside[b_pos], z))
    return sorted(out)


def _bits(mask):
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def build(triples, index):
    """Aho's recursion: components of the triple graph become children.

    Returns the unique least resolved tree displaying all triples, or None
    when the set is inconsistent (a result value, not an error).  Iterative
    so deep trees cannot hit the recursion limit.
    """
    n = len(index)
    if n == 0:
        raise ValueError("empty leaf set")
    children = []
    labels = []

    def new_vertex(label, parent):
        vid = len(children)
        children.append([])
        labels.append(label)
        if parent >= 0:
            children[parent].append(vid)
        return vid

    stack = [(list(range(n)), list(triples), -1)]
    while stack:
        leaves, triples_here, parent = stack.pop()
        if len(leaves) == 1:
            new_vertex(index.label_of(leaves[0]), parent)
            continue
        uf = {leaf: leaf for leaf in leaves}

        def find(a):
            root = a
            while uf[root] != root:
                root = uf[root]
            while uf[a] != root:  # path compression
                uf[a], a = root, uf[a]
            return root

        for tri in triples_here:
            ra, rb = find(tri.x), find(tri.y)
            if ra != rb:
                uf[ra] = rb
        members = {}
        for leaf in leaves:  # grouped in first-appearance order
            root = find(leaf)
            if root not in members:
                members[root] = []
            members[root].append(leaf)
        if len(members) == 1:
            return None
        buckets = {root: [] for root in members}
        for tri in triples_here:
            rx = find(tri.x)
            if rx == find(tri.z):
                buckets[rx].append(tri)  # still unresolved inside this part
        vid = new_vertex(None, parent)
        parts = list(members)
        for root in reversed(parts):
            stack.append((members[root], buckets[root], vid))
    return Tree(children, labels, index, validate=False)


def build_refine(trees):
    """Common refinement via BUILD on the union of representative triples,
    verified by a display check against every input."""
    index = ensure_common_leaf_set(trees)
    stats = RefineStats(engine="build")
    merged = set()
    for t in trees:
        merged.update(representative_triples(t))
    tree = build(sorted(merged), index)
    if tree is None:
        return RefineOutcome(reason=Incompatibility.TRIPLES_INCONSISTENT, stats=stats)
    corrs = []
    for t in trees:
        corr = match_by_clusters(tree, t)
        if not check_display(tree, t, corr):
            return RefineOutcome(
                reason=Incompatibility.DISPLAY_CHECK_FAILED, stats=stats
            )
        corrs.append(corr)
    return RefineOutcome(tree=tree, stats=stats, corr_thunk=lambda: corrs)


def triples_to_text(triples, index):
    """Debug format: one ``x y | z`` line per triple, using leaf labels."""
    lines = []
    for tri in triples:
        lines.append(
            f"{index.label_of(tri.x)} {index.label_of(tri.y)} | {index.label_of(tri.z)}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_triples_text(text, index):
    """Inverse of :func:`triples_to_text`."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        try:
            pair, z_part = line.split("|")
            a, b = pair.split()
            out.append(
                make_triple(index.id_of(a), index.id_of(b), index.id_of(z_part.strip()))
            )
        except (ValueError, KeyError) as exc:
            raise ValueError(f"bad triple on line {lineno}: {raw!r}") from exc
    return out
