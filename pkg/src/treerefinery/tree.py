"""Rooted phylogenetic trees with dense integer vertex ids.

A :class:`Tree` stores parallel per-vertex lists (children, parent, label)
and is immutable after construction, so instances can be shared freely
across threads.  Leaf labels live in a :class:`LeafIndex`, a bijection
between label strings and the dense ids ``0..n-1``; every tree of one
problem instance must be built against the same index so that leaf-set
bitmasks (plain Python ints) are comparable across trees.

Traversals are iterative throughout: caterpillar-shaped inputs must not be
limited by the interpreter recursion depth.
"""

from collections import deque

import numpy as np


class TreeError(ValueError):
    """Structurally invalid tree or illegal tree operation."""


class LeafSetError(TreeError):
    """Trees of one instance do not share a common leaf set."""


class NewickError(ValueError):
    """Malformed Newick input.  ``pos`` is a 0-based offset into the text."""

    def __init__(self, message, pos=None):
        self.pos = pos
        super().__init__(message)


class LeafIndex:
    """Bijection between leaf labels and dense integer ids 0..n-1.

    One index is shared by all trees of an instance; ids double as bit
    positions in cluster bitmasks.
    """

    __slots__ = ("_ids", "_labels", "_frozen")

    def __init__(self, labels=()):
        self._ids = {}
        self._labels = []
        self._frozen = False
        for label in labels:
            self.add(label)

    def add(self, label):
        """Return the id of ``label``, registering it if new."""
        got = self._ids.get(label)
        if got is not None:
            return got
        if self._frozen:
            raise KeyError(f"unknown leaf label {label!r} (index is frozen)")
        new_id = len(self._labels)
        self._ids[label] = new_id
        self._labels.append(label)
        return new_id

    def id_of(self, label):
        return self._ids[label]

    def label_of(self, leaf_id):
        return self._labels[leaf_id]

    def freeze(self):
        """Reject unknown labels from now on; parsing then only checks."""
        self._frozen = True
        return self

    @property
    def labels(self):
        return tuple(self._labels)

    def __len__(self):
        return len(self._labels)

    def __contains__(self, label):
        return label in self._ids

    def __iter__(self):
        return iter(self._labels)

    def __repr__(self):
        return f"LeafIndex({list(self._labels)!r})"


class Correspondence:
    """Pairing between vertex ids of two trees; -1 marks an unset entry.

    Side A and side B are fixed by the caller (for display checks: A is the
    tree being displayed, B is the refining tree).  Entries set through
    :meth:`link` are mutually inverse by construction.
    """

    __slots__ = ("a_to_b", "b_to_a")

    def __init__(self, n_a, n_b):
        self.a_to_b = [-1] * n_a
        self.b_to_a = [-1] * n_b

    def link(self, a, b):
        self.a_to_b[a] = b
        self.b_to_a[b] = a

    def image(self, a):
        """B-side vertex for A-side vertex ``a`` (-1 if unset)."""
        return self.a_to_b[a]

    def preimage(self, b):
        """A-side vertex for B-side vertex ``b`` (-1 if unset)."""
        return self.b_to_a[b]

    def is_consistent(self):
        ok_a = all(b < 0 or self.b_to_a[b] == a for a, b in enumerate(self.a_to_b))
        ok_b = all(a < 0 or self.a_to_b[a] == b for b, a in enumerate(self.b_to_a))
        return ok_a and ok_b

    @classmethod
    def from_arrays(cls, a_to_b, b_to_a):
        corr = cls.__new__(cls)
        corr.a_to_b = list(a_to_b)
        corr.b_to_a = list(b_to_a)
        return corr

    def __repr__(self):
        return f"Correspondence(|A|={len(self.a_to_b)}, |B|={len(self.b_to_a)})"


class Tree:
    """A rooted tree over a LeafIndex, stored as parallel per-vertex lists.

    ``children[v]`` is the ordered tuple of child ids, ``label(v)`` is the
    leaf label or None, and exactly the labeled vertices are leaves.  The
    structure is immutable after construction.
    """

    def __init__(self, children, labels, index, validate=True):
        n = len(children)
        if len(labels) != n:
            raise TreeError("children and labels must have equal length")
        self._children = [tuple(cs) for cs in children]
        self._labels = list(labels)
        self.index = index
        parent = [-1] * n
        for v, cs in enumerate(self._children):
            for c in cs:
                if not 0 <= c < n:
                    raise TreeError(f"child id {c} out of range")
                if parent[c] != -1 or c == v:
                    raise TreeError(f"vertex {c} has more than one parent")
                parent[c] = v
        self._parent = parent
        roots = [v for v in range(n) if parent[v] == -1]
        if len(roots) != 1:
            raise TreeError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.n_leaves = sum(1 for lab in self._labels if lab is not None)
        self._arrays = None
        if validate:
            self._validate()

    # -- structure access ------------------------------------------------

    @property
    def n_vertices(self):
        return len(self._children)

    def parent(self, v):
        """Parent id of v, or -1 for the root."""
        return self._parent[v]

    def children(self, v):
        return self._children[v]

    def label(self, v):
        return self._labels[v]

    def is_leaf(self, v):
        return self._labels[v] is not None

    def leaves(self):
        """Leaf vertex ids, in vertex-id order."""
        return [v for v, lab in enumerate(self._labels) if lab is not None]

    def leaf_id(self, v):
        """Dense leaf id (bit position) of leaf vertex v."""
        return self.index.id_of(self._labels[v])

    # -- traversals --------------------------------------------------------

    def preorder(self):
        """Vertex ids, each parent before its children; iterative."""
        out = []
        stack = [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            for c in reversed(self._children[v]):
                stack.append(c)
        return out

    def postorder(self):
        """Vertex ids, each child before its parent; iterative."""
        out = []
        stack = [(self.root, False)]
        while stack:
            v, expanded = stack.pop()
            if expanded:
                out.append(v)
                continue
            stack.append((v, True))
            for c in reversed(self._children[v]):
                stack.append((c, False))
        return out

    # -- compiled-kernel mirrors -------------------------------------------

    def kernel_arrays(self):
        """Flat numpy mirrors for the compiled kernel; computed once.

        Returns (parent int32, postorder int32, leaf_id -> vertex int32).
        Requires that this tree carries every label of its index.
        """
        if self._arrays is None:
            if self.n_leaves != len(self.index):
                raise LeafSetError(
                    "tree does not carry every label of its leaf index"
                )
            par = np.asarray(self._parent, dtype=np.int32)
            post = np.asarray(self.postorder(), dtype=np.int32)
            leafvert = np.empty(self.n_leaves, dtype=np.int32)
            for v, lab in enumerate(self._labels):
                if lab is not None:
                    leafvert[self.index.id_of(lab)] = v
            self._arrays = (par, post, leafvert)
        return self._arrays

    # -- misc ----------------------------------------------------------------

    def _validate(self):
        seen = 0
        stack = [self.root]
        while stack:
            v = stack.pop()
            seen += 1
            stack.extend(self._children[v])
        if seen != self.n_vertices:
            raise TreeError("tree is not connected")
        labels = set()
        for v, lab in enumerate(self._labels):
            if (lab is not None) != (len(self._children[v]) == 0):
                raise TreeError(f"vertex {v}: labels and leaves must coincide")
            if lab is not None:
                if lab in labels:
                    raise TreeError(f"duplicate leaf label {lab!r}")
                labels.add(lab)
                if lab not in self.index:
                    raise TreeError(f"leaf label {lab!r} not in the leaf index")

    def __repr__(self):
        return f"Tree({to_newick(self)!r})"


# -- Newick I/O ---------------------------------------------------------------

_SEPARATORS = "(),:;"


def parse_newick(text, index=None, strict=False):
    """Parse a Newick expression into a :class:`Tree`.

    Leaf labels are mandatory; inner labels and branch lengths (``:x.y``)
    are accepted and discarded; the trailing ``;`` is optional.  Child
    order is preserved.  Labels are registered in ``index`` (created on
    demand) or checked against it when the index is frozen.  With
    ``strict=True``, inner vertices with fewer than two children are
    rejected.
    """
    if index is None:
        index = LeafIndex()
    children = []
    labels = []
    seen = set()
    stack = []  # open inner vertices
    i = 0
    length = len(text)

    def skip_ws():
        nonlocal i
        while i < length and text[i].isspace():
            i += 1

    def new_vertex(label):
        children.append([])
        labels.append(label)
        return len(children) - 1

    skip_ws()
    if i >= length:
        raise NewickError("empty input", 0)

    expect_element = True
    while True:
        skip_ws()
        if expect_element:
            if i < length and text[i] == "(":
                vid = new_vertex(None)
                if stack:
                    children[stack[-1]].append(vid)
                stack.append(vid)
                i += 1
                continue
            start = i
            while i < length and text[i] not in _SEPARATORS and not text[i].isspace():
                i += 1
            label = text[start:i]
            if not label:
                raise NewickError("empty label", start)
            if label in seen:
                raise NewickError(f"duplicate leaf label {label!r}", start)
            seen.add(label)
            try:
                index.add(label)
            except KeyError:
                raise NewickError(f"leaf label {label!r} not in the leaf index", start)
            vid = new_vertex(label)
            if stack:
                children[stack[-1]].append(vid)
            expect_element = False
            continue

        # suffix of a completed element: optional branch length, then a separator
        if i < length and text[i] == ":":
            i += 1
            start = i
            while i < length and (text[i] in "+-.eE" or text[i].isdigit()):
                i += 1
            try:
                float(text[start:i])
            except ValueError:
                raise NewickError("malformed branch length", start)
            skip_ws()
        if i >= length or text[i] == ";":
            if stack:
                raise NewickError("unbalanced parentheses: missing ')'", min(i, length - 1))
            if i < length:
                i += 1
                skip_ws()
                if i < length:
                    raise NewickError("trailing characters after tree", i)
            break
        ch = text[i]
        if ch == ",":
            if not stack:
                raise NewickError("comma outside parentheses", i)
            i += 1
            expect_element = True
            continue
        if ch == ")":
            if not stack:
                raise NewickError("unbalanced parentheses: unexpected ')'", i)
            stack.pop()
            i += 1
            # optional inner label, discarded
            while i < length and text[i] not in _SEPARATORS and not text[i].isspace():
                i += 1
            expect_element = False
            continue
        raise NewickError(f"unexpected character {ch!r}", i)

    tree = Tree(children, labels, index)
    if strict and not is_phylogenetic(tree):
        raise NewickError("inner vertex with fewer than two children")
    return tree


def to_newick(t):
    """Canonical Newick form: children ordered by their smallest contained
    leaf label, no branch lengths, terminal ';'.

    Two trees over a common label set are isomorphic iff their canonical
    forms are equal.
    """
    minlab = [None] * t.n_vertices
    for v in t.postorder():
        if t.is_leaf(v):
            minlab[v] = t.label(v)
        else:
            minlab[v] = min(minlab[c] for c in t.children(v))
    pieces = []
    stack = [t.root]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            pieces.append(item)
            continue
        if t.is_leaf(item):
            pieces.append(t.label(item))
            continue
        pieces.append("(")
        ordered = sorted(t.children(item), key=lambda c: minlab[c])
        stack.append(")")
        for c in reversed(ordered[1:]):
            stack.append(c)
            stack.append(",")
        stack.append(ordered[0])
    pieces.append(";")
    return "".join(pieces)


def isomorphic(t1, t2):
    """Isomorphism of trees on a common labeled leaf set, by canonical form."""
    return to_newick(t1) == to_newick(t2)


# -- per-vertex quantities ----------------------------------------------------


def leaf_counts(t):
    """Number of leaves below each vertex (1 for leaves), as a list."""
    counts = [0] * t.n_vertices
    for v in t.postorder():
        if t.is_leaf(v):
            counts[v] = 1
        else:
            counts[v] = sum(counts[c] for c in t.children(v))
    return counts


def cluster_masks(t):
    """Leaf-set bitmask of the subtree below each vertex, as a list.

    Bit positions are the dense leaf ids of ``t.index``.
    """
    masks = [0] * t.n_vertices
    for v in t.postorder():
        if t.is_leaf(v):
            masks[v] = 1 << t.leaf_id(v)
        else:
            m = 0
            for c in t.children(v):
                m |= masks[c]
            masks[v] = m
    return masks


def clusters(t):
    """The set of clusters of ``t`` as deduplicated leaf-set bitmasks."""
    return set(cluster_masks(t))


def is_phylogenetic(t):
    """True iff no inner vertex has exactly one child."""
    for cs in t._children:
        if len(cs) == 1:
            return False
    return True


# -- contraction and the display check ---------------------------------------


def _contract_with_map(t, keep_flags):
    """Contract all vertices with ``keep_flags[v]`` false.

    Children of a removed vertex are reattached to its nearest kept
    ancestor, in place of the removed vertex, preserving sibling order.
    Returns ``(tree, old_to_new)`` with -1 for removed vertices.
    """
    old_to_new = [-1] * t.n_vertices
    new_children = []
    new_labels = []
    stack = [(t.root, -1)]
    while stack:
        v, host = stack.pop()
        if keep_flags[v]:
            nid = len(new_children)
            new_children.append([])
            new_labels.append(t.label(v))
            old_to_new[v] = nid
            if host >= 0:
                new_children[host].append(nid)
            host = nid
        for c in reversed(t.children(v)):
            stack.append((c, host))
    tree = Tree(new_children, new_labels, t.index, validate=False)
    return tree, old_to_new


def contract_vertices(t, keep):
    """Copy of ``t`` with every inner vertex ``v`` failing ``keep(v)`` removed.

    The root and all leaves must be kept.
    """
    flags = [keep(v) for v in range(t.n_vertices)]
    if not flags[t.root]:
        raise TreeError("cannot contract the root")
    for v in range(t.n_vertices):
        if t.is_leaf(v) and not flags[v]:
            raise TreeError("cannot contract a leaf")
    tree, _ = _contract_with_map(t, flags)
    return tree


def check_display(t, target, corr):
    """Does ``t`` display ``target`` (same leaf set) along ``corr``?

    ``corr`` maps target vertices (side A) to ``t`` vertices (side B).
    All non-corresponding vertices of ``t`` are contracted away in a copy,
    and the children sets of every target vertex are compared through the
    correspondence.  Any unset required entry, or any mismatch, yields
    False.
    """
    img = corr.a_to_b
    if len(img) != target.n_vertices or len(corr.b_to_a) != t.n_vertices:
        return False
    keep = [False] * t.n_vertices
    for x in range(target.n_vertices):
        w = img[x]
        if w < 0 or keep[w]:
            return False
        keep[w] = True
    if img[target.root] != t.root:
        return False
    for v in range(t.n_vertices):
        if t.is_leaf(v) and not keep[v]:
            return False
    for x in target.leaves():
        if t.label(img[x]) != target.label(x):
            return False
    contracted, old_to_new = _contract_with_map(t, keep)
    for x in range(target.n_vertices):
        w = old_to_new[img[x]]
        want = sorted(old_to_new[img[c]] for c in target.children(x))
        if want != sorted(contracted.children(w)):
            return False
    return True


def match_by_clusters(t, target):
    """Correspondence (target side A, ``t`` side B) pairing vertices with
    equal clusters; entries stay unset where ``t`` has no matching cluster."""
    by_mask = {}
    for v, m in enumerate(cluster_masks(t)):
        by_mask[m] = v
    corr = Correspondence(target.n_vertices, t.n_vertices)
    for x, m in enumerate(cluster_masks(target)):
        w = by_mask.get(m)
        if w is not None:
            corr.link(x, w)
    return corr


def ensure_common_leaf_set(trees):
    """Raise LeafSetError unless all trees share one LeafIndex and carry
    every one of its labels.  Returns the common index."""
    if not trees:
        raise LeafSetError("no trees given")
    index = trees[0].index
    for t in trees:
        if t.index is not index:
            raise LeafSetError(
                "trees were built against different leaf indexes; "
                "parse all trees of one instance with a shared LeafIndex"
            )
        if t.n_leaves != len(index):
            raise LeafSetError(
                f"tree carries {t.n_leaves} of {len(index)} known labels; "
                "inputs do not share a common leaf set"
            )
    return index
