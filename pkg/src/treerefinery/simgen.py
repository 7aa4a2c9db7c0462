"""Deterministic, seedable generation of benchmark instances.

An instance is a seed tree plus ``k`` inputs derived from it by independent
random contraction of inner edges, so a common refinement exists by
construction (the seed tree need not be the minimal one).  Everything is a
pure function of the parameters: the generator is splitmix64, a fixed
portable 64-bit sequence, and each instance draws from its own stream
derived from the master seed, so results are identical across runs, thread
schedules, and host platforms.

Stream discipline, for reproducing instances elsewhere:

* ``random_tree`` draws one ``randrange(#vertices)`` per growth step;
* ``contract_random`` draws one ``random()`` per non-root inner vertex, in
  preorder;
* ``make_instance`` seeds one stream per instance and consumes it with the
  seed tree first, then the k contractions in order.
"""

import struct
from dataclasses import dataclass

from .tree import LeafIndex, Tree, contract_vertices

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _finalize(z):
    """splitmix64 output scrambler."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """splitmix64: state advances by the 64-bit golden ratio, outputs are
    the scrambled state.  Small, fast, and trivially portable."""

    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = seed & _MASK64

    def next_u64(self):
        self.state = (self.state + _GOLDEN) & _MASK64
        return _finalize(self.state)

    def randrange(self, bound):
        """Uniform-ish integer in [0, bound); plain modulo, documented as
        part of the portable stream definition."""
        return self.next_u64() % bound

    def random(self):
        """Float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53


def derive_stream(master_seed, *words):
    """Derive an independent stream seed by absorbing integer words."""
    h = master_seed & _MASK64
    for w in words:
        h = _finalize((h ^ (w & _MASK64)) + _GOLDEN & _MASK64)
    return h


def _float_bits(p):
    return struct.unpack("<Q", struct.pack("<d", float(p)))[0]


@dataclass(frozen=True)
class InstanceParams:
    """One cell of the simulation grid plus the replicate number."""

    n: int
    k: int
    p: float
    seed: int
    replicate: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.replicate < 0:
            raise ValueError("replicate must be >= 0")

    @property
    def stream_seed(self):
        return derive_stream(
            self.seed, self.n, self.k, _float_bits(self.p), self.replicate
        )


def random_tree(n, rng, index=None):
    """Grow a random phylogenetic tree with exactly ``n`` leaves.

    Starting from a single vertex, each step picks a uniformly random
    existing vertex v (the root included) and attaches two new children if
    v is currently a leaf, else one; every step adds exactly one leaf.
    Leaves are labeled "x1".."xn" in vertex-creation order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = SplitMix64(rng) if isinstance(rng, int) else rng
    children = [[]]
    leaves = 1
    while leaves < n:
        v = rng.randrange(len(children))
        if not children[v]:
            children.append([])
            children.append([])
            children[v] = [len(children) - 2, len(children) - 1]
        else:
            children.append([])
            children[v].append(len(children) - 1)
        leaves += 1
    if index is None:
        index = LeafIndex()
    labels = [None] * len(children)
    counter = 0
    for v, cs in enumerate(children):
        if not cs:
            counter += 1
            labels[v] = f"x{counter}"
            index.add(labels[v])
    return Tree(children, labels, index, validate=False)


def contract_random(t, p, rng):
    """Contract each inner edge of ``t`` independently with probability p.

    Edges are considered in preorder of their lower vertex; one uniform
    draw is consumed per considered edge, so the stream position is a
    function of the tree shape alone.  The result stays phylogenetic and
    its cluster set is a subset of the input's.
    """
    drop = [False] * t.n_vertices
    for v in t.preorder():
        if v != t.root and not t.is_leaf(v):
            if rng.random() < p:
                drop[v] = True
    return contract_vertices(t, lambda v: not drop[v])


def make_instance(params):
    """Seed tree plus ``k`` inputs contracted from it, all on one LeafIndex.

    Deterministic in ``params``; a common refinement of the inputs always
    exists (every input's clusters are among the seed tree's).
    """
    rng = SplitMix64(params.stream_seed)
    index = LeafIndex()
    seed_tree = random_tree(params.n, rng, index)
    inputs = [contract_random(seed_tree, params.p, rng) for _ in range(params.k)]
    return seed_tree, inputs


_INDEPENDENT_SALT = 0x494E444550


def random_instance(n, k, seed, replicate=0):
    """``k`` independent random trees on one shared leaf set.

    Unlike :func:`make_instance` there is no common seed tree, so the
    result is usually (but not always) incompatible; useful for
    differential testing of the negative path.
    """
    stream = derive_stream(seed, n, k, _INDEPENDENT_SALT, replicate)
    rng = SplitMix64(stream)
    index = LeafIndex()
    return [random_tree(n, rng, index) for _ in range(k)]


def instance_basename(params):
    p_tag = f"{params.p:g}".replace(".", "_")
    return (
        f"instance-n{params.n}-k{params.k}-p{p_tag}"
        f"-s{params.seed}-r{params.replicate}"
    )


def write_instance(dirpath, params, trees):
    """Write an instance as a Newick file (one tree per line) plus a
    sidecar metadata line; returns both paths."""
    import os

    from .tree import to_newick

    base = os.path.join(str(dirpath), instance_basename(params))
    nwk_path = base + ".nwk"
    meta_path = base + ".meta"
    with open(nwk_path, "w") as fh:
        for t in trees:
            fh.write(to_newick(t) + "\n")
    with open(meta_path, "w") as fh:
        fh.write(
            f"n={params.n} k={params.k} p={params.p} seed={params.seed} "
            f"replicate={params.replicate} stream=0x{params.stream_seed:016x}\n"
        )
    return nwk_path, meta_path
