"""Exact combinatorial geometry of the homogeneous tree of order q+1.

A vertex is addressed as (h, w): h is the least m with x <= p^m(o) and w is
the word of son indices leading down from p^h(o). Son index 0 of p^{m+1}(o)
is reserved for p^m(o), so a canonical vertex with h > 0 never starts its
word with 0. Levels grow towards the mythical ancestor.
"""
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np

from services.errors import NonCanonicalVertexError, TrapezoidError


@dataclass(frozen=True)
class TreeParams:
    q: int

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise ValueError(f"q must be an integer >= 2, got {self.q}")

    @property
    def b(self) -> float:
        return (math.sqrt(self.q) - 1.0) ** 2 / (self.q + 1.0)

    @property
    def log_q(self) -> float:
        return math.log(self.q)


@dataclass(frozen=True, order=True)
class Vertex:
    h: int
    w: Tuple[int, ...] = ()

    @property
    def level(self) -> int:
        return self.h - len(self.w)

    @property
    def norm(self) -> int:
        """Distance to the origin."""
        return self.h + len(self.w)

    def __str__(self):
        return f"{self.h}:" + ".".join(str(c) for c in self.w)


ORIGIN = Vertex(0, ())


@dataclass(frozen=True)
class FlowWeight:
    """The mass coefficient * q**exponent, kept as an integer exponent."""

    exponent: int
    q: int
    coefficient: int = 1

    def log(self) -> float:
        return math.log(self.coefficient) + self.exponent * math.log(self.q)

    def value(self) -> float:
        return self.coefficient * q_power(self.q, self.exponent)

    def exact(self) -> Fraction:
        return self.coefficient * Fraction(self.q) ** self.exponent

    def __mul__(self, other: "FlowWeight") -> "FlowWeight":
        if self.q != other.q:
            raise ValueError("FlowWeight bases differ")
        return FlowWeight(self.exponent + other.exponent, self.q, self.coefficient * other.coefficient)

    def __truediv__(self, other: "FlowWeight") -> Fraction:
        return self.exact() / other.exact()


class Neighbourhood(NamedTuple):
    predecessor: Vertex
    sons: List[Vertex]
    level: int


@dataclass(frozen=True)
class Trapezoid:
    """{y <= root : h_lo <= d(y, root) < h_hi}; a singleton is (root, 0, 1)."""

    root: Vertex
    h_lo: int
    h_hi: int
    singleton: bool = False

    @property
    def depths(self) -> range:
        return range(self.h_lo, self.h_hi)


def q_power(q: int, e: int) -> float:
    """q**e as a float; underflows to 0.0, overflows raise OverflowError."""
    return float(q) ** e


def make_vertex(h: int, w: Sequence[int], tree: TreeParams) -> Vertex:
    if h < 0:
        raise ValueError(f"h must be nonnegative, got {h}")
    word = tuple(int(c) for c in w)
    for i, c in enumerate(word):
        if not 0 <= c < tree.q:
            raise NonCanonicalVertexError(f"letter {c} at index {i} outside 0..{tree.q - 1}", i)
    if h > 0 and word and word[0] == 0:
        raise NonCanonicalVertexError(
            f"({h}, {list(word)}) is not canonical: index 0 below p^{h}(o) is the ray child", 0
        )
    return Vertex(int(h), word)


def parse_vertex(text: str, tree: TreeParams) -> Vertex:
    """Parse the text form "h:w1.w2...wk" ("h:" for the empty word)."""
    head, sep, tail = text.strip().partition(":")
    if not sep:
        raise ValueError(f"Vertex text must look like 'h:w1.w2', got {text!r}")
    word = [int(c) for c in tail.split(".")] if tail else []
    return make_vertex(int(head), word, tree)


def predecessor(v: Vertex) -> Vertex:
    if v.w:
        return Vertex(v.h, v.w[:-1])
    return Vertex(v.h + 1, ())


def ancestor(v: Vertex, j: int) -> Vertex:
    """p^j(v)."""
    if j <= len(v.w):
        return Vertex(v.h, v.w[: len(v.w) - j])
    return Vertex(v.h + j - len(v.w), ())


def sons(v: Vertex, tree: TreeParams) -> List[Vertex]:
    if not v.w and v.h > 0:
        return [Vertex(v.h - 1, ())] + [Vertex(v.h, (j,)) for j in range(1, tree.q)]
    return [Vertex(v.h, v.w + (j,)) for j in range(tree.q)]


def navigate(v: Vertex, tree: TreeParams) -> Neighbourhood:
    return Neighbourhood(predecessor(v), sons(v, tree), v.level)


def neighbours(v: Vertex, tree: TreeParams) -> List[Vertex]:
    return [predecessor(v)] + sons(v, tree)


def confluent(x: Vertex, y: Vertex) -> Vertex:
    if x.h != y.h:
        return Vertex(max(x.h, y.h), ())
    common = 0
    for a, b in zip(x.w, y.w):
        if a != b:
            break
        common += 1
    return Vertex(x.h, x.w[:common])


def distance(x: Vertex, y: Vertex) -> int:
    return 2 * confluent(x, y).level - x.level - y.level


def is_above(x: Vertex, y: Vertex) -> bool:
    """x >= y, i.e. x is y or one of its ancestors."""
    return x.level - y.level == distance(x, y)


def flow_measure(v: Vertex, tree: TreeParams) -> FlowWeight:
    return FlowWeight(v.level, tree.q)


def sphere_size(m: int, tree: TreeParams) -> int:
    return 1 if m == 0 else (tree.q + 1) * tree.q ** (m - 1)


def iter_sphere(x: Vertex, m: int, tree: TreeParams) -> Iterator[Vertex]:
    """Vertices at distance exactly m from x, by breadth-first search."""
    seen = {x}
    frontier = [x]
    for _ in range(m):
        nxt = []
        for v in frontier:
            for u in neighbours(v, tree):
                if u not in seen:
                    seen.add(u)
                    nxt.append(u)
        frontier = nxt
    return iter(sorted(frontier))


def iter_descendants(v: Vertex, depth: int, tree: TreeParams) -> Iterator[Vertex]:
    level = [v]
    for _ in range(depth):
        level = [s for u in level for s in sons(u, tree)]
    return iter(level)


def make_trapezoid(root: Vertex, h_lo: int, h_hi: int) -> Trapezoid:
    if h_lo < 1 or h_hi <= h_lo:
        raise TrapezoidError(f"need 1 <= h' < h'', got h'={h_lo}, h''={h_hi}")
    if not 2 * h_lo <= h_hi <= 12 * h_lo:
        raise TrapezoidError(f"h''/h' = {h_hi}/{h_lo} outside [2, 12]")
    return Trapezoid(root, int(h_lo), int(h_hi))


def singleton_trapezoid(y: Vertex) -> Trapezoid:
    return Trapezoid(y, 0, 1, singleton=True)


def trapezoid_measure(R: Trapezoid, tree: TreeParams) -> FlowWeight:
    """mu(R) = q^{level(root)} (h'' - h')."""
    return FlowWeight(R.root.level, tree.q, R.h_hi - R.h_lo)


def trapezoid_size(R: Trapezoid, tree: TreeParams) -> int:
    return sum(tree.q ** j for j in R.depths)


def in_trapezoid(v: Vertex, R: Trapezoid) -> bool:
    return is_above(R.root, v) and R.h_lo <= R.root.level - v.level < R.h_hi


def iter_trapezoid(R: Trapezoid, tree: TreeParams) -> Iterator[Vertex]:
    """Members level by level, top level first."""
    layer = [R.root]
    for depth in range(R.h_hi):
        if depth >= R.h_lo:
            yield from layer
        if depth + 1 < R.h_hi:
            layer = [s for u in layer for s in sons(u, tree)]


def random_vertex(rng: np.random.Generator, tree: TreeParams, max_h: int = 4, max_len: int = 4) -> Vertex:
    h = int(rng.integers(0, max_h + 1))
    length = int(rng.integers(0, max_len + 1))
    word = [int(c) for c in rng.integers(0, tree.q, size=length)]
    if h > 0 and word and word[0] == 0:
        word[0] = int(rng.integers(1, tree.q))
    return Vertex(h, tuple(word))


def bfs_distances(x: Vertex, radius: int, tree: TreeParams) -> dict:
    """Graph distances from x to every vertex within radius."""
    dist = {x: 0}
    queue = deque([x])
    while queue:
        v = queue.popleft()
        if dist[v] == radius:
            continue
        for u in neighbours(v, tree):
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist
