"""Exact bookkeeping for sums over spheres, balls and cones.

Functions that depend on a vertex only through its level and its distances
to one or two fixed vertices are summed over classes of vertices sharing
those numbers. A class carries its exact count as ``coefficient * q**power``
so counts never overflow a float.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, List, NamedTuple, Optional, Tuple

from config import L1_EPS, L1_MAX_RADIUS, L1_STALL_WINDOW
from services.errors import DomainError, NonFiniteError
from services.tree_geometry import TreeParams, Vertex, confluent, distance, q_power
from utils.summation import NeumaierSum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SphereClass:
    """Vertices at distance ``dist`` from x whose confluent with x is p^j(x).

    ``j`` is None for the descendants of x (the F class).
    """

    level: int
    dist: int
    coefficient: int
    power: int
    q: int
    j: Optional[int] = None

    @property
    def count(self) -> int:
        return self.coefficient * self.q ** self.power

    def scaled_count(self, exponent: int) -> float:
        """count * q**exponent as a float, combined in the exponent."""
        return self.coefficient * q_power(self.q, self.power + exponent)


@dataclass(frozen=True)
class ConeClass:
    """Vertices sharing (level, d(., a), d(., b)) relative to the geodesic [a, b].

    Branch cells hang ``depth`` steps below the geodesic point with index
    ``index``; upward cells sit ``index`` steps above the confluent and then
    ``depth`` steps down, off the ray.
    """

    level: int
    d_to_a: int
    d_to_b: int
    coefficient: int
    power: int
    q: int
    index: int
    depth: int
    upward: bool = False

    @property
    def count(self) -> int:
        return self.coefficient * self.q ** self.power

    def scaled_count(self, exponent: int) -> float:
        return self.coefficient * q_power(self.q, self.power + exponent)


@dataclass(frozen=True)
class TruncationPolicy:
    eps: float = L1_EPS
    max_radius: int = L1_MAX_RADIUS
    stall_window: int = L1_STALL_WINDOW

    def __post_init__(self):
        if self.eps < 0 or self.max_radius < 0 or self.stall_window < 1:
            raise DomainError("truncation policy needs eps >= 0, max_radius >= 0, stall_window >= 1")


class L1Result(NamedTuple):
    value: float
    converged: bool
    tail_estimate: float
    radius: int
    evaluations: int

    @property
    def estimate(self) -> float:
        return self.value + self.tail_estimate


Shells = Iterator[Tuple[int, List]]


# --- Spheres -----------------------------------------------------------

def sphere_partition(x: Vertex, m: int, tree: TreeParams) -> List[SphereClass]:
    """The sphere S(x, m) split by confluent with x."""
    if m < 0:
        raise DomainError(f"radius must be nonnegative, got {m}")
    q = tree.q
    if m == 0:
        return [SphereClass(x.level, 0, 1, 0, q, j=0)]
    classes = [SphereClass(x.level - m, m, 1, m, q, j=None)]
    for j in range(1, m):
        classes.append(SphereClass(x.level + 2 * j - m, m, q - 1, m - j - 1, q, j=j))
    classes.append(SphereClass(x.level + m, m, 1, 0, q, j=m))
    return classes


def sphere_shells(x: Vertex, tree: TreeParams, start: int = 0) -> Shells:
    m = start
    while True:
        yield m, sphere_partition(x, m, tree)
        m += 1


def radial_sphere_sum(g: Callable[[int, int], object], x: Vertex, m: int, tree: TreeParams):
    """sum over y in S(x, m) of g(level(y), d(x, y)), exact when g is."""
    total = 0
    for cls in sphere_partition(x, m, tree):
        total += cls.count * g(cls.level, cls.dist)
    return total


def ball_sum(g: Callable[[int, int], object], x: Vertex, radius: int, tree: TreeParams):
    return sum((radial_sphere_sum(g, x, m, tree) for m in range(radius + 1)), 0)


def flow_profile(x: Vertex, n: int, tree: TreeParams) -> Callable[[int, int], Fraction]:
    """g(level, d) = q^{level/2} f(y) for f(y) = q^{-(l(x)+d)/2} / (d+n)^2, d = d(x, y)."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    q = Fraction(tree.q)

    def g(level: int, d: int) -> Fraction:
        return q ** ((level - x.level - d) // 2) / (d + n) ** 2

    return g


def sphere_sum_closed_form(m: int, n: int, tree: TreeParams) -> Fraction:
    """sum over S(x, m) of flow_profile(x, n), m >= 1."""
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    return Fraction(1, (m + n) ** 2) * (2 + (m - 1) * Fraction(tree.q - 1, tree.q))


# --- Cells around a geodesic --------------------------------------------

def _geodesic_shells(la: int, lb: int, D: int, ia: int, q: int, upward: bool = True) -> Shells:
    """Cells of the tree relative to a geodesic a = g_0, ..., g_D = b.

    The confluent is g_ia; shells are indexed by distance to it.
    """
    lc = la + ia

    def geodesic_level(i: int) -> int:
        return la + i if i <= ia else lb + (D - i)

    def free_sons(i: int) -> int:
        return q - (1 if 0 < i <= ia else 0) - (1 if ia <= i < D else 0)

    radius = 0
    while True:
        shell: List[ConeClass] = []
        for i in range(D + 1):
            r = radius - abs(i - ia)
            if r < 0:
                continue
            if r == 0:
                coef, power = 1, 0
            else:
                coef, power = free_sons(i), r - 1
                if coef == 0:
                    continue
            shell.append(ConeClass(geodesic_level(i) - r, i + r, D - i + r, coef, power, q, i, r))
        if upward:
            for u in range(1, radius + 1):
                k = radius - u
                coef, power = (1, 0) if k == 0 else (q - 1, k - 1)
                shell.append(
                    ConeClass(lc + u - k, ia + u + k, D - ia + u + k, coef, power, q, u, k, upward=True)
                )
        yield radius, shell
        radius += 1


def geodesic_classes(a: Vertex, b: Vertex, tree: TreeParams, upward: bool = True) -> Shells:
    """Shells of cells covering the whole tree (or the cone below the confluent)."""
    c = confluent(a, b)
    return _geodesic_shells(a.level, b.level, distance(a, b), c.level - a.level, tree.q, upward)


def block_of(n: int, q: int) -> int:
    """m with q^{m-1} <= n <= q^m - 1."""
    if n < 1:
        raise DomainError(f"label must be >= 1, got {n}")
    m, top = 1, q
    while n >= top:
        m += 1
        top *= q
    return m


def cone_classes(m: int, tree: TreeParams, n_label: Optional[int] = None) -> Shells:
    """Cells of the cone below p^m(o) relative to the geodesic [x_n, o], |x_n| = 2m."""
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    if n_label is not None and block_of(n_label, tree.q) != m:
        raise DomainError(f"label {n_label} is not in block {m}")
    return _geodesic_shells(0, 0, 2 * m, m, tree.q, upward=False)


def ball_classes(shells: Shells, radius: int, key: str = "d_to_b") -> Shells:
    """Restrict cells to those within ``radius`` of the chosen endpoint."""
    for r, shell in shells:
        kept = [cell for cell in shell if getattr(cell, key) <= radius]
        if not kept and all(getattr(cell, key) > radius for cell in shell) and r > radius:
            return
        yield r, kept


# --- L1 norms ---------------------------------------------------------

def l1_norm_radial(F: Callable[[object], float], shells: Shells,
                   policy: Optional[TruncationPolicy] = None) -> L1Result:
    """sum of F(cell) over shells of cells, F the (nonnegative) class total.

    Stops once ``stall_window`` consecutive shells each add less than
    eps times the running total, or past ``max_radius``. The reported tail,
    last shell increment times last radius, is the remainder of shell
    increments decaying like r^{-2}; slower decay makes it an underestimate.
    Raises NonFiniteError on a nan or inf class total.
    """
    policy = policy or TruncationPolicy()
    total = NeumaierSum()
    quiet = 0
    evaluations = 0
    increment = 0.0
    last_radius = 0
    converged = False
    for radius, shell in shells:
        if radius > policy.max_radius:
            break
        shell_sum = NeumaierSum()
        for cell in shell:
            v = F(cell)
            evaluations += 1
            if not math.isfinite(v):
                raise NonFiniteError(f"class total is {v} for {cell}")
            if v < 0:
                raise DomainError(f"class total must be nonnegative, got {v} for {cell}")
            shell_sum += v
        increment = shell_sum.value
        total += increment
        last_radius = radius
        quiet = quiet + 1 if increment <= policy.eps * total.value else 0
        if quiet >= policy.stall_window:
            converged = True
            break
    tail = increment * last_radius
    logger.debug("l1_norm_radial value=%.8g radius=%d converged=%s", total.value, last_radius, converged)
    return L1Result(total.value, converged, tail, last_radius, evaluations)
