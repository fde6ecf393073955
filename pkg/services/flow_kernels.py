"""Heat, Poisson and Riesz kernels of the flow Laplacian, and maximal operators.

Everything is radial: H_t(x, y) = Q(x, y) J_t(d(x, y)) with
Q = q^{-(l(x) + l(y) + d)/2} and

    J_t(d) = (2/t) sum_k q^{-k} (d + 2k + 1) h^Z_t(d + 2k + 1).

Suprema over t run on a log-spaced lattice of times (``TGridPolicy``),
optionally polished by bounded Brent refinement on log t. J columns for a
whole lattice are built once per distance band and shared through
``utils.cache_utils.kernel_cache``.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, NamedTuple, Optional

import numpy as np
from scipy.integrate import quad, simpson
from scipy.optimize import minimize_scalar
from scipy.special import erf

from config import (
    POINTS_PER_DECADE,
    POISSON_TOL,
    REFINE_TOL,
    RIESZ_T_MAX,
    RIESZ_TOL,
    SERIES_TOL,
    T_MAX,
    T_MIN,
    TAIL_EXPONENT,
    TAIL_EXPONENT_SLACK,
)
from services.errors import (
    ConvergenceError,
    DomainError,
    InvalidQueryError,
    NonFiniteError,
    TailExtrapolationError,
)
from services.radial_summation import (
    TruncationPolicy,
    geodesic_classes,
    l1_norm_radial,
    sphere_shells,
)
from services.scalar_kernels import bessel_sequence, bessel_table
from services.tree_geometry import (
    TreeParams,
    Vertex,
    distance,
    is_above,
    predecessor,
    q_power,
    sons,
)
from utils.cache_utils import kernel_cache
from utils.summation import NeumaierSum

logger = logging.getLogger(__name__)

_SQRT_PI = math.sqrt(math.pi)


# --- Types -----------------------------------------------------------------

@dataclass(frozen=True)
class KernelQuery:
    lx: int
    ly: int
    d: int
    t: float = 0.0

    def validate(self) -> "KernelQuery":
        if self.d < 0 or int(self.d) != self.d:
            raise InvalidQueryError(f"distance must be a nonnegative integer, got {self.d}")
        if abs(self.lx - self.ly) > self.d:
            raise InvalidQueryError(f"|lx - ly| = {abs(self.lx - self.ly)} exceeds d = {self.d}")
        if (self.d - (self.lx - self.ly)) % 2:
            raise InvalidQueryError(f"d = {self.d} and lx - ly = {self.lx - self.ly} differ in parity")
        if self.t < 0:
            raise DomainError(f"time must be nonnegative, got {self.t}")
        return self

    @property
    def q_exponent(self) -> int:
        """Exponent e with Q = q^e."""
        return -(self.lx + self.ly + self.d) // 2

    def swapped(self) -> "KernelQuery":
        return KernelQuery(self.ly, self.lx, self.d, self.t)

    @classmethod
    def from_vertices(cls, x: Vertex, y: Vertex, t: float = 0.0) -> "KernelQuery":
        return cls(x.level, y.level, distance(x, y), t)


@dataclass
class FinSuppFn:
    """Finitely supported function with its mu-mass."""

    entries: Dict[Vertex, object]
    tree: TreeParams
    mass: object = field(init=False)

    def __post_init__(self):
        self.entries = dict(self.entries)
        self.mass = self.recompute_mass()

    def recompute_mass(self):
        values = list(self.entries.items())
        if all(isinstance(v, (int, Fraction)) for _, v in values):
            return sum((Fraction(v) * Fraction(self.tree.q) ** y.level for y, v in values), Fraction(0))
        acc = NeumaierSum()
        for y, v in values:
            acc += float(v) * q_power(self.tree.q, y.level)
        return acc.value

    def __call__(self, v: Vertex):
        return self.entries.get(v, 0.0)

    def l1_norm(self) -> float:
        acc = NeumaierSum()
        for y, v in self.entries.items():
            acc += abs(float(v)) * q_power(self.tree.q, y.level)
        return acc.value

    @property
    def support(self):
        return sorted(v for v, val in self.entries.items() if val != 0)


@dataclass(frozen=True)
class TGridPolicy:
    t_min: float = T_MIN
    t_max: float = T_MAX
    points_per_decade: int = POINTS_PER_DECADE
    refine_tol: float = REFINE_TOL
    refine: bool = True

    def __post_init__(self):
        if not 0 < self.t_min < self.t_max:
            raise DomainError("grid policy needs 0 < t_min < t_max")
        if self.points_per_decade < 10:
            raise DomainError("grid policy needs at least 10 points per decade")

    def grid(self, d_cap: int) -> np.ndarray:
        """Lattice t_min * 10^(k/ppd) up to t_max * d_cap^2; bands share a prefix."""
        top = self.t_max * float(d_cap) ** 2
        n = int(math.ceil(self.points_per_decade * math.log10(top / self.t_min)))
        return self.t_min * 10.0 ** (np.arange(n + 1) / self.points_per_decade)

    def grid_only(self) -> "TGridPolicy":
        return replace(self, refine=False)

    def densified(self, factor: int = 2) -> "TGridPolicy":
        return replace(self, points_per_decade=self.points_per_decade * factor)

    @property
    def key(self):
        return (self.t_min, self.t_max, self.points_per_decade)


class HeatSup(NamedTuple):
    sup: float
    argmax_t: float


class RieszParts(NamedTuple):
    near: float
    far: float
    tail: float
    exponent: float
    t_end: float

    @property
    def total(self) -> float:
        return self.near + self.far + self.tail


@dataclass(frozen=True)
class ProfileTable:
    """J_t(d) on a time lattice for d < d_cap, with parity prefix sums."""

    q: int
    d_cap: int
    t: np.ndarray
    values: np.ndarray
    prefix: np.ndarray

    @property
    def log_t(self) -> np.ndarray:
        return np.log(self.t)


# --- The radial profile J ------------------------------------------------

def series_cutoff(q: int, d: int, tol: float = SERIES_TOL) -> int:
    """Smallest K with sum_{k>K} q^{-k}(d+2k+1) <= tol (d+1).

    Since h^Z_t(j) decreases in j this bounds the dropped part of the k-sum
    relative to its leading term.
    """
    K = 0
    while q ** (-float(K)) * ((d + 2 * K + 1) / (q - 1) + 2.0 * q / (q - 1) ** 2) > tol * (d + 1):
        K += 1
    return K


def j_profile_many(t: float, ds, tree: TreeParams) -> np.ndarray:
    """J_t(d) for each d in ds, sharing one Bessel sequence."""
    ds = np.asarray(ds, dtype=int)
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        return (ds == 0).astype(float)
    q = tree.q
    K = series_cutoff(q, int(ds.min()))
    seq = bessel_sequence(t, int(ds.max()) + 2 * K + 1)
    k = np.arange(K + 1)
    weights = q ** (-k.astype(float))
    orders = ds[:, None] + 2 * k[None, :] + 1
    return (2.0 / t) * (orders * seq[orders]) @ weights


def j_profile(t: float, d: int, tree: TreeParams) -> float:
    """J_t(d), memoised in the shared kernel cache."""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        return 1.0 if d == 0 else 0.0
    return kernel_cache.get_scalar((tree.q, int(d), float(t)), lambda: j_profile_many(t, [d], tree)[0])


def _band(d_needed: int) -> int:
    cap = 16
    while cap < d_needed + 1:
        cap *= 2
    return cap


def _build_profile_table(tree: TreeParams, d_cap: int, policy: TGridPolicy) -> ProfileTable:
    q = tree.q
    t = policy.grid(d_cap)
    K = series_cutoff(q, 0)
    n_max = d_cap + 2 * K + 2
    logger.info("Building J table q=%d d_cap=%d (%d times, orders <= %d)", q, d_cap, t.size, n_max)
    seq = bessel_table(t, n_max)
    v = seq * np.arange(n_max + 1)[None, :]
    S = np.zeros((t.size, n_max + 3))
    for d in range(n_max - 1, -1, -1):
        S[:, d] = v[:, d + 1] + S[:, d + 2] / q
    values = (2.0 / t)[:, None] * S[:, :d_cap]
    prefix = np.empty_like(values)
    prefix[:, 0::2] = np.cumsum(values[:, 0::2], axis=1)
    prefix[:, 1::2] = np.cumsum(values[:, 1::2], axis=1)
    return ProfileTable(q, d_cap, t, values, prefix)


def profile_table(tree: TreeParams, d_needed: int, policy: TGridPolicy) -> ProfileTable:
    cap = _band(int(d_needed))
    key = ("J", tree.q, cap) + policy.key
    return kernel_cache.get_table(key, lambda: _build_profile_table(tree, cap, policy))


# --- Point kernels ---------------------------------------------------------

def q_factor(query: KernelQuery, tree: TreeParams) -> float:
    return q_power(tree.q, query.q_exponent)


def tree_heat_kernel(t: float, d: int, tree: TreeParams) -> float:
    """Heat kernel of the combinatorial Laplacian, h_t(d) = e^{-bt} q^{-d/2} J_{(1-b)t}(d)."""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        return 1.0 if d == 0 else 0.0
    b = tree.b
    return math.exp(-b * t) * tree.q ** (-d / 2.0) * j_profile((1.0 - b) * t, d, tree)


def tree_heat_total(t: float, tree: TreeParams) -> float:
    """sum_y h_t(x, y) over spheres of growing radius."""
    s = (1.0 - tree.b) * t
    M = 32
    while True:
        J = j_profile_many(s, np.arange(M + 1), tree) if s > 0 else (np.arange(M + 1) == 0).astype(float)
        m = np.arange(1, M + 1)
        shell = (tree.q + 1) / tree.q * tree.q ** (m / 2.0) * J[1:]
        total = J[0] + shell.sum()
        if shell[-1] <= 1e-17 * total:
            return math.exp(-tree.b * t) * total
        M *= 2


def flow_heat_kernel(query: KernelQuery, tree: TreeParams) -> float:
    """H_t(x, y) = Q J_t(d)."""
    query.validate()
    return q_factor(query, tree) * j_profile(query.t, query.d, tree)


def log_flow_heat_kernel(query: KernelQuery, tree: TreeParams) -> float:
    query.validate()
    J = j_profile(query.t, query.d, tree)
    if J <= 0:
        return -math.inf
    return query.q_exponent * tree.log_q + math.log(J)


def flow_heat_kernel_via_tree(query: KernelQuery, tree: TreeParams) -> float:
    """e^{bt/(1-b)} q^{-(lx+ly)/2} h_{t/(1-b)}(d)."""
    query.validate()
    b = tree.b
    return (
        math.exp(b * query.t / (1.0 - b))
        * tree.q ** (-(query.lx + query.ly) / 2.0)
        * tree_heat_kernel(query.t / (1.0 - b), query.d, tree)
    )


def comparability_ratio(query: KernelQuery, tree: TreeParams) -> float:
    """H_t / (Q s_d(t)), which stays in a fixed band."""
    from services.scalar_kernels import s_profile

    query.validate()
    return j_profile(query.t, query.d, tree) / s_profile(query.d, query.t)


def heat_total_mass(t: float, tree: TreeParams, x: Optional[Vertex] = None,
                    tol: float = 1e-17) -> float:
    """sum_y H_t(x, y) mu(y), summed sphere class by sphere class."""
    x = x or Vertex(0, ())
    acc = NeumaierSum()
    for m, shell in sphere_shells(x, tree):
        J = j_profile(t, m, tree)
        shell_sum = NeumaierSum()
        for cls in shell:
            shell_sum += cls.scaled_count(cls.level - (x.level + cls.level + m) // 2) * J
        acc += shell_sum.value
        if m > t and shell_sum.value <= tol * acc.value:
            return acc.value


def heat_composition(x: Vertex, z: Vertex, t: float, s: float, tree: TreeParams,
                     tol: float = 1e-17, max_radius: int = 4096) -> float:
    """sum_y H_t(x, y) H_s(y, z) mu(y) over cells relative to the geodesic [x, z]."""
    acc = NeumaierSum()
    quiet = 0
    for radius, shell in geodesic_classes(x, z, tree):
        shell_sum = NeumaierSum()
        for cell in shell:
            e = cell.power - (x.level + z.level + cell.d_to_a + cell.d_to_b) // 2
            shell_sum += cell.coefficient * q_power(tree.q, e) * j_profile(t, cell.d_to_a, tree) * j_profile(s, cell.d_to_b, tree)
        acc += shell_sum.value
        quiet = quiet + 1 if shell_sum.value <= tol * acc.value else 0
        if quiet >= 4 or radius >= max_radius:
            return acc.value


# --- Operators A and L ---------------------------------------------------

def apply_A(f: FinSuppFn, x: Vertex, tree: TreeParams):
    """(1/2)((1/q) sum over sons f(y) + f(p(x)))."""
    son_sum = sum((f(s) for s in sons(x, tree)), 0)
    if all(isinstance(v, (int, Fraction)) for v in f.entries.values()):
        return Fraction(1, 2) * (Fraction(son_sum) / tree.q + Fraction(f(predecessor(x))))
    return 0.5 * (son_sum / tree.q + f(predecessor(x)))


def apply_L(f: FinSuppFn, x: Vertex, tree: TreeParams):
    return f(x) - apply_A(f, x, tree)


def operator_A_entry(x: Vertex, y: Vertex, tree: TreeParams) -> Fraction:
    if y == predecessor(x):
        return Fraction(1, 2)
    if predecessor(y) == x:
        return Fraction(1, 2 * tree.q)
    return Fraction(0)


def conjugated_laplacian_entry(x: Vertex, y: Vertex, tree: TreeParams) -> float:
    """Entry of (1/(1-b)) mu^{-1/2} (Delta - b I) mu^{1/2}, Delta the combinatorial Laplacian."""
    b = tree.b
    if x == y:
        delta = 1.0
    elif distance(x, y) == 1:
        delta = -1.0 / (tree.q + 1)
    else:
        delta = 0.0
    ratio = tree.q ** ((y.level - x.level) / 2.0)
    return (ratio * delta - (b if x == y else 0.0)) / (1.0 - b)


def laplacian_entry(x: Vertex, y: Vertex, tree: TreeParams) -> Fraction:
    return (Fraction(1) if x == y else Fraction(0)) - operator_A_entry(x, y, tree)


# --- Operators built from H_t ------------------------------------------

def heat_terms(f: FinSuppFn, x: Vertex, tree: TreeParams) -> Dict[int, float]:
    """Coefficients c_d with H_t f(x) = sum_d c_d J_t(d)."""
    acc: Dict[int, NeumaierSum] = {}
    for y, v in f.entries.items():
        d = distance(x, y)
        e = (y.level - x.level - d) // 2
        acc.setdefault(d, NeumaierSum()).add(float(v) * q_power(tree.q, e))
    return {d: s.value for d, s in sorted(acc.items()) if s.value != 0.0}


def _merge_terms(*parts) -> Dict[int, float]:
    acc: Dict[int, NeumaierSum] = {}
    for sign, terms in parts:
        for d, c in terms.items():
            acc.setdefault(d, NeumaierSum()).add(sign * c)
    return {d: s.value for d, s in sorted(acc.items()) if s.value != 0.0}


def evaluate_terms(terms: Dict[int, float], t: float, tree: TreeParams) -> float:
    if not terms:
        return 0.0
    ds = np.fromiter(terms.keys(), dtype=int)
    cs = np.fromiter(terms.values(), dtype=float)
    return float(j_profile_many(t, ds, tree) @ cs)


def heat_semigroup(f: FinSuppFn, x: Vertex, t: float, tree: TreeParams) -> float:
    """(H_t f)(x) = sum_y H_t(x, y) f(y) mu(y)."""
    return evaluate_terms(heat_terms(f, x, tree), t, tree)


def _refine_max(fun: Callable[[float], float], lo: float, hi: float, tol: float):
    res = minimize_scalar(lambda u: -fun(u), bounds=(lo, hi), method="bounded", options={"xatol": tol})
    return float(res.x), float(-res.fun)


def combination_sup(terms: Dict[int, float], tree: TreeParams, policy: TGridPolicy,
                    t_upper: Optional[float] = None) -> HeatSup:
    """sup over t > 0 (or 0 < t < t_upper) of |sum_d c_d J_t(d)|."""
    terms = {d: c for d, c in terms.items() if c != 0.0}
    if not terms:
        return HeatSup(0.0, 0.0)
    ds = np.fromiter(terms.keys(), dtype=int)
    cs = np.fromiter(terms.values(), dtype=float)
    table = profile_table(tree, int(ds.max()), policy)
    t = table.t
    series = table.values[:, ds] @ cs
    if t_upper is not None:
        keep = t <= t_upper
        t, series = t[keep], series[keep]
    vals = np.abs(series)
    if not np.all(np.isfinite(vals)):
        bad = t[~np.isfinite(vals)]
        raise NonFiniteError(f"kernel combination is not finite at {bad.size} lattice times, first t={bad[0]:.6g}")
    i = int(np.argmax(vals))
    best, best_t = float(vals[i]), float(t[i])
    if policy.refine and t.size > 1:
        u = np.log(t)
        lo, hi = u[max(i - 1, 0)], u[min(i + 1, t.size - 1)]
        u_star, val = _refine_max(lambda w: abs(float(j_profile_many(math.exp(w), ds, tree) @ cs)),
                                  lo, hi, policy.refine_tol)
        if val > best:
            best, best_t = val, math.exp(u_star)
    limit = abs(terms.get(0, 0.0))
    if limit >= best:
        return HeatSup(limit, 0.0)
    return HeatSup(best, best_t)


def heat_sup(lx: int, ly: int, d: int, tree: TreeParams, policy: Optional[TGridPolicy] = None,
             weighted: bool = False) -> HeatSup:
    """sup_t H_t(x, y), or sup_t (d/t) H_t(x, y) when weighted."""
    policy = policy or TGridPolicy()
    query = KernelQuery(lx, ly, d, 1.0).validate()
    Q = q_factor(query, tree)
    if not weighted:
        return combination_sup({d: Q}, tree, policy)
    if d == 0:
        return HeatSup(0.0, 0.0)
    table = profile_table(tree, d, policy)
    vals = Q * d * table.values[:, d] / table.t
    i = int(np.argmax(vals))
    best, best_t = float(vals[i]), float(table.t[i])
    if policy.refine:
        u = table.log_t
        lo, hi = u[max(i - 1, 0)], u[min(i + 1, u.size - 1)]
        u_star, val = _refine_max(lambda w: Q * d * j_profile(math.exp(w), d, tree) / math.exp(w),
                                  lo, hi, policy.refine_tol)
        if val > best:
            best, best_t = val, math.exp(u_star)
    return HeatSup(best, best_t)


def grad_sup(x: Vertex, y: Vertex, tree: TreeParams, policy: Optional[TGridPolicy] = None) -> HeatSup:
    """sup_t |H_t(x, y) - H_t(x, p(y))|, defined for x not below y."""
    if is_above(y, x):
        raise DomainError(f"gradient bound needs x not <= y, got x={x}, y={y}")
    py = predecessor(y)
    a = KernelQuery.from_vertices(x, y)
    b = KernelQuery.from_vertices(x, py)
    terms = _merge_terms((1.0, {a.d: q_factor(a, tree)}), (-1.0, {b.d: q_factor(b, tree)}))
    return combination_sup(terms, tree, policy or TGridPolicy())


def gradient_pointwise_bound(x: Vertex, y: Vertex, t: float, tree: TreeParams):
    """|H_t(x, y) - H_t(x, p(y))| and max{d H_t(x, p(y)) / t, H_t(x, y) / (d+1)}, for x not <= y."""
    if is_above(y, x):
        raise DomainError(f"gradient bound needs x not <= y, got x={x}, y={y}")
    if t <= 0:
        raise DomainError("gradient bound needs t > 0")
    a = KernelQuery.from_vertices(x, y, t)
    b = KernelQuery.from_vertices(x, predecessor(y), t)
    h_xy = flow_heat_kernel(a, tree)
    h_xpy = flow_heat_kernel(b, tree)
    return abs(h_xy - h_xpy), max(a.d * h_xpy / t, h_xy / (a.d + 1))


def maximal_heat(f: FinSuppFn, x: Vertex, tree: TreeParams, policy: Optional[TGridPolicy] = None) -> float:
    """M_h f(x) = sup_t |H_t f(x)|."""
    return combination_sup(heat_terms(f, x, tree), tree, policy or TGridPolicy()).sup


def maximal_local(f: FinSuppFn, x: Vertex, tree: TreeParams, policy: Optional[TGridPolicy] = None) -> float:
    """sup over 0 < t < 1 of |H_t f(x)|."""
    return combination_sup(heat_terms(f, x, tree), tree, policy or TGridPolicy(), t_upper=1.0).sup


def _sphere_weight_sup(y: Vertex, tree: TreeParams, policy: TGridPolicy, t_upper: Optional[float]):
    cache: Dict[int, float] = {}

    def evaluator(cls):
        m = cls.dist
        if m not in cache:
            cache[m] = combination_sup({m: 1.0}, tree, policy, t_upper=t_upper).sup
        return cls.scaled_count(cls.level - (y.level + cls.level + m) // 2) * cache[m]

    return evaluator


def local_maximal_l1(y: Vertex, tree: TreeParams, policy: Optional[TGridPolicy] = None,
                     truncation: Optional[TruncationPolicy] = None):
    """||M_loc delta_y||_1 / ||delta_y||_1, summed over spheres around y."""
    policy = policy or TGridPolicy()
    truncation = truncation or TruncationPolicy(eps=1e-15, stall_window=3)
    return l1_norm_radial(_sphere_weight_sup(y, tree, policy, 1.0), sphere_shells(y, tree), truncation)


def maximal_delta_l1(y: Vertex, radius: int, tree: TreeParams, policy: Optional[TGridPolicy] = None):
    """||M_h delta_y||_1 / ||delta_y||_1 restricted to the ball B(y, radius)."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = TruncationPolicy(eps=0.0, max_radius=radius, stall_window=radius + 2)
    return l1_norm_radial(_sphere_weight_sup(y, tree, policy, None), sphere_shells(y, tree), truncation)


# --- Poisson kernel via subordination -----------------------------------

def poisson_weight(u, t: float):
    """Subordination weight in the variable u = log z; integrates to 1 over the line."""
    return t / (2.0 * _SQRT_PI) * np.exp(-0.5 * u - 0.25 * t * t * np.exp(-u))


def _poisson_range(t: float, tol: float):
    centre = math.log(t * t / 2.0)
    lo = math.log(t * t / 4.0) - math.log(800.0)
    hi = 2.0 * math.log(t / (_SQRT_PI * tol * 1e-6))
    return lo, centre, max(hi, centre + 10.0)


def poisson_weight_total(t: float, tol: float = 1e-12) -> float:
    lo, centre, hi = _poisson_range(t, tol)
    val, _ = quad(poisson_weight, lo, hi, args=(t,), points=[centre], limit=200, epsabs=0.0, epsrel=tol)
    return val


def poisson_kernel(query: KernelQuery, tree: TreeParams, tol: float = POISSON_TOL) -> float:
    """P_t(x, y) = int_R w_t(u) H_{e^u}(x, y) du."""
    query.validate()
    if query.t <= 0:
        raise DomainError("the Poisson kernel needs t > 0")
    t, d = query.t, query.d
    lo, centre, hi = _poisson_range(t, tol)
    points = [centre] + ([2.0 * math.log(d + 1.0)] if lo < 2.0 * math.log(d + 1.0) < hi else [])
    val, err = quad(lambda u: poisson_weight(u, t) * j_profile(math.exp(u), d, tree), lo, hi,
                    points=points, limit=400, epsabs=0.0, epsrel=tol / 10.0)
    if err > tol * abs(val) and err > 1e-300:
        raise ConvergenceError(f"Poisson quadrature stalled at relative error {err / abs(val):.3g}",
                               achieved=err / abs(val) if val else math.inf)
    return q_factor(query, tree) * val


def poisson_kernel_trapezoid(query: KernelQuery, tree: TreeParams, nodes: int = 2000,
                             tol: float = POISSON_TOL) -> float:
    """Same integral by the trapezoid rule on a uniform u-grid."""
    query.validate()
    lo, _, hi = _poisson_range(query.t, tol)
    u = np.linspace(lo, hi, nodes)
    vals = poisson_weight(u, query.t) * np.array([j_profile(math.exp(w), query.d, tree) for w in u])
    h = u[1] - u[0]
    return q_factor(query, tree) * h * (vals.sum() - 0.5 * (vals[0] + vals[-1]))


def poisson_lattice_weights(u: np.ndarray, poisson_t: np.ndarray) -> np.ndarray:
    """Trapezoid weights of the subordination integral on a uniform u-lattice.

    One row per t. The extra last column is the weight mass above the
    lattice top, erf(t / (2 sqrt(z_top))), which carries the last sample.
    """
    h = u[1] - u[0]
    weights = poisson_weight(u[None, :], poisson_t[:, None]) * h
    weights[:, 0] *= 0.5
    weights[:, -1] *= 0.5
    tail = erf(poisson_t / (2.0 * math.exp(0.5 * u[-1])))
    return np.column_stack([weights, tail])


def maximal_poisson(f: FinSuppFn, x: Vertex, tree: TreeParams, policy: Optional[TGridPolicy] = None) -> float:
    """M_P f(x) = sup_t |P_t f(x)|, integrating H_z f(x) sampled on the heat lattice."""
    policy = policy or TGridPolicy()
    terms = heat_terms(f, x, tree)
    if not terms:
        return 0.0
    ds = np.fromiter(terms.keys(), dtype=int)
    cs = np.fromiter(terms.values(), dtype=float)
    table = profile_table(tree, int(ds.max()), policy)
    u_grid = table.log_t
    F_grid = table.values[:, ds] @ cs
    f0 = terms.get(0, 0.0)
    h = u_grid[1] - u_grid[0]
    poisson_t = table.t[table.t <= math.sqrt(table.t[-1] / 50.0)]
    u_low = math.log(poisson_t[0] ** 2 / 4.0) - math.log(800.0)
    n_ext = max(int(math.ceil((u_grid[0] - u_low) / h)), 0)
    u_ext = u_grid[0] - h * np.arange(n_ext, 0, -1)
    # H_z f(x) is linear in z to first order below the lattice
    F_ext = f0 + (F_grid[0] - f0) * np.exp(u_ext) / table.t[0]
    u = np.concatenate([u_ext, u_grid])
    F = np.concatenate([F_ext, F_grid, F_grid[-1:]])
    P = poisson_lattice_weights(u, poisson_t) @ F
    return float(max(np.max(np.abs(P)), abs(f0)))


def ergodic_average(f: FinSuppFn, x: Vertex, t: float, tree: TreeParams, tol: float = 1e-9) -> float:
    """(1/2t) int_0^{2t} H_z f(x) dz."""
    if t <= 0:
        raise DomainError("ergodic average needs t > 0")
    terms = heat_terms(f, x, tree)
    val, err = quad(lambda z: evaluate_terms(terms, z, tree), 0.0, 2.0 * t, limit=200, epsrel=tol)
    return val / (2.0 * t)


# --- Riesz kernel ----------------------------------------------------------

def _power_tail(G: Callable[[float], float], T: float, tol: float, scale: float):
    """Integral of G over (T, inf) from the local power law of G on [T/10, T]."""
    gT, g10 = G(T), G(T / 10.0)
    if gT == 0.0:
        return 0.0, float("nan")
    exponent = float("nan")
    if g10 != 0.0 and (gT > 0) == (g10 > 0):
        exponent = math.log(abs(gT / g10)) / math.log(10.0)
    if not math.isfinite(exponent) or exponent > TAIL_EXPONENT + TAIL_EXPONENT_SLACK:
        if abs(gT) * T <= 0.1 * tol * max(scale, 1e-300):
            return gT * T, exponent
        raise TailExtrapolationError(
            f"integrand decays like t^{exponent:.3f} near T={T:.3g}; expected about t^{TAIL_EXPONENT}", exponent
        )
    return gT * T / (-exponent - 1.0), exponent


def riesz_integral(terms: Dict[int, float], tree: TreeParams, tol: float = RIESZ_TOL,
                   t_max: float = RIESZ_T_MAX, lower: float = 0.0, absolute: bool = False) -> RieszParts:
    """int_lower^inf t^{-1/2} sum_d c_d J_t(d) dt, split at t = 1."""
    terms = {d: c for d, c in terms.items() if c != 0.0}
    if not terms:
        return RieszParts(0.0, 0.0, 0.0, float("nan"), t_max)
    ds = np.fromiter(terms.keys(), dtype=int)
    cs = np.fromiter(terms.values(), dtype=float)
    t_end = max(t_max, 100.0 * (int(ds.max()) + 1) ** 2)

    def g(t):
        val = float(cs[ds == 0].sum()) if t == 0 else float(j_profile_many(t, ds, tree) @ cs)
        return abs(val) if absolute else val

    epsabs = 1e-3 * tol * float(np.abs(cs).sum()) / (int(ds.min()) + 1) ** 2
    near, near_err = 0.0, 0.0
    if lower < 1.0:
        s0 = math.sqrt(lower)
        near, near_err = quad(lambda s: 2.0 * g(s * s), s0, 1.0, limit=200, epsabs=epsabs, epsrel=tol / 4.0)
    u_end = math.log(t_end)
    u_peak = 2.0 * math.log(int(ds.max()) + 1.0)
    points = [u_peak] if 0.0 < u_peak < u_end else None
    far, far_err = quad(lambda u: g(math.exp(u)) * math.exp(0.5 * u), 0.0, u_end,
                        points=points, limit=400, epsabs=epsabs, epsrel=tol / 4.0)
    scale = abs(near + far)
    tail, exponent = _power_tail(lambda t: g(t) / math.sqrt(t), t_end, tol, scale)
    err = near_err + far_err
    if err > tol * max(abs(near + far + tail), 0.0) + 10.0 * epsabs:
        raise ConvergenceError(f"Riesz quadrature error {err:.3g} above tolerance", achieved=err)
    logger.debug("riesz integral near=%.6g far=%.6g tail=%.3g p=%.3f", near, far, tail, exponent)
    return RieszParts(near, far, tail, exponent, t_end)


def riesz_terms(x: Vertex, y: Vertex, tree: TreeParams) -> Dict[int, float]:
    """Coefficients of H_t(x, y) - H_t(p(x), y) in the J_t(d) basis."""
    px = predecessor(x)
    a = KernelQuery.from_vertices(x, y)
    b = KernelQuery.from_vertices(px, y)
    return _merge_terms((1.0, {a.d: q_factor(a, tree)}), (-1.0, {b.d: q_factor(b, tree)}))


def riesz_kernel_parts(x: Vertex, y: Vertex, tree: TreeParams, tol: float = RIESZ_TOL,
                       t_max: float = RIESZ_T_MAX) -> RieszParts:
    return riesz_integral(riesz_terms(x, y, tree), tree, tol=tol, t_max=t_max)


def riesz_kernel(x: Vertex, y: Vertex, tree: TreeParams, tol: float = RIESZ_TOL,
                 t_max: float = RIESZ_T_MAX) -> float:
    """R(x, y) = int_0^inf t^{-1/2} (H_t(x, y) - H_t(p(x), y)) dt."""
    return riesz_kernel_parts(x, y, tree, tol, t_max).total


def riesz_tail_sup(x: Vertex, y: Vertex, tree: TreeParams, tol: float = RIESZ_TOL):
    """The two large-time integrals bounded by Q(x, y)/(d+1)^2, and that bound."""
    query = KernelQuery.from_vertices(x, y)
    Q = q_factor(query, tree)
    gradient = riesz_integral(riesz_terms(x, y, tree), tree, tol=tol, lower=1.0, absolute=True).total
    scaled = riesz_integral({query.d: Q / (query.d + 1)}, tree, tol=tol, lower=1.0).total
    return gradient, scaled, Q / (query.d + 1) ** 2


def riesz_transform(f: FinSuppFn, x: Vertex, tree: TreeParams, tol: float = RIESZ_TOL) -> float:
    """(R f)(x) = sum_y R(x, y) f(y) mu(y)."""
    terms = _merge_terms((1.0, heat_terms(f, x, tree)), (-1.0, heat_terms(f, predecessor(x), tree)))
    return riesz_integral(terms, tree, tol=tol).total


def grid_riesz_integral(terms: Dict[int, float], table: ProfileTable, tol: float = RIESZ_TOL) -> RieszParts:
    """Riesz-type integral on a profile-table lattice (Simpson in log t)."""
    terms = {d: c for d, c in terms.items() if c != 0.0}
    t = table.t
    if not terms:
        return RieszParts(0.0, 0.0, 0.0, float("nan"), float(t[-1]))
    ds = np.fromiter(terms.keys(), dtype=int)
    cs = np.fromiter(terms.values(), dtype=float)
    g = table.values[:, ds] @ cs
    u = table.log_t
    integrand = g * np.sqrt(t)
    split = int(np.argmin(np.abs(u)))
    g0 = terms.get(0, 0.0)
    root = math.sqrt(t[0])
    below = 2.0 * root * g0 + (g[0] - g0) * (2.0 / 3.0) * root
    near = below + simpson(integrand[: split + 1], x=u[: split + 1])
    far = simpson(integrand[split:], x=u[split:])
    ppd = int(round(1.0 / (u[1] - u[0]) * math.log(10.0)))
    G_end, G_prev = g[-1] / math.sqrt(t[-1]), g[-1 - ppd] / math.sqrt(t[-1 - ppd])
    tail, exponent = _power_tail(lambda s: G_end if s == t[-1] else G_prev, float(t[-1]), tol, abs(near + far))
    return RieszParts(near, far, tail, exponent, float(t[-1]))
