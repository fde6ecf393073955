"""Hardy-space objects on the tree and the experiments built on them.

The test functions g_n = delta_{x_n} - delta_o are compared against the
witness f(x) = max(h(x), 1) log q, whose pairing with g_n grows like log n
while the maximal and Riesz norms of g_n grow like log log n. Atoms here are
depth-radial: their value depends only on the depth below the trapezoid root,
which keeps every L1 norm a sum over O(radius) classes.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config import (
    ATOM_BATCH,
    ATOM_CAPS,
    ATOM_ROOT_LEVELS,
    BMO_ROOT_HEIGHT_CAP,
    BMO_SIZE_CAP,
    DEFAULT_LAMBDA_GRID,
    G_CUTOFF,
    RIESZ_TOL,
)
from services.errors import AtomAxiomError, DomainError
from services.flow_kernels import (
    FinSuppFn,
    TGridPolicy,
    combination_sup,
    grid_riesz_integral,
    local_maximal_l1,
    profile_table,
)
from services.radial_summation import (
    L1Result,
    TruncationPolicy,
    block_of,
    cone_classes,
    l1_norm_radial,
)
from services.tree_geometry import (
    ORIGIN,
    TreeParams,
    Trapezoid,
    Vertex,
    in_trapezoid,
    iter_trapezoid,
    make_trapezoid,
    q_power,
    trapezoid_measure,
)
from utils.summation import NeumaierSum, neumaier_sum

logger = logging.getLogger(__name__)

ExperimentRow = Dict[str, object]

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "exp-gn": ("n", "m", "pairing", "mh_norm", "ratio_loglog", "ratio_log", "converged",
               "tail_estimate", "radius", "eps", "points_per_decade"),
    "exp-riesz": ("n", "m", "pairing", "riesz_norm", "riesz_norm_fine", "refine_rel_diff",
                  "ratio_loglog", "ratio_log", "converged", "tail_estimate", "radius", "eps",
                  "points_per_decade"),
    "exp-atoms": ("cap", "batch", "max_norm", "mean_norm", "argmax_index", "argmax_h_lo", "argmax_h_hi",
                  "max_pairing", "bmo_estimate", "pairing_ratio", "converged", "eps", "points_per_decade"),
    "exp-weaktype": ("n", "m", "l1_norm", "max_stat", "argmax_lambda", "lambda_count", "converged",
                     "radius", "points_per_decade"),
    "exp-g": ("m", "n_lo", "n_hi", "block_mass", "mh_norm_gn", "bound_partial", "loglog_partial",
              "ratio", "pairing_partial", "converged", "eps", "points_per_decade"),
    "exp-local": ("level", "local_norm", "converged", "radius", "evaluations"),
}


def make_row(kind: str, **values) -> ExperimentRow:
    """Row in the fixed column order of ``kind``."""
    columns = SCHEMAS[kind]
    missing = set(columns) - set(values)
    extra = set(values) - set(columns)
    if missing or extra:
        raise KeyError(f"{kind} row mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    return {c: values[c] for c in columns}


def _map_rows(fn: Callable, items: Iterable, threads: int = 1) -> List:
    items = list(items)
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --- Labels and test functions ------------------------------------------

def label_vertex(i: int, tree: TreeParams) -> Vertex:
    """x_i: base-q digits of i below p^m(o), m the digit count; x_0 = o."""
    if i < 0:
        raise DomainError(f"label must be nonnegative, got {i}")
    if i == 0:
        return ORIGIN
    digits = []
    while i:
        i, r = divmod(i, tree.q)
        digits.append(r)
    digits.reverse()
    return Vertex(len(digits), tuple(digits))


def vertex_label(v: Vertex, tree: TreeParams) -> int:
    if v.level != 0:
        raise DomainError(f"only level-0 vertices carry labels, got {v} at level {v.level}")
    n = 0
    for c in v.w:
        n = n * tree.q + c
    return n


def make_gn(n: int, tree: TreeParams) -> FinSuppFn:
    """g_n = delta_{x_n} - delta_o."""
    if n < 2:
        raise DomainError(f"g_n needs n >= 2, got {n}")
    return FinSuppFn({label_vertex(n, tree): 1, ORIGIN: -1}, tree)


def g_coefficient(n: int) -> float:
    return 1.0 / (n * math.log(n) ** 1.5)


def make_g(N: int, tree: TreeParams) -> FinSuppFn:
    """sum_{q <= n <= N} c_n delta_{x_n} + c_0 delta_o with zero mu-mass."""
    if N < tree.q:
        raise DomainError(f"cutoff N must be >= q = {tree.q}, got {N}")
    start = max(tree.q, 2)
    entries = {label_vertex(n, tree): g_coefficient(n) for n in range(start, N + 1)}
    entries[ORIGIN] = -neumaier_sum(entries.values())
    return FinSuppFn(entries, tree)


# --- The BMO witness ------------------------------------------------------

@dataclass(frozen=True)
class BMOWitness:
    """f(x) = max(h(x), 1) log q, h the least m with x <= p^m(o)."""

    tree: TreeParams

    @staticmethod
    def height(v: Vertex) -> int:
        return max(v.h, 1)

    def __call__(self, v: Vertex) -> float:
        return self.height(v) * self.tree.log_q


class BMOEstimate(NamedTuple):
    value: float
    trapezoid: Optional[Trapezoid]
    trapezoids: int
    root_height_cap: int
    size_cap: int


def bmo_witness(v: Vertex, tree: TreeParams) -> float:
    return BMOWitness(tree)(v)


def _ray_height_masses(H: int, h_lo: int, h_hi: int, q: int) -> Dict[int, int]:
    """Integer mu-masses of the trapezoid below p^H(o), grouped by h-coordinate."""
    masses: Dict[int, int] = {}

    def put(h, m):
        if m:
            masses[h] = masses.get(h, 0) + m

    for s in range(H):
        put(H - s, max(0, h_hi - max(h_lo, s + 1)) * (q - 1) * q ** (H - s - 1))
    for delta in range(h_lo, min(h_hi - 1, H) + 1):
        put(H - delta, q ** (H - delta))
    put(0, max(0, h_hi - max(h_lo, H + 1)))
    return masses


def _witness_oscillation(R: Trapezoid, q: int) -> Fraction:
    """Mean oscillation of the witness over R, in units of log q."""
    if R.singleton or R.root.w:
        return Fraction(0)
    masses = _ray_height_masses(R.root.h, R.h_lo, R.h_hi, q)
    M = sum(masses.values())
    F = sum(m * max(h, 1) for h, m in masses.items())
    return Fraction(sum(m * abs(max(h, 1) * M - F) for h, m in masses.items()), M * M)


def _brute_oscillation(f: Callable[[Vertex], float], R: Trapezoid, tree: TreeParams) -> float:
    members = list(iter_trapezoid(R, tree))
    weights = [q_power(tree.q, v.level) for v in members]
    values = [float(f(v)) for v in members]
    total = neumaier_sum(weights)
    mean = neumaier_sum(w * v for w, v in zip(weights, values)) / total
    return neumaier_sum(w * abs(v - mean) for w, v in zip(weights, values)) / total


def bmo_oscillation(f: Callable[[Vertex], float], R: Trapezoid, tree: TreeParams) -> float:
    """(1/mu(R)) sum_R |f - f_R| mu."""
    if isinstance(f, BMOWitness):
        return float(_witness_oscillation(R, tree.q)) * tree.log_q
    return _brute_oscillation(f, R, tree)


def bmo_norm_estimate(f: Callable[[Vertex], float], tree: TreeParams,
                      root_height_cap: int = BMO_ROOT_HEIGHT_CAP, size_cap: int = BMO_SIZE_CAP) -> BMOEstimate:
    """Largest oscillation over trapezoids rooted on the ray with h'' <= size_cap.

    A lower bound for the BMO norm; off-ray roots contribute nothing for the
    witness.
    """
    best, best_R, count = 0.0, None, 0
    for H in range(root_height_cap + 1):
        root = Vertex(H, ())
        for h_lo in range(1, size_cap // 2 + 1):
            for h_hi in range(2 * h_lo, min(12 * h_lo, size_cap) + 1):
                R = make_trapezoid(root, h_lo, h_hi)
                osc = bmo_oscillation(f, R, tree)
                count += 1
                if osc > best:
                    best, best_R = osc, R
    logger.info("BMO estimate %.6g over %d trapezoids (caps %d, %d)", best, count, root_height_cap, size_cap)
    return BMOEstimate(best, best_R, count, root_height_cap, size_cap)


def pairing(f: Callable[[Vertex], float], g: FinSuppFn, tree: TreeParams) -> float:
    """sum_x f(x) g(x) mu(x)."""
    exact = all(isinstance(v, (int, Fraction)) for v in g.entries.values())
    if isinstance(f, BMOWitness) and exact:
        total = sum((f.height(y) * Fraction(v) * Fraction(tree.q) ** y.level for y, v in g.entries.items()),
                    Fraction(0))
        return float(total) * tree.log_q
    acc = NeumaierSum()
    for y, v in g.entries.items():
        acc += float(f(y)) * float(v) * q_power(tree.q, y.level)
    return acc.value


# --- Atoms ---------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Atom on R with value alpha_delta q^{-l(root)} at depth delta.

    ``profile`` holds the alpha_delta for delta = h', ..., h'' - 1.
    """

    support: Trapezoid
    profile: Tuple[float, ...]
    q: int

    @property
    def depths(self) -> range:
        return self.support.depths

    def value_at(self, v: Vertex) -> float:
        root = self.support.root
        delta = root.level - v.level
        if not in_trapezoid(v, self.support):
            return 0.0
        return self.profile[delta - self.support.h_lo] * q_power(self.q, -root.level)

    def values(self, tree: TreeParams) -> Dict[Vertex, float]:
        """Materialised values; only for small supports."""
        return {v: self.value_at(v) for v in iter_trapezoid(self.support, tree)}

    def to_function(self, tree: TreeParams) -> FinSuppFn:
        return FinSuppFn(self.values(tree), tree)

    @property
    def mass(self) -> float:
        """sum a mu; every depth layer carries mu-mass q^{l(root)}."""
        return neumaier_sum(self.profile)

    @property
    def is_zero(self) -> bool:
        return not any(self.profile)


def zero_atom(R: Trapezoid, q: int) -> Atom:
    return Atom(R, (0.0,) * len(R.depths), q)


def check_atom(atom: Atom, tree: TreeParams) -> bool:
    """Support, size and cancellation axioms."""
    R = atom.support
    if len(atom.profile) != len(R.depths):
        raise AtomAxiomError(f"profile has {len(atom.profile)} depths, support has {len(R.depths)}")
    size = 1.0 / (R.h_hi - R.h_lo)
    peak = max((abs(a) for a in atom.profile), default=0.0)
    if peak > size * (1.0 + 1e-12):
        raise AtomAxiomError(f"sup norm {peak:.6g} exceeds 1/mu(R) = {size:.6g} (in units of q^-l(root))")
    scale = max(sum(abs(a) for a in atom.profile), 1e-300)
    if abs(atom.mass) > 1e-14 * scale:
        raise AtomAxiomError(f"mean {atom.mass:.3g} is not zero")
    return True


def check_atom_function(a: FinSuppFn, R: Trapezoid, tree: TreeParams) -> bool:
    """The axioms for an arbitrary finitely supported function."""
    outside = [v for v, val in a.entries.items() if val != 0 and not in_trapezoid(v, R)]
    if outside:
        raise AtomAxiomError(f"support leaves the trapezoid at {outside[0]}")
    size = 1.0 / trapezoid_measure(R, tree).value()
    if max((abs(float(v)) for v in a.entries.values()), default=0.0) > size * (1.0 + 1e-12):
        raise AtomAxiomError("sup norm exceeds 1/mu(R)")
    if abs(float(a.mass)) > 1e-14 * max(a.l1_norm(), 1e-300):
        raise AtomAxiomError(f"mean {float(a.mass):.3g} is not zero")
    return True


def random_atom(seed, tree: TreeParams, root_level_range: Sequence[int] = ATOM_ROOT_LEVELS,
                hprime_range: Optional[Sequence[int]] = None, cap: Optional[int] = None) -> Atom:
    """A random depth-radial atom on a random admissible trapezoid."""
    rng = np.random.default_rng(seed)
    lo_level, hi_level = root_level_range
    if lo_level > hi_level:
        raise DomainError("empty root level range")
    if hprime_range is None:
        hprime_range = (1, max((cap or 24) // 2, 1))
    h_min, h_max = hprime_range
    if cap is not None:
        h_max = min(h_max, cap // 2)
    if h_min < 1 or h_max < h_min:
        raise DomainError(f"infeasible h' range {tuple(hprime_range)} with cap {cap}")

    level = int(rng.integers(lo_level, hi_level + 1))
    h = int(rng.integers(max(level, 0), max(level, 0) + 4))
    word = [int(c) for c in rng.integers(0, tree.q, size=h - level)]
    if h > 0 and word and word[0] == 0:
        word[0] = int(rng.integers(1, tree.q))
    root = Vertex(h, tuple(word))

    h_lo = int(rng.integers(h_min, h_max + 1))
    top = 12 * h_lo if cap is None else min(12 * h_lo, cap)
    h_hi = int(rng.integers(2 * h_lo, top + 1))
    R = make_trapezoid(root, h_lo, h_hi)

    raw = rng.uniform(-1.0, 1.0, size=h_hi - h_lo)
    raw = raw - neumaier_sum(raw) / raw.size
    raw[-1] -= neumaier_sum(raw)
    peak = float(np.max(np.abs(raw)))
    if raw.size == 1 or peak == 0.0:
        return zero_atom(R, tree.q)
    profile = raw * (1.0 / (h_hi - h_lo)) / peak
    profile[-1] -= neumaier_sum(profile)
    atom = Atom(R, tuple(float(a) for a in profile), tree.q)
    check_atom(atom, tree)
    return atom


def atom_pairing(f: Callable[[Vertex], float], atom: Atom, tree: TreeParams) -> float:
    """sum f a mu, by depth layers for the witness."""
    if not isinstance(f, BMOWitness):
        return pairing(f, atom.to_function(tree), tree)
    root, q = atom.support.root, tree.q
    if root.w:
        return f(root) * atom.mass
    H = root.h
    acc = NeumaierSum()
    for delta, alpha in zip(atom.depths, atom.profile):
        masses = _ray_height_masses(H, delta, delta + 1, q)
        layer = Fraction(sum(m * max(hh, 1) for hh, m in masses.items()), q ** H)
        acc += alpha * float(layer)
    return acc.value * tree.log_q


class _AtomCell(NamedTuple):
    inside: bool
    radius: int


def atom_maximal_l1(atom: Atom, tree: TreeParams, policy: Optional[TGridPolicy] = None,
                    truncation: Optional[TruncationPolicy] = None) -> L1Result:
    """||M_h a||_1, summing depth layers below the root and spheres around it."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = truncation or TruncationPolicy()
    if atom.is_zero:
        return L1Result(0.0, True, 0.0, 0, 0)
    q = tree.q
    alpha = np.asarray(atom.profile)
    deltas = np.arange(atom.support.h_lo, atom.support.h_hi)
    side = (q - 1) / q

    def evaluate(cell: _AtomCell) -> float:
        r = cell.radius
        table = profile_table(tree, r + int(deltas[-1]) + 1, policy)
        if cell.inside:
            near = np.abs(r - deltas)
            series = table.values[:, near] @ alpha + side * ((table.prefix[:, r + deltas] - table.prefix[:, near]) @ alpha)
            limit = abs(alpha[r - deltas[0]]) if deltas[0] <= r <= deltas[-1] else 0.0
            return max(float(np.max(np.abs(series))), limit)
        series = table.values[:, r + deltas] @ alpha
        return (1.0 + (r - 1) * side) * float(np.max(np.abs(series)))

    def shells():
        r = 0
        while True:
            yield r, [_AtomCell(True, r)] + ([_AtomCell(False, r)] if r else [])
            r += 1

    return l1_norm_radial(evaluate, shells(), truncation)


# --- Norms of g_n -----------------------------------------------------------

def _gn_cell_terms(cell, q: int, with_count: bool = True) -> Dict[int, float]:
    """H_t(x, x_n) - H_t(x, o) for x in ``cell``, optionally times the cell's mu-mass."""
    base = cell.power + cell.level if with_count else 0
    coef = cell.coefficient if with_count else 1
    ea = base - (cell.level + cell.d_to_a) // 2
    eb = base - (cell.level + cell.d_to_b) // 2
    if cell.d_to_a == cell.d_to_b:
        return {}
    return {cell.d_to_a: coef * q_power(q, ea), cell.d_to_b: -coef * q_power(q, eb)}


def gn_maximal_l1(m: int, tree: TreeParams, policy: Optional[TGridPolicy] = None,
                  truncation: Optional[TruncationPolicy] = None, n: Optional[int] = None) -> L1Result:
    """||M_h g_n||_1 for any n in block m (the norm depends on m only)."""
    policy = (policy or TGridPolicy()).grid_only()

    def evaluate(cell) -> float:
        return combination_sup(_gn_cell_terms(cell, tree.q), tree, policy).sup

    return l1_norm_radial(evaluate, cone_classes(m, tree, n), truncation or TruncationPolicy())


def _parent_distance(level: int, d: int) -> int:
    """d(p(x), a) for a at level 0 with d(x, a) = d."""
    return d + 1 if level == d else d - 1


def gn_riesz_l1(m: int, tree: TreeParams, policy: Optional[TGridPolicy] = None,
                truncation: Optional[TruncationPolicy] = None, tol: float = RIESZ_TOL,
                n: Optional[int] = None) -> L1Result:
    """||R g_n||_1 with R g_n(x) = int t^{-1/2} (H_t g_n(x) - H_t g_n(p(x))) dt."""
    policy = (policy or TGridPolicy()).grid_only()
    q = tree.q

    def evaluate(cell) -> float:
        base = cell.power + cell.level
        pa = _parent_distance(cell.level, cell.d_to_a)
        pb = _parent_distance(cell.level, cell.d_to_b)
        acc: Dict[int, NeumaierSum] = {}
        for d, e, sign in (
            (cell.d_to_a, base - (cell.level + cell.d_to_a) // 2, 1.0),
            (pa, base - (cell.level + 1 + pa) // 2, -1.0),
            (cell.d_to_b, base - (cell.level + cell.d_to_b) // 2, -1.0),
            (pb, base - (cell.level + 1 + pb) // 2, 1.0),
        ):
            acc.setdefault(d, NeumaierSum()).add(sign * cell.coefficient * q_power(q, e))
        terms = {d: s.value for d, s in acc.items() if s.value != 0.0}
        if not terms:
            return 0.0
        table = profile_table(tree, max(terms) + 1, policy)
        return abs(grid_riesz_integral(terms, table, tol).total)

    return l1_norm_radial(evaluate, cone_classes(m, tree, n), truncation or TruncationPolicy())


class WeakTypeResult(NamedTuple):
    max_stat: float
    argmax_lambda: float
    converged: bool
    radius: int
    level_masses: Tuple[float, ...]


def gn_weak_type(n: int, tree: TreeParams, lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                 policy: Optional[TGridPolicy] = None,
                 truncation: Optional[TruncationPolicy] = None) -> WeakTypeResult:
    """max over lambda of lambda mu{M_h g_n > lambda} / ||g_n||_1."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = truncation or TruncationPolicy()
    m = block_of(n, tree.q)
    lambdas = np.sort(np.asarray(lambda_grid, dtype=float))
    masses = [NeumaierSum() for _ in lambdas]
    quiet, converged, last = 0, False, 0
    for radius, shell in cone_classes(m, tree, n):
        if radius > truncation.max_radius:
            break
        last = radius
        shell_max = 0.0
        for cell in shell:
            v = combination_sup(_gn_cell_terms(cell, tree.q, with_count=False), tree, policy).sup
            shell_max = max(shell_max, v)
            if v > lambdas[0]:
                mass = cell.scaled_count(cell.level)
                for i in np.flatnonzero(lambdas < v):
                    masses[i] += mass
        quiet = quiet + 1 if shell_max <= lambdas[0] else 0
        if quiet >= truncation.stall_window:
            converged = True
            break
    level_masses = tuple(s.value for s in masses)
    norm = make_gn(n, tree).l1_norm()
    stats = [lam * mass / norm for lam, mass in zip(lambdas, level_masses)]
    i = int(np.argmax(stats))
    return WeakTypeResult(float(stats[i]), float(lambdas[i]), converged, last, level_masses)


# --- Experiments ------------------------------------------------------

def _log_ratios(value: float, n: int) -> Tuple[float, float]:
    log_n = math.log(n)
    return value / math.log(log_n), value / log_n


def exp_gn_scaling(tree: TreeParams, m_list: Sequence[int], policy: Optional[TGridPolicy] = None,
                   truncation: Optional[TruncationPolicy] = None, threads: int = 1) -> List[ExperimentRow]:
    """||M_h g_n||_1 against log log n and log n, n = q^m - 1."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = truncation or TruncationPolicy()
    f = BMOWitness(tree)

    def run(m: int) -> ExperimentRow:
        n = tree.q ** m - 1
        if n < 2:
            raise DomainError(f"m={m} gives n={n} < 2 for q={tree.q}")
        res = gn_maximal_l1(m, tree, policy, truncation, n)
        norm = res.estimate
        ratio_loglog, ratio_log = _log_ratios(norm, n)
        logger.info("exp-gn m=%d n=%d norm=%.6g converged=%s", m, n, norm, res.converged)
        return make_row("exp-gn", n=n, m=m, pairing=pairing(f, make_gn(n, tree), tree), mh_norm=norm,
                        ratio_loglog=ratio_loglog, ratio_log=ratio_log, converged=res.converged,
                        tail_estimate=res.tail_estimate, radius=res.radius, eps=truncation.eps,
                        points_per_decade=policy.points_per_decade)

    return _map_rows(run, m_list, threads)


def exp_riesz_scaling(tree: TreeParams, m_list: Sequence[int], policy: Optional[TGridPolicy] = None,
                      truncation: Optional[TruncationPolicy] = None, tol: float = RIESZ_TOL,
                      threads: int = 1) -> List[ExperimentRow]:
    """||R g_n||_1 on the lattice and on a lattice twice as dense."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = truncation or TruncationPolicy()
    f = BMOWitness(tree)

    def run(m: int) -> ExperimentRow:
        n = tree.q ** m - 1
        if n < 2:
            raise DomainError(f"m={m} gives n={n} < 2 for q={tree.q}")
        res = gn_riesz_l1(m, tree, policy, truncation, tol, n)
        fine = gn_riesz_l1(m, tree, policy.densified(), truncation, tol, n)
        norm, norm_fine = res.estimate, fine.estimate
        ratio_loglog, ratio_log = _log_ratios(norm, n)
        return make_row("exp-riesz", n=n, m=m, pairing=pairing(f, make_gn(n, tree), tree), riesz_norm=norm,
                        riesz_norm_fine=norm_fine, refine_rel_diff=abs(norm_fine - norm) / max(abs(norm_fine), 1e-300),
                        ratio_loglog=ratio_loglog, ratio_log=ratio_log,
                        converged=res.converged and fine.converged, tail_estimate=res.tail_estimate,
                        radius=res.radius, eps=truncation.eps, points_per_decade=policy.points_per_decade)

    return _map_rows(run, m_list, threads)


def exp_atom_bound(tree: TreeParams, batch: int = ATOM_BATCH, caps: Sequence[int] = ATOM_CAPS, seed: int = 0,
                   policy: Optional[TGridPolicy] = None, truncation: Optional[TruncationPolicy] = None,
                   threads: int = 1, bmo_caps: Tuple[int, int] = (BMO_ROOT_HEIGHT_CAP, BMO_SIZE_CAP)
                   ) -> List[ExperimentRow]:
    """max ||M_h a||_1 over a seeded batch of atoms, per size cap."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = truncation or TruncationPolicy()
    f = BMOWitness(tree)
    bmo = bmo_norm_estimate(f, tree, *bmo_caps).value
    rows = []
    for cap in caps:
        children = np.random.SeedSequence([seed, cap]).spawn(batch)
        atoms = [random_atom(child, tree, cap=cap) for child in children]
        results = _map_rows(lambda a: atom_maximal_l1(a, tree, policy, truncation), atoms, threads)
        norms = [r.estimate for r in results]
        i = int(np.argmax(norms))
        max_pairing = max(abs(atom_pairing(f, a, tree)) for a in atoms)
        rows.append(make_row(
            "exp-atoms", cap=cap, batch=batch, max_norm=norms[i], mean_norm=float(np.mean(norms)),
            argmax_index=i, argmax_h_lo=atoms[i].support.h_lo, argmax_h_hi=atoms[i].support.h_hi,
            max_pairing=max_pairing, bmo_estimate=bmo, pairing_ratio=max_pairing / bmo if bmo else float("nan"),
            converged=all(r.converged for r in results), eps=truncation.eps,
            points_per_decade=policy.points_per_decade,
        ))
        logger.info("exp-atoms cap=%d max=%.6g mean=%.6g", cap, norms[i], float(np.mean(norms)))
    return rows


def exp_weak_type(tree: TreeParams, n_list: Sequence[int], lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                  policy: Optional[TGridPolicy] = None, truncation: Optional[TruncationPolicy] = None,
                  threads: int = 1) -> List[ExperimentRow]:
    policy = (policy or TGridPolicy()).grid_only()

    def run(n: int) -> ExperimentRow:
        res = gn_weak_type(n, tree, lambda_grid, policy, truncation)
        return make_row("exp-weaktype", n=n, m=block_of(n, tree.q), l1_norm=make_gn(n, tree).l1_norm(),
                        max_stat=res.max_stat, argmax_lambda=res.argmax_lambda, lambda_count=len(lambda_grid),
                        converged=res.converged, radius=res.radius, points_per_decade=policy.points_per_decade)

    return _map_rows(run, n_list, threads)


def exp_g_partials(tree: TreeParams, N: int = G_CUTOFF, policy: Optional[TGridPolicy] = None,
                   truncation: Optional[TruncationPolicy] = None, threads: int = 1) -> List[ExperimentRow]:
    """Per label block: cumulative triangle bound for ||M_h g||_1 and cumulative pairing with f."""
    policy = (policy or TGridPolicy()).grid_only()
    truncation = truncation or TruncationPolicy()
    q = tree.q
    start = max(q, 2)
    blocks = []
    m = block_of(start, q)
    while q ** (m - 1) <= N:
        lo, hi = max(q ** (m - 1), start), min(q ** m - 1, N)
        if lo <= hi:
            blocks.append((m, lo, hi))
        m += 1
    norms = _map_rows(lambda b: gn_maximal_l1(b[0], tree, policy, truncation), blocks, threads)

    rows = []
    bound, loglog, pair = NeumaierSum(), NeumaierSum(), NeumaierSum()
    for (m, lo, hi), res in zip(blocks, norms):
        coefs = [g_coefficient(n) for n in range(lo, hi + 1)]
        block_mass = neumaier_sum(coefs)
        bound += block_mass * res.estimate
        loglog += neumaier_sum(c * math.log(math.log(n)) for c, n in zip(coefs, range(lo, hi + 1)))
        pair += block_mass * (m - 1) * tree.log_q
        rows.append(make_row(
            "exp-g", m=m, n_lo=lo, n_hi=hi, block_mass=block_mass, mh_norm_gn=res.estimate,
            bound_partial=bound.value, loglog_partial=loglog.value,
            ratio=bound.value / loglog.value if loglog.value > 0 else float("nan"),
            pairing_partial=pair.value, converged=res.converged, eps=truncation.eps,
            points_per_decade=policy.points_per_decade,
        ))
    return rows


def local_bound_study(tree: TreeParams, levels: Sequence[int], policy: Optional[TGridPolicy] = None,
                      threads: int = 1) -> List[ExperimentRow]:
    """||M_loc delta_y||_1 / ||delta_y||_1 for y at several levels."""

    def run(level: int) -> ExperimentRow:
        y = Vertex(level, ()) if level >= 0 else Vertex(0, (0,) * (-level))
        res = local_maximal_l1(y, tree, policy)
        return make_row("exp-local", level=level, local_norm=res.value, converged=res.converged,
                        radius=res.radius, evaluations=res.evaluations)

    return _map_rows(run, levels, threads)
