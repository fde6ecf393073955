"""The `verify` subcommand: invariant checks with pinned thresholds.

Each check returns a ``CheckResult``; the suite keeps going after a failure so
the summary lists every broken invariant at once.
"""
import logging
import math
from fractions import Fraction
from typing import Callable, List, NamedTuple, Tuple

import numpy as np

from config import RunConfig
from services.errors import TreeflowError
from services.flow_kernels import (
    FinSuppFn,
    KernelQuery,
    TGridPolicy,
    combination_sup,
    flow_heat_kernel,
    grad_sup,
    heat_composition,
    heat_sup,
    heat_total_mass,
    j_profile,
    laplacian_entry,
    local_maximal_l1,
    maximal_heat,
    maximal_poisson,
    operator_A_entry,
    q_factor,
)
from services.hardy_lab import (
    exp_atom_bound,
    exp_gn_scaling,
    exp_riesz_scaling,
    exp_weak_type,
    label_vertex,
    make_gn,
    random_atom,
    vertex_label,
)
from services.oracles import detailed_balance_gap, uniformization_heat
from services.radial_summation import flow_profile, radial_sphere_sum, sphere_sum_closed_form
from services.scalar_kernels import bessel_sequence, s_profile
from services.tree_geometry import ORIGIN, TreeParams, Vertex, iter_sphere, neighbours, random_vertex

logger = logging.getLogger(__name__)

BESSEL_TOL = 1e-10
MASS_TOL = 1e-8
ORACLE_ABS_TOL = 1e-10
SEMIGROUP_TOL = 1e-6
SYMMETRY_TOL = 1e-13
HEAT_BOUND = 10.0
WEIGHTED_BOUND = 50.0
GRADIENT_BOUND = 50.0
COMPARABILITY_BAND = 20.0
LOGLOG_BAND = 3.0
ATOM_GROWTH = 2.0
RIESZ_REFINE_TOL = 1e-6
WEAK_TYPE_BOUND = 10.0
LOCAL_SPREAD_TOL = 1e-9

VERIFY_WEAKTYPE_N = (3, 15, 255)
VERIFY_PAIRS = 10
LOG_HALVING = 0.5

CHECK_COLUMNS = ("check", "passed", "observed", "threshold", "detail")


class VerifyScales(NamedTuple):
    """Problem sizes of the scaling checks; ``quick`` trades coverage for run time."""

    m_list: Tuple[int, ...]
    riesz_m_list: Tuple[int, ...]
    atom_batch: int
    atom_caps: Tuple[int, ...]
    domination_points: int
    quick: bool = False


FULL_SCALES = VerifyScales(m_list=(2, 4, 8, 16), riesz_m_list=(2, 4, 8), atom_batch=200, atom_caps=(16, 64),
                           domination_points=334)
QUICK_SCALES = VerifyScales(m_list=(2, 4, 8), riesz_m_list=(2, 4), atom_batch=20, atom_caps=(16, 64),
                            domination_points=40, quick=True)


def verify_scales(config: RunConfig) -> VerifyScales:
    return QUICK_SCALES if config.quick else FULL_SCALES


class CheckResult(NamedTuple):
    name: str
    passed: bool
    observed: float
    threshold: float
    detail: str = ""

    def as_row(self) -> dict:
        return {"check": self.name, "passed": self.passed, "observed": self.observed,
                "threshold": self.threshold, "detail": self.detail}


def _below(name: str, observed: float, threshold: float, detail: str = "") -> CheckResult:
    return CheckResult(name, bool(observed <= threshold), float(observed), float(threshold), detail)


def check_bessel_recurrence(tree: TreeParams, config: RunConfig) -> CheckResult:
    worst = 0.0
    for t in (0.1, 1.0, 10.0, 100.0):
        h = bessel_sequence(t, 52)
        for j in range(1, 51):
            lhs = h[j - 1] - h[j + 1]
            rhs = 2.0 * j / t * h[j]
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return _below("bessel-recurrence", worst, BESSEL_TOL, "t in {0.1, 1, 10, 100}, j <= 50")


def check_normalization(tree: TreeParams, config: RunConfig) -> CheckResult:
    centres = [ORIGIN, Vertex(1, ()), Vertex(0, (1,)), Vertex(2, (1, 0)), Vertex(0, (0, 0, 1))]
    worst = max(abs(heat_total_mass(t, tree, x) - 1.0) for t in (0.5, 1.0, 5.0, 20.0) for x in centres)
    return _below("stochasticity", worst, MASS_TOL, "t in {0.5, 1, 5, 20}, 5 centres")


def check_oracle_equivalence(tree: TreeParams, config: RunConfig) -> CheckResult:
    pairs = [(ORIGIN, Vertex(0, (0,) * d)) for d in range(7)]
    pairs += [(ORIGIN, label_vertex(tree.q ** 2 - 1, tree)), (Vertex(1, ()), ORIGIN)]
    worst = 0.0
    for x, y in pairs:
        for t in (0.5, 1.0, 2.0, 5.0):
            oracle = uniformization_heat(t, x, y, tree)
            heat = flow_heat_kernel(KernelQuery.from_vertices(x, y, t), tree)
            excess = abs(heat - oracle.value) - oracle.error_bound
            worst = max(worst, excess / max(abs(oracle.value), 1.0))
    return _below("oracle-equivalence", worst, ORACLE_ABS_TOL, "excess over the certified bound")


def check_semigroup(tree: TreeParams, config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for _ in range(VERIFY_PAIRS):
        x, z = random_vertex(rng, tree), random_vertex(rng, tree)
        composed = heat_composition(x, z, 1.0, 1.0, tree)
        direct = flow_heat_kernel(KernelQuery.from_vertices(x, z, 2.0), tree)
        worst = max(worst, abs(composed - direct) / direct)
    return _below("semigroup", worst, SEMIGROUP_TOL, f"t = s = 1, {VERIFY_PAIRS} pairs")


def check_sphere_closed_form(tree: TreeParams, config: RunConfig) -> CheckResult:
    mismatches = 0
    for n in range(1, 5):
        g = flow_profile(ORIGIN, n, tree)
        for m in range(1, 7):
            closed = sphere_sum_closed_form(m, n, tree)
            by_class = radial_sphere_sum(g, ORIGIN, m, tree)
            brute = sum((g(v.level, m) for v in iter_sphere(ORIGIN, m, tree)), Fraction(0))
            mismatches += (closed != by_class) + (closed != brute)
    return CheckResult("sphere-closed-form", mismatches == 0, float(mismatches), 0.0, "exact, m <= 6, n <= 4")


def check_kernel_bounds(tree: TreeParams, config: RunConfig) -> List[CheckResult]:
    policy = TGridPolicy().grid_only()
    heat, weighted, gradient = 0.0, 0.0, 0.0
    for d in range(0, 101):
        heat = max(heat, (d + 1) ** 2 * combination_sup({d: 1.0}, tree, policy).sup)
        if d == 0:
            continue
        y = Vertex(0, (0,) * d)
        Q = q_factor(KernelQuery.from_vertices(ORIGIN, y), tree)
        weighted = max(weighted, (d + 1) ** 3 * heat_sup(0, -d, d, tree, policy, weighted=True).sup / Q)
        gradient = max(gradient, (d + 1) ** 3 * grad_sup(ORIGIN, y, tree, policy).sup / Q)
    return [
        _below("heat-sup-constant", heat, HEAT_BOUND, "max over d <= 100 of (d+1)^2 sup_t H_t/Q"),
        _below("weighted-sup-constant", weighted, WEIGHTED_BOUND, "max over d <= 100 of (d+1)^3 sup_t (d/t) H_t/Q"),
        _below("gradient-sup-constant", gradient, GRADIENT_BOUND, "max over d <= 100 of (d+1)^3 grad_sup/Q"),
    ]


def check_comparability(tree: TreeParams, config: RunConfig) -> CheckResult:
    ratios = []
    for d in (0, 1, 2, 5, 10, 20, 50):
        for t in np.logspace(-1.0, 4.0, 51):
            ratios.append(j_profile(float(t), d, tree) / s_profile(d, float(t)))
    band = max(ratios) / min(ratios)
    return _below("comparability-band", band, COMPARABILITY_BAND, "max/min of H_t/(Q s_d(t))")


def check_gn_scaling(tree: TreeParams, config: RunConfig) -> List[CheckResult]:
    scales = verify_scales(config)
    rows = exp_gn_scaling(tree, scales.m_list, threads=config.threads)
    pairing_gap = max(abs(r["pairing"] - (r["m"] - 1) * tree.log_q) for r in rows)
    loglog = [r["ratio_loglog"] for r in rows]
    log = [r["ratio_log"] for r in rows]
    decreasing = all(b < a for a, b in zip(log, log[1:]))
    results = [
        _below("gn-pairing", pairing_gap, 1e-12, "pairing(f, g_n) = (m-1) log q"),
        _below("gn-loglog-band", max(loglog) / min(loglog), LOGLOG_BAND, f"m in {scales.m_list}"),
        CheckResult("gn-log-decreasing", decreasing and all(r["converged"] for r in rows),
                    log[-1] / log[0], 1.0, "||M_h g_n||_1 / log n decreasing in m"),
    ]
    if not scales.quick:
        results.append(_below("gn-log-halving", log[-1] / log[0], LOG_HALVING,
                              f"final over initial ||M_h g_n||_1 / log n, m in {scales.m_list}"))
    return results


def check_atoms(tree: TreeParams, config: RunConfig) -> CheckResult:
    scales = verify_scales(config)
    rows = exp_atom_bound(tree, scales.atom_batch, scales.atom_caps, config.seed, threads=config.threads,
                          bmo_caps=(8, 16))
    growth = rows[-1]["max_norm"] / rows[0]["max_norm"]
    return _below("atom-uniform-bound", growth, ATOM_GROWTH,
                  f"batch {scales.atom_batch}, caps {scales.atom_caps}")


def check_riesz(tree: TreeParams, config: RunConfig) -> List[CheckResult]:
    m_list = verify_scales(config).riesz_m_list
    rows = exp_riesz_scaling(tree, m_list, tol=config.tol, threads=config.threads)
    refine = max(r["refine_rel_diff"] for r in rows)
    loglog = [r["ratio_loglog"] for r in rows]
    return [
        _below("riesz-self-refinement", refine, RIESZ_REFINE_TOL, "lattice vs doubled lattice"),
        _below("riesz-loglog-band", max(loglog) / min(loglog), LOGLOG_BAND, f"m in {m_list}"),
    ]


def check_poisson_domination(tree: TreeParams, config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    atom = random_atom(config.seed, tree, root_level_range=(-2, 2), cap=6).to_function(tree)
    functions = [FinSuppFn({ORIGIN: 1.0}, tree), make_gn(5, tree), atom]
    worst = -math.inf
    count = 0
    for f in functions:
        for _ in range(verify_scales(config).domination_points):
            x = random_vertex(rng, tree)
            mp, mh = maximal_poisson(f, x, tree), maximal_heat(f, x, tree)
            worst = max(worst, (mp - mh) / max(mh, 1e-300))
            count += 1
    return _below("poisson-domination", worst, 1e-6, f"{count} evaluations of M_P f / M_h f - 1")


def check_weak_type(tree: TreeParams, config: RunConfig) -> CheckResult:
    rows = exp_weak_type(tree, VERIFY_WEAKTYPE_N, threads=config.threads)
    return _below("weak-type", max(r["max_stat"] for r in rows), WEAK_TYPE_BOUND,
                  f"n in {VERIFY_WEAKTYPE_N}")


def check_local_maximal(tree: TreeParams, config: RunConfig) -> CheckResult:
    values = [local_maximal_l1(Vertex(0, (0,) * 3), tree).value,
              local_maximal_l1(ORIGIN, tree).value,
              local_maximal_l1(Vertex(3, ()), tree).value]
    spread = (max(values) - min(values)) / max(values)
    return _below("local-maximal-level-free", spread, LOCAL_SPREAD_TOL, f"norm {values[1]:.6g}")


def check_symmetry(tree: TreeParams, config: RunConfig) -> List[CheckResult]:
    rng = np.random.default_rng(config.seed + 1)
    worst = 0.0
    for _ in range(2 * VERIFY_PAIRS):
        x, y = random_vertex(rng, tree), random_vertex(rng, tree)
        a = flow_heat_kernel(KernelQuery.from_vertices(x, y, 1.0), tree)
        b = flow_heat_kernel(KernelQuery.from_vertices(y, x, 1.0), tree)
        worst = max(worst, abs(a - b) / max(a, b))
    q = Fraction(tree.q)
    rows_off, adjoint_off = 0, 0
    for _ in range(VERIFY_PAIRS):
        x = random_vertex(rng, tree)
        rows_off += sum((operator_A_entry(x, y, tree) for y in neighbours(x, tree)), Fraction(0)) != 1
        for y in neighbours(x, tree):
            adjoint_off += q ** x.level * laplacian_entry(x, y, tree) != q ** y.level * laplacian_entry(y, x, tree)
    return [
        _below("kernel-symmetry", worst, SYMMETRY_TOL, "H_t(x, y) = H_t(y, x)"),
        CheckResult("row-stochastic", rows_off == 0, float(rows_off), 0.0, "sum_y A(x, y) = 1 exactly"),
        CheckResult("self-adjoint", adjoint_off == 0, float(adjoint_off), 0.0, "mu(x) L(x, y) = mu(y) L(y, x)"),
    ]


def check_detailed_balance(tree: TreeParams, config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed + 2)
    nonzero = 0
    for _ in range(VERIFY_PAIRS):
        x, y = random_vertex(rng, tree, 2, 2), random_vertex(rng, tree, 2, 2)
        nonzero += sum(detailed_balance_gap(x, y, k, tree) != 0 for k in range(11))
    return CheckResult("detailed-balance", nonzero == 0, float(nonzero), 0.0, "exact, k <= 10")


def check_labels(tree: TreeParams, config: RunConfig) -> CheckResult:
    top = tree.q ** 8
    bad = 0
    seen = set()
    for i in range(top):
        v = label_vertex(i, tree)
        m = len(v.w)
        bad += v.level != 0 or vertex_label(v, tree) != i or v in seen or v.norm != 2 * m
        seen.add(v)
    return CheckResult("label-bijection", bad == 0, float(bad), 0.0, f"i < q^8 = {top}")


CHECKS: List[Callable[[TreeParams, RunConfig], object]] = [
    check_bessel_recurrence,
    check_normalization,
    check_oracle_equivalence,
    check_semigroup,
    check_sphere_closed_form,
    check_kernel_bounds,
    check_comparability,
    check_gn_scaling,
    check_atoms,
    check_riesz,
    check_poisson_domination,
    check_weak_type,
    check_local_maximal,
    check_symmetry,
    check_detailed_balance,
    check_labels,
]


def run_checks(config: RunConfig, tree: TreeParams, checks=None) -> dict:
    """Runs every check; errors inside a check count as its failure."""
    results: List[CheckResult] = []
    failures = []
    for check in checks or CHECKS:
        name = check.__name__.replace("check_", "").replace("_", "-")
        try:
            outcome = check(tree, config)
        except TreeflowError as e:
            failures.append(dict(e.to_record(), check=name))
            results.append(CheckResult(name, False, float("nan"), float("nan"), e.kind))
            continue
        for result in outcome if isinstance(outcome, list) else [outcome]:
            results.append(result)
            logger.info("verify %s: %s (%.6g vs %.6g)", result.name, "pass" if result.passed else "FAIL",
                        result.observed, result.threshold)
            if not result.passed:
                failures.append({"status": "error", "kind": "invariant", "check": result.name,
                                 "observed": result.observed, "threshold": result.threshold})
    return {"status": "success", "rows": [r.as_row() for r in results], "columns": CHECK_COLUMNS,
            "failures": failures, "passed": sum(r.passed for r in results), "total": len(results)}
