import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from services import flow_kernels
from services.errors import DomainError, InvalidQueryError, NonFiniteError
from services.flow_kernels import (
    FinSuppFn,
    KernelQuery,
    TGridPolicy,
    apply_A,
    apply_L,
    combination_sup,
    comparability_ratio,
    conjugated_laplacian_entry,
    ergodic_average,
    evaluate_terms,
    flow_heat_kernel,
    flow_heat_kernel_via_tree,
    grad_sup,
    gradient_pointwise_bound,
    heat_composition,
    heat_semigroup,
    heat_sup,
    heat_terms,
    heat_total_mass,
    j_profile,
    laplacian_entry,
    local_maximal_l1,
    log_flow_heat_kernel,
    maximal_heat,
    maximal_local,
    maximal_poisson,
    poisson_kernel,
    poisson_kernel_trapezoid,
    poisson_lattice_weights,
    poisson_weight_total,
    profile_table,
    q_factor,
    riesz_kernel,
    riesz_kernel_parts,
    riesz_tail_sup,
    series_cutoff,
    tree_heat_kernel,
    tree_heat_total,
)
from services.hardy_lab import make_gn
from services.oracles import uniformization_heat
from services.tree_geometry import ORIGIN, Vertex, neighbours, random_vertex


def test_query_validation():
    KernelQuery(0, -2, 2, 1.0).validate()
    with pytest.raises(InvalidQueryError):
        KernelQuery(0, 3, 2, 1.0).validate()
    with pytest.raises(InvalidQueryError):
        KernelQuery(0, 1, 2, 1.0).validate()
    with pytest.raises(DomainError):
        KernelQuery(0, 0, 0, -1.0).validate()


def test_series_cutoff_bounds_the_tail(tree):
    for d in (0, 5, 50):
        K = series_cutoff(tree.q, d, 1e-13)
        tail = lambda k: tree.q ** (-float(k)) * ((d + 2 * k + 1) / (tree.q - 1) + 2.0 * tree.q / (tree.q - 1) ** 2)
        assert tail(K) <= 1e-13 * (d + 1)
        assert K == 0 or tail(K - 1) > 1e-13 * (d + 1)


def test_time_zero(tree):
    assert tree_heat_kernel(0.0, 0, tree) == 1.0
    assert tree_heat_kernel(0.0, 3, tree) == 0.0
    assert flow_heat_kernel(KernelQuery(0, 0, 0, 0.0), tree) == 1.0
    with pytest.raises(DomainError):
        tree_heat_kernel(-0.5, 0, tree)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0, 5.0])
def test_flow_kernel_matches_uniformization(tree, t):
    pairs = [(ORIGIN, Vertex(0, (0,) * d)) for d in range(7)] + [(Vertex(1, ()), Vertex(0, (1,)))]
    for x, y in pairs:
        oracle = uniformization_heat(t, x, y, tree)
        value = flow_heat_kernel(KernelQuery.from_vertices(x, y, t), tree)
        assert abs(value - oracle.value) <= oracle.error_bound + 1e-10


def test_flow_kernel_via_tree_kernel(tree):
    for lx, ly, d in [(0, 0, 0), (2, -1, 3), (-3, 1, 6), (4, 4, 8)]:
        for t in (0.3, 2.0, 40.0):
            query = KernelQuery(lx, ly, d, t)
            assert flow_heat_kernel(query, tree) == pytest.approx(flow_heat_kernel_via_tree(query, tree), rel=1e-10)
            assert log_flow_heat_kernel(query, tree) == pytest.approx(math.log(flow_heat_kernel(query, tree)), rel=1e-12)


def test_symmetry(tree):
    rng = np.random.default_rng(5)
    for _ in range(20):
        x, y = random_vertex(rng, tree), random_vertex(rng, tree)
        a = KernelQuery.from_vertices(x, y, 1.5)
        assert flow_heat_kernel(a, tree) == flow_heat_kernel(a.swapped(), tree)


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0, 20.0])
def test_normalization(tree, t):
    for x in (ORIGIN, Vertex(2, (1,)), Vertex(0, (1, 0))):
        assert heat_total_mass(t, tree, x) == pytest.approx(1.0, abs=1e-8)
    assert tree_heat_total(t, tree) == pytest.approx(1.0, abs=1e-8)


def test_semigroup(tree2):
    rng = np.random.default_rng(11)
    for _ in range(4):
        x, z = random_vertex(rng, tree2, 3, 3), random_vertex(rng, tree2, 3, 3)
        composed = heat_composition(x, z, 1.0, 1.0, tree2)
        direct = flow_heat_kernel(KernelQuery.from_vertices(x, z, 2.0), tree2)
        assert composed == pytest.approx(direct, rel=1e-6)


def test_comparability(tree):
    ratios = [comparability_ratio(KernelQuery(0, -d, d, t), tree)
              for d in range(0, 61, 6) for t in (0.5, 1.0, 5.0, 20.0, 100.0)]
    assert max(ratios) / min(ratios) <= 20.0


def test_operator_A(tree, brute):
    ball = brute(tree, ORIGIN, 3)
    ones = FinSuppFn({v: 1 for v in ball.vertices}, tree)
    for x in ball.sphere(1) + [ORIGIN]:
        assert apply_A(ones, x, tree) == 1
        assert apply_L(ones, x, tree) == 0
    rows = [sum((laplacian_entry(x, y, tree) for y in neighbours(x, tree)), Fraction(0)) for x in ball.sphere(2)]
    assert all(r == -1 for r in rows)


def test_self_adjoint(tree):
    rng = np.random.default_rng(8)
    f = FinSuppFn({random_vertex(rng, tree, 2, 2): int(rng.integers(-5, 6)) for _ in range(8)}, tree)
    g = FinSuppFn({random_vertex(rng, tree, 2, 2): int(rng.integers(-5, 6)) for _ in range(8)}, tree)

    def inner(u, v):
        return sum(float(apply_L(u, x, tree)) * float(val) * float(tree.q) ** x.level for x, val in v.entries.items())

    assert inner(f, g) == pytest.approx(inner(g, f), rel=1e-12, abs=1e-12)


def test_conjugated_laplacian(tree, brute):
    ball = brute(tree, ORIGIN, 6)
    interior = [v for v in ball.vertices if ball.depth[v] <= 5]
    for x in interior[:40]:
        for y in [x] + neighbours(x, tree):
            assert conjugated_laplacian_entry(x, y, tree) == pytest.approx(float(laplacian_entry(x, y, tree)), abs=1e-12)
    assert conjugated_laplacian_entry(ORIGIN, Vertex(0, (0, 0)), tree) == 0.0


def test_fin_supp_mass(tree2):
    f = FinSuppFn({ORIGIN: 1, Vertex(1, ()): -1, Vertex(0, (1,)): 3}, tree2)
    assert f.mass == Fraction(1) - 2 + Fraction(3, 2)
    h = FinSuppFn({ORIGIN: 0.25, Vertex(0, (0,)): 0.5}, tree2)
    assert h.mass == pytest.approx(0.5, abs=1e-14)
    assert h.l1_norm() == pytest.approx(0.5)
    assert h.support == [ORIGIN, Vertex(0, (0,))]


def test_heat_semigroup_is_a_kernel_sum(tree2):
    f = FinSuppFn({ORIGIN: 2.0, Vertex(0, (1, 1)): -0.5}, tree2)
    x = Vertex(1, (1,))
    direct = sum(v * flow_heat_kernel(KernelQuery.from_vertices(x, y, 0.7), tree2) * 2.0 ** y.level
                 for y, v in f.entries.items())
    assert heat_semigroup(f, x, 0.7, tree2) == pytest.approx(direct, rel=1e-12)
    assert evaluate_terms(heat_terms(f, x, tree2), 0.7, tree2) == pytest.approx(direct, rel=1e-12)


def test_heat_sup(tree):
    assert heat_sup(0, 0, 0, tree).sup <= 1.0 + 1e-12
    policy = TGridPolicy()
    for d in (1, 4, 30):
        res = heat_sup(0, -d, d, tree, policy)
        assert res.sup >= j_profile(res.argmax_t, d, tree) * (1 - 1e-12)
        assert (d + 1) ** 2 * res.sup <= 10.0
        weighted = heat_sup(0, -d, d, tree, policy, weighted=True)
        assert (d + 1) ** 3 * weighted.sup <= 50.0


def test_combination_sup_dominates_members(tree2):
    terms = {0: 1.0, 2: -0.5}
    sup = combination_sup(terms, tree2, TGridPolicy()).sup
    for t in (0.01, 0.5, 1.0, 10.0, 1000.0):
        assert sup >= abs(evaluate_terms(terms, t, tree2)) * (1 - 1e-12)


def test_combination_sup_rejects_non_finite_lattice_values(tree2, monkeypatch):
    policy = TGridPolicy()
    good = profile_table(tree2, 2, policy)
    values = good.values.copy()
    values[-3:, :] = np.nan
    monkeypatch.setattr(flow_kernels, "profile_table", lambda *args: replace(good, values=values))
    with pytest.raises(NonFiniteError) as info:
        combination_sup({0: 1.0, 2: -0.5}, tree2, policy)
    assert info.value.to_record()["kind"] == "non-finite"


def test_wide_profile_tables_stay_finite(tree2):
    table = profile_table(tree2, 100, TGridPolicy().grid_only())
    assert table.t[-1] > 2e9
    assert np.all(np.isfinite(table.values))
    assert np.all(table.values[-1, :101] > 0)


def test_grad_sup(tree2):
    y = Vertex(0, (0,))
    Q = q_factor(KernelQuery.from_vertices(ORIGIN, y), tree2)
    assert grad_sup(ORIGIN, y, tree2).sup <= 50.0 * Q / 8
    with pytest.raises(DomainError):
        grad_sup(ORIGIN, Vertex(1, ()), tree2)
    dense = np.logspace(-3, 6, 20_000)
    oracle = max(abs(j_profile(t, 1, tree2) - j_profile(t, 0, tree2)) for t in dense[::20])
    assert grad_sup(ORIGIN, y, tree2).sup >= oracle * (1 - 1e-6)


def test_gradient_pointwise_bound(tree2):
    for y in (Vertex(0, (0,)), Vertex(0, (1, 0, 1)), Vertex(2, (1, 1))):
        for t in (0.1, 1.0, 10.0, 100.0):
            lhs, rhs = gradient_pointwise_bound(ORIGIN, y, t, tree2)
            assert lhs <= 50.0 * rhs


def test_maximal_heat_vanishes_off_the_cone(tree2):
    g5 = make_gn(5, tree2)
    for x in (Vertex(4, (1,)), Vertex(5, ()), Vertex(6, (1, 0))):
        assert maximal_heat(g5, x, tree2) == 0.0
    x = Vertex(0, (1,))
    assert maximal_heat(g5, x, tree2) >= abs(heat_semigroup(g5, x, 1.0, tree2))


def test_maximal_operators_order(tree2):
    rng = np.random.default_rng(4)
    delta = FinSuppFn({ORIGIN: 1.0}, tree2)
    g5 = make_gn(5, tree2)
    for _ in range(6):
        x = random_vertex(rng, tree2)
        for f in (delta, g5):
            mh = maximal_heat(f, x, tree2)
            assert maximal_poisson(f, x, tree2) <= mh * (1 + 1e-6) + 1e-300
            assert maximal_local(f, x, tree2) <= mh * (1 + 1e-6) + 1e-300
    assert maximal_heat(FinSuppFn({}, tree2), ORIGIN, tree2) == 0.0


def test_poisson(tree2):
    for t in (0.1, 1.0, 10.0, 100.0):
        assert poisson_weight_total(t) == pytest.approx(1.0, abs=1e-10)
    query = KernelQuery(0, 0, 2, 1.0)
    assert poisson_kernel(query, tree2) == pytest.approx(poisson_kernel_trapezoid(query, tree2, nodes=4000), rel=1e-7)
    for t in (0.2, 1.0, 5.0):
        assert poisson_kernel(KernelQuery(0, 0, 0, t), tree2) <= 1.0
    with pytest.raises(DomainError):
        poisson_kernel(KernelQuery(0, 0, 0, 0.0), tree2)


def test_poisson_lattice_weights_keep_the_mass_above_the_top(tree2):
    t_grid = profile_table(tree2, 0, TGridPolicy()).t
    poisson_t = t_grid[t_grid <= math.sqrt(t_grid[-1] / 50.0)]
    h = math.log(t_grid[1] / t_grid[0])
    u_low = math.log(poisson_t[0] ** 2 / 4.0) - math.log(800.0)
    u = np.arange(u_low, math.log(t_grid[-1]) + 0.5 * h, h)
    weights = poisson_lattice_weights(u, poisson_t)
    assert weights.shape == (poisson_t.size, u.size + 1)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-4)
    assert weights[-1, -1] > 0.05


def test_maximal_poisson_matches_the_quadrature_kernel(tree2):
    y = Vertex(0, (1, 0))
    delta = FinSuppFn({y: 1.0}, tree2)
    lattice = maximal_poisson(delta, ORIGIN, tree2)
    sampled = max(poisson_kernel(KernelQuery(0, 0, 2, t), tree2) for t in np.logspace(-1, 2, 61))
    assert lattice == pytest.approx(sampled, rel=2e-3)


def test_riesz_kernel(tree2):
    x, y = Vertex(0, (0,)), ORIGIN
    coarse = riesz_kernel(x, y, tree2, tol=1e-6)
    fine = riesz_kernel(x, y, tree2, tol=1e-9)
    assert math.isfinite(coarse)
    assert coarse == pytest.approx(fine, rel=1e-6)
    parts = riesz_kernel_parts(x, y, tree2)
    assert parts.total == pytest.approx(parts.near + parts.far + parts.tail)


def test_riesz_tail_bounds(tree2):
    for x, y in [(Vertex(0, (0,)), Vertex(0, (1,))), (Vertex(0, (0, 0)), Vertex(0, (1, 1))), (Vertex(2, (1,)), ORIGIN)]:
        gradient, scaled, bound = riesz_tail_sup(x, y, tree2)
        assert gradient <= 100.0 * bound
        assert scaled <= 100.0 * bound


def test_ergodic_average_dominates(tree2):
    delta = FinSuppFn({ORIGIN: 1.0}, tree2)
    for x in (ORIGIN, Vertex(0, (1,)), Vertex(0, (1, 0))):
        for t in (0.5, 1.0, 5.0):
            assert ergodic_average(delta, x, t, tree2) >= 0.1 * heat_semigroup(delta, x, t, tree2)


def test_local_maximal_is_level_free(tree2):
    a = local_maximal_l1(ORIGIN, tree2)
    b = local_maximal_l1(Vertex(3, ()), tree2)
    c = local_maximal_l1(Vertex(0, (1, 1, 1)), tree2)
    assert a.converged
    assert math.isfinite(a.value) and a.value >= 1.0
    assert b.value == pytest.approx(a.value, rel=1e-12)
    assert c.value == pytest.approx(a.value, rel=1e-12)


def test_grid_policy_validation():
    with pytest.raises(DomainError):
        TGridPolicy(t_min=1.0, t_max=0.5)
    with pytest.raises(DomainError):
        TGridPolicy(points_per_decade=5)
    policy = TGridPolicy()
    assert policy.densified().points_per_decade == 2 * policy.points_per_decade
    assert not policy.grid_only().refine
    grid = policy.grid(16)
    assert grid[0] == policy.t_min
    assert grid[-1] >= policy.t_max * 256
