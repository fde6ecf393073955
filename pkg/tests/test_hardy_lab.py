import math

import pytest

from services.errors import AtomAxiomError, DomainError
from services.hardy_lab import (
    SCHEMAS,
    Atom,
    BMOWitness,
    atom_maximal_l1,
    atom_pairing,
    bmo_norm_estimate,
    bmo_oscillation,
    bmo_witness,
    check_atom,
    check_atom_function,
    exp_atom_bound,
    exp_g_partials,
    exp_gn_scaling,
    exp_riesz_scaling,
    exp_weak_type,
    gn_maximal_l1,
    gn_weak_type,
    label_vertex,
    local_bound_study,
    make_g,
    make_gn,
    make_row,
    pairing,
    random_atom,
    vertex_label,
    zero_atom,
)
from services.flow_kernels import TGridPolicy, maximal_heat
from services.radial_summation import TruncationPolicy
from services.tree_geometry import ORIGIN, Vertex, make_trapezoid, singleton_trapezoid

FAST = TruncationPolicy(eps=1e-6)


def test_labels(tree2):
    assert label_vertex(0, tree2) == ORIGIN
    assert label_vertex(1, tree2) == Vertex(1, (1,))
    assert label_vertex(5, tree2) == Vertex(3, (1, 0, 1))
    for i in range(200):
        v = label_vertex(i, tree2)
        assert v.level == 0
        assert vertex_label(v, tree2) == i
    with pytest.raises(DomainError):
        label_vertex(-1, tree2)
    with pytest.raises(DomainError):
        vertex_label(Vertex(1, ()), tree2)


def test_labels_are_injective(tree):
    seen = {label_vertex(i, tree) for i in range(500)}
    assert len(seen) == 500


def test_gn_pairing_with_witness(tree):
    f = BMOWitness(tree)
    for n in range(2, 60):
        m = len(label_vertex(n, tree).w)
        assert pairing(f, make_gn(n, tree), tree) == pytest.approx((m - 1) * math.log(tree.q), abs=1e-12)
    assert make_gn(5, tree).mass == 0
    with pytest.raises(DomainError):
        make_gn(1, tree)


def test_make_g(tree2):
    g = make_g(100, tree2)
    assert abs(float(g.mass)) <= 1e-15
    assert len(g.support) == 100
    with pytest.raises(DomainError):
        make_g(1, tree2)


def test_witness_values(tree2):
    assert bmo_witness(ORIGIN, tree2) == pytest.approx(math.log(2))
    assert bmo_witness(Vertex(0, (0, 0)), tree2) == pytest.approx(math.log(2))
    assert bmo_witness(Vertex(4, (1,)), tree2) == pytest.approx(4 * math.log(2))


@pytest.mark.parametrize("H", [0, 1, 2, 3])
def test_witness_oscillation_matches_brute_force(tree, H):
    brute = lambda v: bmo_witness(v, tree)
    for h_lo in (1, 2):
        for h_hi in range(2 * h_lo, 6):
            R = make_trapezoid(Vertex(H, ()), h_lo, h_hi)
            assert bmo_oscillation(BMOWitness(tree), R, tree) == pytest.approx(
                bmo_oscillation(brute, R, tree), rel=1e-12, abs=1e-14)
    off_ray = make_trapezoid(Vertex(H + 1, (1,)), 1, 3)
    assert bmo_oscillation(BMOWitness(tree), off_ray, tree) == 0.0
    assert bmo_oscillation(brute, off_ray, tree) == pytest.approx(0.0, abs=1e-14)


def test_bmo_norm_estimate(tree2):
    est = bmo_norm_estimate(BMOWitness(tree2), tree2, 3, 6)
    assert 0 < est.value < 10 * math.log(2)
    assert est.trapezoid is not None
    assert est.trapezoids > 0
    assert bmo_oscillation(BMOWitness(tree2), est.trapezoid, tree2) == est.value


@pytest.mark.parametrize("seed", range(12))
def test_random_atoms_satisfy_axioms(tree2, seed):
    atom = random_atom(seed, tree2, root_level_range=(-3, 3), cap=8)
    assert check_atom(atom, tree2)
    assert check_atom_function(atom.to_function(tree2), atom.support, tree2)
    assert atom.support.h_hi <= 8
    assert abs(atom.mass) <= 1e-14


def test_random_atom_is_seeded(tree2):
    assert random_atom(4, tree2, cap=16) == random_atom(4, tree2, cap=16)
    with pytest.raises(DomainError):
        random_atom(0, tree2, hprime_range=(3, 1))


def test_atom_axiom_failures(tree2):
    R = make_trapezoid(ORIGIN, 1, 3)
    with pytest.raises(AtomAxiomError):
        check_atom(Atom(R, (0.5, 0.0), 2), tree2)
    with pytest.raises(AtomAxiomError):
        check_atom(Atom(R, (0.9, -0.9), 2), tree2)
    with pytest.raises(AtomAxiomError):
        check_atom(Atom(R, (0.1,), 2), tree2)
    assert check_atom(Atom(R, (0.5, -0.5), 2), tree2)


def test_zero_atom_on_singleton(tree2):
    atom = zero_atom(singleton_trapezoid(Vertex(0, (1,))), 2)
    assert atom.is_zero
    assert check_atom(atom, tree2)
    assert atom_maximal_l1(atom, tree2).value == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_atom_pairing_matches_materialised_sum(tree2, seed):
    atom = random_atom(seed, tree2, root_level_range=(-2, 3), cap=8)
    f = BMOWitness(tree2)
    assert atom_pairing(f, atom, tree2) == pytest.approx(pairing(f, atom.to_function(tree2), tree2),
                                                         rel=1e-9, abs=1e-12)


def test_atom_maximal_l1_is_bounded(tree2):
    for seed in range(5):
        atom = random_atom(seed, tree2, cap=12)
        res = atom_maximal_l1(atom, tree2, truncation=FAST)
        if not atom.is_zero:
            assert res.converged
            assert res.value >= sum(abs(a) for a in atom.profile) * (1 - 1e-9)
            assert res.value <= 50.0


def test_gn_maximal_l1_depends_on_block_only(tree2):
    a = gn_maximal_l1(3, tree2, truncation=FAST, n=4)
    b = gn_maximal_l1(3, tree2, truncation=FAST, n=7)
    assert a.value == b.value
    assert a.converged
    assert a.value >= 2.0 * (1 - 1e-9)


def test_gn_maximal_l1_matches_vertex_enumeration(tree2, brute):
    c = Vertex(2, ())
    ball = brute(tree2, c, 8)
    g3 = make_gn(3, tree2)
    policy = TGridPolicy().grid_only()
    direct = sum(maximal_heat(g3, v, tree2, policy) * ball.mu(v) for v in ball.vertices if v.h <= 2)
    res = gn_maximal_l1(2, tree2, truncation=TruncationPolicy(eps=0.0, max_radius=8), n=3)
    assert res.radius == 8
    assert res.value == pytest.approx(direct, rel=1e-8)


def test_gn_norms_stay_finite_for_wide_cones(tree2):
    res = gn_maximal_l1(6, tree2, truncation=FAST)
    assert math.isfinite(res.value)
    assert math.isfinite(res.estimate)
    assert res.converged
    assert res.value >= 2.0 * (1 - 1e-9)


def test_weak_type_is_bounded(tree2):
    res = gn_weak_type(7, tree2, truncation=FAST)
    assert res.converged
    assert 0 < res.max_stat <= 10.0
    assert list(res.level_masses) == sorted(res.level_masses, reverse=True)


def test_make_row_enforces_schema():
    with pytest.raises(KeyError):
        make_row("exp-local", level=0)


def test_exp_gn_rows(tree2):
    rows = exp_gn_scaling(tree2, [2, 3], truncation=FAST)
    assert [tuple(r) for r in rows] == [SCHEMAS["exp-gn"]] * 2
    assert [r["n"] for r in rows] == [3, 7]
    assert rows[0]["pairing"] == pytest.approx(math.log(2))
    assert rows[1]["pairing"] == pytest.approx(2 * math.log(2))
    assert all(r["converged"] for r in rows)
    assert rows[1]["ratio_loglog"] == pytest.approx(rows[1]["mh_norm"] / math.log(math.log(7)))
    assert rows[1]["ratio_log"] == pytest.approx(rows[1]["mh_norm"] / math.log(7))
    with pytest.raises(DomainError):
        exp_gn_scaling(tree2, [1])


def test_exp_gn_log_ratio_decreases(tree2):
    rows = exp_gn_scaling(tree2, [2, 4], truncation=FAST)
    assert all(math.isfinite(r["mh_norm"]) for r in rows)
    assert [r["ratio_log"] for r in rows] == [pytest.approx(r["mh_norm"] / math.log(r["n"])) for r in rows]
    assert rows[1]["ratio_log"] < rows[0]["ratio_log"]


@pytest.mark.slow
def test_exp_riesz_rows(tree2):
    rows = exp_riesz_scaling(tree2, [2], truncation=FAST)
    assert tuple(rows[0]) == SCHEMAS["exp-riesz"]
    assert rows[0]["riesz_norm"] > 0
    assert rows[0]["refine_rel_diff"] <= 1e-3


def test_exp_weaktype_rows(tree2):
    rows = exp_weak_type(tree2, [3, 15], truncation=FAST)
    assert [r["m"] for r in rows] == [2, 4]
    assert all(r["l1_norm"] == 2 for r in rows)
    assert all(r["lambda_count"] == 21 for r in rows)


def test_exp_g_rows(tree2):
    rows = exp_g_partials(tree2, 20, truncation=FAST)
    assert [(r["m"], r["n_lo"], r["n_hi"]) for r in rows] == [(2, 2, 3), (3, 4, 7), (4, 8, 15), (5, 16, 20)]
    bounds = [r["bound_partial"] for r in rows]
    assert bounds == sorted(bounds)
    assert all(tuple(r) == SCHEMAS["exp-g"] for r in rows)


@pytest.mark.slow
def test_exp_atoms_rows(tree2):
    rows = exp_atom_bound(tree2, batch=4, caps=(8, 16), seed=1, truncation=FAST, bmo_caps=(4, 8))
    assert [r["cap"] for r in rows] == [8, 16]
    assert all(r["batch"] == 4 for r in rows)
    assert all(0 <= r["argmax_index"] < 4 for r in rows)
    assert all(r["max_norm"] >= r["mean_norm"] for r in rows)
    again = exp_atom_bound(tree2, batch=4, caps=(8, 16), seed=1, truncation=FAST, bmo_caps=(4, 8))
    assert again == rows


def test_local_bound_study_is_level_free(tree2):
    rows = local_bound_study(tree2, [-3, 0, 4])
    values = [r["local_norm"] for r in rows]
    assert values[0] == pytest.approx(values[1], rel=1e-9)
    assert values[2] == pytest.approx(values[1], rel=1e-9)
    assert all(r["converged"] for r in rows)
