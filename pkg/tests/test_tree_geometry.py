from fractions import Fraction

import numpy as np
import pytest

from services.errors import NonCanonicalVertexError, TrapezoidError
from services.tree_geometry import (
    ORIGIN,
    FlowWeight,
    TreeParams,
    Vertex,
    ancestor,
    bfs_distances,
    confluent,
    distance,
    flow_measure,
    in_trapezoid,
    is_above,
    iter_sphere,
    iter_trapezoid,
    make_trapezoid,
    make_vertex,
    navigate,
    parse_vertex,
    predecessor,
    random_vertex,
    singleton_trapezoid,
    sons,
    sphere_size,
    trapezoid_measure,
    trapezoid_size,
)


def test_tree_params(tree):
    assert 0 < tree.b < 1
    with pytest.raises(ValueError):
        TreeParams(1)


def test_make_vertex_examples(tree2):
    assert make_vertex(0, [], tree2) == ORIGIN
    assert make_vertex(3, [], tree2).level == 3
    v = make_vertex(3, [1, 0, 1], tree2)
    assert v.level == 0
    assert v.norm == 6


def test_make_vertex_rejects_non_canonical(tree2):
    with pytest.raises(NonCanonicalVertexError) as info:
        make_vertex(2, [0, 1], tree2)
    assert info.value.letter_index == 0
    with pytest.raises(NonCanonicalVertexError) as info:
        make_vertex(0, [1, 2], tree2)
    assert info.value.letter_index == 1
    # h = 0 words may start with 0
    assert make_vertex(0, [0, 1], tree2).level == -2


def test_text_form(tree2):
    v = make_vertex(3, [1, 0, 1], tree2)
    assert str(v) == "3:1.0.1"
    assert str(ORIGIN) == "0:"
    assert parse_vertex("3:1.0.1", tree2) == v
    assert parse_vertex("0:", tree2) == ORIGIN
    with pytest.raises(ValueError):
        parse_vertex("3-1", tree2)


def test_navigate(tree):
    assert predecessor(ORIGIN) == Vertex(1, ())
    assert sons(ORIGIN, tree) == [Vertex(0, (j,)) for j in range(tree.q)]
    up = Vertex(2, ())
    assert set(sons(up, tree)) == {Vertex(1, ())} | {Vertex(2, (j,)) for j in range(1, tree.q)}
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = random_vertex(rng, tree)
        nb = navigate(v, tree)
        assert nb.predecessor.level == v.level + 1
        assert len(nb.sons) == tree.q
        for s in nb.sons:
            assert predecessor(s) == v
            assert s.level == v.level - 1


def test_confluent_and_distance_examples(tree2):
    x5 = make_vertex(3, [1, 0, 1], tree2)
    assert confluent(x5, ORIGIN) == Vertex(3, ())
    assert distance(x5, ORIGIN) == 6
    assert confluent(Vertex(0, (0,)), Vertex(0, (1,))) == ORIGIN
    assert distance(Vertex(0, (0, 1)), Vertex(0, (1,))) == 3
    assert distance(ORIGIN, ORIGIN) == 0
    assert confluent(x5, x5) == x5


def test_distance_matches_bfs(tree, brute):
    ball = brute(tree, Vertex(2, ()), 6)
    rng = np.random.default_rng(1)
    inner = [v for v in ball.vertices if ball.depth[v] <= 3]
    for _ in range(60):
        x = inner[rng.integers(len(inner))]
        y = inner[rng.integers(len(inner))]
        assert distance(x, y) == ball.bfs_distance(x, y)
        assert distance(x, y) == distance(y, x)


def test_order_and_ancestors(tree):
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = random_vertex(rng, tree)
        p = predecessor(x)
        assert distance(x, p) == 1
        j = int(rng.integers(0, 6))
        a = ancestor(x, j)
        assert a.level == x.level + j
        assert is_above(a, x)
        y = random_vertex(rng, tree)
        assert is_above(x, y) == (x.level - y.level == distance(x, y))


def test_sphere_sizes_match_enumeration(tree, brute):
    ball = brute(tree, ORIGIN, 6)
    for m in range(0, 7):
        expected = sphere_size(m, tree)
        assert len(ball.sphere(m)) == expected
        assert len(list(iter_sphere(ORIGIN, m, tree))) == expected
    assert len(bfs_distances(ORIGIN, 3, tree)) == sum(sphere_size(m, tree) for m in range(4))


def test_flow_measure(tree):
    assert flow_measure(ORIGIN, tree).value() == 1.0
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = random_vertex(rng, tree)
        total = sum((flow_measure(s, tree).exact() for s in sons(x, tree)), Fraction(0))
        assert total == flow_measure(x, tree).exact()


def test_flow_weight_extreme_levels():
    w = FlowWeight(10**6, 2)
    assert w.log() == pytest.approx(10**6 * np.log(2))
    assert (FlowWeight(3, 2) * FlowWeight(-5, 2)).exponent == -2
    assert FlowWeight(5, 3) / FlowWeight(3, 3) == 9


def test_trapezoid_measure_and_size(tree2):
    root = Vertex(3, ())
    R = make_trapezoid(root, 2, 4)
    assert trapezoid_measure(R, tree2).value() == 16.0
    members = list(iter_trapezoid(R, tree2))
    assert len(members) == trapezoid_size(R, tree2) == 2 ** 2 + 2 ** 3
    assert all(in_trapezoid(v, R) for v in members)
    assert sum(flow_measure(v, tree2).exact() for v in members) == trapezoid_measure(R, tree2).exact()


def test_trapezoid_ratio_bounds(tree2):
    with pytest.raises(TrapezoidError):
        make_trapezoid(ORIGIN, 2, 3)
    with pytest.raises(TrapezoidError):
        make_trapezoid(ORIGIN, 1, 13)
    make_trapezoid(ORIGIN, 1, 12)
    single = singleton_trapezoid(ORIGIN)
    assert single.singleton and list(iter_trapezoid(single, tree2)) == [ORIGIN]
