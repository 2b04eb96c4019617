import pytest

from qjoin.catalog import Query, Relation, generate_catalog, generate_query
from qjoin.jointree import (
    cardinality,
    cost_out,
    dp_optimal,
    enumerate_bushy,
    format_plan,
    join,
    leaf,
)


def test_cardinality_single_leaf(chain):
    cat, q = chain
    assert cardinality(0b001, q, cat) == 10.0


def test_cardinality_joined_pair(chain):
    cat, q = chain
    # 10 * 20 * 0.1, hand-checked against the independence model
    assert cardinality(0b011, q, cat) == pytest.approx(20.0)


def test_cardinality_full_chain(chain):
    cat, q = chain
    # 10 * 20 * 30 * 0.1 * 0.01
    assert cardinality(0b111, q, cat) == pytest.approx(6.0)


def test_cardinality_shape_independent(chain):
    cat, q = chain
    left_deep = join(join(leaf(0), leaf(1)), leaf(2))
    right_deep = join(leaf(0), join(leaf(1), leaf(2)))
    assert cardinality(left_deep.leaves, q, cat) == cardinality(right_deep.leaves, q, cat)


def test_cost_out_leaf_is_zero(chain):
    cat, q = chain
    assert cost_out(leaf(0), q, cat) == 0.0


def test_cost_out_single_join(chain):
    cat, q = chain
    assert cost_out(join(leaf(0), leaf(1)), q, cat) == pytest.approx(20.0)


def test_cost_out_chain_shapes(chain):
    cat, q = chain
    assert cost_out(join(join(leaf(0), leaf(1)), leaf(2)), q, cat) == pytest.approx(26.0)
    assert cost_out(join(leaf(0), join(leaf(1), leaf(2))), q, cat) == pytest.approx(12.0)


def test_cost_out_commutative(chain):
    cat, q = chain
    a = cost_out(join(leaf(0), join(leaf(1), leaf(2))), q, cat)
    b = cost_out(join(join(leaf(2), leaf(1)), leaf(0)), q, cat)
    assert a == b


def test_join_rejects_overlapping_leaves():
    with pytest.raises(ValueError):
        join(leaf(0), join(leaf(0), leaf(1)))


def test_dp_two_relations():
    cat = generate_catalog(3, 4, 2)
    q = generate_query(5, cat, 2)
    plan = dp_optimal(q, cat)
    assert plan.cost == pytest.approx(cardinality(0b11, q, cat))


def test_dp_chain_picks_cheaper_shape(chain):
    cat, q = chain
    plan = dp_optimal(q, cat)
    assert plan.cost == pytest.approx(12.0)
    # optimal shape joins B with C first
    assert plan.tree.right is not None and not plan.tree.right.is_leaf


def test_dp_matches_enumeration_exactly():
    cat = generate_catalog(17, 9, 3)
    for seed in range(25):
        n = 2 + seed % 5
        q = generate_query(seed, cat, n)
        plan = dp_optimal(q, cat)
        best = min(cost_out(t, q, cat) for t in enumerate_bushy(q))
        assert plan.cost == best  # bit-exact: same float evaluation order


def test_dp_rejects_disconnected_query():
    q = Query(
        relations=(Relation("A", 0), Relation("B", 1), Relation("C", 2), Relation("D", 3)),
        edges=frozenset({(0, 1), (2, 3)}),
        selectivities=(1.0,) * 4,
        selected_attributes=(frozenset(),) * 4,
    )
    cat = generate_catalog(3, 4, 2)
    with pytest.raises(ValueError, match="cross"):
        dp_optimal(q, cat)
    # cross joins allowed: plan exists
    plan = dp_optimal(q, cat, allow_cross=True)
    assert plan.cost > 0


def test_enumerate_two_relations():
    cat = generate_catalog(3, 4, 2)
    q = generate_query(5, cat, 2)
    trees = enumerate_bushy(q)
    assert len(trees) == 2  # A join B plus B join A


def test_enumerate_three_relations_cross_allowed(chain):
    cat, q = chain
    trees = enumerate_bushy(q, allow_cross=True)
    assert len(trees) == 12
    # chain without cross joins loses the shapes pairing A with C first
    assert len(enumerate_bushy(q, allow_cross=False)) == 8


def test_enumerate_four_clique_counts():
    q = Query(
        relations=tuple(Relation(f"r{i}", i) for i in range(4)),
        edges=frozenset((k, l) for k in range(4) for l in range(k + 1, 4)),
        selectivities=(1.0,) * 4,
        selected_attributes=(frozenset(),) * 4,
    )
    trees = enumerate_bushy(q)
    assert len(trees) == 120
    # at most 15 distinct unordered join orders for 4 relations
    def unordered_key(t):
        if t.is_leaf:
            return ("L", t.relation)
        children = sorted([unordered_key(t.left), unordered_key(t.right)], key=repr)
        return ("J", tuple(children))

    assert len({unordered_key(t) for t in trees}) == 15


def test_enumerate_refuses_large_queries():
    cat = generate_catalog(3, 12, 2)
    q = generate_query(5, cat, 9)
    with pytest.raises(ValueError, match="limit"):
        enumerate_bushy(q)


def test_plan_cost_equals_sum_of_join_cardinalities():
    cat = generate_catalog(8, 7, 3)
    for seed in range(10):
        q = generate_query(seed, cat, 5)
        for tree in enumerate_bushy(q)[:50]:
            total = 0.0

            def walk(node):
                nonlocal total
                if not node.is_leaf:
                    total += cardinality(node.leaves, q, cat)
                    walk(node.left)
                    walk(node.right)

            walk(tree)
            assert cost_out(tree, q, cat) == pytest.approx(total, rel=1e-12)


def test_format_plan(chain):
    _, q = chain
    tree = join(leaf(0), join(leaf(1), leaf(2)))
    assert format_plan(tree, q) == "(A ⋈ (B ⋈ C))"
