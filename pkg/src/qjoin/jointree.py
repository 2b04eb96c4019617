"""Join trees, the intermediate-result cost model, and exact plan search.

Costs follow the recursion cost(T) = |T| + cost(T1) + cost(T2) with
cost(leaf) = 0, where |T| is the cardinality of the join result under an
independence model: product of filtered base-table sizes times the
selectivities of all join edges internal to the tree's relation set.

`dp_optimal` finds the cheapest bushy plan by subset dynamic programming;
`enumerate_bushy` lists every plan outright and serves as its test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

from .catalog import Catalog, Query, connected_mask

ENUMERATION_LIMIT = 8  # ordered bushy trees grow as n! * Catalan(n-1)


@dataclass(frozen=True)
class JoinTree:
    """Binary join tree over query relations; `leaves` is a relation bitmask."""

    leaves: int
    relation: int | None = None
    left: "JoinTree | None" = None
    right: "JoinTree | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.relation is not None


def leaf(relation: int) -> JoinTree:
    return JoinTree(leaves=1 << relation, relation=relation)


def join(left: JoinTree, right: JoinTree) -> JoinTree:
    if left.leaves & right.leaves:
        raise ValueError("join operands must cover disjoint relation sets")
    return JoinTree(leaves=left.leaves | right.leaves, left=left, right=right)


@dataclass(frozen=True)
class PlanResult:
    tree: JoinTree
    cost: float
    cardinality: float


def cardinality(leaf_set: int, query: Query, catalog: Catalog) -> float:
    """Result size of joining the relations in `leaf_set`, independent of tree shape."""
    if leaf_set == 0:
        raise ValueError("leaf set must be nonempty")
    card = 1.0
    for k in range(query.num_relations):
        if leaf_set >> k & 1:
            rel = query.relations[k]
            card *= catalog.tables[rel.table].cardinality * query.selectivities[k]
    for k, l in sorted(query.edges):
        if leaf_set >> k & 1 and leaf_set >> l & 1:
            card *= catalog.edge_selectivity(
                query.relations[k].table, query.relations[l].table
            )
    return card


def cost_out(
    tree: JoinTree,
    query: Query,
    catalog: Catalog,
    card_cache: dict[int, float] | None = None,
) -> float:
    """Sum of intermediate join cardinalities; zero for a bare relation.

    `card_cache` may share subset cardinalities across many trees of the
    same query, e.g. when costing an exhaustive enumeration.
    """
    cache = card_cache if card_cache is not None else {}

    def walk(node: JoinTree) -> float:
        if node.is_leaf:
            return 0.0
        card = cache.get(node.leaves)
        if card is None:
            card = cache[node.leaves] = cardinality(node.leaves, query, catalog)
        return card + walk(node.left) + walk(node.right)

    return walk(tree)


def dp_optimal(query: Query, catalog: Catalog, allow_cross: bool = False) -> PlanResult:
    """Exact minimum-cost bushy plan via subset dynamic programming.

    With allow_cross=False only splits whose two sides are internally
    connected and share a join edge are considered; cost ties are broken
    toward the lexicographically smallest left-side bitmask.
    """
    n = query.num_relations
    adjacency = query.adjacency_masks()
    full = (1 << n) - 1
    if not allow_cross and not connected_mask(full, adjacency):
        raise ValueError("query join graph is disconnected: no cross-join-free plan exists")

    card: dict[int, float] = {}

    def card_of(mask: int) -> float:
        c = card.get(mask)
        if c is None:
            c = card[mask] = cardinality(mask, query, catalog)
        return c

    best_cost: dict[int, float] = {1 << k: 0.0 for k in range(n)}
    best_split: dict[int, int] = {}

    masks = sorted(range(1, full + 1), key=int.bit_count)
    for mask in masks:
        if mask.bit_count() < 2:
            continue
        if not allow_cross and not connected_mask(mask, adjacency):
            continue
        mask_card = card_of(mask)
        chosen_cost = None
        chosen_left = None
        sub = (mask - 1) & mask
        while sub:
            rest = mask ^ sub
            ok = sub in best_cost and rest in best_cost
            if ok and not allow_cross:
                ok = any(
                    adjacency[k] & rest
                    for k in range(n)
                    if sub >> k & 1
                )
            if ok:
                cand = mask_card + best_cost[sub] + best_cost[rest]
                if (
                    chosen_cost is None
                    or cand < chosen_cost
                    or (cand == chosen_cost and sub < chosen_left)
                ):
                    chosen_cost = cand
                    chosen_left = sub
            sub = (sub - 1) & mask
        if chosen_cost is not None:
            best_cost[mask] = chosen_cost
            best_split[mask] = chosen_left

    def rebuild(mask: int) -> JoinTree:
        if mask.bit_count() == 1:
            return leaf(mask.bit_length() - 1)
        left_mask = best_split[mask]
        return join(rebuild(left_mask), rebuild(mask ^ left_mask))

    tree = rebuild(full)
    return PlanResult(tree=tree, cost=best_cost[full], cardinality=card_of(full))


def enumerate_bushy(query: Query, allow_cross: bool = False) -> list[JoinTree]:
    """All ordered binary join trees over the query's relations.

    Left/right operand order is significant. With allow_cross=False, every
    join node must have a join edge between its operands' relation sets.
    Refuses queries with more than ENUMERATION_LIMIT relations.
    """
    n = query.num_relations
    if n > ENUMERATION_LIMIT:
        raise ValueError(
            f"enumeration over {n} relations exceeds the {ENUMERATION_LIMIT}-relation limit"
        )
    adjacency = query.adjacency_masks()
    memo: dict[int, list[JoinTree]] = {}

    def trees_for(mask: int) -> list[JoinTree]:
        got = memo.get(mask)
        if got is not None:
            return got
        if mask.bit_count() == 1:
            result = [leaf(mask.bit_length() - 1)]
        else:
            result = []
            sub = (mask - 1) & mask
            while sub:
                rest = mask ^ sub
                crossing = any(
                    adjacency[k] & rest for k in range(n) if sub >> k & 1
                )
                if allow_cross or crossing:
                    for lt in trees_for(sub):
                        for rt in trees_for(rest):
                            result.append(join(lt, rt))
                sub = (sub - 1) & mask
        memo[mask] = result
        return result

    return trees_for((1 << n) - 1)


def format_plan(tree: JoinTree, query: Query) -> str:
    """Parenthesized alias form, e.g. ``(a1 ⋈ (a2 ⋈ D))``."""
    if tree.is_leaf:
        return query.relations[tree.relation].alias
    return f"({format_plan(tree.left, query)} ⋈ {format_plan(tree.right, query)})"
