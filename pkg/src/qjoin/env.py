"""The join-order MDP: episode state, observation encodings, masking, reward.

An episode starts from a forest of single-relation subtrees and joins two
of them per step until one tree spans the query. Rewards follow the
clipped cost-difference signal R_t = (-min(C_t/C_dp, n-1) + 2) / (n-1),
where C_t is the cost added by step t and C_dp is the exhaustive-search
optimum used as normalizer.

States are value types: `step` returns a new state, so environments can
be rolled out concurrently without shared mutable data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .catalog import Catalog, Query
from .jointree import JoinTree, cardinality, dp_optimal, join, leaf


@dataclass(frozen=True)
class Observation:
    vector: np.ndarray
    layout: str  # "baseline" | "reduced"

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("observation contains non-finite entries")


@dataclass(frozen=True)
class RewardConfig:
    n: int
    c_dp: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("reward normalization needs n >= 2")
        if not self.c_dp > 0:
            raise ValueError("C_dp must be positive")


@dataclass(frozen=True)
class EpisodeState:
    query: Query
    catalog: Catalog
    n_max: int
    reward: RewardConfig
    forest: tuple[JoinTree | None, ...]
    subtree_costs: tuple[float, ...]
    t: int
    last_cost_delta: float = 0.0

    @property
    def n(self) -> int:
        return self.query.num_relations

    @property
    def done(self) -> bool:
        return self.t == self.n - 1


def reduced_length(n_max: int) -> int:
    return 2 * (n_max * n_max + n_max)


def baseline_length(catalog: Catalog) -> int:
    r = catalog.num_tables
    return catalog.num_attributes + 2 * r * r


def num_actions(n_max: int) -> int:
    return n_max * (n_max - 1)


def action_index(k: int, l: int, n_max: int) -> int:
    """Flat index of the ordered slot pair (k, l), k != l."""
    if k == l or not (0 <= k < n_max and 0 <= l < n_max):
        raise ValueError(f"({k},{l}) is not an ordered pair of distinct slots")
    return k * (n_max - 1) + (l if l < k else l - 1)


def action_pair(index: int, n_max: int) -> tuple[int, int]:
    if not 0 <= index < num_actions(n_max):
        raise ValueError(f"action index {index} out of range")
    k, off = divmod(index, n_max - 1)
    l = off if off < k else off + 1
    return k, l


def reset(
    query: Query,
    catalog: Catalog,
    n_max: int | None = None,
    c_dp: float | None = None,
) -> tuple[EpisodeState, Observation]:
    """Fresh episode: slot i holds relation i as a leaf, remaining slots empty."""
    n = query.num_relations
    if n_max is None:
        n_max = n
    if n > n_max:
        raise ValueError(f"query has {n} relations but the environment allows {n_max}")
    if c_dp is None:
        c_dp = dp_optimal(query, catalog).cost
    forest = tuple(leaf(i) if i < n else None for i in range(n_max))
    costs = (0.0,) * n_max
    state = EpisodeState(
        query=query,
        catalog=catalog,
        n_max=n_max,
        reward=RewardConfig(n=n, c_dp=c_dp),
        forest=forest,
        subtree_costs=costs,
        t=0,
    )
    return state, encode_reduced(state)


def _tree_row(tree: JoinTree, size: int, columns: list[int] | None = None) -> np.ndarray:
    """Row vector of length `size` with 2^-depth at each contained relation's column."""
    row = np.zeros(size, dtype=np.float64)

    def walk(node: JoinTree, depth: int):
        if node.is_leaf:
            col = node.relation if columns is None else columns[node.relation]
            row[col] = 2.0 ** (-depth)
        else:
            walk(node.left, depth + 1)
            walk(node.right, depth + 1)

    walk(tree, 0)
    return row


def encode_reduced(state: EpisodeState) -> Observation:
    """Compact per-query encoding of length 2(n_max^2 + n_max).

    Layout: table indices scaled by 1/(r-1), selection selectivities,
    flattened tree-structure rows, flattened join graph. Slots beyond the
    query's relation count stay zero.
    """
    q, n_max = state.query, state.n_max
    n = q.num_relations
    r = state.catalog.num_tables
    index_scale = 1.0 / (r - 1) if r > 1 else 1.0

    indices = np.zeros(n_max)
    sel = np.zeros(n_max)
    for i in range(n):
        indices[i] = q.relations[i].table * index_scale
        sel[i] = q.selectivities[i]

    tree_rows = np.zeros((n_max, n_max))
    for k, tree in enumerate(state.forest):
        if tree is not None:
            tree_rows[k, :n] = _tree_row(tree, n)

    graph = np.zeros((n_max, n_max))
    for k, l in q.edges:
        graph[k, l] = graph[l, k] = 1.0

    vector = np.concatenate([indices, sel, tree_rows.ravel(), graph.ravel()])
    return Observation(vector=vector, layout="reduced")


def encode_baseline(state: EpisodeState) -> Observation:
    """Database-wide encoding of length a + 2r^2 over catalog tables as aliases.

    The join graph and tree rows live on table indices, so each query
    relation must reference a distinct table. The predicate vector is a
    one-hot over all catalog attributes.
    """
    q, cat = state.query, state.catalog
    r = cat.num_tables
    a = cat.num_attributes
    tables = [rel.table for rel in q.relations]
    if len(set(tables)) != len(tables):
        raise ValueError(
            "baseline encoding needs distinct tables per relation; "
            "this query repeats a table under several aliases"
        )

    graph = np.zeros((r, r))
    for k, l in q.edges:
        graph[tables[k], tables[l]] = graph[tables[l], tables[k]] = 1.0

    predicates = np.zeros(a)
    for k, attrs in enumerate(q.selected_attributes):
        offset = cat.attribute_offset(tables[k])
        for idx in attrs:
            predicates[offset + idx] = 1.0

    tree_rows = np.zeros((r, r))
    for k, tree in enumerate(state.forest):
        if k < q.num_relations and tree is not None:
            tree_rows[tables[k]] = _tree_row(tree, r, columns=tables)

    vector = np.concatenate([graph.ravel(), predicates, tree_rows.ravel()])
    return Observation(vector=vector, layout="baseline")


def action_mask(state: EpisodeState) -> np.ndarray:
    """Boolean vector over ordered slot pairs; cross joins and empty slots masked."""
    if state.done:
        raise ValueError("terminal state has no actions")
    n_max = state.n_max
    adjacency = state.query.adjacency_masks()
    mask = np.zeros(num_actions(n_max), dtype=bool)
    occupied = [k for k, tree in enumerate(state.forest) if tree is not None]
    for k in occupied:
        reach = 0
        m = state.forest[k].leaves
        while m:
            low = m & -m
            reach |= adjacency[low.bit_length() - 1]
            m ^= low
        for l in occupied:
            if l != k and reach & state.forest[l].leaves:
                mask[action_index(k, l, n_max)] = True
    return mask


def step(state: EpisodeState, action: tuple[int, int]) -> tuple[EpisodeState, float, bool]:
    """Join slot l's subtree into slot k (k becomes the left operand).

    Returns the successor state, the clipped reward, and the terminal flag.
    Invalid actions are contract violations: callers must mask first.
    """
    k, l = action
    if not action_mask(state)[action_index(k, l, state.n_max)]:
        raise ValueError(f"action ({k},{l}) is invalid in this state")
    merged = join(state.forest[k], state.forest[l])
    cost_delta = cardinality(merged.leaves, state.query, state.catalog)
    new_cost_k = cost_delta + state.subtree_costs[k] + state.subtree_costs[l]

    forest = list(state.forest)
    costs = list(state.subtree_costs)
    forest[k], forest[l] = merged, None
    costs[k], costs[l] = new_cost_k, 0.0

    n, c_dp = state.reward.n, state.reward.c_dp
    reward = (-min(cost_delta / c_dp, n - 1) + 2.0) / (n - 1)
    new_state = replace(
        state,
        forest=tuple(forest),
        subtree_costs=tuple(costs),
        t=state.t + 1,
        last_cost_delta=cost_delta,
    )
    return new_state, reward, new_state.done


def relative_cost(plan_cost: float, c_dp: float) -> float:
    """Plan cost normalized by the exhaustive-search optimum; 1.0 is optimal."""
    if not c_dp > 0:
        raise ValueError("C_dp must be positive")
    return plan_cost / c_dp


def reward_bounds(n: int) -> tuple[float, float]:
    return (3.0 - n) / (n - 1), 2.0 / (n - 1)


def dump_trajectory(path: str, records: list[dict]) -> None:
    """Debug dump: one JSON line per step (observation, mask, action, C_t, R_t)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def trajectory_record(
    obs: Observation, mask: np.ndarray, action: tuple[int, int], cost_delta: float, reward: float
) -> dict:
    return {
        "observation": [float(x) for x in obs.vector],
        "mask": [bool(b) for b in mask],
        "action": list(action),
        "c_t": float(cost_delta),
        "r_t": float(reward),
    }
