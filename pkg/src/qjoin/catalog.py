"""Synthetic database catalog, query model, and workload persistence.

A catalog holds base-table cardinalities, attribute names, and pairwise
join selectivities. Queries reference catalog tables through aliases and
carry a connected join graph plus per-relation selection selectivities.
Workloads bundle a catalog with queries and a ten-fold split assignment.
All generators are pure functions of their seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

WORKLOAD_FORMAT_VERSION = "v1"

CARDINALITY_RANGE = (1e2, 1e6)      # log-uniform base-table sizes
JOIN_SELECTIVITY_RANGE = (1e-4, 1.0)  # log-uniform per table pair
FILTER_PROBABILITY = 0.5
FILTER_SELECTIVITY_MIN = 0.05
EXTRA_EDGE_PROBABILITY = 0.3
NUM_FOLDS = 10


class WorkloadFormatError(ValueError):
    """Raised when a persisted workload file cannot be parsed."""


class WorkloadVersionError(WorkloadFormatError):
    """Raised when a workload file carries an incompatible version tag."""


@dataclass(frozen=True)
class Table:
    name: str
    cardinality: int
    attributes: tuple[str, ...]

    def __post_init__(self):
        if self.cardinality < 1:
            raise ValueError(f"table {self.name!r}: cardinality must be >= 1")
        if not self.attributes:
            raise ValueError(f"table {self.name!r}: needs at least one attribute")


@dataclass(frozen=True)
class Catalog:
    """Immutable schema: tables plus join selectivities keyed on unordered pairs (i < j)."""

    tables: tuple[Table, ...]
    join_selectivity: dict[tuple[int, int], float] = field(hash=False)

    def __post_init__(self):
        for (i, j), s in self.join_selectivity.items():
            if not (0 <= i < j < len(self.tables)):
                raise ValueError(f"join selectivity key ({i},{j}) out of range")
            if not (0.0 < s <= 1.0):
                raise ValueError(f"join selectivity for ({i},{j}) must be in (0,1], got {s}")

    @property
    def num_tables(self) -> int:
        return len(self.tables)

    @property
    def num_attributes(self) -> int:
        return sum(len(t.attributes) for t in self.tables)

    def attribute_offset(self, table_index: int) -> int:
        """Start of a table's attribute block in the global attribute indexing."""
        return sum(len(t.attributes) for t in self.tables[:table_index])

    def edge_selectivity(self, table_a: int, table_b: int) -> float:
        """Selectivity between two tables; pairs without an entry join as Cartesian products."""
        key = (table_a, table_b) if table_a < table_b else (table_b, table_a)
        return self.join_selectivity.get(key, 1.0)


@dataclass(frozen=True)
class Relation:
    """One query relation: an alias bound to a catalog table."""

    alias: str
    table: int


@dataclass(frozen=True)
class Query:
    """Join query: relations, symmetric join graph, and selection predicates.

    Edges are stored as unordered relation-index pairs (k < l), which makes
    the adjacency matrix symmetric with zero diagonal by construction.
    A selectivity of 1.0 means the relation carries no filter.
    """

    relations: tuple[Relation, ...]
    edges: frozenset[tuple[int, int]]
    selectivities: tuple[float, ...]
    selected_attributes: tuple[frozenset[int], ...]

    def __post_init__(self):
        n = len(self.relations)
        if n < 2:
            raise ValueError("a query needs at least 2 relations")
        if len(self.selectivities) != n or len(self.selected_attributes) != n:
            raise ValueError("per-relation fields must match the relation count")
        for k, l in self.edges:
            if not (0 <= k < l < n):
                raise ValueError(f"edge ({k},{l}) is not an ordered in-range pair")
        for s in self.selectivities:
            if not (0.0 < s <= 1.0):
                raise ValueError(f"selection selectivity must be in (0,1], got {s}")

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def has_edge(self, k: int, l: int) -> bool:
        return (min(k, l), max(k, l)) in self.edges

    def join_graph(self) -> np.ndarray:
        """Symmetric 0/1 adjacency matrix over the query's relations."""
        n = self.num_relations
        g = np.zeros((n, n), dtype=np.int8)
        for k, l in self.edges:
            g[k, l] = g[l, k] = 1
        return g

    def adjacency_masks(self) -> list[int]:
        """Per-relation neighbor sets as bitmasks, for connectivity checks."""
        adj = [0] * self.num_relations
        for k, l in self.edges:
            adj[k] |= 1 << l
            adj[l] |= 1 << k
        return adj

    def is_connected(self) -> bool:
        return connected_mask((1 << self.num_relations) - 1, self.adjacency_masks())


def connected_mask(mask: int, adjacency: list[int]) -> bool:
    """True when the relations in `mask` form one connected component."""
    if mask == 0:
        return False
    seen = mask & -mask  # lowest set bit as the BFS seed
    frontier = seen
    while frontier:
        grow = 0
        m = frontier
        while m:
            low = m & -m
            grow |= adjacency[low.bit_length() - 1]
            m ^= low
        frontier = grow & mask & ~seen
        seen |= frontier
    return seen == mask


@dataclass(frozen=True)
class Workload:
    catalog: Catalog
    queries: tuple[Query, ...]
    folds: tuple[int, ...]

    def __post_init__(self):
        if len(self.folds) != len(self.queries):
            raise ValueError("fold assignment must cover every query exactly once")
        if any(not 0 <= f < NUM_FOLDS for f in self.folds):
            raise ValueError("fold indices must lie in 0..9")

    def fold_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.folds) if f == fold]

    def training_indices(self, held_out_fold: int) -> list[int]:
        return [i for i, f in enumerate(self.folds) if f != held_out_fold]


def generate_catalog(seed: int, num_tables: int, max_attributes: int) -> Catalog:
    """Seeded synthetic catalog with log-uniform cardinalities and selectivities."""
    if num_tables < 2:
        raise ValueError("a catalog needs at least 2 tables")
    if max_attributes < 1:
        raise ValueError("max_attributes must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = np.log10(CARDINALITY_RANGE[0]), np.log10(CARDINALITY_RANGE[1])
    tables = []
    for i in range(num_tables):
        card = int(round(10.0 ** rng.uniform(lo, hi)))
        n_attrs = int(rng.integers(1, max_attributes + 1))
        attrs = tuple(f"c{j}" for j in range(n_attrs))
        tables.append(Table(name=f"t{i}", cardinality=card, attributes=attrs))
    slo, shi = np.log10(JOIN_SELECTIVITY_RANGE[0]), np.log10(JOIN_SELECTIVITY_RANGE[1])
    join_sel = {}
    for i in range(num_tables):
        for j in range(i + 1, num_tables):
            join_sel[(i, j)] = float(10.0 ** rng.uniform(slo, shi))
    return Catalog(tables=tuple(tables), join_selectivity=join_sel)


def generate_query(seed: int, catalog: Catalog, n_relations: int) -> Query:
    """Seeded random query with a connected join graph.

    Tables are drawn without replacement while they last; beyond that,
    repeated tables appear under fresh aliases. Join edges never connect
    two aliases of the same table, so every edge has a catalog selectivity.
    """
    if n_relations < 2:
        raise ValueError("a query needs at least 2 relations")
    rng = np.random.default_rng(seed)
    perm = [int(t) for t in rng.permutation(catalog.num_tables)]
    table_choice = perm[:n_relations]
    while len(table_choice) < n_relations:
        table_choice.append(int(rng.integers(0, catalog.num_tables)))

    counts: dict[int, int] = {}
    relations = []
    for t in table_choice:
        counts[t] = counts.get(t, 0) + 1
        name = catalog.tables[t].name
        alias = name if counts[t] == 1 else f"{name}_{counts[t]}"
        relations.append(Relation(alias=alias, table=t))

    edges = set()
    for k in range(1, n_relations):
        candidates = [j for j in range(k) if relations[j].table != relations[k].table]
        j = candidates[int(rng.integers(0, len(candidates)))]
        edges.add((j, k))
    for k in range(n_relations):
        for l in range(k + 1, n_relations):
            if (k, l) in edges or relations[k].table == relations[l].table:
                continue
            if rng.random() < EXTRA_EDGE_PROBABILITY:
                edges.add((k, l))

    selectivities = []
    selected = []
    for rel in relations:
        if rng.random() < FILTER_PROBABILITY:
            selectivities.append(float(rng.uniform(FILTER_SELECTIVITY_MIN, 1.0)))
            n_attrs = len(catalog.tables[rel.table].attributes)
            k = int(rng.integers(1, n_attrs + 1))
            chosen = rng.choice(n_attrs, size=k, replace=False)
            selected.append(frozenset(int(a) for a in chosen))
        else:
            selectivities.append(1.0)
            selected.append(frozenset())

    return Query(
        relations=tuple(relations),
        edges=frozenset(edges),
        selectivities=tuple(selectivities),
        selected_attributes=tuple(selected),
    )


def make_workload(seed: int, catalog: Catalog, count: int, n_relations: int) -> Workload:
    """Generate `count` queries and assign ten cross-validation folds.

    Folds are query_index mod 10 after a seeded shuffle, so fold sizes
    differ by at most one.
    """
    if count < NUM_FOLDS:
        raise ValueError(f"need at least {NUM_FOLDS} queries to form {NUM_FOLDS} folds")
    root = np.random.SeedSequence(seed)
    query_seeds, shuffle_seed = root.spawn(2)
    queries = [
        generate_query(child, catalog, n_relations)
        for child in query_seeds.spawn(count)
    ]
    shuffle_rng = np.random.default_rng(shuffle_seed)
    order = shuffle_rng.permutation(count)
    shuffled = tuple(queries[i] for i in order)
    folds = tuple(i % NUM_FOLDS for i in range(count))
    return Workload(catalog=catalog, queries=shuffled, folds=folds)


def _catalog_to_json(catalog: Catalog) -> dict:
    return {
        "tables": [
            {"name": t.name, "card": t.cardinality, "attrs": list(t.attributes)}
            for t in catalog.tables
        ],
        "join_sel": [[i, j, s] for (i, j), s in sorted(catalog.join_selectivity.items())],
    }


def _query_to_json(query: Query, fold: int) -> dict:
    return {
        "relations": [[r.alias, r.table] for r in query.relations],
        "edges": [[k, l] for k, l in sorted(query.edges)],
        "sel": list(query.selectivities),
        "sel_attrs": [sorted(s) for s in query.selected_attributes],
        "fold": fold,
    }


def save_workload(path: str, workload: Workload) -> None:
    doc = {
        "version": WORKLOAD_FORMAT_VERSION,
        "catalog": _catalog_to_json(workload.catalog),
        "queries": [
            _query_to_json(q, f) for q, f in zip(workload.queries, workload.folds)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _parse_catalog(doc: dict) -> Catalog:
    try:
        tables = tuple(
            Table(name=t["name"], cardinality=int(t["card"]), attributes=tuple(t["attrs"]))
            for t in doc["tables"]
        )
        join_sel = {(int(i), int(j)): float(s) for i, j, s in doc["join_sel"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise WorkloadFormatError(f"malformed catalog section: {exc}") from exc
    return Catalog(tables=tables, join_selectivity=join_sel)


def _parse_query(doc: dict, index: int) -> tuple[Query, int]:
    try:
        query = Query(
            relations=tuple(Relation(alias=a, table=int(t)) for a, t in doc["relations"]),
            edges=frozenset((int(k), int(l)) for k, l in doc["edges"]),
            selectivities=tuple(float(s) for s in doc["sel"]),
            selected_attributes=tuple(frozenset(int(a) for a in s) for s in doc["sel_attrs"]),
        )
        fold = int(doc["fold"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WorkloadFormatError(f"malformed query {index}: {exc}") from exc
    return query, fold


def load_workload(path: str) -> Workload:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WorkloadFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise WorkloadFormatError("missing field 'version'")
    if doc["version"] != WORKLOAD_FORMAT_VERSION:
        raise WorkloadVersionError(
            f"incompatible workload version {doc['version']!r}, "
            f"expected {WORKLOAD_FORMAT_VERSION!r}"
        )
    if "catalog" not in doc:
        raise WorkloadFormatError("missing field 'catalog'")
    if "queries" not in doc:
        raise WorkloadFormatError("missing field 'queries'")
    catalog = _parse_catalog(doc["catalog"])
    parsed = [_parse_query(q, i) for i, q in enumerate(doc["queries"])]
    queries = tuple(q for q, _ in parsed)
    folds = tuple(f for _, f in parsed)
    return Workload(catalog=catalog, queries=queries, folds=folds)
