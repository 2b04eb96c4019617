"""Single-step baseline: one compact circuit scores all join orders at once.

Each candidate join order of a query is assigned a computational basis
state; the circuit encodes the query (relation id via Rx, combined filter
selectivity via Ry, one qubit per relation) and is trained so that basis
state probabilities track normalized order-quality labels. Prediction
picks the candidate whose basis state carries the most probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import qsim
from .catalog import Catalog, Query, Workload
from .env import relative_cost
from .jointree import JoinTree, cost_out, dp_optimal, join, leaf
from .nn import AdamState, adam_step
from .ppo import CHECKPOINT_FORMAT, VQCSettings

ORDER_LIMIT = 4  # basis states must cover all candidates: counts fit 2^n only up to here


@dataclass(frozen=True)
class OrderTable:
    """Deduplicated unordered join orders with quality labels in (0, 1].

    Candidate i is assigned basis state i; the cost-optimal order carries
    label 1.0 and everything else C_dp / C_out < 1.
    """

    query: Query
    candidates: tuple[JoinTree, ...]
    costs: tuple[float, ...]
    labels: tuple[float, ...]

    def __post_init__(self):
        n = self.query.num_relations
        if len(self.candidates) > 1 << n:
            raise ValueError("more candidates than basis states")
        if abs(max(self.labels) - 1.0) > 1e-12:
            raise ValueError("the optimal order must carry label 1.0")


def _unordered_trees(mask: int, adjacency: list[int]) -> list[JoinTree]:
    if mask.bit_count() == 1:
        return [leaf(mask.bit_length() - 1)]
    out = []
    low = mask & -mask  # canonical: the lowest relation always sits in the left operand
    sub = (mask - 1) & mask
    while sub:
        rest = mask ^ sub
        if sub & low:
            crossing = any(adjacency[k] & rest for k in range(mask.bit_length()) if sub >> k & 1)
            if crossing:
                for lt in _unordered_trees(sub, adjacency):
                    for rt in _unordered_trees(rest, adjacency):
                        out.append(join(lt, rt))
        sub = (sub - 1) & mask
    return out


def enumerate_orders(query: Query, catalog: Catalog) -> OrderTable:
    """All distinct unordered bushy orders (cross joins excluded), labeled."""
    n = query.num_relations
    if n > ORDER_LIMIT:
        raise ValueError(
            f"single-step scoring handles at most {ORDER_LIMIT} relations, got {n}"
        )
    candidates = _unordered_trees((1 << n) - 1, query.adjacency_masks())
    if not candidates:
        raise ValueError("query join graph is disconnected: no cross-join-free order exists")
    costs = tuple(cost_out(t, query, catalog) for t in candidates)
    c_dp = min(costs)
    labels = tuple(c_dp / c for c in costs)
    return OrderTable(query=query, candidates=tuple(candidates), costs=costs, labels=labels)


def build_singlestep_circuit(
    n_relations: int,
    use_dru: bool = True,
    dru_repetitions: int = 5,
    extra_layers: int = 0,
) -> qsim.CircuitSpec:
    """One qubit per relation; Rx encodes the relation id, Ry its selectivity.

    With data re-uploading the encoding block returns before every group of
    n_relations variational layers, mirroring the multi-step layer grid.
    """
    if n_relations < 2:
        raise ValueError("need at least 2 relations")
    if use_dru and dru_repetitions < 1:
        raise ValueError("data re-uploading needs at least one repetition")
    gates: list[qsim.Gate] = []
    params = 0

    def encoding_block():
        for q in range(n_relations):
            gates.append(qsim.Gate("rx", (q,), qsim.InputSlot(2 * q)))
            gates.append(qsim.Gate("ry", (q,), qsim.InputSlot(2 * q + 1)))

    def variational_layer():
        nonlocal params
        for q in range(n_relations):
            gates.append(qsim.Gate("ry", (q,), qsim.ParamSlot(params)))
            params += 1
        for q in range(n_relations):
            gates.append(qsim.Gate("rz", (q,), qsim.ParamSlot(params)))
            params += 1
        ring = n_relations if n_relations > 2 else 1
        for q in range(ring):
            gates.append(qsim.Gate("cz", (q, (q + 1) % n_relations)))

    repetitions = dru_repetitions if use_dru else 1
    for _ in range(repetitions):
        encoding_block()
        for _ in range(n_relations):
            variational_layer()
    if not use_dru:
        for _ in range(extra_layers):
            variational_layer()
    return qsim.CircuitSpec(
        n_qubits=n_relations,
        gates=tuple(gates),
        input_count=2 * n_relations,
        param_count=params,
    )


@dataclass
class SingleStepModel:
    spec: qsim.CircuitSpec
    params: np.ndarray
    n_relations: int
    num_tables: int


def new_model(
    rng: np.random.Generator,
    n_relations: int,
    num_tables: int,
    settings: VQCSettings | None = None,
) -> SingleStepModel:
    settings = settings or VQCSettings()
    spec = build_singlestep_circuit(
        n_relations,
        use_dru=settings.use_dru,
        dru_repetitions=settings.dru_repetitions,
        extra_layers=settings.extra_layers,
    )
    return SingleStepModel(
        spec=spec,
        params=rng.uniform(0.0, 2 * np.pi, spec.param_count),
        n_relations=n_relations,
        num_tables=num_tables,
    )


def encode_query(query: Query, num_tables: int) -> np.ndarray:
    """Interleaved (id, combined selectivity) features in [0,1], one pair per relation."""
    scale = 1.0 / (num_tables - 1) if num_tables > 1 else 1.0
    feats = np.empty(2 * query.num_relations)
    for i, rel in enumerate(query.relations):
        feats[2 * i] = rel.table * scale
        feats[2 * i + 1] = query.selectivities[i]
    return feats


def candidate_scores(model: SingleStepModel, query: Query, catalog: Catalog):
    table = enumerate_orders(query, catalog)
    if query.num_relations != model.n_relations:
        raise ValueError(
            f"model handles {model.n_relations}-relation queries, got {query.num_relations}"
        )
    state = qsim.simulate(model.spec, encode_query(query, model.num_tables), model.params)
    probs = np.abs(state) ** 2
    return table, probs[: len(table.candidates)]


def predict(model: SingleStepModel, query: Query, catalog: Catalog):
    """Highest-scoring candidate order plus all per-candidate scores."""
    table, scores = candidate_scores(model, query, catalog)
    return table.candidates[int(np.argmax(scores))], scores


@dataclass
class SingleStepResult:
    model: SingleStepModel
    test_costs: list[float]
    test_median: float
    loss_curve: list[tuple[int, float]]


def _loss_and_diag(model, table, inputs):
    """MSE against sum-normalized labels and the matching diagonal observable."""
    state = qsim.simulate(model.spec, inputs, model.params)
    probs = np.abs(state) ** 2
    k = len(table.candidates)
    targets = np.asarray(table.labels) / sum(table.labels)
    residual = probs[:k] - targets
    diag = np.zeros(1 << model.spec.n_qubits)
    diag[:k] = 2.0 * residual
    return float(residual @ residual), diag


def train_singlestep(
    workload: Workload,
    fold: int,
    settings: VQCSettings,
    budget: int,
    seed: int = 0,
    minibatch: int = 8,
    learning_rate: float = 1e-2,
    grad_method: str = "adjoint",
) -> SingleStepResult:
    """Fit basis-state probabilities to order labels on the nine in-folds.

    `budget` counts optimizer steps; budget 0 skips training but still
    evaluates the freshly initialized model on the held-out fold.
    """
    if not 0 <= fold < 10:
        raise ValueError("fold must lie in 0..9")
    train_queries = [workload.queries[i] for i in workload.training_indices(fold)]
    if not train_queries:
        raise ValueError("training fold selection is empty")
    sizes = {q.num_relations for q in workload.queries}
    if max(sizes) > ORDER_LIMIT:
        raise ValueError(f"workload contains queries beyond {ORDER_LIMIT} relations")
    if len(sizes) != 1:
        raise ValueError("single-step training expects a uniform relation count")
    n = sizes.pop()

    rng = np.random.default_rng(seed)
    model = new_model(rng, n, workload.catalog.num_tables, settings)
    tables = {}
    inputs_of = {}
    for q in train_queries:
        tables[q] = enumerate_orders(q, workload.catalog)
        inputs_of[q] = encode_query(q, model.num_tables)

    adam = AdamState(dim=model.spec.param_count, lr=learning_rate)
    loss_curve = []
    for step_idx in range(budget):
        picks = [train_queries[int(rng.integers(len(train_queries)))] for _ in range(minibatch)]
        losses = []
        batch_inputs = np.stack([inputs_of[q] for q in picks])
        diag_rows = []
        for q, row in zip(picks, batch_inputs):
            loss, diag = _loss_and_diag(model, tables[q], row)
            losses.append(loss)
            diag_rows.append(diag / minibatch)
        grads = qsim.vjp_gradients(
            model.spec, batch_inputs, model.params, np.stack(diag_rows), method=grad_method
        )
        model.params = adam_step(adam, model.params, grads)
        if step_idx % 25 == 0 or step_idx == budget - 1:
            loss_curve.append((step_idx, float(np.mean(losses))))

    test_queries = [workload.queries[i] for i in workload.fold_indices(fold)]
    test_costs = []
    for q in test_queries:
        chosen, _ = predict(model, q, workload.catalog)
        c_dp = dp_optimal(q, workload.catalog).cost
        test_costs.append(relative_cost(cost_out(chosen, q, workload.catalog), c_dp))
    return SingleStepResult(
        model=model,
        test_costs=test_costs,
        test_median=float(np.median(test_costs)) if test_costs else float("nan"),
        loss_curve=loss_curve,
    )


def save_singlestep_checkpoint(
    path: str, model: SingleStepModel, settings: VQCSettings, seed: int, step_count: int
) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model_kind": "singlestep",
        "n_relations": model.n_relations,
        "num_tables": model.num_tables,
        "vqc": {
            "use_dru": settings.use_dru,
            "dru_repetitions": settings.dru_repetitions,
            "extra_layers": settings.extra_layers,
        },
        "shapes": {"circuit": model.spec.param_count},
        "rng_seed": seed,
        "step_count": step_count,
        "params": {"circuit": [float(v) for v in model.params]},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_singlestep_checkpoint(path: str) -> tuple[SingleStepModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("model_kind") != "singlestep":
        raise ValueError("not a single-step checkpoint")
    settings = VQCSettings(**doc["vqc"])
    model = new_model(
        np.random.default_rng(0), doc["n_relations"], doc["num_tables"], settings
    )
    params = np.array(doc["params"]["circuit"], dtype=np.float64)
    if params.shape != (model.spec.param_count,):
        raise ValueError("checkpoint parameter count does not match the circuit")
    model.params = params
    meta = {k: doc[k] for k in ("model_kind", "shapes", "rng_seed", "step_count")}
    return model, meta
