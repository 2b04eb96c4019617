import numpy as np
import pytest

from qjoin.catalog import Catalog, Query, Relation, Table
from qjoin.qsim import CircuitSpec, Gate, InputSlot, ParamSlot


def random_circuit(rng, max_qubits=4, max_layers=3):
    """Random small Rx/Ry/Rz/CZ program mixing input and parameter slots."""
    n_qubits = int(rng.integers(1, max_qubits + 1))
    n_layers = int(rng.integers(1, max_layers + 1))
    n_inputs = int(rng.integers(0, 2 * n_qubits + 1))
    gates = []
    params = 0
    for _ in range(n_layers):
        for q in range(n_qubits):
            kind = ("rx", "ry", "rz")[int(rng.integers(0, 3))]
            if n_inputs and rng.random() < 0.3:
                gates.append(Gate(kind, (q,), InputSlot(int(rng.integers(0, n_inputs)))))
            else:
                gates.append(Gate(kind, (q,), ParamSlot(params)))
                params += 1
        if n_qubits >= 2:
            for q in range(n_qubits - 1):
                if rng.random() < 0.5:
                    gates.append(Gate("cz", (q, q + 1)))
    if params == 0:
        gates.append(Gate("ry", (0,), ParamSlot(0)))
        params = 1
    spec = CircuitSpec(
        n_qubits=n_qubits, gates=tuple(gates), input_count=n_inputs, param_count=params
    )
    inputs = rng.random(n_inputs)
    values = rng.uniform(0.0, 2 * np.pi, size=params)
    return spec, inputs, values


def chain_catalog() -> Catalog:
    """Three tables A(10), B(20), C(30) with sel(A,B)=0.1 and sel(B,C)=0.01."""
    tables = (
        Table("A", 10, ("c0",)),
        Table("B", 20, ("c0",)),
        Table("C", 30, ("c0",)),
    )
    return Catalog(tables=tables, join_selectivity={(0, 1): 0.1, (1, 2): 0.01})


def chain_query() -> Query:
    """A - B - C chain, no selection filters."""
    return Query(
        relations=(Relation("A", 0), Relation("B", 1), Relation("C", 2)),
        edges=frozenset({(0, 1), (1, 2)}),
        selectivities=(1.0, 1.0, 1.0),
        selected_attributes=(frozenset(), frozenset(), frozenset()),
    )


@pytest.fixture
def chain():
    return chain_catalog(), chain_query()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
