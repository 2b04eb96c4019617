"""Variational-quantum-circuit construction and statevector simulation.

Circuits are flat gate programs over Rx/Ry/Rz rotations and CZ gates.
Rotation angles come either from input slots (classical features in [0,1],
scaled to [0,pi] by the encoder) or from trainable parameter slots.

Conventions: R_p(theta) = exp(-i theta P / 2) for Pauli P, CZ =
diag(1,1,1,-1), qubit 0 is the most significant bit of the basis index,
so Rx(theta)|0> has <Z> = cos(theta). Global phase is ignored.

Gradients come in two exact flavors: the parameter-shift rule (two
shifted executions per rotation, the form used on hardware) and adjoint
backpropagation (one forward plus one reverse sweep for all parameters).
Both compute the same analytic derivative; the trainer uses the adjoint
path for speed, and tests pin the two against each other.

Noise is modeled by Pauli trajectory sampling: after every gate, each
touched qubit suffers a uniformly random X/Y/Z error with probability p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional, numpy paths remain
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


PI = math.pi


@njit(cache=True)
def _nb_rx(states, right, c, s):
    for b in range(states.shape[0]):
        cb, sb = c[b], s[b]
        for base in range(0, states.shape[1], 2 * right):
            for off in range(right):
                i0 = base + off
                i1 = i0 + right
                a0, a1 = states[b, i0], states[b, i1]
                states[b, i0] = cb * a0 - 1j * sb * a1
                states[b, i1] = -1j * sb * a0 + cb * a1


@njit(cache=True)
def _nb_ry(states, right, c, s):
    for b in range(states.shape[0]):
        cb, sb = c[b], s[b]
        for base in range(0, states.shape[1], 2 * right):
            for off in range(right):
                i0 = base + off
                i1 = i0 + right
                a0, a1 = states[b, i0], states[b, i1]
                states[b, i0] = cb * a0 - sb * a1
                states[b, i1] = sb * a0 + cb * a1


@njit(cache=True)
def _nb_rz(states, right, c, s):
    for b in range(states.shape[0]):
        ph0 = complex(c[b], -s[b])
        ph1 = complex(c[b], s[b])
        for base in range(0, states.shape[1], 2 * right):
            for off in range(right):
                i0 = base + off
                states[b, i0] = ph0 * states[b, i0]
                states[b, i0 + right] = ph1 * states[b, i0 + right]


@njit(cache=True)
def _nb_cz(states, shift_a, shift_b):
    for b in range(states.shape[0]):
        for i in range(states.shape[1]):
            if (i >> shift_a) & 1 and (i >> shift_b) & 1:
                states[b, i] = -states[b, i]


@njit(cache=True)
def _nb_overlap(lam, psi, right, kind_code):
    """Im(<lam| P |psi>) for P in X(0)/Y(1)/Z(2) on the qubit with stride `right`."""
    total = 0.0
    for b in range(lam.shape[0]):
        for base in range(0, lam.shape[1], 2 * right):
            for off in range(right):
                i0 = base + off
                i1 = i0 + right
                l0, l1 = lam[b, i0], lam[b, i1]
                p0, p1 = psi[b, i0], psi[b, i1]
                if kind_code == 0:
                    val = l0.conjugate() * p1 + l1.conjugate() * p0
                elif kind_code == 1:
                    val = -1j * l0.conjugate() * p1 + 1j * l1.conjugate() * p0
                else:
                    val = l0.conjugate() * p0 - l1.conjugate() * p1
                total += val.imag
    return total


@dataclass(frozen=True)
class InputSlot:
    index: int
    scale: float = PI


@dataclass(frozen=True)
class ParamSlot:
    index: int


@dataclass(frozen=True)
class Gate:
    kind: str  # "rx" | "ry" | "rz" | "cz"
    qubits: tuple[int, ...]
    source: InputSlot | ParamSlot | None = None

    def __post_init__(self):
        if self.kind == "cz":
            if len(self.qubits) != 2 or self.qubits[0] == self.qubits[1]:
                raise ValueError("cz needs two distinct qubits")
            if self.source is not None:
                raise ValueError("cz carries no angle")
        elif self.kind in ("rx", "ry", "rz"):
            if len(self.qubits) != 1:
                raise ValueError(f"{self.kind} acts on one qubit")
            if self.source is None:
                raise ValueError(f"{self.kind} needs an angle source")
        else:
            raise ValueError(f"unknown gate kind {self.kind!r}")


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    gates: tuple[Gate, ...]
    input_count: int
    param_count: int

    def __post_init__(self):
        for g in self.gates:
            if any(not 0 <= q < self.n_qubits for q in g.qubits):
                raise ValueError(f"gate {g} addresses a qubit outside 0..{self.n_qubits - 1}")
            if isinstance(g.source, InputSlot) and not 0 <= g.source.index < self.input_count:
                raise ValueError(f"input slot {g.source.index} out of range")
            if isinstance(g.source, ParamSlot) and not 0 <= g.source.index < self.param_count:
                raise ValueError(f"param slot {g.source.index} out of range")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-gate depolarizing probability and Monte-Carlo trajectory count."""

    p: float
    trajectories: int = 128
    p_cap: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("error probability must lie in [0,1]")
        if self.p > self.p_cap:
            raise ValueError(
                f"p={self.p} exceeds the default cap {self.p_cap}; raise p_cap explicitly"
            )
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")


def variational_layer_count(spec: CircuitSpec) -> int:
    """Number of Ry/Rz variational layers, inferred from the parameter count."""
    return spec.param_count // (2 * spec.n_qubits)


def build_vqc(
    n_max: int,
    dru_repetitions: int = 1,
    use_dru: bool = True,
    extra_layers: int = 0,
) -> CircuitSpec:
    """Incremental-data-uploading ansatz over 2(n_max+1) qubits.

    The 2(n_max^2 + n_max) input features split into n_max parts, one Rx
    encoding layer each. Every encoding layer is followed by a variational
    layer (Ry, Rz per qubit, then a CZ ring). With data re-uploading the
    whole pattern repeats `dru_repetitions` times; without it the inputs
    appear once and `extra_layers` variational-only layers are appended.
    """
    if n_max < 2:
        raise ValueError("need n_max >= 2")
    if use_dru:
        if dru_repetitions < 1:
            raise ValueError("data re-uploading needs at least one repetition")
        if extra_layers:
            raise ValueError("extra variational layers apply only without data re-uploading")
    elif extra_layers < 0:
        raise ValueError("extra_layers must be nonnegative")

    n_qubits = 2 * (n_max + 1)
    input_count = 2 * (n_max * n_max + n_max)
    gates: list[Gate] = []
    params = 0

    def encoding_layer(part: int):
        base = part * n_qubits
        for q in range(n_qubits):
            gates.append(Gate("rx", (q,), InputSlot(base + q)))

    def variational_layer():
        nonlocal params
        for q in range(n_qubits):
            gates.append(Gate("ry", (q,), ParamSlot(params)))
            params += 1
        for q in range(n_qubits):
            gates.append(Gate("rz", (q,), ParamSlot(params)))
            params += 1
        ring = n_qubits if n_qubits > 2 else 1  # a 2-qubit ring would repeat the pair
        for q in range(ring):
            gates.append(Gate("cz", (q, (q + 1) % n_qubits)))

    repetitions = dru_repetitions if use_dru else 1
    for _ in range(repetitions):
        for part in range(n_max):
            encoding_layer(part)
            variational_layer()
    if not use_dru:
        for _ in range(extra_layers):
            variational_layer()

    return CircuitSpec(
        n_qubits=n_qubits,
        gates=tuple(gates),
        input_count=input_count,
        param_count=params,
    )


def _resolve_angles(
    spec: CircuitSpec, inputs: np.ndarray, params: np.ndarray
) -> list[np.ndarray | float | None]:
    """Per-gate rotation angles; input angles may carry a batch dimension."""
    inputs = np.asarray(inputs, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if inputs.shape[-1] != spec.input_count:
        raise ValueError(f"expected {spec.input_count} inputs, got {inputs.shape[-1]}")
    if params.shape != (spec.param_count,):
        raise ValueError(f"expected {spec.param_count} params, got {params.shape}")
    angles: list[np.ndarray | float | None] = []
    for g in spec.gates:
        if g.source is None:
            angles.append(None)
        elif isinstance(g.source, InputSlot):
            angles.append(inputs[..., g.source.index] * g.source.scale)
        else:
            angles.append(float(params[g.source.index]))
    return angles


_NB_ROTATIONS = {"rx": _nb_rx, "ry": _nb_ry, "rz": _nb_rz}


def _rotate(states, kind: str, qubit: int, theta, n_qubits: int, scratch=None) -> None:
    """Apply a rotation in place to a (B, 2^n) batch; theta is scalar or (B,).

    Dispatches to fused numba kernels when available; the numpy fallback
    uses `scratch`, an optional (2, B, 2^(n-1)) complex workspace, to avoid
    reallocating temporaries in tight loops.
    """
    if kind not in _NB_ROTATIONS:
        raise ValueError(f"not a rotation: {kind}")
    batch = states.shape[0]
    left = 1 << qubit
    right = 1 << (n_qubits - 1 - qubit)
    half = np.multiply(theta, 0.5)
    if HAVE_NUMBA and states.flags.c_contiguous:
        c, s = np.cos(half), np.sin(half)
        if np.ndim(c) == 0:
            c = np.full(batch, float(c))
            s = np.full(batch, float(s))
        _NB_ROTATIONS[kind](states, right, c, s)
        return
    view = states.reshape(batch, left, 2, right)
    if isinstance(half, np.ndarray) and half.ndim == 1:
        half = half[:, None, None]
    v0 = view[:, :, 0, :]
    v1 = view[:, :, 1, :]
    if kind == "rz":
        phase = np.exp(-1j * half)
        v0 *= phase
        v1 *= np.conj(phase)
        return
    if kind == "rx":
        c, off = np.cos(half), -1j * np.sin(half)
        lower = off  # symmetric off-diagonal
    else:
        c, off = np.cos(half), np.sin(half)
        lower = None  # antisymmetric: -off above, +off below
    if scratch is None:
        scratch = np.empty((2, batch, left * right), dtype=np.complex128)
    new0 = scratch[0].reshape(batch, left, right)
    tmp = scratch[1].reshape(batch, left, right)
    np.multiply(v1, off, out=new0)
    if lower is None:
        np.negative(new0, out=new0)
    np.multiply(v0, c, out=tmp)
    new0 += tmp
    np.multiply(v0, lower if lower is not None else off, out=tmp)
    v1 *= c
    v1 += tmp
    v0[:] = new0


def _apply_cz(states: np.ndarray, q0: int, q1: int, n_qubits: int) -> None:
    if HAVE_NUMBA and states.flags.c_contiguous:
        _nb_cz(states, n_qubits - 1 - q0, n_qubits - 1 - q1)
        return
    a, b = sorted((q0, q1))
    batch = states.shape[0]
    view = states.reshape(
        batch, 1 << a, 2, 1 << (b - a - 1), 2, 1 << (n_qubits - 1 - b)
    )
    view[:, :, 1, :, 1, :] *= -1.0


def _apply_pauli(states: np.ndarray, kind: str, qubit: int, n_qubits: int) -> None:
    batch = states.shape[0]
    left = 1 << qubit
    right = 1 << (n_qubits - 1 - qubit)
    view = states.reshape(batch, left, 2, right)
    if kind == "x":
        view[:, :, [0, 1], :] = view[:, :, [1, 0], :]
    elif kind == "y":
        a0 = view[:, :, 0, :].copy()
        view[:, :, 0, :] = -1j * view[:, :, 1, :]
        view[:, :, 1, :] = 1j * a0
    elif kind == "z":
        view[:, :, 1, :] *= -1.0
    else:
        raise ValueError(f"not a Pauli: {kind}")


def _initial_states(batch: int, n_qubits: int) -> np.ndarray:
    states = np.zeros((batch, 1 << n_qubits), dtype=np.complex128)
    states[:, 0] = 1.0
    return states


def _make_scratch(batch: int, n_qubits: int) -> np.ndarray:
    return np.empty((2, batch, 1 << (n_qubits - 1)), dtype=np.complex128)


def _run_program(spec: CircuitSpec, angles, batch: int) -> np.ndarray:
    states = _initial_states(batch, spec.n_qubits)
    scratch = _make_scratch(batch, spec.n_qubits)
    for g, theta in zip(spec.gates, angles):
        if g.kind == "cz":
            _apply_cz(states, g.qubits[0], g.qubits[1], spec.n_qubits)
        else:
            _rotate(states, g.kind, g.qubits[0], theta, spec.n_qubits, scratch)
    return states


def simulate(spec: CircuitSpec, inputs, params) -> np.ndarray:
    """Statevector after running the program on |0...0>."""
    angles = _resolve_angles(spec, np.atleast_1d(np.asarray(inputs, dtype=np.float64)), params)
    return _run_program(spec, angles, batch=1)[0]


def simulate_batch(spec: CircuitSpec, inputs, params) -> np.ndarray:
    """Statevectors for a (B, input_count) batch sharing one parameter vector."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ValueError("simulate_batch expects a 2-D input array")
    angles = _resolve_angles(spec, inputs, params)
    return _run_program(spec, angles, batch=inputs.shape[0])


def expect_z(state: np.ndarray, qubit: int) -> float:
    """Single-qubit <Z>: +1 weight where the qubit bit is 0, -1 where it is 1."""
    n = state.shape[-1].bit_length() - 1
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range for {n}-qubit state")
    probs = np.abs(state) ** 2
    view = probs.reshape(1 << qubit, 2, 1 << (n - 1 - qubit))
    return float(view[:, 0, :].sum() - view[:, 1, :].sum())


def expect_z_all(state: np.ndarray) -> float:
    """<Z x Z x ... x Z>: parity-weighted probability sum."""
    n = state.shape[-1].bit_length() - 1
    return float(np.abs(state) ** 2 @ _parity_signs(n))


def expect_z_each(states: np.ndarray) -> np.ndarray:
    """Per-qubit <Z> for a (B, 2^n) batch; returns shape (B, n)."""
    batch, dim = states.shape
    n = dim.bit_length() - 1
    probs = np.abs(states) ** 2
    out = np.empty((batch, n))
    for q in range(n):
        view = probs.reshape(batch, 1 << q, 2, 1 << (n - 1 - q))
        out[:, q] = view[:, :, 0, :].sum(axis=(1, 2)) - view[:, :, 1, :].sum(axis=(1, 2))
    return out


def expect_z_all_batch(states: np.ndarray) -> np.ndarray:
    n = states.shape[-1].bit_length() - 1
    return (np.abs(states) ** 2) @ _parity_signs(n)


_SIGN_CACHE: dict[tuple[int, int], np.ndarray] = {}
_PARITY_CACHE: dict[int, np.ndarray] = {}


def _z_signs(n_qubits: int, qubit: int) -> np.ndarray:
    key = (n_qubits, qubit)
    got = _SIGN_CACHE.get(key)
    if got is None:
        idx = np.arange(1 << n_qubits)
        bits = (idx >> (n_qubits - 1 - qubit)) & 1
        got = _SIGN_CACHE[key] = 1.0 - 2.0 * bits
    return got


def _parity_signs(n_qubits: int) -> np.ndarray:
    got = _PARITY_CACHE.get(n_qubits)
    if got is None:
        idx = np.arange(1 << n_qubits)
        parity = np.zeros_like(idx)
        for q in range(n_qubits):
            parity ^= (idx >> q) & 1
        got = _PARITY_CACHE[n_qubits] = 1.0 - 2.0 * parity
    return got


def diagonal_observable(spec_or_n, selector) -> np.ndarray:
    """Diagonal of the requested observable as a (2^n,) sign/weight vector.

    `selector` is a qubit index for a single-qubit Z, the string "all" for
    the tensor-Z parity observable, or an explicit diagonal array.
    """
    n = spec_or_n.n_qubits if isinstance(spec_or_n, CircuitSpec) else int(spec_or_n)
    if isinstance(selector, str):
        if selector != "all":
            raise ValueError(f"unknown observable selector {selector!r}")
        return _parity_signs(n)
    if isinstance(selector, (int, np.integer)):
        return _z_signs(n, int(selector))
    diag = np.asarray(selector, dtype=np.float64)
    if diag.shape != (1 << n,):
        raise ValueError(f"diagonal observable must have length {1 << n}")
    return diag


def z_sign_matrix(n_qubits: int) -> np.ndarray:
    """Stacked single-qubit Z diagonals, shape (n_qubits, 2^n).

    Lets a per-qubit upstream gradient u map to the diagonal of the
    weighted observable sum_q u_q Z_q as `u @ z_sign_matrix(n)`.
    """
    return np.stack([_z_signs(n_qubits, q) for q in range(n_qubits)])


def expectation(state: np.ndarray, diag: np.ndarray) -> float:
    return float(np.abs(state) ** 2 @ diag)


def gradients_parameter_shift(spec: CircuitSpec, inputs, params, observable) -> np.ndarray:
    """d<O>/d(param) via two +-pi/2-shifted executions per rotation gate.

    Exact for Pauli rotations. A parameter bound to several gates gets the
    sum of its per-occurrence shifts. Input slots are constants.
    """
    diag = diagonal_observable(spec, observable)
    inputs = np.atleast_1d(np.asarray(inputs, dtype=np.float64))
    params = np.asarray(params, dtype=np.float64)
    base_angles = _resolve_angles(spec, inputs, params)
    grads = np.zeros(spec.param_count)
    for gate_idx, g in enumerate(spec.gates):
        if not isinstance(g.source, ParamSlot):
            continue
        shifted = list(base_angles)
        shifted[gate_idx] = base_angles[gate_idx] + PI / 2
        plus = expectation(_run_program(spec, shifted, 1)[0], diag)
        shifted[gate_idx] = base_angles[gate_idx] - PI / 2
        minus = expectation(_run_program(spec, shifted, 1)[0], diag)
        grads[g.source.index] += (plus - minus) / 2.0
    return grads


_GENERATORS = {"rx": "x", "ry": "y", "rz": "z"}


_PAULI_CODES = {"x": 0, "y": 1, "z": 2}


def _generator_overlap(lam, psi, kind: str, qubit: int, n_qubits: int) -> float:
    """Im(<lam| P_qubit |psi>) summed over the batch, without copying states."""
    batch = psi.shape[0]
    left = 1 << qubit
    right = 1 << (n_qubits - 1 - qubit)
    if HAVE_NUMBA and lam.flags.c_contiguous and psi.flags.c_contiguous:
        return float(_nb_overlap(lam, psi, right, _PAULI_CODES[kind]))
    lv = lam.reshape(batch, left, 2, right)
    pv = psi.reshape(batch, left, 2, right)
    l0, l1 = lv[:, :, 0, :], lv[:, :, 1, :]
    p0, p1 = pv[:, :, 0, :], pv[:, :, 1, :]
    if kind == "x":
        val = np.einsum("blr,blr->", np.conj(l0), p1) + np.einsum(
            "blr,blr->", np.conj(l1), p0
        )
    elif kind == "y":
        val = -1j * np.einsum("blr,blr->", np.conj(l0), p1) + 1j * np.einsum(
            "blr,blr->", np.conj(l1), p0
        )
    else:
        val = np.einsum("blr,blr->", np.conj(l0), p0) - np.einsum(
            "blr,blr->", np.conj(l1), p1
        )
    return float(np.imag(val))


def adjoint_gradients_batch(
    spec: CircuitSpec,
    inputs: np.ndarray,
    params,
    diag_batch: np.ndarray,
    final_states: np.ndarray | None = None,
) -> np.ndarray:
    """Batch-summed d<O_b>/d(params) by reverse sweep over the gate program.

    `diag_batch` holds one diagonal observable per batch row (any per-sample
    loss weights folded in), so the result is sum_b d<O_b>/d(params) --
    exactly what chaining a per-sample upstream gradient requires. Values
    match `gradients_parameter_shift` to numerical precision.

    `final_states` may pass the already-simulated statevectors for these
    inputs/params to skip the forward pass; they are not modified.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    diag_batch = np.asarray(diag_batch, dtype=np.float64)
    if diag_batch.ndim == 1:
        diag_batch = diag_batch[None, :]
    angles = _resolve_angles(spec, inputs, params)
    if final_states is None:
        psi = _run_program(spec, angles, batch=inputs.shape[0])
    else:
        psi = np.array(final_states, dtype=np.complex128, copy=True)
    lam = diag_batch * psi
    grads = np.zeros(spec.param_count)
    scratch = _make_scratch(psi.shape[0], spec.n_qubits)
    for g, theta in zip(reversed(spec.gates), reversed(angles)):
        if isinstance(g.source, ParamSlot):
            grads[g.source.index] += _generator_overlap(
                lam, psi, _GENERATORS[g.kind], g.qubits[0], spec.n_qubits
            )
        if g.kind == "cz":
            _apply_cz(psi, g.qubits[0], g.qubits[1], spec.n_qubits)
            _apply_cz(lam, g.qubits[0], g.qubits[1], spec.n_qubits)
        else:
            inverse = np.multiply(theta, -1.0)
            _rotate(psi, g.kind, g.qubits[0], inverse, spec.n_qubits, scratch)
            _rotate(lam, g.kind, g.qubits[0], inverse, spec.n_qubits, scratch)
    return grads


def adjoint_gradients(spec: CircuitSpec, inputs, params, observable) -> np.ndarray:
    """Single-sample adjoint gradient for the selected observable."""
    diag = diagonal_observable(spec, observable)
    inputs = np.atleast_1d(np.asarray(inputs, dtype=np.float64))
    return adjoint_gradients_batch(spec, inputs[None, :], params, diag[None, :])


def vjp_gradients(
    spec: CircuitSpec,
    inputs: np.ndarray,
    params,
    diag_batch: np.ndarray,
    method: str = "adjoint",
    final_states: np.ndarray | None = None,
) -> np.ndarray:
    """Batch-summed circuit parameter gradient, selectable backend.

    "adjoint" runs one reverse sweep per batch; "parameter-shift" evaluates
    the rule sample by sample. Both yield the same analytic gradient.
    """
    if method == "adjoint":
        return adjoint_gradients_batch(spec, inputs, params, diag_batch, final_states)
    if method == "parameter-shift":
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        diag_batch = np.asarray(diag_batch, dtype=np.float64)
        if diag_batch.ndim == 1:
            diag_batch = diag_batch[None, :]
        total = np.zeros(spec.param_count)
        for row, diag in zip(inputs, diag_batch):
            total += gradients_parameter_shift(spec, row, params, diag)
        return total
    raise ValueError(f"unknown gradient method {method!r}")


@dataclass(frozen=True)
class NoisyExpectation:
    z_mean: np.ndarray
    z_all_mean: float
    z_stderr: np.ndarray
    z_all_stderr: float
    trajectories: int


def simulate_noisy(
    spec: CircuitSpec, inputs, params, noise: NoiseSpec, rng: np.random.Generator
) -> NoisyExpectation:
    """Monte-Carlo trajectory average of per-qubit <Z> and tensor-Z.

    Each trajectory runs the full program; after every gate, each qubit the
    gate touches suffers a uniformly random Pauli X/Y/Z with probability p.
    Reproducible bit-for-bit under a fixed rng state.
    """
    m = noise.trajectories
    inputs = np.atleast_1d(np.asarray(inputs, dtype=np.float64))
    angles = _resolve_angles(spec, inputs, params)
    states = _initial_states(m, spec.n_qubits)
    scratch = _make_scratch(m, spec.n_qubits)
    paulis = ("x", "y", "z")
    for g, theta in zip(spec.gates, angles):
        if g.kind == "cz":
            _apply_cz(states, g.qubits[0], g.qubits[1], spec.n_qubits)
        else:
            _rotate(states, g.kind, g.qubits[0], theta, spec.n_qubits, scratch)
        if noise.p == 0.0:
            continue
        for q in g.qubits:
            hit = rng.random(m) < noise.p
            if not hit.any():
                continue
            kinds = rng.integers(0, 3, size=int(hit.sum()))
            hit_rows = np.flatnonzero(hit)
            for kind_code in range(3):
                rows = hit_rows[kinds == kind_code]
                if rows.size:
                    sub = states[rows]
                    _apply_pauli(sub, paulis[kind_code], q, spec.n_qubits)
                    states[rows] = sub
    z_each = expect_z_each(states)
    z_all = expect_z_all_batch(states)
    ddof = 1 if m > 1 else 0
    return NoisyExpectation(
        z_mean=z_each.mean(axis=0),
        z_all_mean=float(z_all.mean()),
        z_stderr=z_each.std(axis=0, ddof=ddof) / math.sqrt(m),
        z_all_stderr=float(z_all.std(ddof=ddof) / math.sqrt(m)),
        trajectories=m,
    )


def circuit_depth(spec: CircuitSpec) -> int:
    """Longest gate sequence on any qubit, scheduling gates greedily in order."""
    level = [0] * spec.n_qubits
    for g in spec.gates:
        d = max(level[q] for q in g.qubits) + 1
        for q in g.qubits:
            level[q] = d
    return max(level) if level else 0


def format_circuit(spec: CircuitSpec) -> str:
    """One gate per line: kind, qubit(s), angle source. Stable for golden tests."""
    lines = []
    for g in spec.gates:
        qubits = " ".join(f"q{q}" for q in g.qubits)
        if g.source is None:
            lines.append(f"{g.kind} {qubits}")
        elif isinstance(g.source, InputSlot):
            suffix = "" if g.source.scale == PI else f"*{g.source.scale!r}"
            lines.append(f"{g.kind} {qubits} in[{g.source.index}]{suffix}")
        else:
            lines.append(f"{g.kind} {qubits} p[{g.source.index}]")
    return "\n".join(lines)


def check_normalized(state: np.ndarray, tol: float = 1e-10) -> None:
    norm = float(np.linalg.norm(state))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"statevector norm drifted to {norm}")
