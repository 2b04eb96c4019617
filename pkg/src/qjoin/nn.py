"""Minimal dense neural-network stack with exact reverse-mode gradients.

Covers everything the trainers need: feed-forward nets with tanh or
identity activations, the masked softmax policy head, the small
post-processing heads that sit behind circuit measurements, and Adam.
Parameters live in plain numpy arrays; every net can flatten itself to a
single vector for checkpointing and optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Layer:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray     # (out,)
    activation: str      # "tanh" | "identity"

    def __post_init__(self):
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.weights.shape[1] != self.bias.shape[0]:
            raise ValueError("bias length must match the layer's output width")


class DenseNet:
    """Plain multi-layer perceptron over float64 numpy arrays."""

    def __init__(self, layers: list[Layer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weights.shape[1] != nxt.weights.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        self.layers = layers

    @classmethod
    def create(cls, rng: np.random.Generator, sizes: list[int], activations: list[str]):
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
            bound = 1.0 / np.sqrt(fan_in)
            layers.append(
                Layer(
                    weights=rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                    bias=rng.uniform(-bound, bound, size=fan_out),
                    activation=act,
                )
            )
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def param_count(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def params_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def set_params_flat(self, flat: np.ndarray) -> None:
        if flat.shape != (self.param_count(),):
            raise ValueError("flat parameter vector has the wrong length")
        pos = 0
        for l in self.layers:
            w = l.weights.size
            l.weights = flat[pos : pos + w].reshape(l.weights.shape).copy()
            pos += w
            b = l.bias.size
            l.bias = flat[pos : pos + b].copy()
            pos += b

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_trace(x)
        return out

    def forward_trace(self, x: np.ndarray):
        """Forward pass keeping per-layer activations for `backward`."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(
                f"input width {x.shape[1]} does not match net input {self.input_dim}"
            )
        activations = [x]
        for l in self.layers:
            z = activations[-1] @ l.weights + l.bias
            activations.append(np.tanh(z) if l.activation == "tanh" else z)
        out = activations[-1][0] if squeeze else activations[-1]
        return out, activations

    def backward(self, trace: list[np.ndarray], upstream: np.ndarray):
        """Exact gradients for a traced forward pass.

        Returns (flat parameter gradient, input gradient); `upstream` is
        d(loss)/d(output) with the same leading batch shape as the trace.
        """
        grad = np.asarray(upstream, dtype=np.float64)
        if grad.ndim == 1:
            grad = grad[None, :]
        param_grads: list[np.ndarray] = []
        for idx in range(len(self.layers) - 1, -1, -1):
            l = self.layers[idx]
            y = trace[idx + 1]
            x = trace[idx]
            dz = grad * (1.0 - y * y) if l.activation == "tanh" else grad
            param_grads.append(np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)]))
            grad = dz @ l.weights.T
        return np.concatenate(param_grads[::-1]), grad


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Probabilities over valid entries only; masked entries are exactly zero.

    Algebraically identical to softmax-then-zero-then-renormalize, computed
    in the numerically stable restricted form.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape != mask.shape:
        raise ValueError("logits and mask must share a shape")
    squeeze = logits.ndim == 1
    if squeeze:
        logits, mask = logits[None, :], mask[None, :]
    if not mask.any(axis=1).all():
        raise ValueError("every row needs at least one unmasked action")
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    weights = np.where(mask, np.exp(shifted), 0.0)
    probs = weights / weights.sum(axis=1, keepdims=True)
    return probs[0] if squeeze else probs


def masked_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row, treating exact zeros as absent support."""
    p = np.asarray(probs, dtype=np.float64)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None, :]
    logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    ent = -(p * logp).sum(axis=1)
    return ent[0] if squeeze else ent


@dataclass
class AdamState:
    """Bias-corrected Adam over one flat parameter vector."""

    dim: int
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.m = np.zeros(self.dim)
        self.v = np.zeros(self.dim)
        self.step_count = 0


def adam_step(adam: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One descent step; rejects non-finite gradients as a training guard."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != (adam.dim,) or grads.shape != (adam.dim,):
        raise ValueError("parameter/gradient length does not match the optimizer state")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient")
    adam.step_count += 1
    adam.m = adam.beta1 * adam.m + (1 - adam.beta1) * grads
    adam.v = adam.beta2 * adam.v + (1 - adam.beta2) * grads**2
    m_hat = adam.m / (1 - adam.beta1**adam.step_count)
    v_hat = adam.v / (1 - adam.beta2**adam.step_count)
    return params - adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)


def mlp_param_count(input_dim: int, hidden: int, output_dim: int) -> int:
    """Parameters of the two-hidden-layer nets used throughout, closed form."""
    return (
        hidden * input_dim + hidden
        + hidden * hidden + hidden
        + output_dim * hidden + output_dim
    )
