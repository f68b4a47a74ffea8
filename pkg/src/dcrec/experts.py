"""Per-confounder expert MLPs and the fixed gate.

Each expert maps m through two rectified hidden layers and a sigmoid output.
The gate is never learned: one-hot(a) while training, P(A) at inference.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .model import PARAM_NAMES, Model

HEAD_PARAMS = PARAM_NAMES[1:]


def _act(model: Model, z):
    return np.maximum(z, 0.0) if model.hidden_activation == "relu" else z


def _act_grad(model: Model, z):
    return (z > 0.0).astype(np.float64) if model.hidden_activation == "relu" else np.ones_like(z)


def _out(model: Model, z):
    return expit(z) if model.output_activation == "sigmoid" else z


def head_forward(model: Model, m: np.ndarray, e: int):
    """Expert ``e`` on a (n, d) batch.  Returns (output, cache)."""
    p = model.params
    z1 = m @ p["W1"][e] + p["b1"][e]
    a1 = _act(model, z1)
    z2 = a1 @ p["W2"][e] + p["b2"][e]
    a2 = _act(model, z2)
    z3 = a2 @ p["W3"][e] + p["b3"][e]
    return _out(model, z3), (m, z1, a1, z2, a2, z3)


def head_backward(model: Model, e: int, cache, dz3: np.ndarray):
    """Backprop from the output pre-activation.  Returns (grads of expert e, dm)."""
    p = model.params
    m, z1, a1, z2, a2, _ = cache
    g = {"W3": a2.T @ dz3, "b3": dz3.sum()}
    dz2 = np.outer(dz3, p["W3"][e]) * _act_grad(model, z2)
    g["W2"] = a1.T @ dz2
    g["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p["W2"][e].T) * _act_grad(model, z1)
    g["W1"] = m.T @ dz1
    g["b1"] = dz1.sum(axis=0)
    dm = dz1 @ p["W1"][e].T
    return g, dm


def _check_expert(model: Model, a: int) -> None:
    if not 0 <= a < model.n_experts:
        raise IndexError(f"expert index {a} out of range [0, {model.n_experts})")


def expert_forward(model: Model, m, a: int) -> float:
    _check_expert(model, a)
    out, _ = head_forward(model, np.asarray(m, dtype=np.float64)[None, :], a)
    return float(out[0])


def moe_forward_all(model: Model, m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)[None, :]
    return np.array([head_forward(model, m, e)[0][0] for e in range(model.n_experts)])


def gate_combine(probs, gate) -> float:
    """sum_a gate[a] * probs[a], accumulated in index order."""
    probs = np.asarray(probs, dtype=np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    if probs.shape != gate.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {gate.shape}")
    if (gate < 0).any() or abs(gate.sum() - 1.0) > 1e-9:
        raise ValueError("gate weights must be non-negative and sum to 1")
    total = 0.0
    for g, p in zip(gate.tolist(), probs.tolist()):
        total += g * p
    return total


def one_hot(a: int, K: int) -> np.ndarray:
    v = np.zeros(K)
    v[a] = 1.0
    return v


def expert_backward(model: Model, m, a: int, upstream: float):
    """Gradients of ``upstream * output`` for expert ``a`` and for m.

    Returned head gradients have the full stacked shapes; slices for every
    other expert are exactly zero.
    """
    _check_expert(model, a)
    m = np.asarray(m, dtype=np.float64)[None, :]
    out, cache = head_forward(model, m, a)
    if model.output_activation == "sigmoid":
        dz3 = np.array([upstream * out[0] * (1.0 - out[0])])
    else:
        dz3 = np.array([float(upstream)])
    g, dm = head_backward(model, a, cache, dz3)
    grads = {name: np.zeros_like(model.params[name]) for name in HEAD_PARAMS}
    for name in HEAD_PARAMS:
        grads[name][a] = g[name]
    return grads, dm[0]
