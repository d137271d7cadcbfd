"""Softmax-over-gates baseline parameterization for 2-input nodes.

Each node holds 16 logits, one per catalog gate.  The relaxed node output
is the softmax-weighted mixture of the gates' multilinear extensions

    g~(a, b) = sum_k table_g[k] * w_k(a, b)

where w(a, b) = ((1-a)(1-b), (1-a)b, a(1-b), ab) are the corner weights in
table order.  Hardening picks the argmax logit (ties break to the lowest
gate id).  Functionally interchangeable with the coefficient nodes; only
the parameter count per node differs (16 versus 4).
"""

from __future__ import annotations

import numpy as np

from .boolean import gate_tables_matrix
from .errors import ValidationError


def corner_weights(a, b) -> np.ndarray:
    """Bilinear corner weights, stacked on a new trailing axis of size 4."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.stack(
        [(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b], axis=-1
    )


def relaxed_gate(gate_id: int, a, b):
    """Multilinear extension of one catalog gate at unit-interval inputs."""
    if not 0 <= gate_id < 16:
        raise ValidationError(f"gate id must be in [0, 16), got {gate_id}")
    table = gate_tables_matrix()[gate_id]
    out = corner_weights(a, b) @ table
    if out.ndim == 0:
        return float(out)
    return out


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def mixed_tables(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax mixture of the 16 gate tables.

    logits (..., 16) -> mixed table values (..., 4); each output row is a
    convex combination of {0,1} tables, hence lies in [0, 1].
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] != 16:
        raise ValidationError(f"need 16 gate logits on the last axis, got {logits.shape[-1]}")
    if not temperature > 0.0:
        raise ValidationError(f"softmax temperature must be positive, got {temperature}")
    return softmax(logits / temperature) @ gate_tables_matrix()


def dlgn_node_forward(logits, a, b, temperature: float = 1.0):
    """Relaxed output of one softmax-mixture node."""
    table = mixed_tables(logits, temperature)
    out = np.sum(corner_weights(a, b) * table, axis=-1)
    if out.ndim == 0:
        return float(out)
    return out


def dlgn_harden(logits) -> int:
    """Gate id with the largest logit; ties resolve to the lowest id."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (16,):
        raise ValidationError(f"expected 16 logits, got shape {logits.shape}")
    return int(np.argmax(logits))


def harden_logits(logits: np.ndarray) -> np.ndarray:
    """Vectorized argmax over the trailing gate axis (ties to lowest id)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] != 16:
        raise ValidationError(f"need 16 gate logits on the last axis, got {logits.shape[-1]}")
    return np.argmax(logits, axis=-1)


def pair_mixture_backward(
    weights: np.ndarray,
    mixed: np.ndarray,
    probs: np.ndarray,
    out: np.ndarray,
    grad_out: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    temperature: float,
    reduce_axes: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared backward arithmetic for batches of mixture nodes.

    weights: corner weights (..., 4); mixed: per-node mixed tables broadcast
    against them; probs: softmax probabilities (nodes..., 16); out/grad_out:
    node outputs and upstream gradients.  reduce_axes are the batch axes to
    sum over when collapsing to per-node parameter gradients.  Returns
    (grad_logits, grad_a, grad_b).

    The logit gradient avoids materializing per-example gate values: with
    v_g = sum_k w_k * table_gk, the softmax chain gives
    d out / d logit_g = p_g (v_g - out) / T, and summing over the batch lets
    v contract through (sum_batch grad * w) @ table^T first.
    """
    gw = np.sum(grad_out[..., None] * weights, axis=reduce_axes)  # (nodes..., 4)
    gv = gw @ gate_tables_matrix().T  # (nodes..., 16)
    g_dot_out = np.sum(grad_out * out, axis=reduce_axes)  # (nodes...,)
    grad_logits = probs * (gv - g_dot_out[..., None]) / temperature
    # d w / d a = (-(1-b), -b, (1-b), b); d w / d b = (-(1-a), (1-a), -a, a)
    t00, t01, t10, t11 = (mixed[..., k] for k in range(4))
    grad_a = grad_out * ((1.0 - b) * (t10 - t00) + b * (t11 - t01))
    grad_b = grad_out * ((1.0 - a) * (t01 - t00) + a * (t11 - t10))
    return grad_logits, grad_a, grad_b
