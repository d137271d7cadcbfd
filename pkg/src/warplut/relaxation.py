"""Differentiable evaluation of coefficient-parameterized LUT nodes.

A node with coefficients c over subsets of its inputs computes the logit

    l(x) = sum_t c_t * prod_{j in t} (2 x_j - 1)

and emits sigmoid(l / tau), optionally with logistic noise added to the
logit (the Gumbel-sigmoid trick: the difference of two Gumbel draws is a
single Logistic(0, 1) sample), or a hard threshold with a straight-through
gradient.  Everything here is numpy, broadcasts over leading batch axes,
and is exactly mirrored by the analytic gradients the layers consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .boolean import MAX_ARITY, WalshCoeffs, _check_arity
from .errors import ConfigError, ValidationError


class RelaxMode(str, Enum):
    """How node logits become node outputs during the relaxed forward pass."""

    DETERMINISTIC = "deterministic"
    GUMBEL = "gumbel"
    STE = "ste"

    @classmethod
    def parse(cls, value) -> "RelaxMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown relaxation mode {value!r}; choose one of {choices}") from None


@dataclass(frozen=True)
class RelaxParams:
    """Knobs of the relaxed forward/backward pass.

    tau_relax: temperature dividing the logit before the sigmoid.
    gumbel_enabled: in STE mode, whether the thresholded sample is noisy.
        (Gumbel mode always injects noise; deterministic never does.)
    rng_seed: seed for the convenience generator used by single-node calls.
    ste_backward_noisy: STE backward differentiates the noisy surrogate
        instead of the noise-free one.
    """

    tau_relax: float = 1.0
    gumbel_enabled: bool = False
    rng_seed: int = 0
    ste_backward_noisy: bool = False

    def __post_init__(self) -> None:
        if not self.tau_relax > 0.0:
            raise ValidationError(f"tau_relax must be positive, got {self.tau_relax}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


@dataclass(frozen=True)
class TauSchedule:
    """Linear temperature ramp from ``start`` to ``end`` over a run."""

    start: float
    end: float | None = None

    def __post_init__(self) -> None:
        if not self.start > 0.0:
            raise ValidationError(f"tau schedule start must be positive, got {self.start}")
        if self.end is not None and not self.end > 0.0:
            raise ValidationError(f"tau schedule end must be positive, got {self.end}")

    def at(self, step: int, total_steps: int) -> float:
        if self.end is None or self.end == self.start or total_steps <= 1:
            return self.start
        frac = min(max(step, 0), total_steps - 1) / (total_steps - 1)
        return self.start + frac * (self.end - self.start)


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def b_tilde(x):
    """Map unit-interval activations to [-1, 1]; out-of-range input is clamped."""
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * np.clip(x, 0.0, 1.0) - 1.0


def b_tilde_mask(x):
    """Derivative indicator of the clamp in ``b_tilde`` (1 inside [0, 1])."""
    x = np.asarray(x, dtype=np.float64)
    return ((x >= 0.0) & (x <= 1.0)).astype(np.float64)


def characters(bt: np.ndarray, arity: int | None = None) -> np.ndarray:
    """All subset products of signed inputs.

    bt has shape (..., n); the result has shape (..., 2**n) with entry t
    equal to prod over the set bits j of t of bt[..., j].  Built in 2**n
    multiplies by peeling the lowest set bit.
    """
    bt = np.asarray(bt, dtype=np.float64)
    n = bt.shape[-1] if arity is None else arity
    _check_arity(n)
    if bt.shape[-1] != n:
        raise ValidationError(f"expected {n} inputs on last axis, got {bt.shape[-1]}")
    size = 2 ** n
    out = np.empty(bt.shape[:-1] + (size,), dtype=np.float64)
    out[..., 0] = 1.0
    for t in range(1, size):
        low = t & -t
        out[..., t] = out[..., t ^ low] * bt[..., low.bit_length() - 1]
    return out


@lru_cache(maxsize=MAX_ARITY)
def grad_index_pairs(arity: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Per input j: subset indices without bit j and the same indices with it.

    Used to evaluate d logit / d bt_j = sum over subsets containing j of the
    coefficient times the product of the other members.
    """
    _check_arity(arity)
    pairs = []
    for j in range(arity):
        without = np.asarray([t for t in range(2 ** arity) if not (t >> j) & 1], dtype=np.intp)
        pairs.append((without, without | (1 << j)))
    return tuple(pairs)


def _coeff_array(coeffs) -> np.ndarray:
    if isinstance(coeffs, WalshCoeffs):
        return coeffs.as_array()
    return np.asarray(coeffs, dtype=np.float64)


def relaxed_logit(coeffs, x) -> float:
    """The multilinear logit of one node at unit-interval inputs."""
    c = _coeff_array(coeffs)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if c.shape[-1] != 2 ** n:
        raise ValidationError(f"{c.shape[-1]} coefficients do not match {n} inputs")
    return float(characters(b_tilde(x)) @ c)


def relaxed_eval(coeffs, x, params: RelaxParams) -> float:
    """Noise-free relaxed node output sigmoid(logit / tau)."""
    return float(sigmoid(relaxed_logit(coeffs, x) / params.tau_relax))


def logistic_from_uniform(u):
    """Logistic(0, 1) sample from uniform u in (0, 1): log(u) - log(1 - u).

    Equal in distribution to the difference of two independent Gumbel(0, 1)
    draws, so one call replaces the usual pair.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValidationError("uniform sample must lie strictly inside (0, 1)")
    out = np.log(u) - np.log1p(-u)
    if out.ndim == 0:
        return float(out)
    return out


def draw_pair_noise(rng: np.random.Generator, shape=None):
    """Logistic logit noise; rng.random() never returns the endpoints 1."""
    u = rng.random() if shape is None else rng.random(size=shape)
    # Guard the open interval: random() can return exactly 0.0.
    u = np.maximum(u, np.finfo(np.float64).tiny)
    return logistic_from_uniform(u)


def gumbel_eval(coeffs, x, params: RelaxParams, rng: np.random.Generator | None = None) -> float:
    """Relaxed node output with one logistic noise draw on the logit."""
    if rng is None:
        rng = params.rng()
    noise = draw_pair_noise(rng)
    return float(sigmoid((relaxed_logit(coeffs, x) + noise) / params.tau_relax))


def forward_activation(
    logit: np.ndarray,
    mode: RelaxMode,
    params: RelaxParams,
    rng: np.random.Generator | None = None,
):
    """Map logits to node outputs; returns (out, noise) with noise None if undrawn."""
    logit = np.asarray(logit, dtype=np.float64)
    noisy = mode is RelaxMode.GUMBEL or (mode is RelaxMode.STE and params.gumbel_enabled)
    noise = None
    if noisy:
        if rng is None:
            raise ValidationError(f"mode {mode.value} needs an rng to draw noise")
        noise = draw_pair_noise(rng, shape=logit.shape)
    z = (logit + noise if noise is not None else logit) / params.tau_relax
    if mode is RelaxMode.STE:
        # sigmoid(z) >= 0.5 iff z >= 0; skip the sigmoid on the hard path.
        out = (z >= 0.0).astype(np.float64)
    else:
        out = sigmoid(z)
    return out, noise


def backward_activation(
    logit: np.ndarray,
    noise: np.ndarray | None,
    grad_out: np.ndarray,
    mode: RelaxMode,
    params: RelaxParams,
) -> np.ndarray:
    """Gradient of the (surrogate) output with respect to the logit."""
    logit = np.asarray(logit, dtype=np.float64)
    if mode is RelaxMode.DETERMINISTIC:
        z = logit / params.tau_relax
    elif mode is RelaxMode.GUMBEL:
        if noise is None:
            raise ValidationError("gumbel backward needs the noise cached by the forward pass")
        z = (logit + noise) / params.tau_relax
    elif mode is RelaxMode.STE:
        if params.ste_backward_noisy:
            if noise is None:
                raise ValidationError(
                    "ste_backward_noisy requires noise cached by a gumbel-enabled forward pass"
                )
            z = (logit + noise) / params.tau_relax
        else:
            z = logit / params.tau_relax
    else:  # pragma: no cover - enum is closed
        raise ValidationError(f"unknown mode {mode}")
    s = sigmoid(z)
    return np.asarray(grad_out, dtype=np.float64) * s * (1.0 - s) / params.tau_relax


def node_forward(
    coeffs,
    x,
    mode: RelaxMode,
    params: RelaxParams,
    rng: np.random.Generator | None = None,
    noise: float | None = None,
) -> float:
    """One node's relaxed output under ``mode``.

    An explicit ``noise`` value overrides drawing from ``rng``; pass 0.0 to
    silence a noisy mode deterministically.
    """
    mode = RelaxMode.parse(mode)
    logit = relaxed_logit(coeffs, x)
    noisy = mode is RelaxMode.GUMBEL or (mode is RelaxMode.STE and params.gumbel_enabled)
    if noisy and noise is None:
        if rng is None:
            rng = params.rng()
        noise = draw_pair_noise(rng)
    z = (logit + (noise if noisy and noise is not None else 0.0)) / params.tau_relax
    if mode is RelaxMode.STE:
        return 1.0 if z >= 0.0 else 0.0
    return float(sigmoid(z))


def node_backward(
    coeffs,
    x,
    upstream_grad: float,
    mode: RelaxMode,
    params: RelaxParams,
    cached_noise: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of one node's output.

    Returns (d out / d coeffs, d out / d x) scaled by ``upstream_grad``.
    Noisy modes require the noise value drawn by the matching forward call.
    """
    mode = RelaxMode.parse(mode)
    c = _coeff_array(coeffs)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if c.shape[-1] != 2 ** n:
        raise ValidationError(f"{c.shape[-1]} coefficients do not match {n} inputs")
    bt = b_tilde(x)
    chars = characters(bt)
    logit = chars @ c
    noise_arr = None if cached_noise is None else np.asarray(cached_noise, dtype=np.float64)
    grad_logit = backward_activation(logit, noise_arr, upstream_grad, mode, params)
    grad_coeffs = grad_logit * chars
    grad_bt = np.empty(n, dtype=np.float64)
    for j, (without, with_j) in enumerate(grad_index_pairs(n)):
        grad_bt[j] = grad_logit * (chars[without] @ c[with_j])
    grad_x = 2.0 * b_tilde_mask(x) * grad_bt
    return grad_coeffs, grad_x
