"""Trainable layers: randomly wired LUT banks, a residual convolutional
block of LUT trees, flattening, and grouped score summation.

Every trainable layer implements:

    forward(x, ctx)            relaxed forward; caches for backward iff ctx.train
    backward(grad_out)         -> (per-parameter gradients, gradient wrt input)
    parameters()               list of parameter arrays, updated in place
    initialize(scheme, rng)    apply an init scheme to the parameters
    discrete_forward(bits)     exact Boolean evaluation of the hardened layer
    n_params                   trainable scalar count

Layers cache activations on ``self`` during a training forward pass, so a
layer instance must not run two concurrent training passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boolean import MAX_ARITY, char_matrix, classify_gate_bits
from .dlgn import corner_weights, gate_tables_matrix, pair_mixture_backward, softmax
from .errors import ConfigError, ValidationError, WiringError
from .relaxation import (
    RelaxMode,
    RelaxParams,
    b_tilde,
    b_tilde_mask,
    backward_activation,
    characters,
    forward_activation,
    grad_index_pairs,
)

WIRING_KINDS = ("random", "paired")
NODE_KINDS = ("warp", "dlgn")


@dataclass(frozen=True)
class EvalContext:
    """Per-pass evaluation settings threaded through the layers."""

    mode: RelaxMode = RelaxMode.DETERMINISTIC
    relax: RelaxParams = RelaxParams()
    rng: np.random.Generator | None = None
    train: bool = False


@dataclass(frozen=True)
class InitScheme:
    """Parameter initialization: pure noise, or noise plus a pass-through bias.

    kind "random": i.i.d. normal with scale ``sigma``.
    kind "residual": random plus an offset ``gamma`` on the component that
    makes the node copy its first input (the first-input coefficient for
    coefficient nodes, the identity-gate logit for mixture nodes).
    Unset fields fall back to per-node-kind defaults at apply time.
    """

    kind: str = "random"
    sigma: float | None = None
    gamma: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("random", "residual"):
            raise ConfigError(f"init kind must be 'random' or 'residual', got {self.kind!r}")
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError(f"init sigma must be nonnegative, got {self.sigma}")

    def resolved(self, node_kind: str) -> tuple[str, float, float]:
        if node_kind == "warp":
            sigma = 1.0 if self.sigma is None else self.sigma
            if self.kind == "residual" and self.sigma is None:
                sigma = 0.25
            gamma = 1.0 if self.gamma is None else self.gamma
        else:
            sigma = 1.0 if self.sigma is None else self.sigma
            gamma = 5.0 if self.gamma is None else self.gamma
        return self.kind, sigma, gamma


# Component index that makes a node copy its first input: coefficient of the
# bare first-input term for warp nodes, the ID_A logit for mixture nodes.
_WARP_PASSTHROUGH_INDEX = 1
_DLGN_PASSTHROUGH_INDEX = 10


def init_node_params(params: np.ndarray, node_kind: str, scheme: InitScheme,
                     rng: np.random.Generator) -> None:
    """Fill a (..., 4 or 16) parameter array in place per the scheme."""
    kind, sigma, gamma = scheme.resolved(node_kind)
    params[...] = rng.normal(0.0, sigma, size=params.shape) if sigma > 0 else 0.0
    if kind == "residual":
        idx = _WARP_PASSTHROUGH_INDEX if node_kind == "warp" else _DLGN_PASSTHROUGH_INDEX
        params[..., idx] += gamma


def make_connections(
    in_dim: int,
    node_count: int,
    arity: int,
    rng: np.random.Generator | None = None,
    wiring: str = "random",
) -> np.ndarray:
    """Input wire indices for a bank of nodes, shape (node_count, arity).

    "random" draws each node's inputs uniformly without replacement (distinct
    wires per node).  "paired" wires node j to consecutive wires
    (arity*j, ..., arity*j + arity - 1) modulo in_dim, which makes a bank of
    half-width layers reduce its input like a balanced tree.
    """
    if in_dim < arity:
        raise WiringError(f"cannot wire arity-{arity} nodes to {in_dim} inputs")
    if node_count < 1:
        raise ValidationError(f"node_count must be positive, got {node_count}")
    if wiring == "paired":
        base = arity * np.arange(node_count, dtype=np.int64)[:, None]
        conn = (base + np.arange(arity, dtype=np.int64)[None, :]) % in_dim
        return conn.astype(np.int32)
    if wiring != "random":
        raise ConfigError(f"wiring must be one of {WIRING_KINDS}, got {wiring!r}")
    if rng is None:
        raise ValidationError("random wiring needs an rng")
    conn = rng.integers(0, in_dim, size=(node_count, arity), dtype=np.int64)
    # Redraw rows with duplicate wires until all rows have distinct entries.
    while True:
        sorted_rows = np.sort(conn, axis=1)
        bad = (np.diff(sorted_rows, axis=1) == 0).any(axis=1)
        if not bad.any():
            break
        conn[bad] = rng.integers(0, in_dim, size=(int(bad.sum()), arity), dtype=np.int64)
    return conn.astype(np.int32)


class _ScatterPlan:
    """Precomputed argsort/reduceat recipe for accumulating per-wire gradients."""

    def __init__(self, connections: np.ndarray, in_dim: int):
        flat = connections.ravel().astype(np.int64)
        self.order = np.argsort(flat, kind="stable")
        sorted_vals = flat[self.order]
        self.present, self.starts = np.unique(sorted_vals, return_index=True)
        self.in_dim = in_dim

    def scatter(self, grad_gathered: np.ndarray) -> np.ndarray:
        """(B, node_count, arity) gathered-input grads -> (B, in_dim)."""
        batch = grad_gathered.shape[0]
        flat = grad_gathered.reshape(batch, -1)[:, self.order]
        sums = np.add.reduceat(flat, self.starts, axis=1)
        out = np.zeros((batch, self.in_dim), dtype=np.float64)
        out[:, self.present] = sums
        return out


def _check_batch_input(x: np.ndarray, in_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ValidationError(f"expected input of shape (batch, {in_dim}), got {x.shape}")
    return x


class WarpDenseLayer:
    """Bank of coefficient-parameterized LUT nodes on fixed random wires."""

    node_kind = "warp"

    def __init__(self, in_dim: int, connections: np.ndarray):
        connections = np.asarray(connections, dtype=np.int32)
        if connections.ndim != 2:
            raise ValidationError("connections must be (node_count, arity)")
        arity = connections.shape[1]
        if not 1 <= arity <= MAX_ARITY:
            raise ValidationError(f"arity must be in [1, {MAX_ARITY}], got {arity}")
        if connections.min() < 0 or connections.max() >= in_dim:
            raise WiringError("connection indices out of range")
        self.in_dim = int(in_dim)
        self.connections = connections
        self.node_count, self.arity = connections.shape
        self.coeffs = np.zeros((self.node_count, 2 ** self.arity), dtype=np.float64)
        self._scatter = _ScatterPlan(connections, in_dim)
        self._cache = None

    @classmethod
    def build(cls, in_dim: int, node_count: int, arity: int = 2,
              rng: np.random.Generator | None = None, wiring: str = "random"):
        return cls(in_dim, make_connections(in_dim, node_count, arity, rng, wiring))

    @property
    def out_dim(self) -> int:
        return self.node_count

    @property
    def n_params(self) -> int:
        return self.coeffs.size

    def parameters(self) -> list[np.ndarray]:
        return [self.coeffs]

    def initialize(self, scheme: InitScheme, rng: np.random.Generator) -> None:
        init_node_params(self.coeffs, "warp", scheme, rng)

    def forward(self, x: np.ndarray, ctx: EvalContext) -> np.ndarray:
        x = _check_batch_input(x, self.in_dim)
        gathered = x[:, self.connections]             # (B, J, n)
        bt = b_tilde(gathered)
        chars = characters(bt, self.arity)            # (B, J, 2**n)
        logit = np.einsum("bjt,jt->bj", chars, self.coeffs)
        out, noise = forward_activation(logit, ctx.mode, ctx.relax, ctx.rng)
        if ctx.train:
            self._cache = (gathered, bt, logit, noise, ctx)
        return out

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        if self._cache is None:
            raise ValidationError("backward called without a training forward pass")
        gathered, bt, logit, noise, ctx = self._cache
        self._cache = None
        grad_logit = backward_activation(logit, noise, grad_out, ctx.mode, ctx.relax)
        chars = characters(bt, self.arity)
        grad_coeffs = np.einsum("bj,bjt->jt", grad_logit, chars)
        grad_bt = np.empty_like(bt)
        for j, (without, with_j) in enumerate(grad_index_pairs(self.arity)):
            grad_bt[:, :, j] = grad_logit * np.einsum(
                "bjm,jm->bj", chars[:, :, without], self.coeffs[:, with_j]
            )
        grad_gathered = 2.0 * b_tilde_mask(gathered) * grad_bt
        return [grad_coeffs], self._scatter.scatter(grad_gathered)

    def discrete_tables(self) -> np.ndarray:
        """Hardened truth-table bits per node, shape (node_count, 2**arity)."""
        corner = self.coeffs @ char_matrix(self.arity).astype(np.float64)
        return (corner >= 0.0).astype(np.uint8)

    def discrete_forward(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[1] != self.in_dim:
            raise ValidationError(f"expected bits of shape (batch, {self.in_dim}), got {bits.shape}")
        gathered = bits[:, self.connections].astype(np.int64)
        shifts = np.arange(self.arity - 1, -1, -1, dtype=np.int64)
        corners = (gathered << shifts).sum(axis=2)
        tables = self.discrete_tables()
        return tables[np.arange(self.node_count)[None, :], corners]

    def gate_ids(self) -> np.ndarray:
        if self.arity != 2:
            raise ValidationError("gate ids are defined for 2-input nodes only")
        return classify_gate_bits(self.discrete_tables())


class DlgnDenseLayer:
    """Bank of softmax-mixture nodes (16 gate logits each) on fixed wires."""

    node_kind = "dlgn"

    def __init__(self, in_dim: int, connections: np.ndarray, softmax_temp: float = 1.0):
        connections = np.asarray(connections, dtype=np.int32)
        if connections.ndim != 2 or connections.shape[1] != 2:
            raise ValidationError("mixture nodes are 2-input; connections must be (node_count, 2)")
        if connections.min() < 0 or connections.max() >= in_dim:
            raise WiringError("connection indices out of range")
        if not softmax_temp > 0:
            raise ValidationError(f"softmax temperature must be positive, got {softmax_temp}")
        self.in_dim = int(in_dim)
        self.connections = connections
        self.node_count = connections.shape[0]
        self.arity = 2
        self.softmax_temp = float(softmax_temp)
        self.logits = np.zeros((self.node_count, 16), dtype=np.float64)
        self._scatter = _ScatterPlan(connections, in_dim)
        self._cache = None

    @classmethod
    def build(cls, in_dim: int, node_count: int, arity: int = 2,
              rng: np.random.Generator | None = None, wiring: str = "random"):
        if arity != 2:
            raise ConfigError("mixture nodes support arity 2 only")
        return cls(in_dim, make_connections(in_dim, node_count, 2, rng, wiring))

    @property
    def out_dim(self) -> int:
        return self.node_count

    @property
    def n_params(self) -> int:
        return self.logits.size

    def parameters(self) -> list[np.ndarray]:
        return [self.logits]

    def initialize(self, scheme: InitScheme, rng: np.random.Generator) -> None:
        init_node_params(self.logits, "dlgn", scheme, rng)

    def forward(self, x: np.ndarray, ctx: EvalContext) -> np.ndarray:
        if ctx.mode is not RelaxMode.DETERMINISTIC:
            raise ConfigError("mixture nodes train with deterministic relaxation only")
        x = _check_batch_input(x, self.in_dim)
        gathered = x[:, self.connections]                       # (B, J, 2)
        probs = softmax(self.logits / self.softmax_temp)        # (J, 16)
        mixed = probs @ gate_tables_matrix()                    # (J, 4)
        weights = corner_weights(gathered[:, :, 0], gathered[:, :, 1])
        out = np.einsum("bjk,jk->bj", weights, mixed)
        if ctx.train:
            self._cache = (gathered, probs, mixed, out)
        return out

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        if self._cache is None:
            raise ValidationError("backward called without a training forward pass")
        gathered, probs, mixed, out = self._cache
        self._cache = None
        a = gathered[:, :, 0]
        b = gathered[:, :, 1]
        weights = corner_weights(a, b)
        grad_logits, grad_a, grad_b = pair_mixture_backward(
            weights, mixed, probs, out, np.asarray(grad_out, dtype=np.float64),
            a, b, self.softmax_temp, reduce_axes=(0,),
        )
        grad_gathered = np.stack([grad_a, grad_b], axis=-1)
        return [grad_logits], self._scatter.scatter(grad_gathered)

    def discrete_tables(self) -> np.ndarray:
        ids = np.argmax(self.logits, axis=1)
        return gate_tables_matrix()[ids].astype(np.uint8)

    def discrete_forward(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[1] != self.in_dim:
            raise ValidationError(f"expected bits of shape (batch, {self.in_dim}), got {bits.shape}")
        gathered = bits[:, self.connections].astype(np.int64)
        corners = (gathered[:, :, 0] << 1) | gathered[:, :, 1]
        tables = self.discrete_tables()
        return tables[np.arange(self.node_count)[None, :], corners]

    def gate_ids(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


class FlattenLayer:
    """(B, C, H, W) -> (B, C*H*W) in C-order; exact in both modes."""

    node_kind = None

    def __init__(self, in_shape: tuple[int, int, int]):
        self.in_shape = tuple(int(v) for v in in_shape)
        self.out_dim = int(np.prod(self.in_shape))
        self._cache = None

    @property
    def n_params(self) -> int:
        return 0

    def parameters(self) -> list[np.ndarray]:
        return []

    def initialize(self, scheme: InitScheme, rng: np.random.Generator) -> None:
        pass

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != self.in_shape:
            raise ValidationError(f"expected input of shape (batch, {self.in_shape}), got {x.shape}")
        return x

    def forward(self, x: np.ndarray, ctx: EvalContext) -> np.ndarray:
        return self._check(x).reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        return [], np.asarray(grad_out).reshape((-1,) + self.in_shape)

    def discrete_forward(self, bits: np.ndarray) -> np.ndarray:
        return self._check(bits).reshape(bits.shape[0], -1)


class GroupSumLayer:
    """Class scores as temperature-scaled sums over contiguous wire groups.

    Group g owns wires [g*m/k, (g+1)*m/k); discrete mode returns integer
    popcounts (no temperature).
    """

    node_kind = None

    def __init__(self, in_dim: int, class_count: int, tau_group: float = 1.0):
        if class_count < 2:
            raise ConfigError(f"class_count must be at least 2, got {class_count}")
        if in_dim % class_count != 0:
            raise ConfigError(
                f"group sum needs width divisible by class count, got {in_dim} wires "
                f"for {class_count} classes"
            )
        if not tau_group > 0:
            raise ConfigError(f"tau_group must be positive, got {tau_group}")
        self.in_dim = int(in_dim)
        self.class_count = int(class_count)
        self.tau_group = float(tau_group)
        self.group_size = self.in_dim // self.class_count

    @property
    def out_dim(self) -> int:
        return self.class_count

    @property
    def n_params(self) -> int:
        return 0

    def parameters(self) -> list[np.ndarray]:
        return []

    def initialize(self, scheme: InitScheme, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, ctx: EvalContext) -> np.ndarray:
        x = _check_batch_input(x, self.in_dim)
        groups = x.reshape(x.shape[0], self.class_count, self.group_size)
        return groups.sum(axis=2) / self.tau_group

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        grad_out = np.asarray(grad_out, dtype=np.float64)
        grad_in = np.repeat(grad_out / self.tau_group, self.group_size, axis=1)
        return [], grad_in

    def discrete_counts(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[1] != self.in_dim:
            raise ValidationError(f"expected bits of shape (batch, {self.in_dim}), got {bits.shape}")
        groups = bits.astype(np.int64).reshape(bits.shape[0], self.class_count, self.group_size)
        return groups.sum(axis=2)

    def discrete_forward(self, bits: np.ndarray) -> np.ndarray:
        return self.discrete_counts(bits)


class ResidualLogicBlock:
    """Per-channel binary trees of 2-input LUT nodes over a 3x3 receptive
    field, merged with a center-pixel residual, then 2x2 pooled.

    Each output channel owns a complete binary tree of depth ``depth`` in
    heap order (node i's children are 2i+1 and 2i+2, children evaluate
    first).  Its 2**depth leaves each read one (channel, row offset, col
    offset) tap from the zero-padded input, offsets in {-1, 0, 1}.  The tree
    root is combined with the unshifted center pixel of input channel
    (out_channel mod in_channels) by one extra learnable 2-input node, and a
    2x2 stride-2 window reduction halves both spatial dims: max of the
    relaxed values, logical OR of hardened bits.  Spatial size must be even;
    every position shares the channel's node parameters.
    """

    def __init__(self, in_channels: int, out_channels: int, depth: int,
                 node_kind: str, leaves: np.ndarray, softmax_temp: float = 1.0):
        if node_kind not in NODE_KINDS:
            raise ConfigError(f"node_kind must be one of {NODE_KINDS}, got {node_kind!r}")
        if not 1 <= depth <= 5:
            raise ConfigError(f"tree depth must be in [1, 5], got {depth}")
        if in_channels < 1 or out_channels < 1:
            raise ValidationError("channel counts must be positive")
        leaves = np.asarray(leaves, dtype=np.int32)
        n_leaves = 2 ** depth
        if leaves.shape != (out_channels, n_leaves, 3):
            raise ValidationError(
                f"leaves must have shape ({out_channels}, {n_leaves}, 3), got {leaves.shape}"
            )
        if leaves[:, :, 0].min() < 0 or leaves[:, :, 0].max() >= in_channels:
            raise WiringError("leaf channel index out of range")
        if np.abs(leaves[:, :, 1:]).max() > 1:
            raise WiringError("leaf spatial offsets must be in {-1, 0, 1}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.depth = int(depth)
        self.node_kind = node_kind
        self.leaves = leaves
        self.n_internal = n_leaves - 1
        self.n_leaves = n_leaves
        self.residual_src = (np.arange(out_channels) % in_channels).astype(np.int32)
        self.softmax_temp = float(softmax_temp)
        width = 4 if node_kind == "warp" else 16
        self.tree_params = np.zeros((out_channels, self.n_internal, width), dtype=np.float64)
        self.merge_params = np.zeros((out_channels, width), dtype=np.float64)
        self._cache = None

    @classmethod
    def build(cls, in_channels: int, out_channels: int, depth: int,
              node_kind: str, rng: np.random.Generator, softmax_temp: float = 1.0):
        n_leaves = 2 ** depth
        leaves = np.stack(
            [
                rng.integers(0, in_channels, size=(out_channels, n_leaves)),
                rng.integers(-1, 2, size=(out_channels, n_leaves)),
                rng.integers(-1, 2, size=(out_channels, n_leaves)),
            ],
            axis=-1,
        )
        return cls(in_channels, out_channels, depth, node_kind, leaves, softmax_temp)

    @property
    def node_count(self) -> int:
        return self.out_channels * (self.n_internal + 1)

    @property
    def n_params(self) -> int:
        return self.tree_params.size + self.merge_params.size

    def parameters(self) -> list[np.ndarray]:
        return [self.tree_params, self.merge_params]

    def initialize(self, scheme: InitScheme, rng: np.random.Generator) -> None:
        init_node_params(self.tree_params, self.node_kind, scheme, rng)
        init_node_params(self.merge_params, self.node_kind, scheme, rng)

    def out_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = in_shape
        if c != self.in_channels:
            raise ConfigError(f"block expects {self.in_channels} input channels, got {c}")
        if h % 2 or w % 2:
            raise ConfigError(f"block needs even spatial dims, got {h}x{w}")
        return (self.out_channels, h // 2, w // 2)

    def _check_input(self, x: np.ndarray) -> tuple[int, int, int]:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValidationError(
                f"expected input (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        h, w = x.shape[2], x.shape[3]
        if h % 2 or w % 2:
            raise ValidationError(f"spatial dims must be even, got {h}x{w}")
        return x.shape[0], h, w

    def _gather_leaves(self, padded: np.ndarray, h: int, w: int) -> np.ndarray:
        batch = padded.shape[0]
        vals = np.empty((batch, self.out_channels, self.n_leaves, h, w), dtype=padded.dtype)
        for co in range(self.out_channels):
            for s in range(self.n_leaves):
                ch, dr, dc = self.leaves[co, s]
                vals[:, co, s] = padded[:, ch, 1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        return vals

    def _child(self, idx: int, node_vals: list, leaf_vals: np.ndarray) -> np.ndarray:
        if idx < self.n_internal:
            return node_vals[idx]
        return leaf_vals[:, :, idx - self.n_internal]

    def _pair_forward(self, params: np.ndarray, a: np.ndarray, b: np.ndarray, ctx: EvalContext):
        """One bank of per-channel 2-input nodes applied at every position.

        params is (out_channels, 4 or 16); a and b are (B, out_channels, H, W).
        Returns (out, cache) where cache is whatever backward needs.
        """
        if self.node_kind == "warp":
            at, bt_ = b_tilde(a), b_tilde(b)
            c = params[None, :, None, None, :]
            logit = (c[..., 0] + c[..., 1] * at + c[..., 2] * bt_
                     + c[..., 3] * at * bt_)
            out, noise = forward_activation(logit, ctx.mode, ctx.relax, ctx.rng)
            return out, (logit, noise)
        probs = softmax(params / self.softmax_temp)
        mixed = probs @ gate_tables_matrix()
        weights = corner_weights(a, b)
        out = np.einsum("bchwk,ck->bchw", weights, mixed)
        return out, (mixed, out)

    def _pair_backward(self, params: np.ndarray, a: np.ndarray, b: np.ndarray,
                       cache, grad_out: np.ndarray, ctx: EvalContext):
        """Returns (grad_params, grad_a, grad_b) for one node bank."""
        if self.node_kind == "warp":
            logit, noise = cache
            grad_logit = backward_activation(logit, noise, grad_out, ctx.mode, ctx.relax)
            at, bt_ = b_tilde(a), b_tilde(b)
            grad_params = np.stack(
                [
                    np.einsum("bchw->c", grad_logit),
                    np.einsum("bchw,bchw->c", grad_logit, at),
                    np.einsum("bchw,bchw->c", grad_logit, bt_),
                    np.einsum("bchw,bchw->c", grad_logit, at * bt_),
                ],
                axis=-1,
            )
            c = params[None, :, None, None, :]
            grad_a = grad_logit * (c[..., 1] + c[..., 3] * bt_) * 2.0 * b_tilde_mask(a)
            grad_b = grad_logit * (c[..., 2] + c[..., 3] * at) * 2.0 * b_tilde_mask(b)
            return grad_params, grad_a, grad_b
        mixed, out = cache
        probs = softmax(params / self.softmax_temp)
        weights = corner_weights(a, b)
        return pair_mixture_backward(
            weights, mixed[None, :, None, None, :], probs, out,
            np.asarray(grad_out, dtype=np.float64), a, b,
            self.softmax_temp, reduce_axes=(0, 2, 3),
        )

    def forward(self, x: np.ndarray, ctx: EvalContext) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        batch, h, w = self._check_input(x)
        if self.node_kind == "dlgn" and ctx.mode is not RelaxMode.DETERMINISTIC:
            raise ConfigError("mixture nodes train with deterministic relaxation only")
        padded = np.zeros((batch, self.in_channels, h + 2, w + 2), dtype=np.float64)
        padded[:, :, 1:h + 1, 1:w + 1] = x
        leaf_vals = self._gather_leaves(padded, h, w)
        node_vals: list = [None] * self.n_internal
        node_caches: list = [None] * self.n_internal
        for i in range(self.n_internal - 1, -1, -1):
            a = self._child(2 * i + 1, node_vals, leaf_vals)
            b = self._child(2 * i + 2, node_vals, leaf_vals)
            node_vals[i], node_caches[i] = self._pair_forward(self.tree_params[:, i], a, b, ctx)
        residual = x[:, self.residual_src]
        merged, merge_cache = self._pair_forward(self.merge_params, node_vals[0], residual, ctx)
        windows = (
            merged.reshape(batch, self.out_channels, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, self.out_channels, h // 2, w // 2, 4)
        )
        pool_idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, pool_idx[..., None], axis=-1)[..., 0]
        if ctx.train:
            self._cache = (x, leaf_vals, node_vals, node_caches, residual,
                           merge_cache, pool_idx, (h, w), ctx)
        return out

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        if self._cache is None:
            raise ValidationError("backward called without a training forward pass")
        (x, leaf_vals, node_vals, node_caches, residual,
         merge_cache, pool_idx, (h, w), ctx) = self._cache
        self._cache = None
        batch = grad_out.shape[0]
        grad_windows = np.zeros(
            (batch, self.out_channels, h // 2, w // 2, 4), dtype=np.float64
        )
        np.put_along_axis(
            grad_windows, pool_idx[..., None],
            np.asarray(grad_out, dtype=np.float64)[..., None], axis=-1,
        )
        grad_merged = (
            grad_windows.reshape(batch, self.out_channels, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, self.out_channels, h, w)
        )
        grad_merge, grad_root, grad_residual = self._pair_backward(
            self.merge_params, node_vals[0], residual, merge_cache, grad_merged, ctx
        )
        grad_x = np.zeros_like(x)
        for co in range(self.out_channels):
            grad_x[:, self.residual_src[co]] += grad_residual[:, co]
        grad_tree = np.zeros_like(self.tree_params)
        grad_nodes: list = [None] * self.n_internal
        grad_nodes[0] = grad_root
        grad_leaves = np.zeros_like(leaf_vals)
        for i in range(self.n_internal):
            a = self._child(2 * i + 1, node_vals, leaf_vals)
            b = self._child(2 * i + 2, node_vals, leaf_vals)
            gp, ga, gb = self._pair_backward(
                self.tree_params[:, i], a, b, node_caches[i], grad_nodes[i], ctx
            )
            grad_tree[:, i] = gp
            for child, g in ((2 * i + 1, ga), (2 * i + 2, gb)):
                if child < self.n_internal:
                    grad_nodes[child] = g
                else:
                    grad_leaves[:, :, child - self.n_internal] += g
        grad_padded = np.zeros(
            (batch, self.in_channels, h + 2, w + 2), dtype=np.float64
        )
        for co in range(self.out_channels):
            for s in range(self.n_leaves):
                ch, dr, dc = self.leaves[co, s]
                grad_padded[:, ch, 1 + dr:1 + dr + h, 1 + dc:1 + dc + w] += grad_leaves[:, co, s]
        grad_x += grad_padded[:, :, 1:h + 1, 1:w + 1]
        return [grad_tree, grad_merge], grad_x

    def harden_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Hardened (tree, merge) truth tables, uint8 bits in corner order."""
        if self.node_kind == "warp":
            mat = char_matrix(2).astype(np.float64)
            tree = (self.tree_params @ mat >= 0.0).astype(np.uint8)
            merge = (self.merge_params @ mat >= 0.0).astype(np.uint8)
        else:
            tree = gate_tables_matrix()[np.argmax(self.tree_params, axis=-1)].astype(np.uint8)
            merge = gate_tables_matrix()[np.argmax(self.merge_params, axis=-1)].astype(np.uint8)
        return tree, merge

    def _discrete_pair(self, tables: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        corners = (a.astype(np.int64) << 1) | b.astype(np.int64)
        chan = np.arange(self.out_channels)[None, :, None, None]
        return tables[chan, corners]

    def discrete_forward(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits).astype(np.uint8)
        batch, h, w = self._check_input(bits)
        padded = np.zeros((batch, self.in_channels, h + 2, w + 2), dtype=np.uint8)
        padded[:, :, 1:h + 1, 1:w + 1] = bits
        leaf_vals = self._gather_leaves(padded, h, w)
        tree_tables, merge_tables = self.harden_tables()
        node_vals: list = [None] * self.n_internal
        for i in range(self.n_internal - 1, -1, -1):
            a = self._child(2 * i + 1, node_vals, leaf_vals)
            b = self._child(2 * i + 2, node_vals, leaf_vals)
            node_vals[i] = self._discrete_pair(tree_tables[:, i], a, b)
        merged = self._discrete_pair(merge_tables, node_vals[0], bits[:, self.residual_src])
        windows = (
            merged.reshape(batch, self.out_channels, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, self.out_channels, h // 2, w // 2, 4)
        )
        return windows.max(axis=-1)

    def gate_ids(self) -> np.ndarray:
        """Hardened gate ids, per channel: tree nodes in heap order, then merge."""
        tree_tables, merge_tables = self.harden_tables()
        stacked = np.concatenate([tree_tables, merge_tables[:, None, :]], axis=1)
        return classify_gate_bits(stacked).ravel()
