"""Declarative network architecture documents and the networks they build.

An architecture is a JSON-serializable spec: input shape, an ordered layer
list, the node parameterization ("warp" = 2**n coefficients per node,
"dlgn" = 16 gate logits per node), an init scheme, and one seed that
deterministically derives every layer's wiring and initialization.  The
same spec therefore always rebuilds the same network, which is how
checkpoints avoid storing connection matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .boolean import MAX_ARITY
from .errors import ConfigError, ValidationError
from .layers import (
    NODE_KINDS,
    WIRING_KINDS,
    DlgnDenseLayer,
    EvalContext,
    FlattenLayer,
    GroupSumLayer,
    InitScheme,
    ResidualLogicBlock,
    WarpDenseLayer,
)

ARCH_FORMAT = "warplut-arch/1"


@dataclass(frozen=True)
class InputSpec:
    """Either a flat bit vector or a (channels, height, width) bit image."""

    kind: str
    dim: int | None = None
    channels: int | None = None
    height: int | None = None
    width: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "flat":
            if not self.dim or self.dim < 1:
                raise ConfigError("flat input needs a positive 'dim'")
            if self.channels is not None or self.height is not None or self.width is not None:
                raise ConfigError("flat input takes only 'dim'")
        elif self.kind == "image":
            for name in ("channels", "height", "width"):
                v = getattr(self, name)
                if not v or v < 1:
                    raise ConfigError(f"image input needs a positive '{name}'")
            if self.dim is not None:
                raise ConfigError("image input takes channels/height/width, not 'dim'")
        else:
            raise ConfigError(f"input kind must be 'flat' or 'image', got {self.kind!r}")

    def shape(self):
        if self.kind == "flat":
            return (self.dim,)
        return (self.channels, self.height, self.width)

    def size(self) -> int:
        return int(np.prod(self.shape()))

    def to_dict(self) -> dict:
        if self.kind == "flat":
            return {"kind": "flat", "dim": self.dim}
        return {
            "kind": "image",
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InputSpec":
        doc = dict(_expect_mapping(doc, "input"))
        kind = doc.pop("kind", None)
        if kind == "flat":
            dim = doc.pop("dim", None)
            _reject_unknown(doc, "input")
            return cls(kind="flat", dim=dim)
        if kind == "image":
            vals = {k: doc.pop(k, None) for k in ("channels", "height", "width")}
            _reject_unknown(doc, "input")
            return cls(kind="image", **vals)
        raise ConfigError(f"input kind must be 'flat' or 'image', got {kind!r}")


@dataclass(frozen=True)
class DenseSpec:
    nodes: int
    arity: int = 2
    wiring: str = "random"

    def __post_init__(self) -> None:
        if self.nodes < 1:
            raise ConfigError(f"dense layer needs a positive node count, got {self.nodes}")
        if not 1 <= self.arity <= MAX_ARITY:
            raise ConfigError(f"dense arity must be in [1, {MAX_ARITY}], got {self.arity}")
        if self.wiring not in WIRING_KINDS:
            raise ConfigError(f"wiring must be one of {WIRING_KINDS}, got {self.wiring!r}")

    def to_dict(self) -> dict:
        return {"type": "dense", "nodes": self.nodes, "arity": self.arity, "wiring": self.wiring}


@dataclass(frozen=True)
class ConvBlockSpec:
    out_channels: int
    depth: int = 3

    def __post_init__(self) -> None:
        if self.out_channels < 1:
            raise ConfigError(f"conv block needs positive out_channels, got {self.out_channels}")
        if not 1 <= self.depth <= 5:
            raise ConfigError(f"conv tree depth must be in [1, 5], got {self.depth}")

    def to_dict(self) -> dict:
        return {"type": "conv", "out_channels": self.out_channels, "depth": self.depth}


@dataclass(frozen=True)
class FlattenSpec:
    def to_dict(self) -> dict:
        return {"type": "flatten"}


@dataclass(frozen=True)
class GroupSumSpec:
    classes: int
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ConfigError(f"group sum needs at least 2 classes, got {self.classes}")
        if not self.tau > 0:
            raise ConfigError(f"group sum tau must be positive, got {self.tau}")

    def to_dict(self) -> dict:
        return {"type": "group_sum", "classes": self.classes, "tau": self.tau}


LayerSpec = DenseSpec | ConvBlockSpec | FlattenSpec | GroupSumSpec


def _expect_mapping(doc, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(doc).__name__}")
    return doc

def _reject_unknown(doc: dict, where: str) -> None:
    if doc:
        raise ConfigError(f"unknown keys in {where}: {sorted(doc)}")


def _layer_from_dict(doc: dict, index: int) -> LayerSpec:
    doc = dict(_expect_mapping(doc, f"layers[{index}]"))
    kind = doc.pop("type", None)
    where = f"layers[{index}]"
    if kind == "dense":
        nodes = doc.pop("nodes", None)
        arity = doc.pop("arity", 2)
        wiring = doc.pop("wiring", "random")
        _reject_unknown(doc, where)
        if nodes is None:
            raise ConfigError(f"{where}: dense layer needs 'nodes'")
        return DenseSpec(nodes=nodes, arity=arity, wiring=wiring)
    if kind == "conv":
        out_channels = doc.pop("out_channels", None)
        depth = doc.pop("depth", 3)
        _reject_unknown(doc, where)
        if out_channels is None:
            raise ConfigError(f"{where}: conv block needs 'out_channels'")
        return ConvBlockSpec(out_channels=out_channels, depth=depth)
    if kind == "flatten":
        _reject_unknown(doc, where)
        return FlattenSpec()
    if kind == "group_sum":
        classes = doc.pop("classes", None)
        tau = doc.pop("tau", 1.0)
        _reject_unknown(doc, where)
        if classes is None:
            raise ConfigError(f"{where}: group sum needs 'classes'")
        return GroupSumSpec(classes=classes, tau=tau)
    raise ConfigError(
        f"{where}: layer type must be one of dense/conv/flatten/group_sum, got {kind!r}"
    )


def _init_from_dict(doc: dict) -> InitScheme:
    doc = dict(_expect_mapping(doc, "init"))
    scheme = doc.pop("scheme", "random")
    sigma = doc.pop("sigma", None)
    gamma = doc.pop("gamma", None)
    _reject_unknown(doc, "init")
    return InitScheme(kind=scheme, sigma=sigma, gamma=gamma)


def _init_to_dict(scheme: InitScheme) -> dict:
    doc: dict = {"scheme": scheme.kind}
    if scheme.sigma is not None:
        doc["sigma"] = scheme.sigma
    if scheme.gamma is not None:
        doc["gamma"] = scheme.gamma
    return doc


@dataclass(frozen=True)
class NetworkSpec:
    """Complete, buildable description of a network."""

    node_kind: str
    input: InputSpec
    layers: tuple[LayerSpec, ...]
    init: InitScheme = field(default_factory=InitScheme)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.node_kind not in NODE_KINDS:
            raise ConfigError(f"node_kind must be one of {NODE_KINDS}, got {self.node_kind!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self) -> None:
        """Walk the layer chain checking shape compatibility; raises ConfigError."""
        if not self.layers:
            raise ConfigError("architecture needs at least one layer")
        if not isinstance(self.layers[-1], GroupSumSpec):
            raise ConfigError("the last layer must be a group_sum readout")
        shape = self.input.shape()
        for i, spec in enumerate(self.layers):
            where = f"layers[{i}]"
            is_last = i == len(self.layers) - 1
            if isinstance(spec, GroupSumSpec) and not is_last:
                raise ConfigError(f"{where}: group_sum allowed only as the final layer")
            if isinstance(spec, ConvBlockSpec):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: conv block needs an image-shaped input")
                c, h, w = shape
                if h % 2 or w % 2:
                    raise ConfigError(f"{where}: conv block needs even spatial dims, got {h}x{w}")
                shape = (spec.out_channels, h // 2, w // 2)
            elif isinstance(spec, FlattenSpec):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: flatten needs an image-shaped input")
                shape = (int(np.prod(shape)),)
            elif isinstance(spec, DenseSpec):
                if len(shape) != 1:
                    raise ConfigError(f"{where}: dense layer needs a flat input (add flatten)")
                if shape[0] < spec.arity:
                    raise ConfigError(
                        f"{where}: cannot wire arity-{spec.arity} nodes to {shape[0]} inputs"
                    )
                shape = (spec.nodes,)
            elif isinstance(spec, GroupSumSpec):
                if len(shape) != 1:
                    raise ConfigError(f"{where}: group_sum needs a flat input (add flatten)")
                if shape[0] % spec.classes:
                    raise ConfigError(
                        f"{where}: width {shape[0]} not divisible by {spec.classes} classes"
                    )
                shape = (spec.classes,)

    @property
    def class_count(self) -> int:
        last = self.layers[-1]
        assert isinstance(last, GroupSumSpec)
        return last.classes

    def to_dict(self) -> dict:
        return {
            "format": ARCH_FORMAT,
            "node_kind": self.node_kind,
            "seed": self.seed,
            "input": self.input.to_dict(),
            "init": _init_to_dict(self.init),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        doc = dict(_expect_mapping(doc, "architecture"))
        fmt = doc.pop("format", None)
        if fmt != ARCH_FORMAT:
            raise ConfigError(f"architecture format must be {ARCH_FORMAT!r}, got {fmt!r}")
        node_kind = doc.pop("node_kind", None)
        seed = doc.pop("seed", 0)
        input_doc = doc.pop("input", None)
        init_doc = doc.pop("init", {"scheme": "random"})
        layers_doc = doc.pop("layers", None)
        _reject_unknown(doc, "architecture")
        if node_kind is None:
            raise ConfigError("architecture needs 'node_kind'")
        if input_doc is None:
            raise ConfigError("architecture needs 'input'")
        if not isinstance(layers_doc, list) or not layers_doc:
            raise ConfigError("architecture needs a non-empty 'layers' list")
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"seed must be an integer, got {seed!r}")
        return cls(
            node_kind=node_kind,
            input=InputSpec.from_dict(input_doc),
            layers=tuple(_layer_from_dict(d, i) for i, d in enumerate(layers_doc)),
            init=_init_from_dict(init_doc),
            seed=seed,
        )

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"architecture document is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


class LogicNetwork:
    """A built stack of layers sharing one node parameterization."""

    def __init__(self, spec: NetworkSpec, layers: list):
        self.spec = spec
        self.layers = layers
        self.input_shape = spec.input.shape()
        self.class_count = spec.class_count

    def _coerce(self, x, dtype) -> np.ndarray:
        x = np.asarray(x, dtype=dtype)
        want = self.input_shape
        if x.ndim == len(want) + 1 and tuple(x.shape[1:]) == want:
            return x
        flat = int(np.prod(want))
        if x.ndim == 2 and x.shape[1] == flat:
            return x.reshape((x.shape[0],) + want)
        raise ValidationError(
            f"expected input of shape (batch, {want}) or (batch, {flat}), got {x.shape}"
        )

    def forward(self, x, ctx: EvalContext | None = None) -> np.ndarray:
        """Relaxed class scores, shape (batch, class_count)."""
        ctx = ctx or EvalContext()
        out = self._coerce(x, np.float64)
        for layer in self.layers:
            out = layer.forward(out, ctx)
        return out

    def backward(self, grad_scores: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter array, aligned with parameters()."""
        grads_per_layer: list[list[np.ndarray]] = []
        grad = np.asarray(grad_scores, dtype=np.float64)
        for layer in reversed(self.layers):
            layer_grads, grad = layer.backward(grad)
            grads_per_layer.append(layer_grads)
        grads: list[np.ndarray] = []
        for layer_grads in reversed(grads_per_layer):
            grads.extend(layer_grads)
        return grads

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def set_parameters(self, values: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ValidationError(f"expected {len(params)} parameter arrays, got {len(values)}")
        for dst, src in zip(params, values):
            src = np.asarray(src, dtype=np.float64)
            if src.shape != dst.shape:
                raise ValidationError(f"parameter shape {src.shape} != expected {dst.shape}")
            dst[...] = src

    def discrete_bits(self, x) -> np.ndarray:
        """Validate and coerce input to {0,1} uint8 in the input shape."""
        arr = self._coerce(x, np.float64)
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValidationError("discrete evaluation requires inputs in {0, 1}")
        return arr.astype(np.uint8)

    def discrete_counts(self, x) -> np.ndarray:
        """Hardened end-to-end Boolean evaluation; integer per-class counts."""
        out = self.discrete_bits(x)
        for layer in self.layers:
            out = layer.discrete_forward(out)
        return out

    def predict_relaxed(self, x, ctx: EvalContext | None = None) -> np.ndarray:
        return np.argmax(self.forward(x, ctx), axis=1)

    def predict_discrete(self, x) -> np.ndarray:
        return np.argmax(self.discrete_counts(x), axis=1)

    def param_count(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def node_count(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer, (WarpDenseLayer, DlgnDenseLayer)):
                total += layer.node_count
            elif isinstance(layer, ResidualLogicBlock):
                total += layer.node_count
        return total

    def gate_histogram(self) -> np.ndarray:
        """Hardened-gate counts over all 2-input nodes, indexed by catalog id."""
        counts = np.zeros(16, dtype=np.int64)
        for layer in self.layers:
            if isinstance(layer, (WarpDenseLayer, DlgnDenseLayer)):
                if layer.arity != 2:
                    continue
                counts += np.bincount(layer.gate_ids(), minlength=16)
            elif isinstance(layer, ResidualLogicBlock):
                counts += np.bincount(layer.gate_ids(), minlength=16)
        return counts

    def describe(self) -> dict:
        """Human-oriented summary used by the inspect command."""
        return {
            "node_kind": self.spec.node_kind,
            "input": self.spec.input.to_dict(),
            "layers": [layer.to_dict() for layer in self.spec.layers],
            "classes": self.class_count,
            "node_count": self.node_count(),
            "param_count": self.param_count(),
        }


def build_network(spec: NetworkSpec) -> LogicNetwork:
    """Instantiate and initialize a network from its spec, deterministically."""
    streams = np.random.SeedSequence(spec.seed).spawn(len(spec.layers) + 1)
    init_rng = np.random.default_rng(streams[-1])
    layers: list = []
    shape = spec.input.shape()
    for i, layer_spec in enumerate(spec.layers):
        rng = np.random.default_rng(streams[i])
        if isinstance(layer_spec, ConvBlockSpec):
            layer = ResidualLogicBlock.build(
                shape[0], layer_spec.out_channels, layer_spec.depth, spec.node_kind, rng
            )
            shape = (layer_spec.out_channels, shape[1] // 2, shape[2] // 2)
        elif isinstance(layer_spec, FlattenSpec):
            layer = FlattenLayer(shape)
            shape = (layer.out_dim,)
        elif isinstance(layer_spec, DenseSpec):
            if spec.node_kind == "warp":
                layer = WarpDenseLayer.build(
                    shape[0], layer_spec.nodes, layer_spec.arity, rng, layer_spec.wiring
                )
            else:
                layer = DlgnDenseLayer.build(
                    shape[0], layer_spec.nodes, layer_spec.arity, rng, layer_spec.wiring
                )
            shape = (layer_spec.nodes,)
        elif isinstance(layer_spec, GroupSumSpec):
            layer = GroupSumLayer(shape[0], layer_spec.classes, layer_spec.tau)
            shape = (layer_spec.classes,)
        else:  # pragma: no cover - spec types are closed
            raise ConfigError(f"unknown layer spec {layer_spec!r}")
        layers.append(layer)
    for layer in layers:
        layer.initialize(spec.init, init_rng)
    return LogicNetwork(spec, layers)


def arch_mlp(
    input_dim: int,
    widths: list[int],
    classes: int,
    node_kind: str = "warp",
    arity: int = 2,
    wiring: str = "random",
    tau_group: float = 1.0,
    init: InitScheme | None = None,
    seed: int = 0,
) -> NetworkSpec:
    """Dense stack of the given widths plus a group-sum readout."""
    layers: list[LayerSpec] = [DenseSpec(nodes=w, arity=arity, wiring=wiring) for w in widths]
    layers.append(GroupSumSpec(classes=classes, tau=tau_group))
    return NetworkSpec(
        node_kind=node_kind,
        input=InputSpec(kind="flat", dim=input_dim),
        layers=tuple(layers),
        init=init or InitScheme(),
        seed=seed,
    )


def arch_parity_tree(k: int, node_kind: str = "warp", seed: int = 0,
                     init: InitScheme | None = None) -> NetworkSpec:
    """Paired-wired reduction tree for the k-bit parity task.

    Layer widths halve until 2, padded to at least three levels; with paired
    wiring an exact XOR-tree solution exists by construction, ending in an
    (XOR, XNOR) pair read out by a 2-class group sum.
    """
    if k < 2:
        raise ConfigError(f"parity tree needs k >= 2, got {k}")
    widths = []
    m = k
    while m > 2:
        m = math.ceil(m / 2)
        widths.append(m)
    widths.extend([2] * max(0, 3 - len(widths)))
    return arch_mlp(
        input_dim=k, widths=widths, classes=2, node_kind=node_kind,
        wiring="paired", tau_group=1.0, init=init, seed=seed,
    )


def arch_large_mlp(node_kind: str = "warp", seed: int = 0,
                   init: InitScheme | None = None) -> NetworkSpec:
    """Five dense layers of 256,000 two-input nodes on 9,216 input bits.

    1,280,000 nodes total: 5,120,000 trainable coefficients in warp form,
    20,480,000 logits in dlgn form.
    """
    return arch_mlp(
        input_dim=9216, widths=[256000] * 5, classes=10, node_kind=node_kind,
        tau_group=20.0, init=init, seed=seed,
    )


def arch_small_conv(node_kind: str = "warp", seed: int = 0,
                    init: InitScheme | None = None) -> NetworkSpec:
    """Conv block (64 channels, depth-3 trees) plus three dense layers on
    9-channel 32x32 bit images, 10-class readout at temperature 20."""
    return NetworkSpec(
        node_kind=node_kind,
        input=InputSpec(kind="image", channels=9, height=32, width=32),
        layers=(
            ConvBlockSpec(out_channels=64, depth=3),
            FlattenSpec(),
            DenseSpec(nodes=16384),
            DenseSpec(nodes=8192),
            DenseSpec(nodes=10240),
            GroupSumSpec(classes=10, tau=20.0),
        ),
        init=init or InitScheme(),
        seed=seed,
    )


def arch_smoke_mlp(input_dim: int = 9216, classes: int = 10, seed: int = 0,
                   node_kind: str = "warp", init: InitScheme | None = None) -> NetworkSpec:
    """Four dense layers of 16,000 nodes (64,000 total), for quick image runs."""
    return arch_mlp(
        input_dim=input_dim, widths=[16000] * 4, classes=classes,
        node_kind=node_kind, tau_group=20.0, init=init, seed=seed,
    )
