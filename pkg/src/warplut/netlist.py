"""Hardening of trained networks into exact Boolean netlists, a
bit-parallel evaluator, export formats, identity folding, and circuit
statistics.

Wire numbering: wires 0..input_count-1 are the inputs; if the netlist has
a constant-zero wire (conv padding) it is wire input_count; node i's
output is the next wire after that.  Nodes are topologically ordered by
construction: every node references only earlier wires.

The learned gates keep their arity; the pooling reductions of conv blocks
are emitted as 4-input OR nodes, so the 2-input gate histogram of a
hardened netlist equals the training-time gate histogram exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .boolean import TruthTable, classify_gate, gate_catalog
from .errors import ConfigError, ValidationError
from .layers import (
    DlgnDenseLayer,
    FlattenLayer,
    GroupSumLayer,
    ResidualLogicBlock,
    WarpDenseLayer,
)
from .network import LogicNetwork

NETLIST_FORMAT = "warplut-netlist/1"

# 4-input OR: output 1 for every corner except all-zeros.
_OR4 = TruthTable(4, (0,) + (1,) * 15)


@dataclass(frozen=True)
class NetNode:
    table: TruthTable
    inputs: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.inputs) != self.table.arity:
            raise ValidationError(
                f"node with arity-{self.table.arity} table got {len(self.inputs)} inputs"
            )


@dataclass(frozen=True)
class Netlist:
    input_count: int
    nodes: tuple[NetNode, ...]
    outputs: tuple[tuple[int, ...], ...]
    zero_wire: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(tuple(g) for g in self.outputs))
        if self.input_count < 1:
            raise ValidationError("netlist needs at least one input wire")
        base = self.first_node_wire
        for i, node in enumerate(self.nodes):
            wire = base + i
            for ref in node.inputs:
                if not 0 <= ref < wire:
                    raise ValidationError(
                        f"node {i} (wire {wire}) references wire {ref}, which is not "
                        "defined earlier (netlists must be topologically ordered)"
                    )
        if not self.outputs:
            raise ValidationError("netlist needs at least one output group")
        sizes = {len(g) for g in self.outputs}
        if len(sizes) != 1 or 0 in sizes:
            raise ValidationError("per-class output groups must be non-empty and equal-sized")
        total = self.wire_count
        for g, group in enumerate(self.outputs):
            for ref in group:
                if not 0 <= ref < total:
                    raise ValidationError(f"output group {g} references undefined wire {ref}")

    @property
    def first_node_wire(self) -> int:
        return self.input_count + (1 if self.zero_wire else 0)

    @property
    def wire_count(self) -> int:
        return self.first_node_wire + len(self.nodes)

    @property
    def class_count(self) -> int:
        return len(self.outputs)


def harden(net: LogicNetwork) -> Netlist:
    """Compile every node to its nearest truth table and flatten the wiring.

    Dense nodes map one-to-one; conv trees are unrolled over spatial
    positions (shared tables, distinct wires) with padding reading a
    constant-zero wire and each 2x2 pooling window becoming a 4-input OR
    node; the group-sum readout becomes per-class output wire groups.
    """
    input_count = net.spec.input.size()
    nodes: list[NetNode] = []
    zero_slot = [None]  # wire id of the constant-zero wire, claimed lazily

    def zero_wire_id() -> int:
        if zero_slot[0] is None:
            zero_slot[0] = input_count
        return zero_slot[0]

    # Wires are numbered assuming the zero wire exists; if no layer claims
    # it, every node wire shifts down by one at the end.
    def next_wire() -> int:
        return input_count + 1 + len(nodes)

    shape = net.spec.input.shape()
    if len(shape) == 1:
        wires = np.arange(input_count, dtype=np.int64)
    else:
        wires = np.arange(input_count, dtype=np.int64).reshape(shape)

    outputs: tuple[tuple[int, ...], ...] | None = None
    for layer in net.layers:
        if isinstance(layer, (WarpDenseLayer, DlgnDenseLayer)):
            tables = layer.discrete_tables()
            arity = layer.arity
            new_wires = np.empty(layer.node_count, dtype=np.int64)
            for j in range(layer.node_count):
                new_wires[j] = next_wire()
                nodes.append(NetNode(
                    TruthTable(arity, tuple(int(b) for b in tables[j])),
                    tuple(int(wires[c]) for c in layer.connections[j]),
                ))
            wires = new_wires
        elif isinstance(layer, FlattenLayer):
            wires = wires.ravel()
        elif isinstance(layer, ResidualLogicBlock):
            c_in, h, w = wires.shape
            padded = np.full((c_in, h + 2, w + 2), -1, dtype=np.int64)
            padded[:, 1:h + 1, 1:w + 1] = wires
            tree_tables, merge_tables = layer.harden_tables()
            merged = np.empty((layer.out_channels, h, w), dtype=np.int64)
            for co in range(layer.out_channels):
                tree_tt = [
                    TruthTable(2, tuple(int(b) for b in tree_tables[co, i]))
                    for i in range(layer.n_internal)
                ]
                merge_tt = TruthTable(2, tuple(int(b) for b in merge_tables[co]))
                src = int(layer.residual_src[co])
                for r in range(h):
                    for c in range(w):
                        leaf_wires = []
                        for s in range(layer.n_leaves):
                            ch, dr, dc = layer.leaves[co, s]
                            ref = int(padded[ch, 1 + dr + r, 1 + dc + c])
                            leaf_wires.append(zero_wire_id() if ref < 0 else ref)
                        slot_wire: dict[int, int] = {}
                        for i in range(layer.n_internal - 1, -1, -1):
                            ins = []
                            for child in (2 * i + 1, 2 * i + 2):
                                if child < layer.n_internal:
                                    ins.append(slot_wire[child])
                                else:
                                    ins.append(leaf_wires[child - layer.n_internal])
                            slot_wire[i] = next_wire()
                            nodes.append(NetNode(tree_tt[i], tuple(ins)))
                        merged[co, r, c] = next_wire()
                        nodes.append(NetNode(merge_tt, (slot_wire[0], int(wires[src, r, c]))))
            pooled = np.empty((layer.out_channels, h // 2, w // 2), dtype=np.int64)
            for co in range(layer.out_channels):
                for r2 in range(h // 2):
                    for c2 in range(w // 2):
                        window = (
                            int(merged[co, 2 * r2, 2 * c2]),
                            int(merged[co, 2 * r2, 2 * c2 + 1]),
                            int(merged[co, 2 * r2 + 1, 2 * c2]),
                            int(merged[co, 2 * r2 + 1, 2 * c2 + 1]),
                        )
                        pooled[co, r2, c2] = next_wire()
                        nodes.append(NetNode(_OR4, window))
            wires = pooled
        elif isinstance(layer, GroupSumLayer):
            flat = wires.ravel()
            size = layer.group_size
            outputs = tuple(
                tuple(int(v) for v in flat[g * size:(g + 1) * size])
                for g in range(layer.class_count)
            )
        else:  # pragma: no cover - layer set is closed
            raise ConfigError(f"cannot harden layer {type(layer).__name__}")
    if outputs is None:
        raise ConfigError("network has no group_sum readout to form outputs")

    has_zero = zero_slot[0] is not None
    if not has_zero:
        # No layer claimed the zero wire: close the numbering gap.
        def shift(wire: int) -> int:
            return wire - 1 if wire > input_count else wire

        nodes = [NetNode(n.table, tuple(shift(w) for w in n.inputs)) for n in nodes]
        outputs = tuple(tuple(shift(w) for w in g) for g in outputs)

    arch_json = json.dumps(net.spec.to_dict(), sort_keys=True)
    metadata = {
        "architecture_sha256": hashlib.sha256(arch_json.encode()).hexdigest(),
        "class_count": net.class_count,
    }
    return Netlist(
        input_count=input_count,
        nodes=tuple(nodes),
        outputs=outputs,
        zero_wire=has_zero,
        metadata=metadata,
    )


def _pack_columns(bits: np.ndarray) -> tuple[np.ndarray, int]:
    """(N, wires) {0,1} -> (wires, n_words) uint64, example j at bit j%64."""
    n, m = bits.shape
    n_words = max(1, (n + 63) // 64)
    cols = np.ascontiguousarray(bits.T.astype(np.uint8))
    packed = np.packbits(cols, axis=1, bitorder="little")
    pad = n_words * 8 - packed.shape[1]
    if pad > 0:
        packed = np.concatenate([packed, np.zeros((m, pad), dtype=np.uint8)], axis=1)
    return packed.view(np.uint64), n_words


def netlist_eval(nl: Netlist, bits: np.ndarray) -> np.ndarray:
    """Per-class integer counts for a batch of inputs, shape (N, classes).

    Examples are packed 64 per machine word and every node is evaluated
    with word-wide bitwise operations via its truth table's minterm
    expansion, so results are independent of batch size and ordering.
    """
    bits = np.asarray(bits)
    if bits.ndim != 2 or bits.shape[1] != nl.input_count:
        raise ValidationError(
            f"expected bits of shape (batch, {nl.input_count}), got {bits.shape}"
        )
    if not np.all((bits == 0) | (bits == 1)):
        raise ValidationError("netlist evaluation requires inputs in {0, 1}")
    n = bits.shape[0]
    packed, n_words = _pack_columns(bits)
    wire_words = np.zeros((nl.wire_count, n_words), dtype=np.uint64)
    wire_words[:nl.input_count] = packed
    # The zero wire (if present) stays all-zero words.
    base = nl.first_node_wire
    full = np.uint64(0xFFFFFFFFFFFFFFFF)
    for i, node in enumerate(nl.nodes):
        arity = node.table.arity
        acc = np.zeros(n_words, dtype=np.uint64)
        for corner, bit in enumerate(node.table.bits):
            if not bit:
                continue
            term = np.full(n_words, full, dtype=np.uint64)
            for j, ref in enumerate(node.inputs):
                w = wire_words[ref]
                if (corner >> (arity - 1 - j)) & 1:
                    term &= w
                else:
                    term &= ~w
            acc |= term
        wire_words[base + i] = acc
    counts = np.empty((n, nl.class_count), dtype=np.int64)
    for g, group in enumerate(nl.outputs):
        # Unpack each group wire to per-example bits and sum.
        stacked = np.unpackbits(
            wire_words[list(group)].view(np.uint8), axis=1, count=n, bitorder="little"
        )
        counts[:, g] = stacked.sum(axis=0)
    return counts


def netlist_predict(nl: Netlist, bits: np.ndarray) -> np.ndarray:
    """Argmax class per example; ties resolve to the lowest class index."""
    return np.argmax(netlist_eval(nl, bits), axis=1)


def table_hex(table: TruthTable) -> str:
    """Truth table packed as hex with corner k at bit position k."""
    value = 0
    for k, bit in enumerate(table.bits):
        value |= bit << k
    digits = max(1, 2 ** table.arity // 4)
    return f"0x{value:0{digits}x}"


def export_netlist(nl: Netlist, path: str, fmt: str = "json") -> None:
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(netlist_to_dict(nl), fh, indent=2)
    elif fmt == "logic-text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(netlist_to_logic_text(nl))
    else:
        raise ConfigError(f"netlist format must be 'json' or 'logic-text', got {fmt!r}")


def netlist_to_dict(nl: Netlist) -> dict:
    return {
        "format": NETLIST_FORMAT,
        "input_count": nl.input_count,
        "zero_wire": nl.zero_wire,
        "nodes": [
            {"table": node.table.to_string(), "inputs": list(node.inputs)}
            for node in nl.nodes
        ],
        "outputs": [list(group) for group in nl.outputs],
        "metadata": nl.metadata,
    }


def netlist_from_dict(doc: dict) -> Netlist:
    if not isinstance(doc, dict):
        raise ValidationError("netlist document must be a JSON object")
    if doc.get("format") != NETLIST_FORMAT:
        raise ValidationError(
            f"netlist format must be {NETLIST_FORMAT!r}, got {doc.get('format')!r}"
        )
    try:
        nodes = tuple(
            NetNode(TruthTable.from_string(entry["table"]), tuple(entry["inputs"]))
            for entry in doc["nodes"]
        )
        return Netlist(
            input_count=doc["input_count"],
            nodes=nodes,
            outputs=tuple(tuple(g) for g in doc["outputs"]),
            zero_wire=bool(doc.get("zero_wire", False)),
            metadata=dict(doc.get("metadata", {})),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed netlist document: {exc}") from exc


def load_netlist(path: str) -> Netlist:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
    return netlist_from_dict(doc)


def netlist_to_logic_text(nl: Netlist) -> str:
    """One assignment per line: catalog names for 2-input nodes, hex truth
    tables otherwise; then the constant wire and per-class output groups."""
    names = {entry.table.bits: entry.name for entry in gate_catalog()}
    lines = [f"# inputs: w0 .. w{nl.input_count - 1}"]
    if nl.zero_wire:
        lines.append(f"w{nl.input_count} = 0")
    base = nl.first_node_wire
    for i, node in enumerate(nl.nodes):
        wire = base + i
        args = ", ".join(f"w{ref}" for ref in node.inputs)
        if node.table.arity == 2:
            lines.append(f"w{wire} = {names[node.table.bits]}({args})")
        else:
            lines.append(f"w{wire} = TT({table_hex(node.table)}, {args})")
    for g, group in enumerate(nl.outputs):
        wires = ", ".join(f"w{ref}" for ref in group)
        lines.append(f"# class {g} count: {wires}")
    return "\n".join(lines) + "\n"


_ID_A_BITS = (0, 0, 1, 1)
_ID_B_BITS = (0, 1, 0, 1)


def fold_identities(nl: Netlist) -> Netlist:
    """Remove 2-input identity gates by rewiring their consumers.

    Keeps every other node (including NOT and constant gates) untouched;
    output groups may end up referencing input wires directly.
    """
    base = nl.first_node_wire
    resolve = {w: w for w in range(base)}
    kept: list[NetNode] = []
    for i, node in enumerate(nl.nodes):
        wire = base + i
        ins = tuple(resolve[w] for w in node.inputs)
        if node.table.bits == _ID_A_BITS:
            resolve[wire] = ins[0]
        elif node.table.bits == _ID_B_BITS:
            resolve[wire] = ins[1]
        else:
            new_wire = base + len(kept)
            kept.append(NetNode(node.table, ins))
            resolve[wire] = new_wire
    outputs = tuple(tuple(resolve[w] for w in group) for group in nl.outputs)
    metadata = dict(nl.metadata)
    metadata["folded_identities"] = len(nl.nodes) - len(kept)
    return Netlist(
        input_count=nl.input_count,
        nodes=tuple(kept),
        outputs=outputs,
        zero_wire=nl.zero_wire,
        metadata=metadata,
    )


@dataclass(frozen=True)
class CircuitStats:
    gate_counts: tuple[int, ...]  # 2-input nodes by catalog id
    identity_fraction: float
    total_nodes: int
    two_input_nodes: int
    depth: int

    def to_json_dict(self) -> dict:
        by_name = {
            entry.name: self.gate_counts[entry.gate_id] for entry in gate_catalog()
        }
        return {
            "gate_counts": by_name,
            "identity_fraction": self.identity_fraction,
            "total_nodes": self.total_nodes,
            "two_input_nodes": self.two_input_nodes,
            "depth": self.depth,
        }


def circuit_stats(nl: Netlist) -> CircuitStats:
    """Gate histogram (2-input nodes), identity fraction, size, and depth."""
    counts = np.zeros(16, dtype=np.int64)
    two_input = 0
    for node in nl.nodes:
        if node.table.arity == 2:
            counts[classify_gate(node.table)] += 1
            two_input += 1
    identity = float((counts[10] + counts[12]) / two_input) if two_input else 0.0
    depth = np.zeros(nl.wire_count, dtype=np.int64)
    base = nl.first_node_wire
    for i, node in enumerate(nl.nodes):
        depth[base + i] = 1 + max(depth[ref] for ref in node.inputs)
    return CircuitStats(
        gate_counts=tuple(int(c) for c in counts),
        identity_fraction=identity,
        total_nodes=len(nl.nodes),
        two_input_nodes=two_input,
        depth=int(depth.max()) if len(nl.nodes) else 0,
    )
