"""Hardening to netlists, the bit-parallel evaluator, export formats,
identity folding, and circuit statistics.

The word-packed evaluator is checked against a plain per-example reference
interpreter written here, and hardened netlists are checked against the
source network's own discrete evaluation.
"""

import json

import numpy as np
import pytest

from warplut.boolean import TruthTable, gate_catalog, walsh_transform
from warplut.errors import ConfigError, ValidationError
from warplut.netlist import (
    NetNode,
    Netlist,
    circuit_stats,
    export_netlist,
    fold_identities,
    harden,
    load_netlist,
    netlist_eval,
    netlist_from_dict,
    netlist_predict,
    netlist_to_dict,
    netlist_to_logic_text,
    table_hex,
)
from warplut.network import (
    ConvBlockSpec,
    DenseSpec,
    FlattenSpec,
    GroupSumSpec,
    InputSpec,
    NetworkSpec,
    arch_mlp,
    arch_parity_tree,
    build_network,
)


def coeffs_for(name):
    entry = {e.name: e for e in gate_catalog()}[name]
    return walsh_transform(entry.table).as_array()


def exact_parity4_net():
    net = build_network(arch_parity_tree(4))
    xor, xnor = 4.0 * coeffs_for("XOR"), 4.0 * coeffs_for("XNOR")
    net.layers[0].coeffs[:] = [xor, xor]
    net.layers[1].coeffs[:] = [xor, xnor]
    net.layers[2].coeffs[0] = 4.0 * coeffs_for("ID_B")
    net.layers[2].coeffs[1] = 4.0 * coeffs_for("ID_A")
    return net


def conv_net(node_kind="warp", seed=0):
    spec = NetworkSpec(
        node_kind=node_kind,
        input=InputSpec(kind="image", channels=2, height=4, width=4),
        layers=(
            ConvBlockSpec(out_channels=4, depth=2),
            FlattenSpec(),
            DenseSpec(nodes=8),
            GroupSumSpec(classes=2),
        ),
        seed=seed,
    )
    return build_network(spec)


def reference_eval(nl, bits):
    """Per-example interpreter: every wire as a plain Python int."""
    out = np.empty((bits.shape[0], nl.class_count), dtype=np.int64)
    for n, x in enumerate(bits):
        wires = [int(v) for v in x]
        if nl.zero_wire:
            wires.append(0)
        for node in nl.nodes:
            wires.append(int(node.table.evaluate([wires[r] for r in node.inputs])))
        for g, group in enumerate(nl.outputs):
            out[n, g] = sum(wires[r] for r in group)
    return out


def random_bits(n, width, seed=0):
    return np.random.default_rng(seed).integers(0, 2, size=(n, width))


class TestHardenDense:
    def test_parity_circuit_is_exact(self):
        net = exact_parity4_net()
        nl = harden(net)
        assert nl.input_count == 4
        assert not nl.zero_wire
        assert nl.first_node_wire == 4
        assert len(nl.nodes) == 6
        bits = random_bits(16, 4)
        bits = ((np.arange(16)[:, None] >> np.arange(3, -1, -1)) & 1)
        labels = bits.sum(axis=1) % 2
        counts = netlist_eval(nl, bits)
        np.testing.assert_array_equal(counts[:, 1], labels)
        np.testing.assert_array_equal(counts[:, 0], 1 - labels)
        np.testing.assert_array_equal(netlist_predict(nl, bits), labels)

    @pytest.mark.parametrize("node_kind", ["warp", "dlgn"])
    def test_matches_network_discrete_path(self, node_kind):
        net = build_network(arch_mlp(10, [8, 6], 2, node_kind=node_kind, seed=3))
        nl = harden(net)
        bits = random_bits(50, 10, seed=1)
        np.testing.assert_array_equal(netlist_eval(nl, bits), net.discrete_counts(bits))
        np.testing.assert_array_equal(netlist_eval(nl, bits), reference_eval(nl, bits))

    def test_wide_arity_nodes_survive(self):
        net = build_network(arch_mlp(8, [6, 4], 2, arity=3, seed=4))
        nl = harden(net)
        assert all(node.table.arity == 3 for node in nl.nodes)
        bits = random_bits(40, 8, seed=2)
        np.testing.assert_array_equal(netlist_eval(nl, bits), net.discrete_counts(bits))
        np.testing.assert_array_equal(netlist_eval(nl, bits), reference_eval(nl, bits))

    def test_batch_packing_is_transparent(self):
        # 64 examples fill one machine word; sizes around the boundary and a
        # three-word batch must all agree with the per-example reference
        net = build_network(arch_mlp(6, [4], 2, seed=5))
        nl = harden(net)
        for n in (1, 7, 63, 64, 65, 130):
            bits = random_bits(n, 6, seed=n)
            got = netlist_eval(nl, bits)
            np.testing.assert_array_equal(got, reference_eval(nl, bits))
            np.testing.assert_array_equal(got, net.discrete_counts(bits))

    def test_input_validation(self):
        nl = harden(build_network(arch_mlp(6, [4], 2)))
        with pytest.raises(ValidationError):
            netlist_eval(nl, random_bits(4, 5))
        with pytest.raises(ValidationError):
            netlist_eval(nl, np.full((4, 6), 0.5))


class TestHardenConv:
    @pytest.mark.parametrize("node_kind", ["warp", "dlgn"])
    def test_matches_network_discrete_path(self, node_kind):
        net = conv_net(node_kind, seed=6)
        nl = harden(net)
        assert nl.zero_wire
        assert nl.input_count == 32
        assert nl.first_node_wire == 33
        # 4 channels x 16 positions x (3 tree + 1 merge), 4x4 pool ORs, 8 dense
        assert len(nl.nodes) == 4 * 16 * 4 + 4 * 4 + 8
        bits = random_bits(20, 32, seed=7)
        np.testing.assert_array_equal(netlist_eval(nl, bits), net.discrete_counts(bits))
        np.testing.assert_array_equal(netlist_eval(nl, bits), reference_eval(nl, bits))

    def test_pooling_nodes_are_or4(self):
        nl = harden(conv_net())
        or4 = [n for n in nl.nodes if n.table.arity == 4]
        assert len(or4) == 16
        assert all(n.table.bits == (0,) + (1,) * 15 for n in or4)

    def test_two_input_histogram_is_spatial_unroll(self):
        net = conv_net(seed=8)
        nl = harden(net)
        block, dense = net.layers[0], net.layers[2]
        expect = np.bincount(np.repeat(block.gate_ids(), 16), minlength=16)
        expect += np.bincount(dense.gate_ids(), minlength=16)
        np.testing.assert_array_equal(circuit_stats(nl).gate_counts, expect)

    def test_hardening_is_deterministic(self):
        net = conv_net(seed=9)
        a, b = harden(net), harden(net)
        assert a == b
        assert a.metadata["architecture_sha256"] == b.metadata["architecture_sha256"]
        other = harden(conv_net(seed=10))
        assert other.metadata["architecture_sha256"] != a.metadata["architecture_sha256"]


class TestNetlistValidation:
    def test_node_arity_mismatch(self):
        with pytest.raises(ValidationError):
            NetNode(TruthTable(2, (0, 1, 1, 0)), (0,))

    def test_forward_reference_rejected(self):
        xor = TruthTable(2, (0, 1, 1, 0))
        with pytest.raises(ValidationError, match="topologically"):
            Netlist(input_count=2, nodes=(NetNode(xor, (0, 2)),), outputs=((2,),))

    def test_output_wires_must_exist(self):
        xor = TruthTable(2, (0, 1, 1, 0))
        with pytest.raises(ValidationError, match="undefined wire"):
            Netlist(input_count=2, nodes=(NetNode(xor, (0, 1)),), outputs=((3,),))

    def test_output_groups_must_be_uniform(self):
        with pytest.raises(ValidationError):
            Netlist(input_count=2, nodes=(), outputs=((0, 1), (0,)))
        with pytest.raises(ValidationError):
            Netlist(input_count=2, nodes=(), outputs=())


class TestTableHex:
    def test_parity3(self):
        bits = tuple(bin(k).count("1") % 2 for k in range(8))
        assert table_hex(TruthTable(3, bits)) == "0x96"

    def test_xor2(self):
        assert table_hex(TruthTable(2, (0, 1, 1, 0))) == "0x6"

    def test_arity1(self):
        assert table_hex(TruthTable(1, (0, 1))) == "0x2"
        assert table_hex(TruthTable(1, (1, 0))) == "0x1"


class TestLogicText:
    def test_parity_circuit_lines(self):
        text = netlist_to_logic_text(harden(exact_parity4_net()))
        lines = text.splitlines()
        assert lines[0] == "# inputs: w0 .. w3"
        assert "w4 = XOR(w0, w1)" in lines
        assert "w5 = XOR(w2, w3)" in lines
        assert "w6 = XOR(w4, w5)" in lines
        assert "w7 = XNOR(w4, w5)" in lines
        assert "w8 = ID_B(w6, w7)" in lines
        assert "w9 = ID_A(w6, w7)" in lines
        assert "# class 0 count: w8" in lines
        assert "# class 1 count: w9" in lines

    def test_wide_nodes_use_hex_tables(self):
        bits = tuple(bin(k).count("1") % 2 for k in range(8))
        nl = Netlist(
            input_count=3,
            nodes=(NetNode(TruthTable(3, bits), (0, 1, 2)),),
            outputs=((3,),),
        )
        assert "w3 = TT(0x96, w0, w1, w2)" in netlist_to_logic_text(nl)

    def test_zero_wire_line(self):
        text = netlist_to_logic_text(harden(conv_net()))
        assert "w32 = 0" in text.splitlines()


class TestSerialization:
    def test_dict_round_trip(self):
        for nl in (harden(exact_parity4_net()), harden(conv_net(seed=11))):
            assert netlist_from_dict(netlist_to_dict(nl)) == nl

    def test_file_round_trip(self, tmp_path):
        nl = harden(build_network(arch_mlp(6, [4], 2, seed=12)))
        path = str(tmp_path / "model.netlist.json")
        export_netlist(nl, path, "json")
        assert load_netlist(path) == nl

    def test_logic_text_export(self, tmp_path):
        nl = harden(exact_parity4_net())
        path = str(tmp_path / "model.netlist.txt")
        export_netlist(nl, path, "logic-text")
        assert "XOR(w0, w1)" in (tmp_path / "model.netlist.txt").read_text()

    def test_bad_format_values(self, tmp_path):
        nl = harden(exact_parity4_net())
        with pytest.raises(ConfigError):
            export_netlist(nl, str(tmp_path / "x"), "verilog")
        doc = netlist_to_dict(nl)
        doc["format"] = "warplut-netlist/2"
        with pytest.raises(ValidationError, match="format"):
            netlist_from_dict(doc)
        with pytest.raises(ValidationError):
            netlist_from_dict({"format": "warplut-netlist/1"})
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        with pytest.raises(ValidationError, match="JSON"):
            load_netlist(str(bad))


class TestFoldIdentities:
    def test_all_identity_model_folds_to_nothing(self):
        net = build_network(arch_mlp(4, [4, 4], 2, seed=13))
        for layer in net.layers[:-1]:
            layer.coeffs[:] = 4.0 * coeffs_for("ID_A")
        nl = harden(net)
        folded = fold_identities(nl)
        assert len(folded.nodes) == 0
        assert folded.metadata["folded_identities"] == 8
        bits = random_bits(30, 4, seed=3)
        np.testing.assert_array_equal(netlist_eval(folded, bits), netlist_eval(nl, bits))
        for group in folded.outputs:
            assert all(w < 4 for w in group)  # straight to the inputs

    def test_parity_circuit_folds_only_the_readout_copies(self):
        nl = harden(exact_parity4_net())
        folded = fold_identities(nl)
        assert len(folded.nodes) == 4
        assert folded.metadata["folded_identities"] == 2
        bits = ((np.arange(16)[:, None] >> np.arange(3, -1, -1)) & 1)
        np.testing.assert_array_equal(netlist_eval(folded, bits), netlist_eval(nl, bits))

    def test_identity_chains_resolve_transitively(self):
        ida = TruthTable(2, (0, 0, 1, 1))
        nl = Netlist(
            input_count=2,
            nodes=(NetNode(ida, (1, 0)), NetNode(ida, (2, 0)), NetNode(ida, (3, 0))),
            outputs=((4,), (0,)),
        )
        folded = fold_identities(nl)
        assert len(folded.nodes) == 0
        assert folded.outputs == ((1,), (0,))

    def test_negations_and_constants_survive(self):
        nota = TruthTable(2, (1, 1, 0, 0))
        const1 = TruthTable(2, (1, 1, 1, 1))
        nl = Netlist(
            input_count=2,
            nodes=(NetNode(nota, (0, 1)), NetNode(const1, (0, 1))),
            outputs=((2,), (3,)),
        )
        folded = fold_identities(nl)
        assert len(folded.nodes) == 2

    def test_fold_on_random_model_preserves_behavior(self):
        net = build_network(arch_mlp(8, [10, 10], 2, seed=14))
        nl = harden(net)
        folded = fold_identities(nl)
        bits = random_bits(80, 8, seed=15)
        np.testing.assert_array_equal(netlist_eval(folded, bits), netlist_eval(nl, bits))
        np.testing.assert_array_equal(reference_eval(folded, bits), netlist_eval(nl, bits))


class TestCircuitStats:
    def test_dense_histogram_matches_network(self):
        net = build_network(arch_mlp(8, [10, 6], 2, seed=16))
        stats = circuit_stats(harden(net))
        np.testing.assert_array_equal(stats.gate_counts, net.gate_histogram())
        assert stats.total_nodes == 16
        assert stats.two_input_nodes == 16
        hist = net.gate_histogram()
        assert np.isclose(stats.identity_fraction, (hist[10] + hist[12]) / 16)

    def test_depth_counts_longest_path(self):
        stats = circuit_stats(harden(exact_parity4_net()))
        assert stats.depth == 3
        xor = TruthTable(2, (0, 1, 1, 0))
        chain = Netlist(
            input_count=2,
            nodes=(NetNode(xor, (0, 1)), NetNode(xor, (2, 1)), NetNode(xor, (3, 0))),
            outputs=((4,), (0,)),
        )
        assert circuit_stats(chain).depth == 3
        flat = Netlist(
            input_count=4,
            nodes=(NetNode(xor, (0, 1)), NetNode(xor, (2, 3))),
            outputs=((4,), (5,)),
        )
        assert circuit_stats(flat).depth == 1

    def test_empty_netlist_is_safe(self):
        folded = fold_identities(harden_all_identity())
        stats = circuit_stats(folded)
        assert stats.total_nodes == 0
        assert stats.two_input_nodes == 0
        assert stats.identity_fraction == 0.0
        assert stats.depth == 0

    def test_conv_stats_count_pool_nodes_separately(self):
        nl = harden(conv_net(seed=17))
        stats = circuit_stats(nl)
        assert stats.total_nodes == len(nl.nodes)
        assert stats.two_input_nodes == stats.total_nodes - 16

    def test_json_dict_uses_gate_names(self):
        stats = circuit_stats(harden(exact_parity4_net()))
        doc = stats.to_json_dict()
        assert doc["gate_counts"]["XOR"] == 3
        assert doc["gate_counts"]["XNOR"] == 1
        assert doc["gate_counts"]["ID_A"] == 1
        assert doc["depth"] == 3
        json.dumps(doc)


def harden_all_identity():
    net = build_network(arch_mlp(4, [4], 2, seed=18))
    net.layers[0].coeffs[:] = 4.0 * coeffs_for("ID_A")
    return harden(net)
