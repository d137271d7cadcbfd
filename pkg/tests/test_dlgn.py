"""Softmax-mixture baseline nodes: corner interpolation, hardening, gradients."""

import numpy as np
import pytest

from warplut.boolean import gate_catalog, walsh_transform
from warplut.dlgn import (
    corner_weights,
    dlgn_harden,
    dlgn_node_forward,
    harden_logits,
    mixed_tables,
    pair_mixture_backward,
    relaxed_gate,
    softmax,
)
from warplut.errors import ValidationError
from warplut.relaxation import relaxed_logit


class TestCornerInterpolation:
    def test_weights_are_one_hot_at_corners(self):
        for corner, (a, b) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            w = corner_weights(float(a), float(b))
            expected = np.zeros(4)
            expected[corner] = 1.0
            np.testing.assert_array_equal(w, expected)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 1, size=50)
        b = rng.uniform(0, 1, size=50)
        np.testing.assert_allclose(corner_weights(a, b).sum(axis=-1), 1.0, atol=1e-12)

    def test_relaxed_gate_reproduces_tables(self):
        for entry in gate_catalog():
            for corner, (a, b) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
                assert relaxed_gate(entry.gate_id, float(a), float(b)) == entry.table.bits[corner]

    def test_interpolations_agree_across_parameterizations(self):
        # multilinear interpolation is linear in the table, so interpolating
        # the {0,1} table and the signed coefficients differ exactly by the
        # 2p - 1 remap at every interior point
        rng = np.random.default_rng(1)
        for entry in gate_catalog():
            coeffs = walsh_transform(entry.table)
            for _ in range(20):
                a, b = rng.uniform(0, 1, size=2)
                p = relaxed_gate(entry.gate_id, a, b)
                logit = relaxed_logit(coeffs, [a, b])
                assert abs(logit - (2.0 * p - 1.0)) < 1e-12


class TestMixtures:
    def test_softmax_rows_normalize(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(5, 16))
        p = softmax(z)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(p > 0)

    def test_softmax_extremes_are_stable(self):
        with np.errstate(over="raise"):
            p = softmax(np.asarray([1000.0, 0.0, -1000.0]))
        np.testing.assert_allclose(p, [1.0, 0.0, 0.0], atol=1e-300)

    def test_mixed_tables_are_convex(self):
        rng = np.random.default_rng(3)
        mixed = mixed_tables(rng.normal(size=(10, 16)))
        assert mixed.shape == (10, 4)
        assert np.all(mixed >= 0.0) and np.all(mixed <= 1.0)

    def test_uniform_logits_mix_to_half(self):
        # the catalog is closed under complement, so each table column
        # averages exactly 0.5
        np.testing.assert_allclose(mixed_tables(np.zeros(16)), 0.5 * np.ones(4), atol=1e-15)

    def test_extreme_logit_selects_one_gate(self):
        for entry in gate_catalog():
            logits = np.zeros(16)
            logits[entry.gate_id] = 60.0
            np.testing.assert_allclose(mixed_tables(logits),
                                       np.asarray(entry.table.bits, dtype=float), atol=1e-15)

    def test_temperature_flattens(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=16)
        sharp = mixed_tables(logits, temperature=0.1)
        flat = mixed_tables(logits, temperature=100.0)
        np.testing.assert_allclose(flat, 0.5 * np.ones(4), atol=0.02)
        assert np.max(np.abs(sharp - 0.5)) > np.max(np.abs(flat - 0.5))

    def test_validation(self):
        with pytest.raises(ValidationError):
            mixed_tables(np.zeros(15))
        with pytest.raises(ValidationError):
            mixed_tables(np.zeros(16), temperature=0.0)
        with pytest.raises(ValidationError):
            relaxed_gate(16, 0.5, 0.5)


class TestHardening:
    def test_argmax_and_ties(self):
        logits = np.zeros(16)
        logits[9] = 3.0
        assert dlgn_harden(logits) == 9
        assert dlgn_harden(np.zeros(16)) == 0  # ties resolve to the lowest id
        two_way = np.zeros(16)
        two_way[4] = two_way[11] = 5.0
        assert dlgn_harden(two_way) == 4

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(7, 16))
        ids = harden_logits(logits)
        for i in range(7):
            assert ids[i] == dlgn_harden(logits[i])

    def test_shape_checks(self):
        with pytest.raises(ValidationError):
            dlgn_harden(np.zeros((2, 16)))
        with pytest.raises(ValidationError):
            harden_logits(np.zeros((2, 8)))


class TestBackward:
    def test_against_finite_differences(self):
        rng = np.random.default_rng(6)
        temperature = 1.7
        h = 1e-6
        for _ in range(30):
            logits = rng.normal(size=16)
            a = float(rng.uniform(0.05, 0.95))
            b = float(rng.uniform(0.05, 0.95))
            grad_out = float(rng.uniform(0.5, 2.0))

            probs = softmax(logits / temperature)
            mixed = mixed_tables(logits, temperature)
            w = corner_weights(a, b)
            out = np.sum(w * mixed)
            g_logits, g_a, g_b = pair_mixture_backward(
                w, mixed, probs, np.asarray(out), np.asarray(grad_out),
                np.asarray(a), np.asarray(b), temperature, reduce_axes=())

            def f(lg, aa, bb):
                return dlgn_node_forward(lg, aa, bb, temperature)

            for g in range(16):
                bumped = logits.copy()
                bumped[g] += h
                hi = f(bumped, a, b)
                bumped[g] -= 2 * h
                fd = grad_out * (hi - f(bumped, a, b)) / (2 * h)
                assert abs(g_logits[g] - fd) < 1e-6 * max(1.0, abs(fd))
            fd_a = grad_out * (f(logits, a + h, b) - f(logits, a - h, b)) / (2 * h)
            fd_b = grad_out * (f(logits, a, b + h) - f(logits, a, b - h)) / (2 * h)
            assert abs(g_a - fd_a) < 1e-6 * max(1.0, abs(fd_a))
            assert abs(g_b - fd_b) < 1e-6 * max(1.0, abs(fd_b))

    def test_batched_reduction_matches_sum_of_singles(self):
        rng = np.random.default_rng(8)
        temperature = 0.9
        logits = rng.normal(size=16)
        a = rng.uniform(0.1, 0.9, size=5)
        b = rng.uniform(0.1, 0.9, size=5)
        grad_out = rng.normal(size=5)

        probs = softmax(logits / temperature)
        mixed = mixed_tables(logits, temperature)
        w = corner_weights(a, b)
        out = w @ mixed
        g_logits, g_a, g_b = pair_mixture_backward(
            w, mixed, probs, out, grad_out, a, b, temperature, reduce_axes=(0,))

        singles = np.zeros(16)
        for i in range(5):
            gi, gai, gbi = pair_mixture_backward(
                corner_weights(a[i], b[i]), mixed, probs, np.asarray(out[i]),
                np.asarray(grad_out[i]), np.asarray(a[i]), np.asarray(b[i]),
                temperature, reduce_axes=())
            singles += gi
            assert np.isclose(g_a[i], gai, atol=1e-12)
            assert np.isclose(g_b[i], gbi, atol=1e-12)
        np.testing.assert_allclose(g_logits, singles, atol=1e-12)
