"""Embedded invariant suite behind the ``selftest`` CLI subcommand.

Four check groups: catalog round trips, exhaustive/random transform round
trips, finite-difference gradient checks, noisy-mode output marginals, and
hardened-netlist equivalence.  Each prints one pass/fail row; the suite
passes only if every row does.

The full oracle suite lives in the test tree; this module is the smaller
always-shipped subset meant to be run on a fresh install.
"""

from __future__ import annotations

import dataclasses
import sys
import time
from typing import Callable, Sequence, TextIO

import numpy as np

from .boolean import GateCatalogEntry, TruthTable, gate_catalog, nearest_truth_table, walsh_transform
from .netlist import harden, netlist_eval
from .network import NetworkSpec, arch_mlp, build_network
from .network import ConvBlockSpec, DenseSpec, FlattenSpec, GroupSumSpec, InputSpec
from .relaxation import RelaxMode, RelaxParams, forward_activation, node_backward, node_forward, sigmoid

GRAD_REL_ERR_LIMIT = 1e-4
MARGINAL_TOLERANCE = 0.01


@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_catalog(catalog: Sequence[GateCatalogEntry]) -> CheckResult:
    for entry in catalog:
        derived = walsh_transform(entry.table)
        if derived.values != entry.coeffs.values:
            return CheckResult(
                "catalog-roundtrip", False,
                f"transform mismatch at gate {entry.gate_id} ({entry.name})")
        if nearest_truth_table(entry.coeffs) != entry.table:
            return CheckResult(
                "catalog-roundtrip", False,
                f"projection mismatch at gate {entry.gate_id} ({entry.name})")
    return CheckResult("catalog-roundtrip", True, f"{len(catalog)}/{len(catalog)} gates exact")


def _check_transform_roundtrip(rng: np.random.Generator) -> CheckResult:
    total = 0
    for code in range(256):
        table = TruthTable.from_string(format(code, "08b"))
        if nearest_truth_table(walsh_transform(table)) != table:
            return CheckResult("transform-roundtrip", False, f"arity-3 table {code:#04x} failed")
        total += 1
    for _ in range(200):
        arity = int(rng.integers(4, 7))
        bits = tuple(int(b) for b in rng.integers(0, 2, size=2 ** arity))
        table = TruthTable(arity, bits)
        if nearest_truth_table(walsh_transform(table)) != table:
            return CheckResult("transform-roundtrip", False, f"arity-{arity} table failed")
        total += 1
    return CheckResult("transform-roundtrip", True, f"{total} tables exact")


def max_grad_rel_err(cases: int, seed: int, h: float = 1e-5) -> float:
    """Worst relative error of analytic node gradients vs central
    finite differences over random (arity, coeffs, x, tau) cases."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        arity = int(rng.integers(2, 5))
        coeffs = rng.normal(0.0, 1.0, size=2 ** arity)
        # keep x away from the 0/1 clip kinks so central differences are valid
        x = rng.uniform(0.05, 0.95, size=arity)
        tau = float(rng.uniform(0.1, 5.0))
        params = RelaxParams(tau_relax=tau)
        upstream = float(rng.uniform(0.5, 2.0))
        grad_c, grad_x = node_backward(coeffs, x, upstream, RelaxMode.DETERMINISTIC, params)

        def fd(values: np.ndarray, index: int, apply: Callable[[np.ndarray], float]) -> float:
            bumped = values.copy()
            bumped[index] = values[index] + h
            hi = apply(bumped)
            bumped[index] = values[index] - h
            lo = apply(bumped)
            return upstream * (hi - lo) / (2.0 * h)

        for t in range(coeffs.shape[0]):
            num = fd(coeffs, t, lambda c: node_forward(c, x, RelaxMode.DETERMINISTIC, params))
            err = abs(grad_c[t] - num) / max(abs(grad_c[t]), abs(num), 1e-6)
            worst = max(worst, err)
        for j in range(arity):
            num = fd(x, j, lambda v: node_forward(coeffs, v, RelaxMode.DETERMINISTIC, params))
            err = abs(grad_x[j] - num) / max(abs(grad_x[j]), abs(num), 1e-6)
            worst = max(worst, err)
    return worst


def _check_gradients(seed: int) -> CheckResult:
    worst = max_grad_rel_err(cases=300, seed=seed)
    passed = worst < GRAD_REL_ERR_LIMIT
    return CheckResult("gradient-suite", passed, f"max relative error {worst:.3e}")


def _check_gumbel_marginal(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    params = RelaxParams(tau_relax=0.7, gumbel_enabled=True)
    samples = 100_000
    worst = 0.0
    for logit in (-2.0, -1.0, 0.0, 1.0, 2.0):
        out, _ = forward_activation(
            np.full(samples, logit), RelaxMode.GUMBEL, params, rng)
        gap = abs(float(np.mean(out >= 0.5)) - sigmoid(logit))
        worst = max(worst, gap)
    passed = worst < MARGINAL_TOLERANCE
    return CheckResult("gumbel-marginal", passed, f"max |empirical - sigmoid| = {worst:.4f}")


def _equivalence_specs(seed: int) -> list[NetworkSpec]:
    dense = arch_mlp(input_dim=24, widths=[40, 30], classes=3, seed=seed)
    conv = NetworkSpec(
        node_kind="warp",
        input=InputSpec(kind="image", channels=3, height=6, width=6),
        layers=(
            ConvBlockSpec(out_channels=4, depth=2),
            FlattenSpec(),
            DenseSpec(nodes=24),
            GroupSumSpec(classes=3),
        ),
        seed=seed + 1,
    )
    return [dense, conv]


def _check_netlist_equivalence(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    for spec in _equivalence_specs(seed):
        net = build_network(spec)
        compiled = harden(net)
        bits = rng.integers(0, 2, size=(200, compiled.input_count)).astype(np.uint8)
        counts = netlist_eval(compiled, bits)
        reference = net.discrete_counts(bits.reshape((-1,) + spec.input.shape()))
        if not np.array_equal(counts, reference):
            return CheckResult(
                "netlist-equivalence", False,
                f"count mismatch on {spec.input.kind} model")
    return CheckResult("netlist-equivalence", True, "2 models, 200 inputs, integer-exact")


def run_selftest(
    seed: int = 0,
    catalog: Sequence[GateCatalogEntry] | None = None,
    stream: TextIO | None = None,
) -> bool:
    """Run every embedded check; print a pass/fail table; return overall pass.

    ``catalog`` overrides the gate catalog under test (used by the test
    suite to confirm corruption is actually caught).
    """
    out = stream if stream is not None else sys.stdout
    rng = np.random.default_rng(seed)
    started = time.perf_counter()
    results = [
        _check_catalog(catalog if catalog is not None else gate_catalog()),
        _check_transform_roundtrip(rng),
        _check_gradients(seed),
        _check_gumbel_marginal(seed + 1),
        _check_netlist_equivalence(seed + 2),
    ]
    width = max(len(r.name) for r in results)
    print(f"{'check'.ljust(width)}  status  detail", file=out)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {status:4s}    {r.detail}", file=out)
    elapsed = time.perf_counter() - started
    ok = all(r.passed for r in results)
    print(f"{'overall'.ljust(width)}  {'PASS' if ok else 'FAIL'}    {elapsed:.1f}s", file=out)
    return ok
