"""Command-line front end: the train/eval/export/inspect/selftest loop,
strict config parsing, exit codes, and run reproducibility.

Commands run in-process through main(argv) so exit codes and outputs are
checked directly; one subprocess test covers the installed entry point.
"""

import dataclasses
import io
import json
import os
import subprocess

import numpy as np
import pytest

from warplut.boolean import gate_catalog
from warplut.cli import main
from warplut.netlist import load_netlist, netlist_eval
from warplut.network import arch_parity_tree
from warplut.selftest import run_selftest


def write_arch(directory, k=4):
    path = str(directory / "arch.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(arch_parity_tree(k).to_json())
    return path


def write_config(directory, name="config.json", **overrides):
    doc = {
        "architecture": str(directory / "arch.json"),
        "dataset": {"kind": "parity", "k": 4},
        "steps": 200,
        "batch_size": 16,
        "learning_rate": 0.05,
        "mode": "gumbel",
        "tau_relax": 1.0,
        "eval_every": 100,
        "seed": 0,
    }
    doc.update(overrides)
    doc = {k: v for k, v in doc.items() if v is not None}
    path = str(directory / name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return path


@pytest.fixture(scope="module")
def quickrun(tmp_path_factory):
    """One full training run on parity-4, shared by the artifact tests."""
    root = tmp_path_factory.mktemp("quickrun")
    write_arch(root)
    out = str(root / "run")
    cfg = write_config(root, steps=3000, eval_every=500, out_dir=out)
    assert main(["train", "--config", cfg]) == 0
    return {"root": root, "cfg": cfg, "out": out}


def parity4_bits():
    return ((np.arange(16)[:, None] >> np.arange(3, -1, -1)) & 1).astype(np.uint8)


class TestTrain:
    def test_artifacts_written(self, quickrun):
        for name in (
            "config_resolved.json",
            "checkpoint.json",
            "checkpoint.bin",
            "metrics.csv",
            "metrics.jsonl",
            "gate_histogram.json",
            "accuracy_plot.csv",
        ):
            assert os.path.isfile(os.path.join(quickrun["out"], name)), name

    def test_parity_solved(self, quickrun):
        with open(os.path.join(quickrun["out"], "checkpoint.json")) as fh:
            meta = json.load(fh)["meta"]
        assert meta["final"]["acc_discrete"] == 1.0
        assert meta["final"]["gap"] == 0.0
        assert meta["seed"] == 0
        assert meta["mode"] == "gumbel"
        assert meta["final_tau_relax"] == 1.0

    def test_resolved_config_is_complete(self, quickrun):
        with open(os.path.join(quickrun["out"], "config_resolved.json")) as fh:
            doc = json.load(fh)
        assert doc["steps"] == 3000
        assert doc["seed"] == 0
        assert doc["mode"] == "gumbel"
        assert doc["dataset"] == {"kind": "parity", "k": 4}
        assert os.path.isabs(doc["architecture"])

    def test_gate_histogram_totals(self, quickrun):
        with open(os.path.join(quickrun["out"], "gate_histogram.json")) as fh:
            doc = json.load(fh)
        assert set(doc["counts"]) == {e.name for e in gate_catalog()}
        assert sum(doc["counts"].values()) == doc["two_input_nodes"] == 6

    def test_accuracy_plot_matches_metrics(self, quickrun):
        with open(os.path.join(quickrun["out"], "accuracy_plot.csv")) as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "step,acc_relaxed,acc_discrete,gap"
        assert lines[1].startswith("500,")
        assert lines[-1].startswith("3000,")

    def test_stdout_summary(self, tmp_path, capsys):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, out_dir=str(tmp_path / "run"))
        assert main(["train", "--config", cfg]) == 0
        got = capsys.readouterr().out
        assert "trained 200 steps" in got
        assert "discrete" in got


class TestEval:
    def test_discrete(self, quickrun, capsys):
        ckpt = os.path.join(quickrun["out"], "checkpoint")
        assert main(["eval", ckpt, "--config", quickrun["cfg"], "--mode", "discrete"]) == 0
        assert "discrete accuracy on parity-4: 1.0000" in capsys.readouterr().out
        with open(os.path.join(quickrun["out"], "eval_discrete.json")) as fh:
            doc = json.load(fh)
        assert doc["accuracy"] == 1.0
        assert doc["samples"] == 16
        with open(os.path.join(quickrun["out"], "circuit_stats.json")) as fh:
            stats = json.load(fh)
        assert stats["depth"] == 3

    def test_relaxed(self, quickrun):
        # the .json suffix resolves to the same checkpoint base
        ckpt = os.path.join(quickrun["out"], "checkpoint.json")
        out = str(quickrun["root"] / "eval_out")
        assert main(["eval", ckpt, "--config", quickrun["cfg"],
                     "--mode", "relaxed", "--out", out]) == 0
        with open(os.path.join(out, "eval_relaxed.json")) as fh:
            doc = json.load(fh)
        assert doc["mode"] == "relaxed"
        assert doc["accuracy"] == 1.0


class TestExport:
    def test_json_netlist_is_faithful(self, quickrun):
        ckpt = os.path.join(quickrun["out"], "checkpoint")
        out = str(quickrun["root"] / "export_json")
        assert main(["export", ckpt, "--format", "json", "--out", out]) == 0
        nl = load_netlist(os.path.join(out, "netlist.json"))
        bits = parity4_bits()
        counts = netlist_eval(nl, bits)
        labels = bits.sum(axis=1) % 2
        np.testing.assert_array_equal(counts.argmax(axis=1), labels)

    def test_logic_text_and_fold(self, quickrun, capsys):
        ckpt = os.path.join(quickrun["out"], "checkpoint")
        out = str(quickrun["root"] / "export_txt")
        assert main(["export", ckpt, "--format", "logic-text",
                     "--fold-identities", "--out", out]) == 0
        assert "nodes" in capsys.readouterr().out
        with open(os.path.join(out, "netlist.txt")) as fh:
            text = fh.read()
        assert text.startswith("# inputs: w0 .. w3")
        assert "# class 0 count:" in text


class TestInspect:
    def test_architecture(self, tmp_path, capsys):
        arch = write_arch(tmp_path)
        assert main(["inspect", arch, "--threads", "1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["node_count"] == 6

    def test_checkpoint(self, quickrun, capsys):
        assert main(["inspect", os.path.join(quickrun["out"], "checkpoint.bin")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["meta"]["steps"] == 3000
        assert sum(doc["gate_histogram"].values()) == 6

    def test_rejects_other_json(self, quickrun, capsys):
        assert main(["inspect", quickrun["cfg"]]) == 2
        assert "format" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["inspect", str(tmp_path / "nope.json")]) == 2
        assert "no such file" in capsys.readouterr().err


class TestConfigErrors:
    def check(self, tmp_path, capsys, expect_stderr, **overrides):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, out_dir=str(tmp_path / "run"), **overrides)
        assert main(["train", "--config", cfg]) == 2
        assert expect_stderr in capsys.readouterr().err

    def test_unknown_top_level_key(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "unknown keys", stepz=100)

    def test_unknown_dataset_key(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "unknown keys",
                   dataset={"kind": "parity", "k": 4, "fold": 2})

    def test_unknown_optimizer_key(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "unknown keys",
                   optimizer={"kind": "adam", "nesterov": True})

    def test_unknown_tau_key(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "unknown keys",
                   tau_relax={"start": 1.0, "warmup": 5})

    def test_unknown_init_key(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "unknown keys",
                   init={"scheme": "residual", "bias": 1.0})

    def test_boolean_is_not_an_int(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "boolean", steps=True)

    def test_bad_mode(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "mode", mode="annealed")

    def test_bad_node_kind(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "node_kind", node_kind="lut")

    def test_bad_dataset_kind(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "dataset.kind", dataset={"kind": "mnist"})

    def test_missing_steps(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "steps", steps=None)

    def test_missing_out_dir(self, tmp_path, capsys):
        write_arch(tmp_path)
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg]) == 2
        assert "output directory" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "none.json")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_config_not_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{")
        assert main(["train", "--config", str(path)]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_missing_architecture_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path, architecture=str(tmp_path / "ghost.json"))
        assert main(["train", "--config", cfg]) == 2
        assert "architecture file not found" in capsys.readouterr().err

    def test_missing_cifar_directory(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "dataset directory",
                   dataset={"kind": "cifar10", "dir": str(tmp_path / "no-data")})

    def test_unset_cifar_directory(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("WARPLUT_DATA", raising=False)
        self.check(tmp_path, capsys, "no dataset directory",
                   dataset={"kind": "cifar10"})

    def test_input_size_mismatch(self, tmp_path, capsys):
        self.check(tmp_path, capsys, "input bits",
                   dataset={"kind": "parity", "k": 6})


class TestCheckpointErrors:
    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        write_arch(tmp_path)
        cfg = write_config(tmp_path)
        assert main(["eval", str(tmp_path / "ghost"), "--config", cfg]) == 3
        assert "checkpoint" in capsys.readouterr().err

    def test_export_truncated_blob(self, quickrun, tmp_path):
        base = str(tmp_path / "checkpoint")
        for ext in (".json", ".bin"):
            with open(os.path.join(quickrun["out"], "checkpoint" + ext), "rb") as fh:
                blob = fh.read()
            with open(base + ext, "wb") as fh:
                fh.write(blob[:-4] if ext == ".bin" else blob)
        assert main(["export", base]) == 3


class TestSeedHandling:
    def test_seed_flag_overrides_config(self, tmp_path):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, steps=20)
        out = str(tmp_path / "run")
        assert main(["train", "--config", cfg, "--out", out, "--seed", "7"]) == 0
        with open(os.path.join(out, "config_resolved.json")) as fh:
            assert json.load(fh)["seed"] == 7
        with open(os.path.join(out, "checkpoint.json")) as fh:
            assert json.load(fh)["meta"]["seed"] == 7

    def test_same_seed_reproduces_bitwise(self, tmp_path):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, steps=200)
        outs = [str(tmp_path / f"run{i}") for i in "ab"]
        for out in outs:
            assert main(["train", "--config", cfg, "--out", out]) == 0
        blobs = []
        for out in outs:
            with open(os.path.join(out, "checkpoint.bin"), "rb") as fh:
                blobs.append(fh.read())
        assert blobs[0] == blobs[1]
        csvs = [open(os.path.join(out, "metrics.csv")).read() for out in outs]
        assert csvs[0] == csvs[1]

    def test_different_seed_changes_run(self, tmp_path):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, steps=200)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["train", "--config", cfg, "--out", out_a]) == 0
        assert main(["train", "--config", cfg, "--out", out_b, "--seed", "1"]) == 0
        with open(os.path.join(out_a, "checkpoint.bin"), "rb") as fh_a:
            with open(os.path.join(out_b, "checkpoint.bin"), "rb") as fh_b:
                assert fh_a.read() != fh_b.read()

    def test_resolved_config_reruns_identically(self, tmp_path):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, steps=200)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["train", "--config", cfg, "--out", out_a]) == 0
        resolved = os.path.join(out_a, "config_resolved.json")
        assert main(["train", "--config", resolved, "--out", out_b]) == 0
        with open(os.path.join(out_a, "checkpoint.bin"), "rb") as fh_a:
            with open(os.path.join(out_b, "checkpoint.bin"), "rb") as fh_b:
                assert fh_a.read() == fh_b.read()

    def test_mode_flag_overrides_config(self, tmp_path):
        write_arch(tmp_path)
        cfg = write_config(tmp_path, steps=20, mode="deterministic")
        out = str(tmp_path / "run")
        assert main(["train", "--config", cfg, "--out", out, "--mode", "gumbel"]) == 0
        with open(os.path.join(out, "config_resolved.json")) as fh:
            assert json.load(fh)["mode"] == "gumbel"


class TestSelftest:
    def test_passes_and_prints_table(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        for name in ("catalog-roundtrip", "transform-roundtrip", "gradient-suite",
                     "gumbel-marginal", "netlist-equivalence"):
            assert f"{name}" in out
        assert out.count("PASS") == 6  # five checks plus the overall row
        assert "FAIL" not in out

    def test_corrupted_catalog_is_caught(self):
        catalog = list(gate_catalog())
        xor, and_ = catalog[4], catalog[2]
        catalog[4] = dataclasses.replace(xor, coeffs=and_.coeffs)
        stream = io.StringIO()
        assert run_selftest(seed=0, catalog=catalog, stream=stream) is False
        out = stream.getvalue()
        assert "gate 4 (XOR)" in out
        assert "FAIL" in out


class TestEntryPoint:
    def test_console_script(self, tmp_path):
        arch = write_arch(tmp_path)
        proc = subprocess.run(["warplut", "inspect", arch],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["node_count"] == 6

    def test_usage_error_without_command(self):
        with pytest.raises(SystemExit):
            main([])
