"""Command-line front end: train / eval / export / inspect / selftest.

Runs are driven by a strict JSON config (unknown keys are errors) naming an
architecture document, a dataset, and training hyperparameters.  `train`
writes the fully-resolved config next to its outputs so the run can be
reproduced from that file alone.

Exit codes: 0 ok, 1 runtime failure, 2 config or data problem, 3 checkpoint
problem.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .boolean import gate_catalog
from .data import (
    Dataset,
    EncoderSpec,
    DATA_ENV_VAR,
    load_cifar10_binary,
    make_parity_dataset,
    resolve_data_dir,
    split_train_val,
    thermometer_encode,
)
from .errors import CheckpointError, ConfigError, DataError, WarpLutError
from .netlist import circuit_stats, export_netlist, fold_identities, harden
from .network import ARCH_FORMAT, GroupSumSpec, InitScheme, NetworkSpec, build_network
from .relaxation import RelaxMode, RelaxParams, TauSchedule
from .selftest import run_selftest
from .training import (
    CHECKPOINT_FORMAT,
    OptimizerSpec,
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

_MISSING = object()


def _expect_mapping(doc, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(doc).__name__}")
    return doc


def _reject_unknown(doc: dict, where: str) -> None:
    if doc:
        raise ConfigError(f"unknown keys in {where}: {sorted(doc)}")


def _typed(value, kinds, where: str, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        raise ConfigError(f"{where} must not be a boolean, got {value!r}")
    if not isinstance(value, kinds):
        raise ConfigError(f"{where} has wrong type: {value!r}")
    return value


@dataclass(frozen=True)
class DatasetSpec:
    """Which dataset a run trains or evaluates on."""

    kind: str  # "parity" | "cifar10"
    k: int | None = None
    dir: str | None = None
    n_bits: int = 3
    train_subset: int | None = None
    val_subset: int | None = None
    split: str = "val"  # which part `eval` scores: train | val | test

    @classmethod
    def from_dict(cls, doc) -> "DatasetSpec":
        doc = dict(_expect_mapping(doc, "dataset"))
        kind = doc.pop("kind", None)
        if kind == "parity":
            k = _typed(doc.pop("k", None), int, "dataset.k")
            _reject_unknown(doc, "dataset")
            return cls(kind="parity", k=k)
        if kind == "cifar10":
            directory = _typed(doc.pop("dir", None), str, "dataset.dir", allow_none=True)
            n_bits = _typed(doc.pop("n_bits", 3), int, "dataset.n_bits")
            train_subset = _typed(doc.pop("train_subset", None), int,
                                  "dataset.train_subset", allow_none=True)
            val_subset = _typed(doc.pop("val_subset", None), int,
                                "dataset.val_subset", allow_none=True)
            split = _typed(doc.pop("split", "val"), str, "dataset.split")
            _reject_unknown(doc, "dataset")
            if split not in ("train", "val", "test"):
                raise ConfigError(f"dataset.split must be train, val, or test, got {split!r}")
            if directory is not None and not os.path.isdir(directory):
                raise DataError(f"dataset directory does not exist: {directory}")
            return cls(kind="cifar10", dir=directory, n_bits=n_bits,
                       train_subset=train_subset, val_subset=val_subset, split=split)
        raise ConfigError(f"dataset.kind must be 'parity' or 'cifar10', got {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "parity":
            return {"kind": "parity", "k": self.k}
        return {
            "kind": "cifar10",
            "dir": None if self.dir is None else os.path.abspath(self.dir),
            "n_bits": self.n_bits,
            "train_subset": self.train_subset,
            "val_subset": self.val_subset,
            "split": self.split,
        }


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs: architecture path, dataset, hyperparameters."""

    architecture: str
    dataset: DatasetSpec
    out_dir: str | None = None
    steps: int | None = None
    batch_size: int = 128
    learning_rate: float = 0.01
    optimizer: OptimizerSpec = OptimizerSpec()
    eval_every: int = 500
    seed: int = 0
    mode: RelaxMode = RelaxMode.DETERMINISTIC
    tau_relax: TauSchedule = TauSchedule(1.0)
    tau_group: float | None = None
    ste_gumbel: bool = False
    ste_backward_noisy: bool = False
    node_kind: str | None = None  # overrides the architecture document
    init: InitScheme | None = None  # likewise

    def train_config(self) -> TrainConfig:
        if self.steps is None:
            raise ConfigError("config needs 'steps' to train")
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            eval_every=min(self.eval_every, self.steps),
            seed=self.seed,
            mode=self.mode,
            tau_relax=self.tau_relax,
            tau_group=self.tau_group,
            ste_gumbel=self.ste_gumbel,
            ste_backward_noisy=self.ste_backward_noisy,
        )

    def to_dict(self) -> dict:
        opt = self.optimizer
        doc = {
            "architecture": os.path.abspath(self.architecture),
            "dataset": self.dataset.to_dict(),
            "out_dir": None if self.out_dir is None else os.path.abspath(self.out_dir),
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": {"kind": opt.kind, "beta1": opt.beta1, "beta2": opt.beta2,
                          "eps": opt.eps, "momentum": opt.momentum},
            "eval_every": self.eval_every,
            "seed": self.seed,
            "mode": str(self.mode.value),
            "tau_relax": {"start": self.tau_relax.start, "end": self.tau_relax.end},
            "tau_group": self.tau_group,
            "ste_gumbel": self.ste_gumbel,
            "ste_backward_noisy": self.ste_backward_noisy,
            "node_kind": self.node_kind,
        }
        if self.init is None:
            doc["init"] = None
        else:
            doc["init"] = {"scheme": self.init.kind}
            if self.init.sigma is not None:
                doc["init"]["sigma"] = self.init.sigma
            if self.init.gamma is not None:
                doc["init"]["gamma"] = self.init.gamma
        return doc


def _parse_optimizer(doc) -> OptimizerSpec:
    if isinstance(doc, str):
        return OptimizerSpec(kind=doc)
    doc = dict(_expect_mapping(doc, "optimizer"))
    kind = _typed(doc.pop("kind", "adam"), str, "optimizer.kind")
    beta1 = _typed(doc.pop("beta1", 0.9), (int, float), "optimizer.beta1")
    beta2 = _typed(doc.pop("beta2", 0.999), (int, float), "optimizer.beta2")
    eps = _typed(doc.pop("eps", 1e-8), (int, float), "optimizer.eps")
    momentum = _typed(doc.pop("momentum", 0.0), (int, float), "optimizer.momentum")
    _reject_unknown(doc, "optimizer")
    return OptimizerSpec(kind=kind, beta1=float(beta1), beta2=float(beta2),
                         eps=float(eps), momentum=float(momentum))


def _parse_tau(doc) -> TauSchedule:
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        return TauSchedule(float(doc))
    doc = dict(_expect_mapping(doc, "tau_relax"))
    start = _typed(doc.pop("start", None), (int, float), "tau_relax.start")
    end = _typed(doc.pop("end", None), (int, float), "tau_relax.end", allow_none=True)
    _reject_unknown(doc, "tau_relax")
    return TauSchedule(float(start), None if end is None else float(end))


def _parse_init(doc) -> InitScheme:
    doc = dict(_expect_mapping(doc, "init"))
    scheme = _typed(doc.pop("scheme", "random"), str, "init.scheme")
    sigma = _typed(doc.pop("sigma", None), (int, float), "init.sigma", allow_none=True)
    gamma = _typed(doc.pop("gamma", None), (int, float), "init.gamma", allow_none=True)
    _reject_unknown(doc, "init")
    return InitScheme(kind=scheme, sigma=sigma, gamma=gamma)


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a config file; referenced paths must exist."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
    doc = dict(_expect_mapping(doc, "config"))

    architecture = _typed(doc.pop("architecture", None), str, "architecture")
    dataset = DatasetSpec.from_dict(doc.pop("dataset", None))
    out_dir = _typed(doc.pop("out_dir", None), str, "out_dir", allow_none=True)
    steps = _typed(doc.pop("steps", None), int, "steps", allow_none=True)
    batch_size = _typed(doc.pop("batch_size", 128), int, "batch_size")
    learning_rate = float(_typed(doc.pop("learning_rate", 0.01), (int, float), "learning_rate"))
    optimizer = _parse_optimizer(doc.pop("optimizer", "adam"))
    eval_every = _typed(doc.pop("eval_every", 500), int, "eval_every")
    seed = _typed(doc.pop("seed", 0), int, "seed")
    mode = RelaxMode.parse(_typed(doc.pop("mode", "deterministic"), str, "mode"))
    tau_relax = _parse_tau(doc.pop("tau_relax", 1.0))
    tau_group = _typed(doc.pop("tau_group", None), (int, float), "tau_group", allow_none=True)
    ste_gumbel = _typed(doc.pop("ste_gumbel", False), bool, "ste_gumbel")
    ste_backward_noisy = _typed(doc.pop("ste_backward_noisy", False), bool, "ste_backward_noisy")
    node_kind = _typed(doc.pop("node_kind", None), str, "node_kind", allow_none=True)
    init_doc = doc.pop("init", None)
    _reject_unknown(doc, "config")

    if not os.path.isfile(architecture):
        raise ConfigError(f"architecture file not found: {architecture}")
    if node_kind is not None and node_kind not in ("warp", "dlgn"):
        raise ConfigError(f"node_kind must be 'warp' or 'dlgn', got {node_kind!r}")
    return RunConfig(
        architecture=architecture,
        dataset=dataset,
        out_dir=out_dir,
        steps=steps,
        batch_size=batch_size,
        learning_rate=learning_rate,
        optimizer=optimizer,
        eval_every=eval_every,
        seed=seed,
        mode=mode,
        tau_relax=tau_relax,
        tau_group=None if tau_group is None else float(tau_group),
        ste_gumbel=ste_gumbel,
        ste_backward_noisy=ste_backward_noisy,
        node_kind=node_kind,
        init=None if init_doc is None else _parse_init(init_doc),
    )


def load_architecture(config: RunConfig, seed: int | None = None) -> NetworkSpec:
    """Read the architecture document and apply config-level overrides.

    The run seed replaces the document's seed so one config knob controls
    wiring, initialization, batching, and noise together.
    """
    with open(config.architecture, "r", encoding="utf-8") as fh:
        spec = NetworkSpec.from_json(fh.read())
    if config.node_kind is not None:
        spec = dataclasses.replace(spec, node_kind=config.node_kind)
    if config.init is not None:
        spec = dataclasses.replace(spec, init=config.init)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    if config.tau_group is not None:
        last = spec.layers[-1]
        if not isinstance(last, GroupSumSpec):
            raise ConfigError("tau_group override requires a group_sum readout")
        layers = spec.layers[:-1] + (dataclasses.replace(last, tau=float(config.tau_group)),)
        spec = dataclasses.replace(spec, layers=layers)
    return spec


def load_run_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Materialize (train, val, test) splits for a dataset spec.

    Parity has one exhaustive set playing all three roles.  CIFAR-10 splits
    the 50k train files 80/20 into train/val; the test batch stays separate.
    """
    if spec.kind == "parity":
        ds = make_parity_dataset(spec.k)
        return ds, ds, ds
    directory = resolve_data_dir(spec.dir)
    if directory is None:
        raise DataError(
            "no dataset directory: set 'dir' in the config or the "
            f"{DATA_ENV_VAR} environment variable")
    train_raw, test_raw = load_cifar10_binary(directory)
    enc = EncoderSpec(n_bits=spec.n_bits)
    train_all = thermometer_encode(train_raw, enc)
    test = thermometer_encode(test_raw, enc)
    train, val = split_train_val(train_all, fraction=0.8, seed=0)
    if spec.train_subset is not None:
        train = train.subset(np.arange(min(spec.train_subset, len(train))))
    if spec.val_subset is not None:
        val = val.subset(np.arange(min(spec.val_subset, len(val))))
    return train, val, test


def _check_input_size(spec: NetworkSpec, ds: Dataset) -> None:
    need = int(np.prod(spec.input.shape()))
    have = int(np.prod(ds.inputs.shape[1:]))
    if need != have:
        raise ConfigError(
            f"architecture expects {need} input bits but the dataset provides {have}")


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    if args.mode is not None:
        config = dataclasses.replace(config, mode=RelaxMode.parse(args.mode))
    if config.out_dir is None:
        raise ConfigError("train needs an output directory ('out_dir' or --out)")
    train_config = config.train_config()

    spec = load_architecture(config, seed=config.seed)
    train, val, _ = load_run_dataset(config.dataset)
    _check_input_size(spec, train)
    net = build_network(spec)

    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "config_resolved.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")

    records = run_training(net, (train.inputs, train.labels), (val.inputs, val.labels),
                           train_config, out_dir=config.out_dir)
    final = records[-1]

    save_checkpoint(os.path.join(config.out_dir, "checkpoint"), net, meta={
        "seed": config.seed,
        "steps": train_config.steps,
        "mode": str(config.mode.value),
        "final_tau_relax": train_config.relax_params(train_config.steps - 1).tau_relax,
        "dataset": config.dataset.to_dict(),
        "final": final.to_json_dict(),
    })
    hist = net.gate_histogram()
    with open(os.path.join(config.out_dir, "gate_histogram.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "counts": {e.name: int(hist[e.gate_id]) for e in gate_catalog()},
            "two_input_nodes": int(hist.sum()),
        }, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(config.out_dir, "accuracy_plot.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,acc_relaxed,acc_discrete,gap\n")
        for rec in records:
            fh.write(f"{rec.step},{rec.acc_relaxed!r},{rec.acc_discrete!r},{rec.gap!r}\n")

    print(f"trained {train_config.steps} steps; final loss {final.loss:.4f}, "
          f"relaxed {final.acc_relaxed:.4f}, discrete {final.acc_discrete:.4f}, "
          f"gap {final.gap:+.4f}")
    print(f"outputs in {config.out_dir}")
    return 0


def _checkpoint_base(path: str) -> str:
    if path.endswith(".json") or path.endswith(".bin"):
        return os.path.splitext(path)[0]
    return path


def cmd_eval(args) -> int:
    config = load_run_config(args.config)
    base = _checkpoint_base(args.checkpoint)
    net, meta = load_checkpoint(base)
    train, val, test = load_run_dataset(config.dataset)
    ds = {"train": train, "val": val, "test": test}[config.dataset.split]
    _check_input_size(net.spec, ds)
    # score relaxed mode at the tau the checkpoint finished training with,
    # so the printed number matches the last metrics record
    relax = RelaxParams(tau_relax=float(meta.get("final_tau_relax", 1.0)))
    acc = evaluate(net, ds.inputs, ds.labels, args.mode, relax)
    print(f"{args.mode} accuracy on {ds.tag}: {acc:.4f}")

    out_dir = args.out if args.out is not None else (os.path.dirname(base) or ".")
    os.makedirs(out_dir, exist_ok=True)
    result = {"mode": args.mode, "accuracy": acc, "samples": len(ds),
              "dataset": ds.tag, "checkpoint": os.path.abspath(base)}
    with open(os.path.join(out_dir, f"eval_{args.mode}.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    if args.mode == "discrete":
        stats = circuit_stats(harden(net))
        with open(os.path.join(out_dir, "circuit_stats.json"), "w", encoding="utf-8") as fh:
            json.dump(stats.to_json_dict(), fh, indent=2)
            fh.write("\n")
    return 0


def cmd_export(args) -> int:
    base = _checkpoint_base(args.checkpoint)
    net, _ = load_checkpoint(base)
    nl = harden(net)
    if args.fold_identities:
        nl = fold_identities(nl)
    out_dir = args.out if args.out is not None else (os.path.dirname(base) or ".")
    os.makedirs(out_dir, exist_ok=True)
    name = "netlist.json" if args.format == "json" else "netlist.txt"
    path = os.path.join(out_dir, name)
    export_netlist(nl, path, args.format)
    stats = circuit_stats(nl)
    print(f"wrote {path}")
    print(f"nodes {stats.total_nodes} (2-input {stats.two_input_nodes}), "
          f"depth {stats.depth}, identity fraction {stats.identity_fraction:.3f}")
    return 0


def cmd_inspect(args) -> int:
    path = args.path
    json_path = path if path.endswith(".json") else path + ".json"
    if path.endswith(".bin"):
        json_path = path[:-4] + ".json"
    if not os.path.isfile(json_path):
        raise ConfigError(f"no such file: {json_path}")
    with open(json_path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{json_path} is not valid JSON: {exc}") from exc
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt == CHECKPOINT_FORMAT:
        net, meta = load_checkpoint(os.path.splitext(json_path)[0])
        report = net.describe()
        report["meta"] = meta
        hist = net.gate_histogram()
        report["gate_histogram"] = {e.name: int(hist[e.gate_id]) for e in gate_catalog()}
    elif fmt == ARCH_FORMAT:
        net = build_network(NetworkSpec.from_dict(doc))
        report = net.describe()
    else:
        raise ConfigError(
            f"{json_path} has format {fmt!r}; expected {CHECKPOINT_FORMAT!r} or {ARCH_FORMAT!r}")
    print(json.dumps(report, indent=2))
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest(seed=args.seed if args.seed is not None else 0) else 1


def _thread_cap(threads: int | None):
    if threads is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # BLAS keeps its defaults; everything else is 1 thread anyway
        return contextlib.nullcontext()
    return threadpool_limits(limits=threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warplut",
        description="Train, evaluate, and export networks of learned look-up tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")

    p = sub.add_parser("train", help="train a network from a JSON config")
    p.add_argument("--config", required=True, help="run config path")
    p.add_argument("--mode", choices=[m.value for m in RelaxMode], default=None,
                   help="override the config relaxation mode")
    p.add_argument("--out", default=None, help="override the output directory")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("checkpoint", help="checkpoint base path (or its .json/.bin)")
    p.add_argument("--config", required=True, help="run config naming the dataset")
    p.add_argument("--mode", choices=["relaxed", "discrete"], default="discrete")
    p.add_argument("--out", default=None, help="where to write eval JSON (default: beside checkpoint)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="compile a checkpoint to a Boolean netlist")
    p.add_argument("checkpoint", help="checkpoint base path (or its .json/.bin)")
    p.add_argument("--format", choices=["json", "logic-text"], default="json")
    p.add_argument("--fold-identities", action="store_true",
                   help="rewire through identity gates instead of emitting them")
    p.add_argument("--out", default=None, help="output directory (default: beside checkpoint)")
    common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", help="describe an architecture or checkpoint")
    p.add_argument("path", help="architecture JSON or checkpoint path")
    common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("selftest", help="run the embedded invariant suite")
    common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_cap(args.threads):
            return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except WarpLutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
