"""Loss, optimizers, the training loop, dual-mode evaluation, and metrics
and checkpoint serialization.

Validation runs in two modes after every ``eval_every`` steps: "relaxed"
(deterministic, noise-free sigmoid forward) and "discrete" (every node
hardened to its nearest truth table, exact Boolean evaluation).  Their
difference, relaxed minus discrete, is the discretization gap; it can be
negative.  Hardening for evaluation never mutates training parameters.

Metrics stream to CSV (columns: step, loss, acc_relaxed, acc_discrete,
gap, then one count column per catalog gate) with a JSON-lines mirror;
both are appended and flushed per record so a crash retains partial
history.  Checkpoints are a JSON manifest plus a raw little-endian
float32 parameter blob; wiring is rebuilt from the architecture seed, so
only parameters are stored.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .boolean import gate_catalog
from .errors import CheckpointError, ConfigError, TrainingDiverged, ValidationError
from .layers import EvalContext
from .network import LogicNetwork, NetworkSpec, build_network
from .relaxation import RelaxMode, RelaxParams, TauSchedule

CHECKPOINT_FORMAT = "warplut-checkpoint/1"
METRIC_COLUMNS = ("step", "loss", "acc_relaxed", "acc_discrete", "gap")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.kind!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValidationError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Sgd:
    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValidationError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g, v in zip(self.params, grads, self.vel):
            v *= self.momentum
            v += g
            p -= self.lr * v


def build_optimizer(spec: OptimizerSpec, params: list[np.ndarray], lr: float):
    if spec.kind == "adam":
        return Adam(params, lr, spec.beta1, spec.beta2, spec.eps)
    return Sgd(params, lr, spec.momentum)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 128
    learning_rate: float = 0.01
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    eval_every: int = 500
    seed: int = 0
    mode: RelaxMode = RelaxMode.DETERMINISTIC
    tau_relax: TauSchedule = field(default_factory=lambda: TauSchedule(1.0))
    tau_group: float | None = None  # overrides the architecture's readout tau
    ste_gumbel: bool = False  # STE thresholds a noisy sample instead of the mean
    ste_backward_noisy: bool = False

    def __post_init__(self) -> None:
        if self.steps <= 0:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.eval_every <= 0:
            raise ConfigError(f"eval_every must be positive, got {self.eval_every}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        object.__setattr__(self, "mode", RelaxMode.parse(self.mode))

    def relax_params(self, step: int) -> RelaxParams:
        return RelaxParams(
            tau_relax=self.tau_relax.at(step, self.steps),
            gumbel_enabled=self.ste_gumbel,
            rng_seed=self.seed,
            ste_backward_noisy=self.ste_backward_noisy,
        )


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    loss: float
    acc_relaxed: float
    acc_discrete: float
    gap: float
    gate_histogram: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "acc_relaxed": self.acc_relaxed,
            "acc_discrete": self.acc_discrete,
            "gap": self.gap,
            "gate_histogram": list(self.gate_histogram),
        }


def metrics_csv_header() -> str:
    names = [entry.name for entry in gate_catalog()]
    return ",".join(list(METRIC_COLUMNS) + names)


def metrics_csv_row(rec: MetricsRecord) -> str:
    vals = [str(rec.step), repr(rec.loss), repr(rec.acc_relaxed),
            repr(rec.acc_discrete), repr(rec.gap)]
    vals += [str(c) for c in rec.gate_histogram]
    return ",".join(vals)


def load_metrics_csv(path: str) -> list[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != metrics_csv_header():
        raise ValidationError(f"{path} is not a metrics CSV produced by this package")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        records.append(MetricsRecord(
            step=int(parts[0]), loss=float(parts[1]), acc_relaxed=float(parts[2]),
            acc_discrete=float(parts[3]), gap=float(parts[4]),
            gate_histogram=tuple(int(v) for v in parts[5:21]),
        ))
    return records


def load_metrics_jsonl(path: str) -> list[MetricsRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            doc = json.loads(ln)
            records.append(MetricsRecord(
                step=doc["step"], loss=doc["loss"], acc_relaxed=doc["acc_relaxed"],
                acc_discrete=doc["acc_discrete"], gap=doc["gap"],
                gate_histogram=tuple(doc["gate_histogram"]),
            ))
    return records


def cross_entropy_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    loss, _ = cross_entropy_with_grad(scores, labels)
    return loss


def cross_entropy_with_grad(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log softmax likelihood and its gradient wrt the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ValidationError(f"scores must be (batch, classes), got {scores.shape}")
    batch, k = scores.shape
    if labels.shape != (batch,):
        raise ValidationError(f"labels must have shape ({batch},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError("labels must be integers")
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError(f"labels must lie in [0, {k})")
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(batch), labels]))
    probs = np.exp(shifted - logz[:, None])
    probs[np.arange(batch), labels] -= 1.0
    return loss, probs / batch


def _divergence_diagnostic(net: LogicNetwork, step: int) -> str:
    details = []
    for i, layer in enumerate(net.layers):
        for p in layer.parameters():
            details.append(f"layer {i} ({type(layer).__name__}): max |param| = "
                           f"{float(np.max(np.abs(p))):.6g}")
    body = "; ".join(details) if details else "no trainable parameters"
    return f"non-finite loss at step {step}; {body}"


def train_step(
    net: LogicNetwork,
    xb: np.ndarray,
    yb: np.ndarray,
    optimizer,
    config: TrainConfig,
    step: int,
    rng: np.random.Generator,
) -> float:
    """One forward/backward/update on a batch; returns the batch loss."""
    ctx = EvalContext(mode=config.mode, relax=config.relax_params(step), rng=rng, train=True)
    scores = net.forward(xb, ctx)
    loss, grad_scores = cross_entropy_with_grad(scores, yb)
    if not np.isfinite(loss):
        raise TrainingDiverged(_divergence_diagnostic(net, step))
    grads = net.backward(grad_scores)
    optimizer.step(grads)
    return loss


def evaluate(
    net: LogicNetwork,
    inputs: np.ndarray,
    labels: np.ndarray,
    mode: str = "relaxed",
    relax: RelaxParams | None = None,
    batch_size: int = 4096,
) -> float:
    """Accuracy under noise-free relaxed or hardened-discrete evaluation."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    correct = 0
    for lo in range(0, n, batch_size):
        xb = inputs[lo:lo + batch_size]
        if mode == "relaxed":
            ctx = EvalContext(mode=RelaxMode.DETERMINISTIC, relax=relax or RelaxParams())
            pred = net.predict_relaxed(xb, ctx)
        elif mode == "discrete":
            pred = net.predict_discrete(xb)
        else:
            raise ValidationError(f"mode must be 'relaxed' or 'discrete', got {mode!r}")
        correct += int(np.sum(pred == labels[lo:lo + batch_size]))
    return correct / n


def gate_histogram(net: LogicNetwork) -> np.ndarray:
    return net.gate_histogram()


class _MetricsWriter:
    """Appends each record to CSV and JSONL files, flushing as it goes."""

    def __init__(self, out_dir: str | None):
        self.csv = self.jsonl = None
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        self.csv = open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8")
        self.csv.write(metrics_csv_header() + "\n")
        self.csv.flush()
        self.jsonl = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")

    def append(self, rec: MetricsRecord) -> None:
        if self.csv is None:
            return
        self.csv.write(metrics_csv_row(rec) + "\n")
        self.csv.flush()
        self.jsonl.write(json.dumps(rec.to_json_dict()) + "\n")
        self.jsonl.flush()

    def close(self) -> None:
        for fh in (self.csv, self.jsonl):
            if fh is not None:
                fh.close()


def run_training(
    net: LogicNetwork,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    out_dir: str | None = None,
) -> list[MetricsRecord]:
    """Train for config.steps, recording dual-mode metrics every eval_every
    steps (and at the final step).  The recorded loss is the mean training
    loss since the previous record.  Deterministic given config.seed except
    in noisy modes, where it is deterministic given seed and thread count.
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    n_train = y_train.shape[0]
    if x_train.shape[0] != n_train:
        raise ValidationError("training inputs and labels disagree in length")
    if config.tau_group is not None:
        readout = net.layers[-1]
        if not hasattr(readout, "tau_group"):
            raise ConfigError("tau_group override requires a group_sum readout")
        readout.tau_group = float(config.tau_group)

    seq = np.random.SeedSequence(config.seed)
    batch_stream, noise_stream = seq.spawn(2)
    batch_rng = np.random.default_rng(batch_stream)
    noise_rng = np.random.default_rng(noise_stream)
    optimizer = build_optimizer(config.optimizer, net.parameters(), config.learning_rate)

    writer = _MetricsWriter(out_dir)
    records: list[MetricsRecord] = []
    losses: list[float] = []
    order = np.array([], dtype=np.int64)
    cursor = 0
    try:
        for step in range(1, config.steps + 1):
            take = min(config.batch_size, n_train)
            if cursor + take > order.shape[0]:
                order = batch_rng.permutation(n_train)
                cursor = 0
            idx = order[cursor:cursor + take]
            cursor += take
            loss = train_step(net, x_train[idx], y_train[idx], optimizer,
                              config, step - 1, noise_rng)
            losses.append(loss)
            if step % config.eval_every == 0 or step == config.steps:
                relax = config.relax_params(step - 1)
                acc_r = evaluate(net, x_val, y_val, "relaxed", relax)
                acc_d = evaluate(net, x_val, y_val, "discrete")
                rec = MetricsRecord(
                    step=step,
                    loss=float(np.mean(losses)) if losses else float("nan"),
                    acc_relaxed=acc_r,
                    acc_discrete=acc_d,
                    gap=acc_r - acc_d,
                    gate_histogram=tuple(int(c) for c in net.gate_histogram()),
                )
                losses = []
                records.append(rec)
                writer.append(rec)
    finally:
        writer.close()
    return records


def save_checkpoint(base_path: str, net: LogicNetwork, meta: dict | None = None) -> None:
    """Write ``base_path``.json (manifest) and ``base_path``.bin (float32 LE).

    The manifest stores the architecture document; wiring is rebuilt from
    its seed on load, so the blob holds only parameter arrays, in network
    order, C-contiguous.
    """
    params = net.parameters()
    manifest_arrays = []
    offset = 0
    blobs = []
    for p in params:
        arr = np.ascontiguousarray(p, dtype="<f4")
        manifest_arrays.append({"shape": list(p.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    doc = {
        "format": CHECKPOINT_FORMAT,
        "architecture": net.spec.to_dict(),
        "arrays": manifest_arrays,
        "float_count": offset,
        "meta": meta or {},
    }
    os.makedirs(os.path.dirname(os.path.abspath(base_path)), exist_ok=True)
    with open(base_path + ".json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    with open(base_path + ".bin", "wb") as fh:
        fh.write(b"".join(blobs))


def load_checkpoint(base_path: str) -> tuple[LogicNetwork, dict]:
    """Rebuild a network from a manifest/blob pair; raises CheckpointError."""
    json_path, bin_path = base_path + ".json", base_path + ".bin"
    try:
        with open(json_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint manifest not found: {json_path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {json_path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format {doc.get('format')!r} in {json_path} "
            f"(expected {CHECKPOINT_FORMAT!r})"
        )
    try:
        spec = NetworkSpec.from_dict(doc["architecture"])
    except (KeyError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint architecture is invalid: {exc}") from exc
    net = build_network(spec)
    params = net.parameters()
    arrays = doc.get("arrays")
    float_count = doc.get("float_count")
    if not isinstance(arrays, list) or len(arrays) != len(params):
        raise CheckpointError(
            f"checkpoint manifest lists {len(arrays) if isinstance(arrays, list) else '?'} "
            f"arrays, architecture needs {len(params)}"
        )
    try:
        with open(bin_path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint blob not found: {bin_path}") from exc
    expected = sum(p.size for p in params)
    if float_count != expected or len(raw) != expected * 4:
        raise CheckpointError(
            f"checkpoint blob {bin_path} holds {len(raw)} bytes, expected {expected * 4}"
        )
    flat = np.frombuffer(raw, dtype="<f4")
    for p, entry in zip(params, arrays):
        if list(entry.get("shape", [])) != list(p.shape):
            raise CheckpointError(
                f"checkpoint array shape {entry.get('shape')} != expected {list(p.shape)}"
            )
        start = entry["offset"]
        p[...] = flat[start:start + p.size].reshape(p.shape).astype(np.float64)
    meta = doc.get("meta", {})
    return net, meta
