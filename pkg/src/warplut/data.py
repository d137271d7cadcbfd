"""Dataset ingestion and binarization.

CIFAR-10 is read from its binary-batches distribution: six files of
10,000 records, each record one label byte followed by 3072 pixel bytes
(row-major red plane, then green, then blue).  Pixels are scaled to
[0, 1] and binarized by a per-channel thermometer code: bit t of a pixel
fires iff the pixel exceeds thresholds[t], so the bit vector is monotone
in the pixel value.  Output bit channels are ordered channel-major,
threshold-minor (all bits of red, then green, then blue).

Also provides the seeded 80/20 train/validation split, exhaustive parity
datasets (the exactly-solvable oracle task), and a versioned binary cache
for encoded bit tensors.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError

CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_RECORD_BYTES = 3073
CIFAR_RECORDS_PER_FILE = 10000
CIFAR_FILE_BYTES = CIFAR_RECORD_BYTES * CIFAR_RECORDS_PER_FILE

CACHE_MAGIC = b"WLUT"
CACHE_VERSION = 1

DATA_ENV_VAR = "WARPLUT_DATA"


@dataclass
class Dataset:
    """Inputs (float64, bit-valued after encoding) plus integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    tag: str = ""

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"inputs ({self.inputs.shape[0]}) and labels ({self.labels.shape[0]}) "
                "disagree in length"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: np.ndarray, tag: str | None = None) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices],
                       self.tag if tag is None else tag)


@dataclass(frozen=True)
class EncoderSpec:
    """Thermometer encoder: n_bits thresholds, strictly increasing in (0,1).

    Default thresholds are the uniform quantiles t/(n_bits+1), e.g.
    (0.25, 0.5, 0.75) for n_bits=3.
    """

    n_bits: int = 3
    thresholds: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_bits < 1:
            raise ValidationError(f"n_bits must be positive, got {self.n_bits}")
        if self.thresholds is not None:
            t = tuple(float(v) for v in self.thresholds)
            object.__setattr__(self, "thresholds", t)
            if len(t) != self.n_bits:
                raise ValidationError(f"expected {self.n_bits} thresholds, got {len(t)}")
            if any(not 0.0 < v < 1.0 for v in t):
                raise ValidationError("thresholds must lie strictly inside (0, 1)")
            if any(t[i] >= t[i + 1] for i in range(len(t) - 1)):
                raise ValidationError("thresholds must be strictly increasing")

    def resolved_thresholds(self) -> np.ndarray:
        if self.thresholds is not None:
            return np.asarray(self.thresholds, dtype=np.float64)
        return np.arange(1, self.n_bits + 1, dtype=np.float64) / (self.n_bits + 1)


def resolve_data_dir(explicit: str | None = None) -> str | None:
    """Explicit path if given, else the WARPLUT_DATA environment variable."""
    if explicit:
        return explicit
    return os.environ.get(DATA_ENV_VAR) or None


def _read_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.exists(path):
        raise DataError(f"CIFAR-10 batch file missing: {path}")
    size = os.path.getsize(path)
    if size != CIFAR_FILE_BYTES:
        # Point at the first incomplete record to aid diagnosis.
        offset = (size // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise DataError(
            f"{path}: expected {CIFAR_FILE_BYTES} bytes, found {size} "
            f"(truncated at offset {offset})"
        )
    raw = np.fromfile(path, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        rec = int(bad[0])
        raise DataError(
            f"{path}: record {rec} (offset {rec * CIFAR_RECORD_BYTES}) has label "
            f"{int(labels[rec])}, outside [0, 9]"
        )
    images = raw[:, 1:].reshape(CIFAR_RECORDS_PER_FILE, 3, 32, 32)
    return images, labels


def load_cifar10_binary(directory: str) -> tuple[Dataset, Dataset]:
    """Load the six binary batches as (train, test) byte-image datasets.

    Accepts either the directory containing the .bin files or its parent
    holding the conventional 'cifar-10-batches-bin' subdirectory.  The
    train labels are checked to be perfectly balanced (5,000 per class).
    """
    if not directory or not os.path.isdir(directory):
        raise DataError(f"CIFAR-10 directory not found: {directory!r}")
    nested = os.path.join(directory, "cifar-10-batches-bin")
    if not os.path.exists(os.path.join(directory, CIFAR_TRAIN_FILES[0])) and os.path.isdir(nested):
        directory = nested
    train_images, train_labels = [], []
    for name in CIFAR_TRAIN_FILES:
        images, labels = _read_cifar_file(os.path.join(directory, name))
        train_images.append(images)
        train_labels.append(labels)
    test_images, test_labels = _read_cifar_file(os.path.join(directory, CIFAR_TEST_FILE))
    inputs = np.concatenate(train_images)
    labels = np.concatenate(train_labels)
    counts = np.bincount(labels, minlength=10)
    if not np.all(counts == 5000):
        raise DataError(
            f"train label histogram {counts.tolist()} is not 5,000 per class; "
            f"the batch files under {directory} are damaged or nonstandard"
        )
    return (Dataset(inputs, labels, tag="cifar10-train"),
            Dataset(test_images, test_labels, tag="cifar10-test"))


def thermometer_encode(ds: Dataset, spec: EncoderSpec = EncoderSpec()) -> Dataset:
    """Binarize (N, C, H, W) images into (N, C*n_bits, H, W) bit planes.

    Byte images are scaled by 1/255 first; float images must already lie in
    [0, 1].  Bit channel c*n_bits + t is channel c compared against
    thresholds[t] (strict >), preserving channel-major, threshold-minor
    order.
    """
    x = ds.inputs
    if x.ndim != 4:
        raise ValidationError(f"expected (N, C, H, W) images, got shape {x.shape}")
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    else:
        x = x.astype(np.float64)
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValidationError("float pixels must lie in [0, 1]")
    thresholds = spec.resolved_thresholds()
    n, c, h, w = x.shape
    bits = (x[:, :, None, :, :] > thresholds[None, None, :, None, None])
    out = bits.reshape(n, c * spec.n_bits, h, w).astype(np.float64)
    return Dataset(out, ds.labels, tag=ds.tag)


def split_train_val(ds: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then partition; (train, val) with train = fraction."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * fraction))
    return (ds.subset(order[:cut], tag=f"{ds.tag}/train"),
            ds.subset(order[cut:], tag=f"{ds.tag}/val"))


def make_parity_dataset(k: int) -> Dataset:
    """All 2^k bit vectors labeled by parity (class 1 = odd popcount)."""
    if not 1 <= k <= 16:
        raise ValidationError(f"parity arity must be in [1, 16], got {k}")
    count = 2 ** k
    codes = np.arange(count, dtype=np.int64)
    # Bit j of the input vector is bit (k-1-j) of the code: input 0 first.
    bits = (codes[:, None] >> np.arange(k - 1, -1, -1)[None, :]) & 1
    labels = bits.sum(axis=1) % 2
    return Dataset(bits.astype(np.float64), labels, tag=f"parity-{k}")


def save_bit_cache(path: str, ds: Dataset) -> None:
    """Write a bit-valued dataset as magic/version/dims + packed bits."""
    x = np.asarray(ds.inputs)
    if not np.all((x == 0) | (x == 1)):
        raise ValidationError("bit cache stores {0,1} tensors only")
    shape = x.shape
    if len(shape) > 8:
        raise ValidationError("bit cache supports up to 8 dimensions")
    flat_bits = x.astype(np.uint8).reshape(-1)
    packed = np.packbits(flat_bits)
    header = struct.pack(
        "<4sHH", CACHE_MAGIC, CACHE_VERSION, len(shape)
    ) + struct.pack(f"<{len(shape)}q", *shape)
    labels = ds.labels.astype("<i8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<q", labels.size))
        fh.write(labels.tobytes())
        fh.write(packed.tobytes())


def load_bit_cache(path: str) -> Dataset:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise DataError(f"bit cache not found: {path}") from exc
    if len(raw) < 8 or raw[:4] != CACHE_MAGIC:
        raise DataError(f"{path} is not a bit cache (bad magic)")
    version, ndim = struct.unpack_from("<HH", raw, 4)
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    offset = 8
    shape = struct.unpack_from(f"<{ndim}q", raw, offset)
    offset += 8 * ndim
    (n_labels,) = struct.unpack_from("<q", raw, offset)
    offset += 8
    labels = np.frombuffer(raw, dtype="<i8", count=n_labels, offset=offset).copy()
    offset += 8 * n_labels
    total_bits = int(np.prod(shape))
    packed = np.frombuffer(raw, dtype=np.uint8, offset=offset)
    if packed.size != (total_bits + 7) // 8:
        raise DataError(
            f"{path}: packed payload holds {packed.size} bytes, expected "
            f"{(total_bits + 7) // 8} for shape {tuple(shape)}"
        )
    bits = np.unpackbits(packed, count=total_bits).reshape(shape)
    return Dataset(bits.astype(np.float64), labels, tag=os.path.basename(path))
