"""Dataset ingestion: IDX files, label binarization, random labels, synthetic data.

Feature matrices are float64 in [0,1]; labels are float64 in {-1, +1}. Both
are frozen (read-only numpy arrays) after construction so datasets can be
shared freely.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import LABELS, stream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_SIZE = 55_000
TEST_SIZE = 10_000

# Conventional file names inside a data directory (.gz variants also accepted).
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(ValueError):
    """An IDX file violated the format contract; `field` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DataError(ValueError):
    """Dataset-level contract violation (sizes, ranges, missing files)."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows in [0,1]^k with labels in {-1,+1}."""

    features: np.ndarray
    labels: np.ndarray
    provenance: str = "synthetic"  # "true" | "random" | "synthetic"
    label_seed: int | None = None

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise DataError(f"features must be a nonempty matrix, got {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DataError(
                f"labels shape {labels.shape} does not match {features.shape[0]} rows"
            )
        lo, hi = float(features.min()), float(features.max())
        if lo < 0.0 or hi > 1.0:
            raise DataError(f"features must lie in [0,1], observed [{lo}, {hi}]")
        if not np.all(np.abs(labels) == 1.0):
            raise DataError("labels must all be -1 or +1")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            self.features[indices],
            self.labels[indices],
            provenance=self.provenance,
            label_seed=self.label_seed,
        )

    def head(self, count: int) -> "LabeledDataset":
        if count > self.m:
            raise DataError(f"asked for {count} rows, dataset has {self.m}")
        return self.subset(np.arange(count))


def _open_maybe_gz(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_header(f, count: int, field_name: str) -> tuple[int, ...]:
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise IdxFormatError(field_name, "file truncated inside header")
    return struct.unpack(f">{count}I", raw)


def load_idx(path_images, path_labels) -> tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image/label file pair.

    Returns (images, digits): images is (N, rows, cols) uint8, digits is
    (N,) uint8 in 0..9. Raises IdxFormatError naming the offending field on
    any format violation.
    """
    path_images = Path(path_images)
    path_labels = Path(path_labels)
    for path in (path_images, path_labels):
        if not path.exists():
            raise DataError(f"no such file: {path}")

    with _open_maybe_gz(path_images) as f:
        magic, count, rows, cols = _read_header(f, 4, "image header")
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                "image magic", f"expected {IMAGE_MAGIC:#010x}, got {magic:#010x}"
            )
        payload = f.read()
        expected = count * rows * cols
        if len(payload) != expected:
            raise IdxFormatError(
                "image payload",
                f"expected {expected} bytes for {count}x{rows}x{cols}, got {len(payload)}",
            )
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)

    with _open_maybe_gz(path_labels) as f:
        magic, label_count = _read_header(f, 2, "label header")
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                "label magic", f"expected {LABEL_MAGIC:#010x}, got {magic:#010x}"
            )
        payload = f.read()
        if len(payload) != label_count:
            raise IdxFormatError(
                "label payload",
                f"expected {label_count} bytes, got {len(payload)}",
            )
        digits = np.frombuffer(payload, dtype=np.uint8)

    if count != label_count:
        raise IdxFormatError(
            "count", f"{count} images but {label_count} labels"
        )
    if digits.size and digits.max() > 9:
        raise IdxFormatError("label values", f"digit out of range: {digits.max()}")
    return images, digits


def binarize(images: np.ndarray, digits: np.ndarray) -> LabeledDataset:
    """Digits 0..4 -> label +1, digits 5..9 -> label -1; pixels scaled by 255."""
    digits = np.asarray(digits)
    if not np.issubdtype(digits.dtype, np.integer):
        raise DataError(f"labels must be integer digits, got dtype {digits.dtype}")
    if digits.size and (digits.min() < 0 or digits.max() > 9):
        raise DataError("digit labels must lie in 0..9")
    images = np.asarray(images)
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = np.where(digits <= 4, 1.0, -1.0)
    return LabeledDataset(features, labels, provenance="true")


def randomize_labels(data: LabeledDataset, seed: int) -> LabeledDataset:
    """Replace labels with i.i.d. uniform {-1,+1}; features untouched."""
    rng = stream(seed, LABELS)
    labels = rng.integers(0, 2, size=data.m).astype(np.float64) * 2.0 - 1.0
    return LabeledDataset(
        data.features, labels, provenance="random", label_seed=seed
    )


def train_test_split(
    full_train: LabeledDataset, full_test: LabeledDataset
) -> tuple[LabeledDataset, LabeledDataset]:
    """First 55000 training rows in file order, plus the 10000-row test set."""
    if full_train.m != 60_000:
        raise DataError(f"expected 60000 training rows, got {full_train.m}")
    if full_test.m != TEST_SIZE:
        raise DataError(f"expected {TEST_SIZE} test rows, got {full_test.m}")
    return full_train.head(TRAIN_SIZE), full_test


def mnist_paths(data_dir) -> dict[str, Path]:
    """Resolve the four conventional IDX files (plain or .gz) in a directory."""
    data_dir = Path(data_dir)
    resolved = {}
    for key, name in MNIST_FILES.items():
        plain = data_dir / name
        gz = data_dir / (name + ".gz")
        if plain.exists():
            resolved[key] = plain
        elif gz.exists():
            resolved[key] = gz
        else:
            raise DataError(f"missing {name}[.gz] in {data_dir}")
    return resolved


def load_mnist(data_dir) -> tuple[LabeledDataset, LabeledDataset]:
    """Load, binarize, and split the standard IDX files in `data_dir`."""
    paths = mnist_paths(data_dir)
    train_images, train_digits = load_idx(paths["train_images"], paths["train_labels"])
    test_images, test_digits = load_idx(paths["test_images"], paths["test_labels"])
    return train_test_split(
        binarize(train_images, train_digits), binarize(test_images, test_digits)
    )


def synthetic_blobs(
    m: int, seed: int, separable: bool = True, input_dim: int = 2
) -> LabeledDataset:
    """Two Gaussian blobs in [0,1]^k for fast integration tests.

    With `separable=True` the blob centers are far enough apart that a
    linear rule achieves zero training error.
    """
    if m < 2:
        raise DataError(f"need at least 2 points, got {m}")
    rng = stream(seed, "synthetic")
    labels = np.ones(m)
    labels[m // 2 :] = -1.0
    gap = 0.5 if separable else 0.12
    center_hi = 0.5 + gap / 2.0
    center_lo = 0.5 - gap / 2.0
    spread = 0.08
    features = rng.normal(0.0, spread, size=(m, input_dim))
    features[labels > 0] += center_hi
    features[labels < 0] += center_lo
    features = np.clip(features, 0.0, 1.0)
    order = rng.permutation(m)
    return LabeledDataset(
        features[order], labels[order], provenance="synthetic", label_seed=seed
    )
