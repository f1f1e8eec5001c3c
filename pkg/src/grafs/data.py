"""Dataset synthesis, file ingestion, splitting and deterministic batching."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "DataError",
    "gen_spirals",
    "gen_blobs",
    "load_csv",
    "save_csv",
    "load_idx",
    "split",
    "batches",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(Exception):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 in [0, classes)
    classes: int
    provenance: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) == 0:
            raise DataError(f"features must be a non-empty (n, d) array, got {self.features.shape}")
        if self.labels.shape != (len(self.features),):
            raise DataError(f"labels shape {self.labels.shape} does not match n={len(self.features)}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(
                f"labels must lie in [0, {self.classes}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self):
        return len(self.features)

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.classes, self.provenance)


def gen_spirals(n, noise=0.0, seed=0):
    """Two interleaved arms of the classic r = theta spiral with Gaussian jitter."""
    if n < 2:
        raise DataError(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    counts = (n - n // 2, n // 2)
    feats, labels = [], []
    for cls, m in enumerate(counts):
        theta = np.linspace(0.4 * np.pi, 2.4 * np.pi, m)
        phase = cls * np.pi
        pts = np.column_stack([theta * np.cos(theta + phase), theta * np.sin(theta + phase)])
        feats.append(pts)
        labels.append(np.full(m, cls, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    if noise < 0:
        raise DataError(f"noise must be non-negative, got {noise}")
    if noise:
        features = features + noise * rng.standard_normal(features.shape)
    return Dataset(features, labels, 2, f"spirals(n={n},noise={noise},seed={seed})")


def gen_blobs(n, k=2, spread=1.0, seed=0):
    """k Gaussian blobs centred on a radius-3 circle, classes round-robin."""
    if k < 2 or n < k:
        raise DataError(f"need n >= k >= 2, got n={n} k={k}")
    if spread < 0:
        raise DataError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % k
    angles = 2.0 * np.pi * labels / k
    centers = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    features = centers + spread * rng.standard_normal((n, 2))
    return Dataset(features, labels, k, f"blobs(n={n},k={k},spread={spread},seed={seed})")


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_csv(path):
    """Header row required; the column named 'label' carries integer classes."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split(",")
    if "label" not in header:
        raise DataError(f"{path}: header has no 'label' column: {header}")
    label_col = header.index("label")
    feats, labels = [], []
    for row_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataError(
                f"{path}: row {row_no} has {len(parts)} fields, header has {len(header)}"
            )
        try:
            lab = int(parts[label_col])
            vals = [float(p) for i, p in enumerate(parts) if i != label_col]
        except ValueError as exc:
            raise DataError(f"{path}: row {row_no}: {exc}") from None
        labels.append(lab)
        feats.append(vals)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise DataError(f"{path}: negative label {labels.min()}")
    return Dataset(
        np.asarray(feats, dtype=np.float64),
        labels,
        int(labels.max()) + 1,
        f"csv:{_file_digest(path)}",
    )


def save_csv(dataset, path):
    d = dataset.features.shape[1]
    header = ",".join([f"f{i}" for i in range(d)] + ["label"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row, lab in zip(dataset.features, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")


def _read_exact(fh, count, path, what):
    data = fh.read(count)
    if len(data) != count:
        raise DataError(
            f"{path}: truncated {what} at byte {fh.tell() - len(data)}: "
            f"expected {count} bytes, got {len(data)}"
        )
    return data


def load_idx(images_path, labels_path):
    """Standard IDX pair: big-endian dims, unsigned bytes scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(
                f"{images_path}: bad magic at byte 0: got {magic:#010x}, "
                f"expected {IDX_IMAGES_MAGIC:#010x}"
            )
        raw = _read_exact(fh, count * rows * cols, images_path, "pixel data")
    features = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(count, rows * cols)
    features /= 255.0

    with open(labels_path, "rb") as fh:
        magic, lab_count = struct.unpack(">II", _read_exact(fh, 8, labels_path, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataError(
                f"{labels_path}: bad magic at byte 0: got {magic:#010x}, "
                f"expected {IDX_LABELS_MAGIC:#010x}"
            )
        raw = _read_exact(fh, lab_count, labels_path, "label data")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if lab_count != count:
        raise DataError(f"{labels_path}: {lab_count} labels for {count} images")
    digest = f"idx:{_file_digest(images_path)[:16]}+{_file_digest(labels_path)[:16]}"
    return Dataset(features, labels, int(labels.max()) + 1 if count else 0, digest)


def split(dataset, fraction, seed):
    """Seeded disjoint, exhaustive (train, val) partition."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"fraction {fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


def batches(dataset, size, seed, epoch):
    """Deterministic shuffled minibatches; order is a pure function of
    (seed, epoch). The last partial batch is kept."""
    if size < 1:
        raise DataError(f"batch size must be positive, got {size}")
    n = len(dataset)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, size):
        idx = perm[start:start + size]
        yield dataset.features[idx], dataset.labels[idx]
