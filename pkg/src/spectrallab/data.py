"""Input batches: synthetic Gaussian classification, CIFAR-10 binary files, one-hot tokens."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import Density

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072
CACHE_MAGIC = b"SSB1"


class FileFormatError(ValueError):
    pass


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class Batch:
    """Inputs ``(B, d0)`` and targets ``(B, d_out)``, one example per row."""

    inputs: np.ndarray
    targets: np.ndarray
    density: Density = Density.DENSE

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        targets = np.array(self.targets, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets[:, None]
        if inputs.ndim != 2 or inputs.shape[0] != targets.shape[0] or inputs.shape[0] == 0:
            raise ValueError(f"inconsistent batch shapes {inputs.shape} and {targets.shape}")
        inputs.flags.writeable = False
        targets.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "density", Density(self.density))

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def subset(self, n: int) -> "Batch":
        return Batch(self.inputs[:n], self.targets[:n], self.density)


def _hyperplane_labels(x: np.ndarray, normals: np.ndarray) -> np.ndarray:
    y = np.sign(x @ normals)
    y[y == 0] = 1.0
    return y


def synthetic_gaussian(batch_size: int, d0: int, seed: int = 0, out_dim: int = 1) -> Batch:
    """Standard normal inputs with +-1 targets from random hyperplanes (one per output)."""
    if batch_size < 1 or d0 < 1 or out_dim < 1:
        raise ValueError("batch_size, d0 and out_dim must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch_size, d0))
    normals = rng.standard_normal((d0, out_dim))
    return Batch(x, _hyperplane_labels(x, normals), Density.DENSE)


def one_hot_batch(batch_size: int, vocab: int, seed: int = 0, out_dim: int = 1) -> Batch:
    """Uniformly drawn one-hot inputs; each token carries a fixed random +-1 label."""
    if batch_size < 1 or vocab < 1 or out_dim < 1:
        raise ValueError("batch_size, vocab and out_dim must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, vocab, size=batch_size)
    x = np.zeros((batch_size, vocab))
    x[np.arange(batch_size), idx] = 1.0
    normals = rng.standard_normal((vocab, out_dim))
    return Batch(x, _hyperplane_labels(x, normals), Density.SPARSE)


def read_cifar10_records(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(labels, pixels)`` from a CIFAR-10 binary file, pixels as ``uint8`` of shape ``(n, 3072)``."""
    raw = Path(path).read_bytes()
    n, rem = divmod(len(raw), CIFAR_RECORD_BYTES)
    if rem:
        raise FileFormatError(
            f"{path}: truncated record at byte offset {n * CIFAR_RECORD_BYTES} "
            f"({rem} of {CIFAR_RECORD_BYTES} bytes present)"
        )
    if n == 0:
        raise FileFormatError(f"{path}: no records")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD_BYTES)
    labels = arr[:, 0].copy()
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FileFormatError(
            f"{path}: invalid label {labels[bad[0]]} at byte offset {bad[0] * CIFAR_RECORD_BYTES}"
        )
    return labels, arr[:, 1:].copy()


def write_cifar10_records(path, labels, pixels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), CIFAR_PIXELS)
    Path(path).write_bytes(np.concatenate([labels[:, None], pixels], axis=1).tobytes())


def load_cifar10_binary(path, classes: tuple[int, int] = (0, 1), batch_size: int = 200,
                        seed: int = 0) -> Batch:
    """Two-class CIFAR-10 batch with +-1 targets (first class -1, second +1).

    Samples are drawn without replacement from all matching records. Each
    pixel position is standardized to mean 0 and variance 1 over every
    matching record; constant positions are only centred.
    """
    labels, pixels = read_cifar10_records(path)
    neg, pos = classes
    match = np.flatnonzero((labels == neg) | (labels == pos))
    if match.size < batch_size:
        raise InsufficientSamplesError(
            f"{path}: only {match.size} records of classes {classes}, need {batch_size}"
        )
    pool = pixels[match].astype(np.float64)
    mean, std = pool.mean(axis=0), pool.std(axis=0)
    std[std == 0.0] = 1.0
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(match.size, size=batch_size, replace=False))
    x = (pool[pick] - mean) / std
    y = np.where(labels[match[pick]] == pos, 1.0, -1.0)
    return Batch(x, y[:, None], Density.DENSE)


def save_batch(batch: Batch, path) -> None:
    """Framed cache: ``SSB1``, u32 B, u32 d_in, u32 d_out, u32 density (0 dense, 1 sparse), then f64 inputs and targets."""
    header = CACHE_MAGIC + struct.pack(
        "<4I", batch.size, batch.input_dim, batch.output_dim, 0 if batch.density is Density.DENSE else 1
    )
    payload = batch.inputs.astype("<f8").tobytes() + batch.targets.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_batch(path) -> Batch:
    raw = Path(path).read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0")
    if len(raw) < 20:
        raise FileFormatError(f"{path}: header truncated at byte offset {len(raw)}")
    b, d_in, d_out, dens = struct.unpack("<4I", raw[4:20])
    expected = 20 + 8 * b * (d_in + d_out)
    if len(raw) != expected:
        raise FileFormatError(f"{path}: payload ends at byte offset {len(raw)}, expected {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=20)
    x = data[: b * d_in].reshape(b, d_in)
    y = data[b * d_in:].reshape(b, d_out)
    return Batch(x, y, Density.SPARSE if dens else Density.DENSE)
