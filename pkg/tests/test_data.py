import numpy as np
import pytest
from scipy import stats

from spectrallab.data import (
    CIFAR_PIXELS,
    CIFAR_RECORD_BYTES,
    Batch,
    FileFormatError,
    InsufficientSamplesError,
    load_batch,
    load_cifar10_binary,
    one_hot_batch,
    read_cifar10_records,
    save_batch,
    synthetic_gaussian,
    write_cifar10_records,
)
from spectrallab.linalg import Density, l2_norm, rms_norm


def fake_cifar(path, n=60, seed=0):
    r = np.random.default_rng(seed)
    labels = r.integers(2, 10, size=n).astype(np.uint8)
    labels[:20] = 0
    labels[20:40] = 1
    pixels = r.integers(0, 256, size=(n, CIFAR_PIXELS), dtype=np.uint8)
    write_cifar10_records(path, labels, pixels)
    return labels, pixels


def test_synthetic_inputs_have_unit_rms():
    b = synthetic_gaussian(64, 256, seed=0)
    r = [rms_norm(x) for x in b.inputs]
    assert min(r) >= 0.8 and max(r) <= 1.2
    assert b.density is Density.DENSE and b.targets.shape == (64, 1)
    assert set(np.unique(b.targets)) <= {-1.0, 1.0}


def test_synthetic_is_seeded():
    a, b = synthetic_gaussian(10, 8, 3), synthetic_gaussian(10, 8, 3)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.inputs, synthetic_gaussian(10, 8, 4).inputs)


def test_hyperplane_labels_are_balanced():
    B = 200
    for seed in range(20):
        pos = int(np.sum(synthetic_gaussian(B, 64, seed).targets > 0))
        assert abs(pos - B / 2) <= 2 * np.sqrt(B)


def test_batch_is_immutable_and_validated():
    b = synthetic_gaussian(4, 3, 0)
    with pytest.raises(ValueError):
        b.inputs[0, 0] = 1.0
    with pytest.raises(ValueError):
        Batch(np.zeros((3, 2)), np.zeros((2, 1)))
    assert b.subset(2).size == 2


def test_one_hot_examples():
    b = one_hot_batch(5, 1, seed=0)
    assert np.array_equal(b.inputs, np.ones((5, 1)))
    b = one_hot_batch(50, 16, seed=1)
    assert b.density is Density.SPARSE
    for x in b.inputs:
        assert l2_norm(x) == 1.0
        assert rms_norm(x) == pytest.approx(1 / 4)


def test_one_hot_indices_are_uniform():
    b = one_hot_batch(1600, 16, seed=2)
    counts = b.inputs.sum(axis=0)
    assert stats.chisquare(counts).pvalue > 0.001


def test_cifar_round_trip(tmp_path):
    path = tmp_path / "data_batch.bin"
    labels, pixels = fake_cifar(path)
    l2, p2 = read_cifar10_records(path)
    assert np.array_equal(labels, l2) and np.array_equal(pixels, p2)


def test_cifar_load_standardizes(tmp_path):
    path = tmp_path / "data_batch.bin"
    labels, pixels = fake_cifar(path)
    b = load_cifar10_binary(path, (0, 1), batch_size=40, seed=0)
    assert b.inputs.shape == (40, 3072)
    assert set(np.unique(b.targets)) == {-1.0, 1.0}
    assert np.mean([rms_norm(x) for x in b.inputs]) == pytest.approx(1.0, abs=0.2)
    # all 40 matching records were drawn, so every pixel position is exactly standardized
    assert np.allclose(b.inputs.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(b.inputs.std(axis=0), 1.0, atol=1e-12)
    x0 = pixels[np.flatnonzero(labels <= 1)].astype(float)
    first = (x0[0] - x0.mean(axis=0)) / x0.std(axis=0)
    assert np.allclose(b.inputs[0], first)


def test_cifar_sampling_is_seeded(tmp_path):
    path = tmp_path / "data_batch.bin"
    fake_cifar(path)
    a = load_cifar10_binary(path, batch_size=10, seed=1)
    assert np.array_equal(a.inputs, load_cifar10_binary(path, batch_size=10, seed=1).inputs)


def test_cifar_errors(tmp_path):
    path = tmp_path / "data_batch.bin"
    fake_cifar(path, n=3)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-10])
    with pytest.raises(FileFormatError, match=f"byte offset {2 * CIFAR_RECORD_BYTES}"):
        read_cifar10_records(tmp_path / "short.bin")
    bad = bytearray(raw)
    bad[CIFAR_RECORD_BYTES] = 42
    (tmp_path / "bad.bin").write_bytes(bytes(bad))
    with pytest.raises(FileFormatError, match="invalid label 42"):
        read_cifar10_records(tmp_path / "bad.bin")
    with pytest.raises(InsufficientSamplesError):
        load_cifar10_binary(path, batch_size=200)


def test_batch_cache_round_trip(tmp_path):
    for b in (synthetic_gaussian(7, 5, 0, out_dim=2), one_hot_batch(4, 9, 1)):
        save_batch(b, tmp_path / "b.bin")
        c = load_batch(tmp_path / "b.bin")
        assert np.array_equal(b.inputs, c.inputs) and np.array_equal(b.targets, c.targets)
        assert b.density is c.density


def test_batch_cache_errors(tmp_path):
    save_batch(synthetic_gaussian(3, 2, 0), tmp_path / "b.bin")
    raw = (tmp_path / "b.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-1])
    with pytest.raises(FileFormatError, match="byte offset"):
        load_batch(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FileFormatError, match="magic"):
        load_batch(tmp_path / "m.bin")
