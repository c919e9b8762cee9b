"""Dataset generators, transfer protocol, and file IO round trips."""
import numpy as np
import pytest

from dispgan.data import (Dataset, DatasetIOError, TransferProtocol, make_grid,
                          make_ring, make_transfer, read_csv, read_dataset,
                          ring_centers, write_csv, write_dataset)


def test_ring_single_mode_collapses_to_point():
    ds = make_ring(50, modes=1, radius=0.7, sigma=1e-12, seed=0)
    assert np.allclose(ds.x, [0.7, 0.0], atol=1e-6)


def test_ring_determinism():
    a = make_ring(100, 8, 0.5, 0.05, seed=123)
    b = make_ring(100, 8, 0.5, 0.05, seed=123)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.labels, b.labels)


def test_ring_mode_means_recover_centers():
    # sampling oracle: empirical per-mode means within 4*sigma/sqrt(n/modes)
    n, modes, sigma = 4000, 8, 0.05
    ds = make_ring(n, modes, 0.6, sigma, seed=7)
    centers = ring_centers(modes, 0.6)
    tol = 4 * sigma / np.sqrt(n / modes)
    for k in range(modes):
        emp = ds.x[ds.labels == k].mean(axis=0)
        assert np.linalg.norm(emp - centers[k]) < tol


def test_ring_label_balance():
    ds = make_ring(1001, 16, 0.6, 0.05, seed=1)
    counts = np.bincount(ds.labels, minlength=16)
    assert counts.max() - counts.min() <= 1


def test_grid_single_cell_and_mean_recovery():
    ds = make_grid(60, side=1, spacing=0.3, sigma=1e-12, seed=2)
    assert np.allclose(ds.x, 0.0, atol=1e-6)
    ds = make_grid(3600, side=3, spacing=0.5, sigma=0.04, seed=3)
    assert len(np.unique(ds.labels)) == 9
    assert np.array_equal(make_grid(64, 3, 0.5, 0.04, seed=4).x,
                          make_grid(64, 3, 0.5, 0.04, seed=4).x)


def test_transfer_splits_disjoint_and_budget_sweep_shares_test():
    proto = TransferProtocol(n_target=100)
    splits = make_transfer(proto, seed=11)
    train_rows = {row.tobytes() for row in splits.target_train.x}
    test_rows = {row.tobytes() for row in splits.target_test.x}
    val_rows = {row.tobytes() for row in splits.target_val.x}
    assert not train_rows & test_rows
    assert not train_rows & val_rows
    assert not val_rows & test_rows
    assert splits.target_val.n == 20  # 20% of 100

    other = make_transfer(TransferProtocol(n_target=500), seed=11)
    assert np.array_equal(other.target_test.x, splits.target_test.x)


def test_transfer_source_labels_balanced():
    splits = make_transfer(TransferProtocol(), seed=0)
    counts = np.bincount(splits.source.labels)
    assert counts.max() - counts.min() <= 1
    assert len(counts) == 16


def test_transfer_rejects_tiny_budget():
    with pytest.raises(ValueError, match="n_target"):
        make_transfer(TransferProtocol(n_target=1), seed=0)


def test_dataset_roundtrip_bytes(tmp_path):
    ds = make_ring(37, 5, 0.6, 0.04, seed=9)
    path = tmp_path / "ring.disp"
    write_dataset(path, ds)
    back = read_dataset(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.labels, ds.labels)
    # write-read-write produces identical bytes
    path2 = tmp_path / "ring2.disp"
    write_dataset(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_roundtrip_unlabeled(tmp_path):
    ds = Dataset(np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32))
    path = tmp_path / "u.disp"
    write_dataset(path, ds)
    back = read_dataset(path)
    assert np.array_equal(back.x, ds.x) and back.labels is None


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "bad.disp"
    path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxx")
    with pytest.raises(DatasetIOError, match="magic"):
        read_dataset(path)


def test_dataset_empty_file_errors(tmp_path):
    path = tmp_path / "empty.disp"
    path.write_bytes(b"")
    with pytest.raises(DatasetIOError):
        read_dataset(path)


def test_dataset_truncation_names_offset(tmp_path):
    ds = make_ring(10, 2, 0.6, 0.04, seed=0)
    path = tmp_path / "t.disp"
    write_dataset(path, ds)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 7])
    with pytest.raises(DatasetIOError, match="offset"):
        read_dataset(path)


def test_dataset_version_rejected(tmp_path):
    ds = make_ring(4, 2, 0.6, 0.04, seed=0)
    path = tmp_path / "v.disp"
    write_dataset(path, ds)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetIOError, match="version"):
        read_dataset(path)


def test_csv_roundtrip(tmp_path):
    ds = make_ring(25, 3, 0.5, 0.03, seed=5)
    path = tmp_path / "d.csv"
    write_csv(path, ds)
    back = read_csv(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.labels, ds.labels)


def test_glyphs_shape_range_and_determinism():
    from dispgan.data import make_glyphs
    ds = make_glyphs(60, classes=6, seed=4)
    assert ds.x.shape == (60, 64)
    assert ds.x.min() >= -1.0 and ds.x.max() <= 1.0
    assert np.array_equal(ds.x, make_glyphs(60, classes=6, seed=4).x)


def test_glyphs_classes_are_separable():
    from dispgan.data import make_glyphs
    ds = make_glyphs(240, classes=6, seed=5)
    x = ds.x64()
    means = np.array([x[ds.labels == k].mean(axis=0) for k in range(6)])
    d2 = ((x[:, None, :] - means[None]) ** 2).sum(-1)
    assert (np.argmin(d2, axis=1) == ds.labels).mean() >= 0.95
