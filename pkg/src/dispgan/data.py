"""Synthetic datasets, the source->target transfer protocol, and file IO.

Datasets are small dense float32 matrices in [-1, 1] with optional integer
labels.  The binary file format is little-endian: magic ``DISP``, u32
version, u32 n, u32 p, u8 has_labels, n*p float32 row-major, then n u32
labels when present.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DISP"
FORMAT_VERSION = 1


class DatasetIOError(ValueError):
    """Malformed dataset file."""


@dataclass
class Dataset:
    x: np.ndarray                      # (n, p) float32
    labels: np.ndarray | None = None   # (n,) uint32
    value_range: tuple = (-1.0, 1.0)
    split: str = "target_train"

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
            if len(self.labels) != len(self.x):
                raise ValueError("labels length must match row count")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def x64(self) -> np.ndarray:
        return self.x.astype(np.float64)


def ring_centers(modes: int, radius: float, phase: float = 0.0) -> np.ndarray:
    angles = phase + 2.0 * np.pi * np.arange(modes) / modes
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def grid_centers(side: int, spacing: float) -> np.ndarray:
    offs = (np.arange(side) - (side - 1) / 2.0) * spacing
    xx, yy = np.meshgrid(offs, offs)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _mixture_dataset(centers: np.ndarray, n: int, sigma: float, seed: int,
                     split: str) -> Dataset:
    # round-robin mode assignment keeps label counts balanced within +-1
    rng = np.random.default_rng(seed)
    modes = len(centers)
    labels = np.arange(n) % modes
    x = centers[labels] + rng.normal(0.0, sigma, size=(n, 2))
    return Dataset(x.astype(np.float32), labels.astype(np.uint32), split=split)


def make_ring(n: int, modes: int, radius: float, sigma: float, seed: int,
              phase: float = 0.0, split: str = "target_train") -> Dataset:
    """Equal-weight Gaussian mixture on a circle; labels are mode indices."""
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return _mixture_dataset(ring_centers(modes, radius, phase), n, sigma, seed, split)


def make_grid(n: int, side: int, spacing: float, sigma: float, seed: int,
              split: str = "target_train") -> Dataset:
    """Equal-weight Gaussian mixture on a side x side grid."""
    if side < 1:
        raise ValueError("side must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return _mixture_dataset(grid_centers(side, spacing), n, sigma, seed, split)


def make_glyphs(n: int, classes: int, seed: int, jitter: float = 0.35,
                split: str = "target_train") -> Dataset:
    """Procedural 8x8 grayscale blob glyphs, flattened to 64-dim rows.

    Each class is a soft blob at a class-specific grid position and width;
    per-sample position jitter provides within-class variation.  Values
    are in [-1, 1]; labels are class indices.
    """
    if classes < 1:
        raise ValueError("classes must be >= 1")
    rng = np.random.default_rng(seed)
    side = 8
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    angles = 2.0 * np.pi * np.arange(classes) / classes
    cx = 3.5 + 2.2 * np.cos(angles)
    cy = 3.5 + 2.2 * np.sin(angles)
    width = 0.9 + 0.5 * (np.arange(classes) % 3) / 2.0
    labels = np.arange(n) % classes
    out = np.empty((n, side * side), dtype=np.float64)
    for i, k in enumerate(labels):
        jx, jy = rng.normal(0.0, jitter, size=2)
        blob = np.exp(-(((xx - cx[k] - jx) ** 2 + (yy - cy[k] - jy) ** 2)
                        / (2.0 * width[k] ** 2)))
        out[i] = (2.0 * blob - 1.0).ravel()
    return Dataset(out.astype(np.float32), labels.astype(np.uint32), split=split)


@dataclass
class TransferProtocol:
    """Disjoint source/target generation parameters for transfer runs.

    The source is a rich labeled ring for extractor pretraining; the target
    is a smaller ring at a different radius and rotated phase.  The test
    split is generated from a budget-independent stream, so a budget sweep
    reuses the same test set.
    """
    source_modes: int = 16
    source_n: int = 5000
    source_radius: float = 0.65
    source_sigma: float = 0.05
    target_modes: int = 8
    target_radius: float = 0.55
    target_phase: float = float(np.pi / 16.0)
    target_sigma: float = 0.035
    n_target: int = 128
    val_frac: float = 0.2
    test_n: int = 1000

    def target_centers(self) -> np.ndarray:
        return ring_centers(self.target_modes, self.target_radius, self.target_phase)


@dataclass
class TransferSplits:
    source: Dataset
    target_train: Dataset
    target_val: Dataset
    target_test: Dataset
    protocol: TransferProtocol = field(default_factory=TransferProtocol)


def make_transfer(protocol: TransferProtocol, seed: int) -> TransferSplits:
    if protocol.n_target < 2:
        raise ValueError(f"n_target must be >= 2, got {protocol.n_target}")
    ss = np.random.SeedSequence(seed)
    s_source, s_test, s_train, s_val = [int(c.generate_state(1)[0]) for c in ss.spawn(4)]
    source = make_ring(protocol.source_n, protocol.source_modes,
                       protocol.source_radius, protocol.source_sigma,
                       s_source, split="source")
    test = make_ring(protocol.test_n, protocol.target_modes, protocol.target_radius,
                     protocol.target_sigma, s_test, phase=protocol.target_phase,
                     split="target_test")
    train = make_ring(protocol.n_target, protocol.target_modes, protocol.target_radius,
                      protocol.target_sigma, s_train, phase=protocol.target_phase,
                      split="target_train")
    n_val = max(2, int(round(protocol.val_frac * protocol.n_target)))
    val = make_ring(n_val, protocol.target_modes, protocol.target_radius,
                    protocol.target_sigma, s_val, phase=protocol.target_phase,
                    split="target_val")
    return TransferSplits(source, train, val, test, protocol)


# ---------------------------------------------------------------------------
# binary + CSV IO


def write_dataset(path, ds: Dataset) -> None:
    has_labels = ds.labels is not None
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIB", FORMAT_VERSION, ds.n, ds.p, int(has_labels)))
        fh.write(ds.x.astype("<f4").tobytes())
        if has_labels:
            fh.write(ds.labels.astype("<u4").tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise DatasetIOError(f"{path}: bad magic at offset 0")
    if len(raw) < 17:
        raise DatasetIOError(f"{path}: truncated header at offset {len(raw)}")
    version, n, p, has_labels = struct.unpack_from("<IIIB", raw, 4)
    if version != FORMAT_VERSION:
        raise DatasetIOError(f"{path}: unsupported version {version} at offset 4")
    off = 17
    nbytes = n * p * 4
    if len(raw) < off + nbytes:
        raise DatasetIOError(f"{path}: truncated payload at offset {len(raw)}")
    x = np.frombuffer(raw, dtype="<f4", count=n * p, offset=off).reshape(n, p)
    off += nbytes
    labels = None
    if has_labels:
        if len(raw) < off + n * 4:
            raise DatasetIOError(f"{path}: truncated labels at offset {len(raw)}")
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off)
        off += n * 4
    if len(raw) != off:
        raise DatasetIOError(f"{path}: {len(raw) - off} trailing bytes at offset {off}")
    return Dataset(x.copy(), None if labels is None else labels.copy())


def write_csv(path, ds: Dataset) -> None:
    if ds.p != 2:
        raise ValueError("CSV export is for 2-D datasets")
    with open(path, "w") as fh:
        if ds.labels is not None:
            fh.write("x0,x1,label\n")
            for row, lab in zip(ds.x, ds.labels):
                fh.write(f"{float(row[0])!r},{float(row[1])!r},{int(lab)}\n")
        else:
            fh.write("x0,x1\n")
            for row in ds.x:
                fh.write(f"{float(row[0])!r},{float(row[1])!r}\n")


def read_csv(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip()
        if header not in ("x0,x1", "x0,x1,label"):
            raise DatasetIOError(f"{path}: unexpected CSV header {header!r}")
        has_labels = header.endswith("label")
        xs, labels = [], []
        for line in fh:
            parts = line.strip().split(",")
            xs.append([float(parts[0]), float(parts[1])])
            if has_labels:
                labels.append(int(parts[2]))
    x = np.array(xs, dtype=np.float32)
    return Dataset(x, np.array(labels, dtype=np.uint32) if has_labels else None)
