"""Dataset construction: synthetic generators, CSV/IDX loaders, and encodings.

All functions return immutable :class:`Dataset` values and are deterministic
for a fixed seed.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataLoadError

__all__ = [
    "Dataset",
    "gen_two_moons",
    "gen_rectangles",
    "load_csv",
    "save_csv",
    "load_idx",
    "standardize",
    "one_hot",
]


@dataclass
class Dataset:
    """A feature matrix with dense integer class labels.

    Attributes
    ----------
    features : (n, d) float64 array
    labels : (n,) int array with values in ``[0, num_classes)``
    num_classes : number of classes, at least 2
    image_shape : optional ``(H, W, C)`` with ``H * W * C == d``
    feature_std : per-column standard deviation of the raw features,
        measured before any normalization and carried through
        :func:`standardize` so noise augmentation keeps its raw scale.
        Computed from ``features`` when not supplied.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: tuple[int, int, int] | None = None
    feature_std: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError("dataset needs at least one row and one column")
        if self.labels.shape != (n,):
            raise ValueError("labels must be a vector with one entry per row")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        if self.image_shape is not None:
            h, w, c = self.image_shape
            if h * w * c != d:
                raise ValueError(f"image_shape {self.image_shape} does not match d={d}")
            self.image_shape = (int(h), int(w), int(c))
        if self.feature_std is None:
            self.feature_std = self.features.std(axis=0)
        else:
            self.feature_std = np.ascontiguousarray(self.feature_std, dtype=np.float64)
            if self.feature_std.shape != (d,):
                raise ValueError("feature_std must have one entry per column")
            if np.any(self.feature_std < 0):
                raise ValueError("feature_std entries must be non-negative")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self.feature_std.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def gen_two_moons(n: int, noise_std: float, seed: int) -> Dataset:
    """Two interleaved half-circle classes with additive Gaussian noise.

    Class 0 is the upper unit arc ``(cos t, sin t)``; class 1 is the arc
    point-reflected and offset, ``(1 - cos t, 0.5 - sin t)``; both with
    ``t`` evenly spaced over ``[0, pi]``. Class counts differ by at most 1.
    """
    if n < 2:
        raise ValueError("gen_two_moons needs n >= 2")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    n_outer = n // 2
    n_inner = n - n_outer
    t_outer = np.linspace(0.0, np.pi, n_outer)
    t_inner = np.linspace(0.0, np.pi, n_inner)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    features = np.vstack([outer, inner])
    rng = np.random.default_rng(seed)
    # scale=0 is valid for rng.normal and leaves the arcs exact
    features = features + rng.normal(0.0, noise_std, size=features.shape)
    labels = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    return Dataset(features, labels, num_classes=2)


def gen_rectangles(n: int, seed: int) -> Dataset:
    """Three-class dataset tiling the unit square into vertical thirds.

    Class ``c`` occupies ``x in [c/3, (c+1)/3)`` with ``y`` uniform in
    ``[0, 1]``; class counts differ by at most 1.
    """
    if n < 3:
        raise ValueError("gen_rectangles needs n >= 3")
    rng = np.random.default_rng(seed)
    counts = [n // 3 + (1 if c < n % 3 else 0) for c in range(3)]
    blocks = []
    labels = []
    for c, m in enumerate(counts):
        x = rng.uniform(c / 3.0, (c + 1) / 3.0, size=m)
        y = rng.uniform(0.0, 1.0, size=m)
        blocks.append(np.column_stack([x, y]))
        labels.append(np.full(m, c, dtype=np.int64))
    return Dataset(np.vstack(blocks), np.concatenate(labels), num_classes=3)


def load_csv(path, label_column: str = "label") -> Dataset:
    """Load a headered CSV with numeric feature columns and an integer label column.

    Labels are remapped to a dense ``[0, l)`` range preserving numeric order.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataLoadError(f"cannot read dataset file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataLoadError(f"{path}: empty file, missing header row")
        if label_column not in header:
            raise DataLoadError(f"{path}: label column {label_column!r} not found in header {header}")
        label_idx = header.index(label_column)
        feature_names = [name for i, name in enumerate(header) if i != label_idx]
        rows = []
        raw_labels = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataLoadError(f"{path}: line {line_no} has {len(row)} cells, expected {len(header)}")
            feats = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    try:
                        raw_labels.append(int(cell))
                    except ValueError:
                        raise DataLoadError(
                            f"{path}: non-integer label {cell!r} at line {line_no}, column {label_column!r}"
                        ) from None
                else:
                    try:
                        feats.append(float(cell))
                    except ValueError:
                        name = header[i]
                        raise DataLoadError(
                            f"{path}: non-numeric value {cell!r} at line {line_no}, column {name!r}"
                        ) from None
            rows.append(feats)
        if not rows:
            raise DataLoadError(f"{path}: no data rows")
        if len(feature_names) < 1:
            raise DataLoadError(f"{path}: no feature columns besides {label_column!r}")
    distinct = sorted(set(raw_labels))
    if len(distinct) < 2:
        raise DataLoadError(f"{path}: dataset defines only one class ({distinct[0]})")
    remap = {v: i for i, v in enumerate(distinct)}
    labels = np.array([remap[v] for v in raw_labels], dtype=np.int64)
    return Dataset(np.array(rows, dtype=np.float64), labels, num_classes=len(distinct))


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset as a headered CSV that :func:`load_csv` round-trips exactly.

    Feature values are written with ``repr`` so text round-trips are bit-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.d)] + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


_IDX_IMAGE_RANK = 3
_IDX_LABEL_RANK = 1


def _idx_read(fh, count: int, path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise DataLoadError(f"truncated IDX file {path}: expected {count} bytes for {what}")
    return data


def _idx_header(fh, path, expected_rank: int) -> tuple[int, ...]:
    magic = _idx_read(fh, 4, path, "magic")
    if magic[:2] != b"\x00\x00" or magic[2] != 0x08:
        raise DataLoadError(f"{path}: bad IDX magic {magic.hex()}, expected 0000 08 for u8 data")
    if magic[3] != expected_rank:
        raise DataLoadError(f"{path}: IDX rank mismatch, expected {expected_rank}, got {magic[3]}")
    dims = struct.unpack(f">{expected_rank}I", _idx_read(fh, 4 * expected_rank, path, "dimension sizes"))
    return dims


def load_idx(images_path, labels_path) -> Dataset:
    """Load a big-endian IDX image/label file pair (u8 rank-3 images, u8 rank-1 labels).

    Pixels are scaled to ``[0, 1]`` as ``value / 255``; ``image_shape`` is
    ``(H, W, 1)``.
    """
    try:
        img_fh = open(images_path, "rb")
    except OSError as exc:
        raise DataLoadError(f"cannot read IDX file {images_path}: {exc}") from exc
    with img_fh:
        n, h, w = _idx_header(img_fh, images_path, _IDX_IMAGE_RANK)
        pixels = _idx_read(img_fh, n * h * w, images_path, "pixel data")
        if img_fh.read(1):
            raise DataLoadError(f"{images_path}: trailing bytes after pixel data")
    try:
        lab_fh = open(labels_path, "rb")
    except OSError as exc:
        raise DataLoadError(f"cannot read IDX file {labels_path}: {exc}") from exc
    with lab_fh:
        (n_labels,) = _idx_header(lab_fh, labels_path, _IDX_LABEL_RANK)
        label_bytes = _idx_read(lab_fh, n_labels, labels_path, "label data")
        if lab_fh.read(1):
            raise DataLoadError(f"{labels_path}: trailing bytes after label data")
    if n_labels != n:
        raise DataLoadError(f"IDX count mismatch: {n} images vs {n_labels} labels")
    if n < 1:
        raise DataLoadError(f"{images_path}: empty IDX file")
    features = np.frombuffer(pixels, dtype=np.uint8).reshape(n, h * w).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    num_classes = max(int(labels.max()) + 1, 2)
    return Dataset(features, labels, num_classes=num_classes, image_shape=(h, w, 1))


def standardize(dataset: Dataset) -> Dataset:
    """Center each feature column at 0 and scale it to unit standard deviation.

    Zero-variance columns are left centered at 0. The returned dataset keeps
    the input's ``feature_std`` untouched so the raw noise scale survives.
    """
    if dataset.n < 2:
        raise ValueError("standardize needs at least 2 rows")
    mean = dataset.features.mean(axis=0)
    std = dataset.features.std(axis=0)
    scaled = dataset.features - mean
    nonzero = std > 0
    scaled[:, nonzero] /= std[nonzero]
    return Dataset(
        scaled,
        dataset.labels,
        dataset.num_classes,
        image_shape=dataset.image_shape,
        feature_std=dataset.feature_std,
    )


def one_hot(label: int, num_classes: int) -> np.ndarray:
    """Unit basis vector for ``label`` of length ``num_classes``."""
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range [0, {num_classes})")
    vec = np.zeros(num_classes)
    vec[label] = 1.0
    return vec
