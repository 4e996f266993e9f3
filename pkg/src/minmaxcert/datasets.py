"""Labelled image data for the classification demo: IDX parsing, filtering, pooling, synthetic sets."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from os import PathLike

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Points (N, d) with pixel values in [0, 1] and integer labels (N,).

    ``shape`` keeps the image geometry (rows, cols) when there is one.
    """

    points: np.ndarray
    labels: np.ndarray
    shape: tuple[int, ...] | None = None
    sensitive_label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, int(np.prod(self.shape)) if self.shape else 0)
        lab = np.asarray(self.labels, dtype=np.int64).ravel()
        if pts.ndim != 2 or pts.shape[0] != lab.shape[0]:
            raise ValueError(f"points {pts.shape} and labels {lab.shape} disagree")
        if pts.size and (pts.min() < 0 or pts.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.labels)

    def images(self) -> np.ndarray:
        if self.shape is None:
            raise ValueError("set has no image geometry")
        return self.points.reshape((len(self),) + tuple(self.shape))

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.points[idx], self.labels[idx], self.shape, self.sensitive_label)

    def signed_targets(self) -> np.ndarray:
        """+1 for the sensitive class, -1 otherwise."""
        if self.sensitive_label is None:
            raise ValueError("no sensitive label recorded")
        return np.where(self.labels == self.sensitive_label, 1.0, -1.0)


def _header(data: bytes, magic: int, ndim: int, what: str) -> tuple[tuple[int, ...], int]:
    need = 4 + 4 * ndim
    if len(data) < need:
        raise IDXFormatError(f"{what}: header needs {need} bytes, got {len(data)}")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise IDXFormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:need])
    expected = int(np.prod(dims)) if dims else 0
    actual = len(data) - need
    if actual != expected:
        raise IDXFormatError(f"{what}: payload has {actual} bytes, expected {expected} for dims {dims}")
    return dims, need


def parse_idx_images(data: bytes) -> np.ndarray:
    """uint8 array of shape (count, rows, cols) from an IDX3 image file."""
    dims, off = _header(data, IMAGE_MAGIC, 3, "images")
    return np.frombuffer(data, dtype=np.uint8, offset=off).reshape(dims).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    dims, off = _header(data, LABEL_MAGIC, 1, "labels")
    return np.frombuffer(data, dtype=np.uint8, offset=off).astype(np.int64)


def write_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    return struct.pack(">4I", IMAGE_MAGIC, *images.shape) + images.tobytes()


def write_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()


def scale_pixels(images: np.ndarray) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) / 255.0


def load_idx(images_path: str | PathLike, labels_path: str | PathLike) -> LabeledSet:
    with open(images_path, "rb") as fh:
        imgs = parse_idx_images(fh.read())
    with open(labels_path, "rb") as fh:
        labels = parse_idx_labels(fh.read())
    if len(imgs) != len(labels):
        raise IDXFormatError(f"{len(imgs)} images but {len(labels)} labels")
    return LabeledSet(scale_pixels(imgs).reshape(len(imgs), -1), labels, imgs.shape[1:])


def filter_binary(data: LabeledSet, class_a: int = 3, class_b: int = 8) -> LabeledSet:
    """Keep two classes; ``class_a`` becomes the sensitive class."""
    keep = np.flatnonzero((data.labels == class_a) | (data.labels == class_b))
    out = LabeledSet(data.points[keep], data.labels[keep], data.shape, class_a)
    if len(out) == 0:
        raise ValueError(f"no samples of class {class_a} or {class_b}")
    return out


def downsample(data: LabeledSet, factor) -> LabeledSet:
    """Mean-pool images by ``factor`` (int, or (row_factor, col_factor))."""
    fr, fc = (factor, factor) if np.isscalar(factor) else tuple(factor)
    if data.shape is None or len(data.shape) != 2:
        raise ValueError("downsampling needs 2-d image geometry")
    rows, cols = data.shape
    if rows % fr or cols % fc:
        raise ValueError(f"image shape {data.shape} is not divisible by factor {(fr, fc)}")
    if fr == fc == 1:
        return data
    imgs = data.images().reshape(len(data), rows // fr, fr, cols // fc, fc)
    pooled = imgs.mean(axis=(2, 4))
    return LabeledSet(np.clip(pooled.reshape(len(data), -1), 0.0, 1.0), data.labels,
                      (rows // fr, cols // fc), data.sensitive_label)


def synth_two_gaussians(seed: int, n: int, d: int, separation: float, scale: float = 1.0) -> LabeledSet:
    """Two spherical clusters whose means differ by ``separation`` along the first axis.

    Labels are 1 and 0; coordinates are an affine image of the Gaussian
    samples squeezed into [0, 1] by clipping.
    """
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2 == 0).astype(np.int64)
    means = np.zeros((n, d))
    means[:, 0] = np.where(labels == 1, separation / 2, -separation / 2)
    raw = means + scale * rng.standard_normal((n, d))
    span = separation + 8 * scale
    pts = np.clip(0.5 + raw / span, 0.0, 1.0)
    return LabeledSet(pts.reshape(n, d), labels, None, 1)


def load_digits_3v8() -> LabeledSet:
    """Bundled 8x8 handwritten digits (scikit-learn), classes 3 vs 8, scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    data = LabeledSet(raw.data / 16.0, raw.target, (8, 8))
    return filter_binary(data, 3, 8)


def train_test_split(data: LabeledSet, test_fraction: float, seed: int) -> tuple[LabeledSet, LabeledSet]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    cut = int(round(len(data) * (1 - test_fraction)))
    return data.subset(np.sort(order[:cut])), data.subset(np.sort(order[cut:]))


def export_csv(data: LabeledSet, path: str | PathLike, targets=None) -> None:
    """Rows x_1, ..., x_d, target (defaults to the labels)."""
    targets = data.labels if targets is None else np.asarray(targets)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for x, t in zip(data.points, targets):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t))])


def read_csv(path: str | PathLike) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or widths.pop() < 2:
        raise ValueError(f"{path}: rows must all have d + 1 >= 2 fields")
    arr = np.array(rows)
    return arr[:, :-1], arr[:, -1]
