"""Dataset loaders (MNIST IDX, CIFAR-10 binary), noise corruption and synthetic data.

Images are held as ``float32`` arrays of shape ``(N, H, W, C)`` scaled by 1/255.
No mean subtraction happens here; standardization is the network's business.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_UBYTE = 0x08
_MAX_IDX_ELEMENTS = 1 << 34

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataFormatError(ValueError):
    """File contents do not follow the expected binary layout."""


class DataLengthError(DataFormatError):
    """Declared sizes disagree with the number of bytes actually present."""


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and not (0 <= self.labels.min() and self.labels.max() < self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> Dataset:
        return replace(self, images=self.images[indices], labels=self.labels[indices])


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path: str | Path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataLengthError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08X}, expected 0x{expected_magic:08X}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != _IDX_UBYTE:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08X}, only unsigned-byte IDX is supported")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataLengthError(f"{path}: truncated header, {ndim} dimensions need {header} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_IDX_ELEMENTS:
        raise DataFormatError(f"{path}: declared dimensions {dims} are implausibly large")
    if len(raw) - header != count:
        raise DataLengthError(f"{path}: dimensions {dims} need {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("only uint8 arrays can be written as IDX")
    magic = (_IDX_UBYTE << 8) | array.ndim
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(array).tobytes())


def load_idx(images_path: str | Path, labels_path: str | Path, split: str = "train") -> Dataset:
    """Load an MNIST-style image/label IDX pair."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DataLengthError(f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels")
    pixels = images.astype(np.float32)[..., None] / np.float32(255.0)
    return Dataset(pixels, labels.astype(np.int64), split, max(10, int(labels.max(initial=0)) + 1))


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_idx(ds: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a single-channel dataset as an IDX pair (pixels re-quantized to bytes)."""
    if ds.images.ndim != 4 or ds.images.shape[3] != 1:
        raise ValueError("IDX export needs single-channel (N, H, W, 1) images")
    write_idx(images_path, to_uint8(ds.images[..., 0]))
    write_idx(labels_path, ds.labels.astype(np.uint8))


def load_mnist_dir(directory: str | Path, split: str = "train") -> Dataset:
    """Load the standard MNIST file names from ``directory`` (plain or .gz)."""
    directory = Path(directory)
    paths = []
    for name in MNIST_FILES[split]:
        p = directory / name
        if not p.exists() and (directory / (name + ".gz")).exists():
            p = directory / (name + ".gz")
        paths.append(p)
    return load_idx(*paths, split=split)


def _parse_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = _read_bytes(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"{path}: {len(raw)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataFormatError(f"{path}: label {labels.max()} out of range; file is misaligned")
    # channel-planar R, G, B -> channels-last
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return pixels, labels


def load_cifar10_binary(directory: str | Path, split: str = "train") -> Dataset:
    """Load the CIFAR-10 binary batches for ``split`` from ``directory``."""
    directory = Path(directory)
    names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    parts = [_parse_cifar_file(directory / n) for n in names]
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([lab for _, lab in parts])
    return Dataset(pixels.astype(np.float32) / np.float32(255.0), labels, split)


def write_cifar_file(path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write (N, 32, 32, 3) images in the 3073-byte record layout."""
    pix = to_uint8(images).transpose(0, 3, 1, 2).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(rec.tobytes())


def corrupt_gaussian(ds: Dataset, sigma: float, seed: int) -> Dataset:
    """Add N(0, sigma^2) noise to every pixel. Values are deliberately not clamped."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return replace(ds, images=ds.images.copy())
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(ds.images.shape) * sigma
    return replace(ds, images=(ds.images + noise).astype(ds.images.dtype))


def synth_blobs(n_per_class: int, num_classes: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around uniform random centers in [0, 1]^dim, shaped (N, 1, 1, dim)."""
    if min(n_per_class, num_classes, dim) < 1:
        raise ValueError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(num_classes, dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    points = centers[labels] + spread * rng.standard_normal((len(labels), dim))
    return Dataset(points.astype(np.float32).reshape(-1, 1, 1, dim), labels.astype(np.int64),
                   "train", num_classes)


def load_digits_split(test_fraction: float = 0.25, seed: int = 0) -> tuple[Dataset, Dataset]:
    """The 8x8 handwritten digits bundled with scikit-learn, as a stratified train/test pair.

    Pixel intensities 0..16 are re-quantized to bytes so the data survives a trip
    through IDX files unchanged.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    u8 = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    images = u8.astype(np.float32)[..., None] / np.float32(255.0)
    labels = digits.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(10):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        test_idx.extend(members[: int(round(test_fraction * len(members)))])
    test_mask = np.zeros(len(labels), dtype=bool)
    test_mask[test_idx] = True
    train = Dataset(images[~test_mask], labels[~test_mask], "train")
    test = Dataset(images[test_mask], labels[test_mask], "test")
    return train, test


def export_digits_idx(directory: str | Path, test_fraction: float = 0.25, seed: int = 0) -> dict[str, str]:
    """Write the digits split under MNIST's file names so MNIST-path configs can use it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train, test = load_digits_split(test_fraction, seed)
    paths = {}
    for ds in (train, test):
        img_name, lab_name = MNIST_FILES[ds.split]
        save_idx(ds, directory / img_name, directory / lab_name)
        paths[f"{ds.split}_images"] = str(directory / img_name)
        paths[f"{ds.split}_labels"] = str(directory / lab_name)
    return paths
