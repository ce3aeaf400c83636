"""Dataset ingestion, synthetic generators, preprocessing, and batching.

Real datasets come from MNIST IDX and CIFAR-10 binary files on disk.  Two
synthetic generators cover offline work: Gaussian ``blobs`` for quick
sanity checks, and ``shapes`` — ten procedural glyph classes rendered at
random pose — as a drop-in image-classification substrate when no dataset
files are available.

Pixel values live in [0, 1] throughout (the augmentation stack assumes
this); optional per-channel standardization is available for the model
input side via :func:`channel_stats`/:func:`standardize`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import smooth3x3


class FormatError(ValueError):
    """File does not look like the expected format (bad magic and such)."""


class LengthError(ValueError):
    """File or record lengths are inconsistent with the format."""


class LabelRangeError(ValueError):
    """A label byte falls outside the class range of the dataset."""


MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_LEN = 3073

SHAPE_CLASS_NAMES = (
    "square", "hollow_square", "disk", "ring", "plus",
    "cross", "h_bars", "v_bars", "triangle", "dots",
)


@dataclass
class Dataset:
    """Images, integer labels, class count, and a split tag."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise LengthError(
                f"{self.images.shape[0]} images but "
                f"{self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise LabelRangeError(
                f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise LengthError(f"{path}: too short for an IDX header")
    magic = int.from_bytes(blob[:4], "big")
    if magic != expected_magic:
        raise FormatError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise LengthError(f"{path}: truncated dimension table")
    dims = [int.from_bytes(blob[4 + 4 * i:8 + 4 * i], "big")
            for i in range(ndim)]
    count = int(np.prod(dims)) if dims else 0
    if len(blob) != header + count:
        raise LengthError(
            f"{path}: payload is {len(blob) - header} bytes, "
            f"dimensions imply {count}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse the big-endian IDX pair into a [0,1] grayscale dataset."""
    raw_images = _read_idx(images_path, MNIST_IMAGE_MAGIC)
    raw_labels = _read_idx(labels_path, MNIST_LABEL_MAGIC)
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise LengthError(
            f"{raw_images.shape[0]} images but {raw_labels.shape[0]} labels")
    images = raw_images.astype(np.float64)[..., None] / 255.0
    return Dataset(images=images, labels=raw_labels.astype(np.int64),
                   n_classes=10, split=split)


def load_cifar10_bin(paths, split: str = "train") -> Dataset:
    """Parse 3073-byte CIFAR-10 records (label byte + channel-planar RGB)."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    all_images, all_labels = [], []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) == 0 or len(blob) % CIFAR_RECORD_LEN != 0:
            raise LengthError(
                f"{path}: size {len(blob)} is not a multiple of "
                f"{CIFAR_RECORD_LEN}")
        records = np.frombuffer(blob, dtype=np.uint8).reshape(
            -1, CIFAR_RECORD_LEN)
        labels = records[:, 0]
        if labels.max() >= 10:
            raise LabelRangeError(
                f"{path}: label byte {labels.max()} out of range for C=10")
        pixels = records[:, 1:].reshape(-1, 3, 32, 32)
        all_images.append(pixels.transpose(0, 2, 3, 1).astype(np.float64)
                          / 255.0)
        all_labels.append(labels.astype(np.int64))
    return Dataset(images=np.concatenate(all_images),
                   labels=np.concatenate(all_labels),
                   n_classes=10, split=split)


def gen_blobs(n: int, c: int, dim: int, spread: float, seed: int,
              split: str = "train") -> Dataset:
    """Gaussian clusters around basis-vector means, as square pseudo-images.

    Labels are assigned round-robin, so classes are exactly balanced when
    ``c`` divides ``n``.
    """
    if n < c:
        raise ValueError(f"need n >= C, got n={n}, C={c}")
    side = math.isqrt(dim)
    if side * side != dim:
        raise ValueError(f"dim must be a perfect square, got {dim}")
    if c > dim:
        raise ValueError(f"need C <= dim for separable means, got C={c}")
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.arange(n, dtype=np.int64) % c
    means = np.eye(c, dim)
    raw = means[labels] + spread * rng.normal(size=(n, dim))
    images = np.clip(0.5 + 0.4 * raw, 0.0, 1.0).reshape(n, side, side, 1)
    return Dataset(images=images, labels=labels, n_classes=c, split=split)


def _shape_mask(cls: int, u: np.ndarray, v: np.ndarray, s: float):
    """Boolean glyph mask in canonical (pose-free) coordinates."""
    if cls == 0:                                    # square
        return np.maximum(np.abs(u), np.abs(v)) <= s
    if cls == 1:                                    # hollow square
        m = np.maximum(np.abs(u), np.abs(v))
        return (m <= s) & (m >= 0.55 * s)
    r2 = u * u + v * v
    if cls == 2:                                    # disk
        return r2 <= s * s
    if cls == 3:                                    # ring
        return (r2 <= s * s) & (r2 >= (0.55 * s) ** 2)
    if cls == 4:                                    # plus
        return ((np.abs(u) <= 0.3 * s) & (np.abs(v) <= s)) \
            | ((np.abs(v) <= 0.3 * s) & (np.abs(u) <= s))
    if cls == 5:                                    # diagonal cross
        near_diag = (np.abs(u - v) <= 0.42 * s) | (np.abs(u + v) <= 0.42 * s)
        return near_diag & (np.maximum(np.abs(u), np.abs(v)) <= s)
    if cls == 6:                                    # two horizontal bars
        return (np.abs(v) <= s) & (np.abs(np.abs(u) - 0.55 * s) <= 0.22 * s)
    if cls == 7:                                    # two vertical bars
        return (np.abs(u) <= s) & (np.abs(np.abs(v) - 0.55 * s) <= 0.22 * s)
    if cls == 8:                                    # triangle
        return (u >= -s) & (u <= s) & (np.abs(v) <= 0.5 * (s - u))
    if cls == 9:                                    # three dots
        d = 0.62 * s
        r = (0.34 * s) ** 2
        return ((u + d) ** 2 + (v + d) ** 2 <= r) \
            | ((u + d) ** 2 + (v - d) ** 2 <= r) \
            | ((u - d) ** 2 + v ** 2 <= r)
    raise ValueError(f"no glyph class {cls}")


def gen_shapes(n: int, seed: int, split: str = "train",
               side: int = 28) -> Dataset:
    """Ten procedural glyph classes rendered at random pose.

    Each sample draws a pose (rotation within ±21 degrees — safely below
    the 45-degree symmetry that would confuse the two cross-shaped
    classes — translation, shear, size), a photometric state (polarity
    coin, contrast span, gamma curve, optional bit-depth quantization,
    up to two smoothing passes), and sometimes an occluding patch, then
    renders its class glyph analytically and adds pixel noise.  Class
    identity is purely geometric, so the distribution is approximately
    closed under the usual augmentation families (euclidean moves,
    intensity remappings, occlusion): transformed copies of one sample
    look like other valid samples, the same property natural photographs
    have.  Train and test splits use disjoint random substreams of the
    same seed.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.arange(n, dtype=np.int64) % 10
    rng.shuffle(labels)
    half = (side - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(side) - half, np.arange(side) - half,
                         indexing="ij")
    images = np.empty((n, side, side, 1))
    for i in range(n):
        theta = math.radians(rng.uniform(-15.0, 15.0))
        dy, dx = rng.uniform(-3.0, 3.0, size=2)
        shear = rng.uniform(-0.15, 0.15)
        s = rng.uniform(0.18, 0.28) * side
        lo = rng.uniform(0.0, 0.10)
        hi = rng.uniform(0.60, 1.0)
        fg, bg = (hi, lo) if rng.random() < 0.5 else (lo, hi)
        gamma = rng.uniform(0.7, 1.4)
        blur_passes = int(rng.integers(3))
        occlude = rng.random() < 0.3
        occ_side = rng.uniform(0.15, 0.35) * side
        occ_y, occ_x = rng.uniform(0.0, side, size=2)
        quantize = rng.random() < 0.2
        levels = 2 ** int(rng.integers(1, 4))
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        u = cos_t * (yy - dy) + sin_t * (xx - dx)
        v = -sin_t * (yy - dy) + cos_t * (xx - dx)
        u = u + shear * v
        mask = _shape_mask(int(labels[i]), u, v, s)
        img = bg + (fg - bg) * mask.astype(np.float64)
        img = np.clip(img, 0.0, 1.0) ** gamma
        if occlude:
            ha = occ_side / 2.0
            rows = np.abs(np.arange(side) - occ_y) <= ha
            cols = np.abs(np.arange(side) - occ_x) <= ha
            img[np.ix_(rows, cols)] = bg
        if quantize:
            img = np.round(img * (levels - 1)) / (levels - 1)
        for _ in range(blur_passes):
            img = smooth3x3(img[:, :, None])[:, :, 0]
        img += 0.06 * rng.normal(size=(side, side))
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images=images, labels=labels, n_classes=10, split=split)


def baseline_preprocess(img: np.ndarray, dataset_kind: str,
                        rng: np.random.Generator) -> np.ndarray:
    """Standard per-sample train-time jitter, before any policy runs.

    CIFAR style: mirror with probability one half, zero-pad 4, random
    crop back to size.  MNIST style: zero-pad 2 and random crop, no flip.
    Blobs pass through untouched.  Random draws happen in a fixed order
    (flip coin, row offset, column offset).
    """
    if dataset_kind == "blobs":
        return img
    if dataset_kind == "cifar":
        pad = 4
        if rng.random() < 0.5:
            img = img[:, ::-1, :]
    elif dataset_kind == "mnist":
        pad = 2
    else:
        raise ValueError(f"unknown dataset kind {dataset_kind!r}")
    h, w = img.shape[:2]
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)))
    top = int(rng.integers(2 * pad + 1))
    left = int(rng.integers(2 * pad + 1))
    return padded[top:top + h, left:left + w, :]


@dataclass(frozen=True)
class BatchPlan:
    """Mini-batch geometry and the shuffle seed."""

    batch_size: int
    seed: int
    epochs: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epoch count must be >= 1")


def batches(dataset, plan: BatchPlan, epoch: int):
    """Index batches for one epoch: seeded permutation, final stub kept."""
    n = len(dataset) if hasattr(dataset, "__len__") else int(dataset)
    perm = np.random.default_rng([plan.seed, epoch]).permutation(n)
    return [perm[i:i + plan.batch_size]
            for i in range(0, n, plan.batch_size)]


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.eye(n_classes)[labels]


def channel_stats(images: np.ndarray):
    """Per-channel mean and standard deviation over a whole image stack."""
    images = np.asarray(images, dtype=np.float64)
    axes = tuple(range(images.ndim - 1))
    return images.mean(axis=axes), images.std(axis=axes)


def standardize(images: np.ndarray, mean, std) -> np.ndarray:
    """Shift/scale by channel statistics (for the model side, not pixels)."""
    return (np.asarray(images, dtype=np.float64) - mean) \
        / np.maximum(np.asarray(std, dtype=np.float64), 1e-12)
