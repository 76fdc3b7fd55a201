"""Dataset loading (IDX, CIFAR binary, SNNF frame tensors), static-input
repetition encoding, normalization, and augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tensor import ParameterError


class FormatError(ValueError):
    """Raised on malformed or truncated dataset files."""


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SNNF_MAGIC = b"SNNF"
CIFAR_RECORD = 3073


@dataclass
class Dataset:
    samples: np.ndarray  # [M, C, H, W] floats in [0,1] (pre-normalization)
    labels: np.ndarray  # [M] int class indices
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.samples.shape[0] != self.labels.shape[0]:
            raise FormatError("sample/label count mismatch")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise FormatError("label out of range")

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class FrameSequence:
    frames: np.ndarray  # [N_frames, C, H, W]

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise FormatError("frame sequence must be [N,C,H,W] with N >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise FormatError("non-finite frame values")


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def load_idx(images_path, labels_path, n_classes: int = 10, split: str = "train") -> Dataset:
    """Parse the big-endian IDX pair (u8 images scaled to [0,1], u8 labels)."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}")
        raw = _read_exact(f, count * rows * cols, "image payload")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}")
        raw = _read_exact(f, lcount, "label payload")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if lcount != count:
        raise FormatError(f"image/label counts differ: {count} vs {lcount}")
    return Dataset(images.astype(np.float64) / 255.0, labels, n_classes, split)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Inverse of load_idx; images are floats in [0,1] shaped [M,1,H,W]."""
    m, _, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, m, h, w))
        f.write(np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, m))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# CIFAR binary
# ---------------------------------------------------------------------------

def load_cifar_binary(path, n_classes: int = 10, split: str = "train") -> Dataset:
    """One record = 1 label byte + 3072 pixel bytes (RGB planes, 32x32)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise FormatError(f"file length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, n_classes, split)


def write_cifar_binary(path, images: np.ndarray, labels: np.ndarray):
    rec = np.empty((images.shape[0], CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = np.asarray(labels, dtype=np.uint8)
    rec[:, 1:] = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8).reshape(
        images.shape[0], -1
    )
    with open(path, "wb") as f:
        f.write(rec.tobytes())


# ---------------------------------------------------------------------------
# SNNF frame tensors
# ---------------------------------------------------------------------------

def load_frames(path) -> FrameSequence:
    """SNNF: magic "SNNF", little-endian u32 rank, u32 extents, f32 payload."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != SNNF_MAGIC:
            raise FormatError(f"bad SNNF magic {magic!r}")
        (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
        if rank != 4:
            raise FormatError(f"SNNF rank must be 4, got {rank}")
        extents = struct.unpack("<4I", _read_exact(f, 16, "extents"))
        count = int(np.prod(extents))
        raw = _read_exact(f, 4 * count, "payload")
        if f.read(1):
            raise FormatError("trailing bytes after SNNF payload")
    frames = np.frombuffer(raw, dtype="<f4").reshape(extents).astype(np.float64)
    return FrameSequence(frames=frames)


def write_frames(path, frames: np.ndarray):
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise FormatError("SNNF writer expects [N,C,H,W]")
    with open(path, "wb") as f:
        f.write(SNNF_MAGIC)
        f.write(struct.pack("<I", 4))
        f.write(struct.pack("<4I", *frames.shape))
        f.write(frames.astype("<f4").tobytes())


def fit_frames_to_steps(frames: np.ndarray, n_steps: int) -> np.ndarray:
    """Cycle short sequences / truncate long ones to exactly n_steps."""
    if n_steps < 1:
        raise ParameterError("n_steps must be >= 1")
    n = frames.shape[0]
    if n >= n_steps:
        return frames[:n_steps]
    idx = np.arange(n_steps) % n
    return frames[idx]


def resize_frames_nearest(frames: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor spatial resize (interpolation method is a choice)."""
    n, c, h, w = frames.shape
    yi = (np.arange(size) * h // size).clip(0, h - 1)
    xi = (np.arange(size) * w // size).clip(0, w - 1)
    return frames[:, :, yi[:, None], xi[None, :]]


# ---------------------------------------------------------------------------
# encoding / preprocessing
# ---------------------------------------------------------------------------

def encode_static(x: np.ndarray, n_steps: int) -> np.ndarray:
    """Repeat a static sample along a new leading time axis."""
    if n_steps < 1:
        raise ParameterError("n_steps must be >= 1")
    return np.broadcast_to(x, (n_steps,) + x.shape).copy()


def normalize(x: np.ndarray, mean, std) -> np.ndarray:
    """(x - mean) / std per channel; channel axis is -3."""
    mean = np.asarray(mean, dtype=x.dtype)
    std = np.asarray(std, dtype=x.dtype)
    if np.any(std <= 0):
        raise ParameterError("std must be positive")
    shape = (-1, 1, 1)
    return (x - mean.reshape(shape)) / std.reshape(shape)


def augment(x: np.ndarray, crop_pad: int = 0, hflip_prob: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Zero-pad + random crop to the original size, then random horizontal
    flip. Identity for crop_pad=0, hflip_prob=0. Deterministic under seed."""
    if crop_pad < 0:
        raise ParameterError("crop_pad must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    out = x
    if crop_pad:
        c, h, w = x.shape[-3:]
        padded = np.pad(x, ((0, 0), (crop_pad, crop_pad), (crop_pad, crop_pad)))
        dy = rng.integers(0, 2 * crop_pad + 1)
        dx = rng.integers(0, 2 * crop_pad + 1)
        out = padded[:, dy : dy + h, dx : dx + w]
    if hflip_prob and rng.random() < hflip_prob:
        out = out[..., ::-1].copy()
    return out


# ---------------------------------------------------------------------------
# synthetic digit corpus (desk-scale IDX substitute)
# ---------------------------------------------------------------------------

_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",  # 0
    "00100 01100 00100 00100 00100 00100 01110",  # 1
    "01110 10001 00001 00010 00100 01000 11111",  # 2
    "01110 10001 00001 00110 00001 10001 01110",  # 3
    "00010 00110 01010 10010 11111 00010 00010",  # 4
    "11111 10000 11110 00001 00001 10001 01110",  # 5
    "00110 01000 10000 11110 10001 10001 01110",  # 6
    "11111 00001 00010 00100 01000 01000 01000",  # 7
    "01110 10001 10001 01110 10001 10001 01110",  # 8
    "01110 10001 10001 01111 00001 00010 01100",  # 9
]


def _glyph_bitmap(d: int) -> np.ndarray:
    rows = _GLYPHS[d].split()
    return np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64)


def make_digits(n_per_class: int, seed: int = 0, size: int = 16,
                noise: float = 0.25) -> Dataset:
    """Procedurally rendered digit images: a 7x5 glyph placed with a random
    affine jitter (shift, rotation, scale), brightness variation, and
    Gaussian noise. Difficulty is controlled by ``noise``."""
    rng = np.random.default_rng(seed)
    m = 10 * n_per_class
    images = np.zeros((m, 1, size, size), dtype=np.float64)
    labels = np.repeat(np.arange(10), n_per_class)
    for i, d in enumerate(labels):
        glyph = np.kron(_glyph_bitmap(int(d)), np.ones((2, 2)))  # 14 x 10
        gy, gx = glyph.shape
        canvas = np.zeros((size, size))
        oy, ox = (size - gy) // 2, (size - gx) // 2
        canvas[oy : oy + gy, ox : ox + gx] = glyph
        canvas = ndimage.rotate(canvas, rng.uniform(-8, 8), reshape=False, order=1)
        scale = rng.uniform(0.95, 1.1)
        img = ndimage.zoom(canvas, scale, order=1)
        # center-crop / pad back to size
        if img.shape[0] >= size:
            off = (img.shape[0] - size) // 2
            img = img[off : off + size, off : off + size]
        else:
            pad = size - img.shape[0]
            img = np.pad(img, ((pad // 2, pad - pad // 2), (pad // 2, pad - pad // 2)))
        dy, dx = rng.integers(-1, 2, size=2)
        img = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
        img = img * rng.uniform(0.7, 1.0)
        img = img + rng.normal(0.0, noise, img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    perm = rng.permutation(m)
    return Dataset(images[perm], labels[perm], n_classes=10)


def batches(dataset: Dataset, batch_size: int, rng: np.random.Generator | None = None,
            shuffle: bool = True):
    """Yield (samples, labels) minibatches; order is rng-driven if shuffled."""
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    m = len(dataset)
    idx = np.arange(m)
    if shuffle:
        rng = rng if rng is not None else np.random.default_rng(0)
        rng.shuffle(idx)
    for start in range(0, m, batch_size):
        sel = idx[start : start + batch_size]
        yield dataset.samples[sel], dataset.labels[sel]
