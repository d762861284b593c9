"""Datasets: the 1-D toy regression set, IDX image files and batching."""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

IDX_UBYTE = 0x08


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"
    provenance: str = ""
    num_classes: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if len(self.inputs) != len(self.targets):
            raise ContractError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if self.num_classes:
            self.targets = np.asarray(self.targets, dtype=np.int64)
            if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.num_classes):
                raise ContractError(f"class targets must lie in [0, {self.num_classes})")
        else:
            self.targets = np.asarray(self.targets, dtype=np.float64)

    def __len__(self):
        return len(self.inputs)

    @property
    def is_classification(self):
        return self.num_classes > 0

    def subset(self, limit):
        if limit is None or limit >= len(self):
            return self
        return Dataset(self.inputs[:limit], self.targets[:limit], self.split, self.provenance, self.num_classes)


def toy_regression(n_points=20, x_lo=-4.0, x_hi=4.0, noise_std=3.0, seed=0):
    """y = x^3 + N(0, noise_std^2) with x ~ U(x_lo, x_hi)."""
    if n_points < 1:
        raise ContractError("n_points must be at least 1")
    if not x_lo < x_hi:
        raise ContractError("x_lo must be smaller than x_hi")
    rng = np.random.default_rng(seed)
    x = rng.uniform(x_lo, x_hi, size=n_points)
    y = x**3 + noise_std * rng.standard_normal(n_points)
    return Dataset(x[:, None], y[:, None], "train", f"toy cubic, seed={seed}")


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if str(path).endswith(".gz"):
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw):
    if len(raw) < 4:
        raise FormatError("truncated IDX header", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic: first two bytes must be zero", 0)
    if raw[2] != IDX_UBYTE:
        raise FormatError(f"unsupported IDX type code 0x{raw[2]:02x} (need 0x08)", 2)
    rank = raw[3]
    header = 4 + 4 * rank
    if len(raw) < header:
        raise FormatError(f"truncated IDX extents for rank {rank}", len(raw))
    shape = struct.unpack(f">{rank}I", raw[4:header])
    count = int(np.prod(shape)) if rank else 1
    if len(raw) - header < count:
        raise FormatError(f"truncated IDX payload: expected {count} bytes, found {len(raw) - header}", len(raw))
    if len(raw) - header > count:
        raise FormatError("trailing bytes after IDX payload", header + count)
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(shape).astype(np.float64)


def load_idx(path):
    """Parse a big-endian unsigned-byte IDX file (optionally gzipped)."""
    return parse_idx(_read_bytes(path))


def write_idx(path, array):
    arr = np.asarray(array)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ContractError("IDX unsigned-byte payload must lie in [0, 255]")
    body = bytes([0, 0, IDX_UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    body += np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
    if str(path).endswith(".gz"):
        body = gzip.compress(body, mtime=0)
    with open(path, "wb") as fh:
        fh.write(body)


def normalize(images):
    """Map byte intensities in [0, 255] to [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.size and (images.min() < 0 or images.max() > 255):
        raise ContractError("pixel values must lie in [0, 255]")
    return images / 255.0


def batch_iter(n, batch_size, seed, epoch):
    """Index batches for one epoch; the shuffle is keyed by (seed, epoch)."""
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def load_image_dataset(images_path, labels_path, split, num_classes=10, limit=None):
    for p in (images_path, labels_path):
        if not p or not os.path.exists(p):
            raise FileNotFoundError(f"dataset file not found: {p}")
    x = normalize(load_idx(images_path))
    y = load_idx(labels_path).astype(np.int64)
    x = x.reshape(len(x), -1)
    ds = Dataset(x, y, split, os.path.basename(images_path), num_classes)
    return ds.subset(limit)


def uniform_noise_images(n, n_pixels=784, seed=0):
    """Outlier fallback: i.i.d. uniform pixel noise in [0, 1]."""
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, n_pixels)), np.zeros(n, dtype=np.int64), "outlier", "uniform noise", 10)
