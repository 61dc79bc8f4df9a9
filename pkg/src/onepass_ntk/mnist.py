"""IDX (MNIST) parsing and the binary dataset cache."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .data import EmpiricalDistribution
from .errors import FormatError

IMAGES_MAGIC = 0x00000803  # 2051
LABELS_MAGIC = 0x00000801  # 2049

CACHE_MAGIC = b"OPNTKDS\x00"
CACHE_VERSION = 1


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw: bytes, magic: int, ndims: int, what: str):
    need = 4 * (1 + ndims)
    if len(raw) < need:
        raise FormatError(f"{what}: truncated header, {len(raw)} bytes", offset=len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{what}: bad magic number {got}, expected {magic}", offset=0)
    return struct.unpack(f">{ndims}I", raw[4:need]), need


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    (n, rows, cols), off = _header(raw, IMAGES_MAGIC, 3, f"images file {path}")
    size = n * rows * cols
    if len(raw) - off < size:
        raise FormatError(f"images file {path}: expected {size} pixel bytes, found {len(raw) - off}",
                          offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=off).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    (n,), off = _header(raw, LABELS_MAGIC, 1, f"labels file {path}")
    if len(raw) - off < n:
        raise FormatError(f"labels file {path}: expected {n} label bytes, found {len(raw) - off}",
                          offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_mnist(images_path, labels_path, positive: int = 1, negative: int = 0) -> EmpiricalDistribution:
    """Keep digits ``negative``/``positive`` as labels -1/+1, flatten and scale rows to unit norm.

    The raw 0..255 intensities are flattened and then normalized; no other
    preprocessing is applied.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", offset=4)
    keep = (labels == positive) | (labels == negative)
    xs = images[keep].reshape(int(keep.sum()), -1).astype(float)
    norms = np.linalg.norm(xs, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FormatError("blank image cannot be normalized")
    ys = np.where(labels[keep] == positive, 1.0, -1.0)
    meta = {"source": str(images_path), "n_total": int(len(labels)), "n": int(keep.sum()),
            "positive": positive, "negative": negative}
    return EmpiricalDistribution(xs / norms, ys, meta)


def write_cache(path, ds: EmpiricalDistribution) -> Path:
    path = Path(path)
    header = CACHE_MAGIC + struct.pack("<IQQ", CACHE_VERSION, ds.n, ds.d)
    body = np.ascontiguousarray(ds.xs, dtype="<f8").tobytes() + np.ascontiguousarray(ds.ys, dtype="<f8").tobytes()
    path.write_bytes(header + body)
    return path


def read_cache(path) -> EmpiricalDistribution:
    raw = Path(path).read_bytes()
    hlen = len(CACHE_MAGIC) + 20
    if len(raw) < hlen or raw[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise FormatError(f"{path} is not a dataset cache", offset=0)
    version, n, d = struct.unpack("<IQQ", raw[len(CACHE_MAGIC):hlen])
    if version != CACHE_VERSION:
        raise FormatError(f"cache version {version} unsupported", offset=len(CACHE_MAGIC))
    if len(raw) != hlen + 8 * (n * d + n):
        raise FormatError(f"cache body has {len(raw) - hlen} bytes, expected {8 * (n * d + n)}", offset=hlen)
    xs = np.frombuffer(raw, dtype="<f8", count=n * d, offset=hlen).reshape(n, d)
    ys = np.frombuffer(raw, dtype="<f8", count=n, offset=hlen + 8 * n * d)
    return EmpiricalDistribution(xs.copy(), ys.copy(), {"source": str(path), "n": int(n)})
