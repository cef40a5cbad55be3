"""Reader for the big-endian IDX image/label format."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def read_idx_images(path) -> np.ndarray:
    """Images as a float matrix (n, rows*cols) scaled to [0, 1]."""
    raw = _read_bytes(path)
    if len(raw) < 16 or struct.unpack(">I", raw[:4])[0] != IMAGE_MAGIC:
        raise ValueError(f"{path}: not an IDX image file")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    body = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if body.size != n * rows * cols:
        raise ValueError(f"{path}: expected {n * rows * cols} pixels, found {body.size}")
    return body.reshape(n, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8 or struct.unpack(">I", raw[:4])[0] != LABEL_MAGIC:
        raise ValueError(f"{path}: not an IDX label file")
    (n,) = struct.unpack(">I", raw[4:8])
    body = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if body.size != n:
        raise ValueError(f"{path}: expected {n} labels, found {body.size}")
    return body.astype(np.int64)


def load_idx(images_path, labels_path) -> tuple:
    """(images in [0, 1], integer labels); the two counts must agree."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError(f"image count {len(images)} does not match label count {len(labels)}")
    return images, labels


def write_idx(images_path, labels_path, images, labels, rows: int, cols: int) -> None:
    """Inverse of ``load_idx`` for uint8-representable data; used for fixtures."""
    px = np.clip(np.rint(np.asarray(images) * 255), 0, 255).astype(np.uint8)
    lab = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, len(px), rows, cols) + px.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(lab)) + lab.tobytes())
