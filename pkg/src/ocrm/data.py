"""Dataset loading, preprocessing and the one-class split."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
IMAGE_SUFFIXES = {".ppm", ".pgm", ".pnm", ".png", ".bmp", ".tif", ".tiff"}


class FormatError(ValueError):
    """A dataset file does not match its expected binary layout."""


class EmptyDatasetError(ValueError):
    pass


class ClassAbsentError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N, C, H, W]
    labels: np.ndarray  # int64 [N]
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def channels(self):
        return self.images.shape[1]


@dataclass
class OneClassSplit:
    train: np.ndarray  # uint8 [M, C, H, W], all of the positive class
    test: Dataset
    positive_class: int

    @property
    def test_is_positive(self):
        return self.test.labels == self.positive_class


def _read(path):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(buf, path, magic, ndims):
    if len(buf) < 4 + 4 * ndims:
        raise FormatError(f"{path}: truncated header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack(">" + "I" * ndims, buf[4:4 + 4 * ndims])


def load_idx(images_path, labels_path):
    """Parse a big-endian IDX image file and its label file."""
    ibuf = _read(images_path)
    n, h, w = _idx_header(ibuf, images_path, IMAGE_MAGIC, 3)
    if len(ibuf) != 16 + n * h * w:
        raise FormatError(f"{images_path}: expected {16 + n * h * w} bytes, found {len(ibuf)}")
    lbuf = _read(labels_path)
    (m,) = _idx_header(lbuf, labels_path, LABEL_MAGIC, 1)
    if len(lbuf) != 8 + m:
        raise FormatError(f"{labels_path}: expected {8 + m} bytes, found {len(lbuf)}")
    if m != n:
        raise FormatError(f"{images_path} has {n} images but {labels_path} has {m} labels")
    images = np.frombuffer(ibuf, np.uint8, offset=16).reshape(n, 1, h, w)
    labels = np.frombuffer(lbuf, np.uint8, offset=8).astype(np.int64)
    return Dataset(images, labels, name=Path(images_path).name)


def load_cifar_batch(path):
    """Parse one CIFAR-10 binary batch (label byte + R, G, B planes per record)."""
    buf = _read(path)
    if len(buf) == 0 or len(buf) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(buf, np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label {labels.max()} out of range")
    return Dataset(rec[:, 1:].reshape(-1, 3, 32, 32).copy(), labels, name=Path(path).name)


def decode_image(path):
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except Exception as exc:  # PIL raises several unrelated types
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim == 2:
        return arr[None]
    return arr.transpose(2, 0, 1)


def load_image_dir(path, label_map=None):
    """Decode every image file under ``path`` in lexicographic order.

    With ``label_map`` (subdirectory name -> label), files are read from those
    subdirectories; otherwise from ``path`` itself, all labelled 0. Images are
    resized to 32x32 here only if they differ in size from the first one.
    """
    root = Path(path)
    groups = [(root, 0)] if label_map is None else [(root / d, lab) for d, lab in sorted(label_map.items())]
    files = []
    for d, lab in groups:
        if not d.is_dir():
            raise FormatError(f"{d}: not a directory")
        files += [(f, lab) for f in sorted(d.iterdir()) if f.suffix.lower() in IMAGE_SUFFIXES]
    if not files:
        raise EmptyDatasetError(f"{root}: no image files")
    decoded = [decode_image(f) for f, _ in files]
    shapes = {a.shape for a in decoded}
    if len(shapes) > 1:
        decoded = [np.rint(preprocess(a) * 255).astype(np.uint8) for a in decoded]
    return Dataset(np.stack(decoded), np.array([lab for _, lab in files], dtype=np.int64), name=root.name)


def resize_matrix(n_in, n_out):
    """Row-stochastic bilinear interpolation weights (half-pixel centres)."""
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def preprocess(images, size=32):
    """Bilinear resize to ``size`` x ``size`` and scale to [0, 1] (float32).

    Accepts a single ``[C,H,W]`` image or a batch ``[N,C,H,W]``.
    """
    x = np.asarray(images)
    single = x.ndim == 3
    if single:
        x = x[None]
    _, _, h, w = x.shape
    out = x.astype(np.float64)
    if (h, w) != (size, size):
        ry = resize_matrix(h, size)
        rx = resize_matrix(w, size)
        out = np.einsum("yh,nchw,xw->ncyx", ry, out, rx, optimize=True)
    out = np.clip(out / 255.0, 0.0, 1.0).astype(np.float32)
    return out[0] if single else out


def augment_flip(image, rng, p=0.5):
    """Mirror the columns of ``image[..., W]`` with probability ``p``."""
    if p > 0 and rng.random() < p:
        return np.ascontiguousarray(image[..., ::-1])
    return image


def flip_batch(batch, rng, p=0.5):
    mask = rng.random(len(batch)) < p
    if mask.any():
        batch = batch.copy()
        batch[mask] = batch[mask][..., ::-1]
    return batch


def one_class_split(train_ds, test_ds, positive_class):
    keep = train_ds.labels == positive_class
    if not keep.any():
        raise ClassAbsentError(f"class {positive_class} not present in {train_ds.name or 'training set'}")
    return OneClassSplit(train=train_ds.images[keep], test=test_ds, positive_class=int(positive_class))


# --------------------------------------------------------------- dataset dirs

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def default_data_dir():
    return Path(os.environ.get("OCRM_DATA_DIR", "data"))


def load_dataset(name, root, part):
    """Load ``part`` ("train" or "test") of a named dataset from ``root``.

    Layouts: ``mnist`` holds the four IDX files; ``cifar10`` holds
    ``data_batch_{1..5}.bin`` and ``test_batch.bin``; ``gtsrb`` holds
    ``train/`` (stop signs) and ``test/normal`` plus ``test/adversarial``.
    """
    root = Path(root)
    if name == "mnist":
        imgs, labs = MNIST_FILES[part]
        return load_idx(root / imgs, root / labs)
    if name == "cifar10":
        files = [f"data_batch_{i}.bin" for i in range(1, 6)] if part == "train" else ["test_batch.bin"]
        parts = [load_cifar_batch(root / f) for f in files]
        return Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), name)
    if name == "gtsrb":
        if part == "train":
            return load_image_dir(root / "train")
        return load_image_dir(root / "test", {"normal": 0, "adversarial": 1})
    raise ValueError(f"unknown dataset {name!r}")
