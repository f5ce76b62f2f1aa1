"""Dataset loading and preparation.

Images are float64 arrays with values in [0, 1]; a dataset stores them as a
single ``(n, height, width)`` array.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, UsageError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
PLUS_MINUS_CLASSES = ("plus", "minus", "vertical", "horizontal")
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    class_names: tuple
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 3:
            raise UsageError(f"images must be (n, h, w), got shape {images.shape}")
        if len(images) != len(labels):
            raise UsageError(f"{len(images)} images but {len(labels)} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise UsageError("label outside the class list")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self):
        return len(self.labels)

    def take(self, indices, provenance=None):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.images[indices],
            self.labels[indices],
            self.class_names,
            self.provenance if provenance is None else provenance,
        )


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, expected_magic, ndim):
    with _open(path) as fh:
        raw = fh.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated payload ({len(raw) - header} of {size} bytes)")
    if len(raw) - header > size:
        raise FormatError(f"{path}: {len(raw) - header - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(image_path, label_path, class_names=None):
    """Read an IDX image file (magic 0x803) and its label file (magic 0x801).

    Pixels are scaled by 1/255.  Plain and gzip-compressed files are accepted.
    """
    pixels = _read_idx(image_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(label_path, IDX_LABELS_MAGIC, 1)
    if len(pixels) != len(labels):
        raise FormatError(
            f"{image_path} holds {len(pixels)} images but {label_path} holds {len(labels)} labels"
        )
    if class_names is None:
        class_names = tuple(str(i) for i in range(max(10, int(labels.max(initial=0)) + 1)))
    return LabeledDataset(
        pixels.astype(float) / 255.0,
        labels.astype(np.int64),
        class_names,
        provenance=f"idx:{image_path}",
    )


def write_idx(image_path, label_path, pixels, labels):
    """Write uint8 ``(n, h, w)`` pixels and labels as uncompressed IDX files."""
    pixels = np.asarray(pixels)
    labels = np.asarray(labels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3:
        raise UsageError("IDX images must be a uint8 array of shape (n, h, w)")
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *pixels.shape))
        fh.write(pixels.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def to_luminance(image):
    """Collapse a trailing RGB axis with fixed 0.299/0.587/0.114 weights."""
    image = np.asarray(image, dtype=float)
    if image.shape[-1] != 3:
        raise UsageError(f"expected a trailing axis of 3 colour channels, got {image.shape}")
    return image @ np.array(LUMA_WEIGHTS)


def downsample(image, factor):
    """Block-mean pooling over the last two axes.

    The image is first padded by edge replication up to a multiple of
    ``factor``.
    """
    if factor < 1:
        raise UsageError(f"downsample factor must be >= 1, got {factor}")
    image = np.asarray(image, dtype=float)
    h, w = image.shape[-2:]
    ph, pw = -h % factor, -w % factor
    if ph or pw:
        pad = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
        image = np.pad(image, pad, mode="edge")
    hh, ww = image.shape[-2] // factor, image.shape[-1] // factor
    blocks = image.reshape(image.shape[:-2] + (hh, factor, ww, factor))
    return blocks.mean(axis=(-3, -1))


def _stroke_images(label, size, rng):
    img = np.zeros((size, size))
    arm = size // 4  # half-length of the short strokes
    lo, hi = arm + 1, size - arm - 2
    r, c = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    name = PLUS_MINUS_CLASSES[label]
    if name in ("plus", "minus"):
        img[r:r + 2, c - arm:c + arm + 1] = 1.0
    if name == "plus":
        img[r - arm + 1:r + arm + 1, c:c + 2] = 1.0
    elif name == "vertical":
        img[1:size - 1, c:c + 2] = 1.0
    elif name == "horizontal":
        img[r:r + 2, 1:size - 1] = 1.0
    return img


def gen_plus_minus(n, seed, size=16, noise=0.1):
    """Synthetic 4-class stroke images: plus, minus, vertical bar, horizontal bar.

    Labels cycle 0,1,2,3,... so classes are balanced.  Strokes are two pixels
    thick at a random position, with additive uniform noise on
    ``[-noise, noise]`` and clipping to [0, 1].
    """
    if n < 4:
        raise UsageError(f"need at least 4 images for 4 classes, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 4
    images = np.stack([_stroke_images(int(y), size, rng) for y in labels])
    images = np.clip(images + rng.uniform(-noise, noise, size=images.shape), 0.0, 1.0)
    return LabeledDataset(images, labels, PLUS_MINUS_CLASSES, provenance=f"plus-minus:n={n}:seed={seed}")


def subset_binary(ds, class_a, class_b, per_class):
    """First ``per_class`` samples of each class, relabelled 0/1, in original order."""
    picked = []
    for cls in (class_a, class_b):
        idx = np.flatnonzero(ds.labels == cls)
        if len(idx) < per_class:
            raise UsageError(f"class {cls} has {len(idx)} samples, {per_class} requested")
        picked.append(idx[:per_class])
    order = np.sort(np.concatenate(picked))
    labels = (ds.labels[order] == class_b).astype(np.int64)
    names = (ds.class_names[class_a], ds.class_names[class_b])
    return LabeledDataset(
        ds.images[order], labels, names,
        provenance=f"{ds.provenance}|binary:{class_a},{class_b}:{per_class}",
    )


def load_cifar_batch(paths, factor=2, class_names=CIFAR10_CLASSES):
    """Read CIFAR-style binary batches (1 label byte + 3072 RGB bytes per record).

    Records are converted to luminance and downsampled by ``factor``.
    """
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        with _open(path) as fh:
            raw = fh.read()
        if len(raw) % 3073:
            raise FormatError(f"{path}: size {len(raw)} is not a multiple of 3073-byte records")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3073)
        labels.append(rec[:, 0].astype(np.int64))
        rgb = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(float) / 255.0
        images.append(downsample(to_luminance(rgb), factor))
    return LabeledDataset(
        np.concatenate(images), np.concatenate(labels), class_names,
        provenance="cifar:" + ",".join(map(str, paths)),
    )
