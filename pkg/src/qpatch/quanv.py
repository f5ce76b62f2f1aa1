"""Quanvolution: turn images into stacks of random-circuit channels.

Each non-overlapping 2x2 patch is angle-embedded into four qubits
(``RY(pi * pixel)``, pixels in row-major patch order on qubits 0..3), passed
through one fixed seeded random circuit, and read out as four
Z-expectations.  Expectation ``j`` of the patch at ``(r, c)`` becomes pixel
``(r, c)`` of quantum channel ``j``.  The original image, mean-pooled 2x2,
is kept alongside as channel 0 of the stacked representation.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import circuits, data
from .circuits import RqcSpec
from .errors import ConfigurationError, FormatError, UsageError

PATCH = 2
N_CHANNELS = 4
CACHE_MAGIC = b"QPCH"
CACHE_VERSION = 1


@dataclass(frozen=True)
class ChannelStack:
    original: np.ndarray  # (h/2, w/2) pooled luminance
    quantum: np.ndarray  # (4, h/2, w/2) Z-expectations in [-1, 1]
    rqc_seed: int
    rqc_depth: int

    def as_array(self):
        """``(5, h/2, w/2)``: the pooled original followed by the four quantum channels."""
        return np.concatenate([self.original[None], self.quantum])


def _as_gray(image):
    image = np.asarray(image, dtype=float)
    if image.ndim == 3 and image.shape[-1] == 3:
        image = data.to_luminance(image)
    if image.ndim != 2:
        raise UsageError(f"expected a (h, w) or (h, w, 3) image, got shape {image.shape}")
    if image.size == 0:
        raise UsageError("empty image")
    return image


def _pad_zero(images):
    h, w = images.shape[-2:]
    pad = [(0, 0)] * (images.ndim - 2) + [(0, -h % PATCH), (0, -w % PATCH)]
    return np.pad(images, pad)


def _patches(images):
    """``(n, h, w)`` -> ``(n, h/2 * w/2, 4)`` after zero padding."""
    padded = _pad_zero(images)
    n, h, w = padded.shape
    blocks = padded.reshape(n, h // PATCH, PATCH, w // PATCH, PATCH).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(n, -1, PATCH * PATCH)


def extract_patches(image, k=2, stride=2):
    """Row-major list of non-overlapping 2x2 patches, shape ``(n_patches, 4)``.

    Odd heights or widths are zero padded on the bottom/right edge.
    """
    if k != PATCH or stride != PATCH:
        raise ConfigurationError("only 2x2 windows with stride 2 are supported")
    return _patches(_as_gray(image)[None])[0]


def patch_circuit(rqc):
    if rqc.n_qubits != N_CHANNELS:
        raise ConfigurationError(f"the patch circuit uses {N_CHANNELS} qubits, RQC has {rqc.n_qubits}")
    return circuits.angle_embedding(N_CHANNELS).then(circuits.build_rqc(rqc))


def _grid(images):
    h, w = images.shape[-2:]
    return -(-h // PATCH), -(-w // PATCH)


def quanv_batch(images, rqc):
    """Quanvolve a stack ``(n, h, w)``; returns ``(n, 5, ceil(h/2), ceil(w/2))``."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 4 and images.shape[-1] == 3:
        images = data.to_luminance(images)
    if images.ndim != 3 or images.size == 0:
        raise UsageError(f"expected a non-empty (n, h, w) stack, got shape {images.shape}")
    circ = patch_circuit(rqc)
    n = len(images)
    gh, gw = _grid(images)
    patches = _patches(images).reshape(-1, PATCH * PATCH)
    z = circuits.expectations(circ, patches)
    quantum = z.reshape(n, gh, gw, N_CHANNELS).transpose(0, 3, 1, 2)
    original = data.downsample(images, PATCH)
    return np.concatenate([original[:, None], quantum], axis=1)


def quanv_transform(image, rqc):
    stack = quanv_batch(_as_gray(image)[None], rqc)[0]
    return ChannelStack(stack[0], stack[1:], rqc.seed, rqc.depth)


def flatten_stacks(stacks, include_original=True):
    """Feature matrix from ``(n, 5, h, w)`` stacks; quantum values mapped by ``(z + 1) / 2``."""
    stacks = np.asarray(stacks, dtype=float)
    n = len(stacks)
    quantum = (stacks[:, 1:].reshape(n, -1) + 1.0) / 2.0
    if include_original:
        return np.concatenate([stacks[:, 0].reshape(n, -1), quantum], axis=1)
    return quantum


def flatten_features(stack, include_original=True):
    return flatten_stacks(stack.as_array()[None], include_original)[0]


def _downsample_vjp(grad, shape):
    """Adjoint of :func:`data.downsample` with factor 2 (edge padding folded back)."""
    h, w = shape[-2:]
    up = np.repeat(np.repeat(grad, PATCH, axis=-2), PATCH, axis=-1) / (PATCH * PATCH)
    out = up[..., :h, :w].copy()
    if h % PATCH:
        out[..., h - 1, :] += up[..., h, :w]
    if w % PATCH:
        out[..., :, w - 1] += up[..., :h, w]
    if h % PATCH and w % PATCH:
        out[..., h - 1, w - 1] += up[..., h, w]
    return out


def features_vjp(images, rqc, grad_features, include_original=True, method="shift"):
    """Pull a gradient on flattened quanvolution features back onto pixels.

    The quantum part differentiates each patch's embedding angles with the
    parameter-shift rule (``method="shift"``) or the adjoint sweep
    (``method="adjoint"``); both are exact.
    """
    images = np.asarray(images, dtype=float)
    n = len(images)
    gh, gw = _grid(images)
    g = np.asarray(grad_features, dtype=float).reshape(n, -1)
    cells = gh * gw
    out = np.zeros_like(images)
    if include_original:
        out += _downsample_vjp(g[:, :cells].reshape(n, gh, gw), images.shape)
        g = g[:, cells:]
    # d feature / d z = 1/2
    dz = 0.5 * g.reshape(n, N_CHANNELS, gh, gw).transpose(0, 2, 3, 1).reshape(-1, N_CHANNELS)
    circ = patch_circuit(rqc)
    patches = _patches(images).reshape(-1, PATCH * PATCH)
    embed_occ = list(range(PATCH * PATCH))
    if method == "shift":
        jac = circuits.shift_jacobian(circ, patches, occurrences=embed_occ)
        occ_grads = np.zeros((len(patches), len(circ.occurrences())))
        occ_grads[:, embed_occ] = np.einsum("bkq,bq->bk", jac[:, embed_occ], dz)
    elif method == "adjoint":
        occ_grads, _ = circuits.adjoint_angle_grads(circ, patches, dz=dz)
    else:
        raise UsageError(f"unknown gradient method {method!r}")
    d_pix, _ = circuits.slot_gradients(circ, occ_grads)
    d_pix = d_pix.reshape(n, gh, gw, PATCH, PATCH).transpose(0, 1, 3, 2, 4)
    d_pix = d_pix.reshape(n, gh * PATCH, gw * PATCH)
    h, w = images.shape[-2:]
    return out + d_pix[:, :h, :w]


# --- cache file ------------------------------------------------------------


def encode_cache(stacks, rqc, labels=None):
    """Serialise ``(n, c, h, w)`` stacks to the ``QPCH`` layout.

    Layout (little-endian): magic ``QPCH``, version u16, n/h/w/c as u32,
    float32 channel data in ``(n, c, h, w)`` order, RQC seed u64, RQC depth
    u16, then optionally a label block: count u32 and one u16 per image.
    """
    stacks = np.asarray(stacks)
    n, c, h, w = stacks.shape
    parts = [
        CACHE_MAGIC,
        struct.pack("<H", CACHE_VERSION),
        struct.pack("<IIII", n, h, w, c),
        np.ascontiguousarray(stacks, dtype="<f4").tobytes(),
        struct.pack("<QH", rqc.seed, rqc.depth),
    ]
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise UsageError(f"{len(labels)} labels for {n} stacks")
        parts.append(struct.pack("<I", n))
        parts.append(labels.astype("<u2").tobytes())
    return b"".join(parts)


def decode_cache(raw, source="<bytes>"):
    """Inverse of :func:`encode_cache`: returns ``(stacks, rqc, labels_or_None)``."""
    if raw[:4] != CACHE_MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:4]!r}")
    if len(raw) < 22:
        raise FormatError(f"{source}: truncated header")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CACHE_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    n, h, w, c = struct.unpack_from("<IIII", raw, 6)
    off = 22
    size = n * c * h * w * 4
    if len(raw) < off + size + 10:
        raise FormatError(f"{source}: truncated payload")
    stacks = np.frombuffer(raw, dtype="<f4", count=n * c * h * w, offset=off).reshape(n, c, h, w)
    off += size
    seed, depth = struct.unpack_from("<QH", raw, off)
    off += 10
    labels = None
    if off < len(raw):
        if len(raw) < off + 4:
            raise FormatError(f"{source}: truncated label block")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        if count != n or len(raw) != off + 2 * count:
            raise FormatError(f"{source}: label block does not match {n} images")
        labels = np.frombuffer(raw, dtype="<u2", offset=off).astype(np.int64)
    return stacks.astype(np.float32), RqcSpec(seed=seed, n_qubits=N_CHANNELS, depth=depth), labels


def write_cache(path, stacks, rqc, labels=None):
    raw = encode_cache(stacks, rqc, labels)
    with open(path, "wb") as fh:
        fh.write(raw)
    return hashlib.sha256(raw).hexdigest()


def read_cache(path):
    with open(path, "rb") as fh:
        return decode_cache(fh.read(), source=str(path))
