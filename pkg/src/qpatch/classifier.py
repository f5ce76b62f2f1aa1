"""Data re-uploading quantum classifier and its training loop.

Feature vector ``x`` (length ``D``) is split into chunks of ``n_qubits``;
block ``b`` angle-embeds chunk ``b`` as ``RY(pi * w_j * x_j)`` and then applies
one strongly entangling block.  The last chunk is zero padded.  Logits are
``<Z_q>`` on the readout qubits (the first ``n_classes`` by default) and the
output distribution is their softmax.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import circuits
from .errors import ConfigurationError, FormatError, TrainingError, UsageError

PROB_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"QPCK v1\n"


@dataclass(frozen=True)
class ClassifierSpec:
    n_features: int
    n_qubits: int = 4
    n_classes: int = 2
    encoding_trainable: bool = True
    readout: tuple | None = None  # class -> qubit; defaults to range(n_classes)

    def __post_init__(self):
        if not 2 <= self.n_qubits <= 8:
            raise ConfigurationError(f"n_qubits must be in [2, 8], got {self.n_qubits}")
        if self.n_features < 1:
            raise ConfigurationError("the classifier needs at least one feature")
        if not 2 <= self.n_classes <= self.n_qubits:
            raise ConfigurationError(f"n_classes must be in [2, n_qubits], got {self.n_classes}")
        if self.readout is not None:
            readout = tuple(int(q) for q in self.readout)
            if len(readout) != self.n_classes or len(set(readout)) != len(readout) or not all(
                0 <= q < self.n_qubits for q in readout
            ):
                raise ConfigurationError(f"bad readout assignment {self.readout}")
            object.__setattr__(self, "readout", readout)

    @property
    def n_blocks(self):
        return -(-self.n_features // self.n_qubits)

    @property
    def n_theta(self):
        return 3 * self.n_qubits * self.n_blocks

    @property
    def readout_qubits(self):
        return self.readout if self.readout is not None else tuple(range(self.n_classes))


@dataclass
class ClassifierParams:
    theta: np.ndarray
    w: np.ndarray

    def copy(self):
        return ClassifierParams(self.theta.copy(), self.w.copy())


DEFAULT_INIT_W = 0.1


def init_params(spec, seed=0, rng=None, init_w=DEFAULT_INIT_W):
    """``theta ~ U[-0.1, 0.1]``, every encoding weight set to ``init_w``.

    With ``init_w = 1`` a near-binary image drives each encoding rotation by
    about pi, and the untrained circuit behaves like a parity function of the
    pixels; a small start keeps the initial response close to linear.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    theta = rng.uniform(-0.1, 0.1, size=spec.n_theta)
    return ClassifierParams(theta, np.full(spec.n_features, float(init_w)))


@functools.lru_cache(maxsize=32)
def build_circuit(spec):
    n = spec.n_qubits
    circ = circuits.CircuitIR(n)
    for b in range(spec.n_blocks):
        circ = circ.then(circuits.angle_embedding(n, feature_offset=b * n))
        circ = circ.then(circuits.strongly_entangling_block(n, trainable_offset=3 * n * b))
    return circ


def _as_batch(spec, features):
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] > spec.n_blocks * spec.n_qubits:
        raise ConfigurationError(
            f"{x.shape[1]} features exceed capacity {spec.n_blocks * spec.n_qubits}"
        )
    if x.shape[1] != spec.n_features:
        raise UsageError(f"expected {spec.n_features} features, got {x.shape[1]}")
    return x, single


def encoded_features(spec, params, x):
    """Effective angles over pi: ``w * x`` zero padded to ``n_blocks * n_qubits``."""
    out = np.zeros((len(x), spec.n_blocks * spec.n_qubits))
    out[:, : spec.n_features] = x * params.w
    return out


def logits(spec, params, features):
    x, single = _as_batch(spec, features)
    z = circuits.expectations(build_circuit(spec), encoded_features(spec, params, x), params.theta)
    out = z[:, list(spec.readout_qubits)]
    return out[0] if single else out


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(spec, params, features):
    """Class probabilities for one feature vector or a ``(batch, D)`` matrix."""
    return softmax(logits(spec, params, features))


def predict(spec, params, features):
    return np.argmax(forward(spec, params, features), axis=-1)


def _check_batch(spec, x, y):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(y) == 0:
        raise UsageError("empty batch")
    if len(y) != len(x):
        raise UsageError(f"{len(x)} samples but {len(y)} labels")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise UsageError("label outside [0, n_classes)")
    return y


def per_sample_loss(probs, labels):
    p = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(p, PROB_FLOOR))


def loss(spec, params, features, labels):
    """Mean cross-entropy ``-log p(label)`` with probabilities floored at 1e-12."""
    x, _ = _as_batch(spec, features)
    y = _check_batch(spec, x, labels)
    return float(per_sample_loss(forward(spec, params, x), y).mean())


def _dloss_dz(spec, probs, labels):
    """Per-sample ``dJ_i/d<Z_q>`` for all qubits (zero off the readout)."""
    onehot = np.eye(spec.n_classes)[labels]
    g = probs - onehot
    clamped = probs[np.arange(len(labels)), labels] < PROB_FLOOR
    g[clamped] = 0.0
    dz = np.zeros((len(labels), spec.n_qubits))
    dz[:, list(spec.readout_qubits)] = g
    return dz


def backward(spec, params, features, labels, method="adjoint"):
    """Per-sample loss gradients.

    Returns ``(g_theta, g_w, g_x, losses)`` where ``g_theta`` and ``g_w`` are
    summed over the batch, ``g_x`` has one row per sample, and each quantity
    is the gradient of the *unaveraged* per-sample loss.  ``method`` is
    ``"shift"`` (two-point parameter shift on every angle occurrence) or
    ``"adjoint"`` (reverse sweep); the results agree to rounding error.
    """
    x, _ = _as_batch(spec, features)
    y = _check_batch(spec, x, labels)
    circ = build_circuit(spec)
    feats = encoded_features(spec, params, x)
    readout = list(spec.readout_qubits)
    if method == "shift":
        probs = forward(spec, params, x)
        jac = circuits.shift_jacobian(circ, feats, params.theta)
        occ = np.einsum("bkq,bq->bk", jac, _dloss_dz(spec, probs, y))
    elif method == "adjoint":
        out = {}

        def cotangent(z):
            out["probs"] = softmax(z[:, readout])
            return _dloss_dz(spec, out["probs"], y)

        occ, _ = circuits.adjoint_angle_grads(circ, feats, params.theta, cotangent)
        probs = out["probs"]
    else:
        raise UsageError(f"unknown gradient method {method!r}")
    d_feat, d_theta = circuits.slot_gradients(circ, occ)
    d_feat = d_feat[:, : spec.n_features]
    g_w = (d_feat * x).sum(axis=0) if spec.encoding_trainable else np.zeros(spec.n_features)
    g_x = d_feat * params.w
    return d_theta.sum(axis=0), g_w, g_x, per_sample_loss(probs, y)


def param_shift_grad(spec, params, features, labels):
    """Gradient of the mean batch loss over ``(theta, w)`` by the parameter-shift rule.

    ``w`` gradients are zero when the encoding weights are frozen.
    """
    x, _ = _as_batch(spec, features)
    g_theta, g_w, _, _ = backward(spec, params, x, labels, method="shift")
    return g_theta / len(x), g_w / len(x)


def adjoint_grad(spec, params, features, labels):
    """Same quantity as :func:`param_shift_grad`, from one reverse sweep."""
    x, _ = _as_batch(spec, features)
    g_theta, g_w, _, _ = backward(spec, params, x, labels, method="adjoint")
    return g_theta / len(x), g_w / len(x)


# --- training --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.01
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    gradient: str = "adjoint"  # "adjoint" | "shift"
    init_w: float = DEFAULT_INIT_W
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.gradient not in ("adjoint", "shift"):
            raise ConfigurationError(f"unknown gradient method {self.gradient!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    lipschitz: float
    params: ClassifierParams = field(repr=False)


class _Adam:
    def __init__(self, size, cfg):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        m_hat = self.m / (1 - c.beta1**self.t)
        v_hat = self.v / (1 - c.beta2**self.t)
        return c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def evaluate(spec, params, features, labels):
    """``(mean loss, accuracy)`` on a labelled set."""
    x, _ = _as_batch(spec, features)
    y = _check_batch(spec, x, labels)
    probs = forward(spec, params, x)
    return float(per_sample_loss(probs, y).mean()), float(np.mean(probs.argmax(axis=1) == y))


def train(spec, features, labels, config, params=None):
    """Mini-batch training; returns ``(final params, per-epoch history)``.

    Samples are reshuffled every epoch from a generator seeded with
    ``config.seed`` (which also draws the initial parameters when ``params``
    is not given).  Each history entry holds the full-set loss, accuracy and
    Lipschitz bound after that epoch plus a copy of the parameters.
    """
    from .attacks import lipschitz_bound

    x, _ = _as_batch(spec, features)
    y = _check_batch(spec, x, labels)
    rng = np.random.default_rng(config.seed)
    params = init_params(spec, rng=rng, init_w=config.init_w) if params is None else params.copy()
    n_theta = spec.n_theta
    opt = _Adam(n_theta + spec.n_features, config) if config.optimizer == "adam" else None
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            g_theta, g_w, _, _ = backward(spec, params, x[idx], y[idx], method=config.gradient)
            grad = np.concatenate([g_theta, g_w]) / len(idx)
            if not np.all(np.isfinite(grad)):
                raise TrainingError("non-finite gradient", epoch)
            step = opt.step(grad) if opt is not None else config.learning_rate * grad
            params.theta = params.theta - step[:n_theta]
            if spec.encoding_trainable:
                params.w = params.w - step[n_theta:]
        ep_loss, acc = evaluate(spec, params, x, y)
        if not math.isfinite(ep_loss):
            raise TrainingError("loss is NaN", epoch)
        history.append(EpochRecord(epoch, ep_loss, acc, lipschitz_bound(params, spec), params.copy()))
    return params, history


# --- checkpoints -----------------------------------------------------------


def encode_checkpoint(spec, params, seed):
    """``QPCK v1`` layout, little-endian.

    Header line ``QPCK v1\\n``; n_features, n_qubits, n_classes (u32);
    encoding_trainable (u8); readout qubit per class (u8 each); training seed
    (u64); theta reduced mod 2 pi then w, both float64.
    """
    theta = np.mod(np.asarray(params.theta, dtype=float), 2 * math.pi)
    return b"".join([
        CHECKPOINT_MAGIC,
        struct.pack("<IIIB", spec.n_features, spec.n_qubits, spec.n_classes, int(spec.encoding_trainable)),
        bytes(spec.readout_qubits),
        struct.pack("<Q", seed),
        theta.astype("<f8").tobytes(),
        np.asarray(params.w, dtype="<f8").tobytes(),
    ])


def decode_checkpoint(raw, source="<bytes>"):
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{source}: not a QPCK v1 checkpoint")
    off = len(CHECKPOINT_MAGIC)
    try:
        n_feat, n_q, n_cls, trainable_flag = struct.unpack_from("<IIIB", raw, off)
        off += 13
        readout = tuple(raw[off:off + n_cls])
        off += n_cls
        (seed,) = struct.unpack_from("<Q", raw, off)
        off += 8
    except struct.error as exc:
        raise FormatError(f"{source}: truncated header") from exc
    spec = ClassifierSpec(n_feat, n_q, n_cls, bool(trainable_flag),
                          None if readout == tuple(range(n_cls)) else readout)
    expected = off + 8 * (spec.n_theta + n_feat)
    if len(raw) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(raw)}")
    theta = np.frombuffer(raw, dtype="<f8", count=spec.n_theta, offset=off).astype(float)
    w = np.frombuffer(raw, dtype="<f8", count=n_feat, offset=off + 8 * spec.n_theta).astype(float)
    return spec, ClassifierParams(theta, w), seed


def save_checkpoint(path, spec, params, seed):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(spec, params, seed))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), source=str(path))
