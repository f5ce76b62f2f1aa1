"""Dense statevector simulation for small registers.

Amplitudes are stored little-endian: qubit 0 is the least significant bit of
the basis index, so ``|q_{n-1} ... q_1 q_0>`` lives at index
``sum(q_k << k)``.  Rotations follow ``R_P(theta) = exp(-i theta P / 2)``.

The kernels in this module work on stacks of states with shape
``(batch, 2**n)`` so that many samples can be pushed through the same circuit
at once.  :class:`StateVector` and the single-state helpers are thin wrappers
around the batched kernels with a batch of one.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError

MAX_QUBITS = 12

_SQRT1_2 = 1.0 / np.sqrt(2.0)

PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

FIXED_1Q = {
    "X": PAULI["X"],
    "Y": PAULI["Y"],
    "Z": PAULI["Z"],
    "H": np.array([[_SQRT1_2, _SQRT1_2], [_SQRT1_2, -_SQRT1_2]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "T": np.array([[1, 0], [0, np.exp(0.25j * np.pi)]], dtype=complex),
}

# two-qubit matrices in the basis |a b> with the first listed qubit as the high bit
FIXED_2Q = {
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}

ROTATIONS = ("RX", "RY", "RZ")

# number of angle parameters per gate kind
N_PARAMS = {**{k: 0 for k in FIXED_1Q}, **{k: 0 for k in FIXED_2Q}, "RX": 1, "RY": 1, "RZ": 1, "ROT": 3}
N_QUBITS = {**{k: 1 for k in FIXED_1Q}, **{k: 2 for k in FIXED_2Q}, "RX": 1, "RY": 1, "RZ": 1, "ROT": 1}
GATE_KINDS = tuple(N_PARAMS)


def rotation_matrices(kind, angles):
    """Stack of rotation matrices, shape ``angles.shape + (2, 2)``."""
    angles = np.asarray(angles, dtype=float)
    c = np.cos(angles / 2)
    s = np.sin(angles / 2)
    out = np.empty(angles.shape + (2, 2), dtype=complex)
    if kind == "RX":
        out[..., 0, 0] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
        out[..., 1, 1] = c
    elif kind == "RY":
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
    elif kind == "RZ":
        out[..., 0, 0] = c - 1j * s
        out[..., 0, 1] = 0
        out[..., 1, 0] = 0
        out[..., 1, 1] = c + 1j * s
    else:
        raise UsageError(f"not a rotation kind: {kind!r}")
    return out


def rot_matrices(phi, theta, omega):
    """``Rot(phi, theta, omega) = RZ(omega) RY(theta) RZ(phi)``, broadcast over angles.

    Closed form::

        [[e^{-i(phi+omega)/2} cos(theta/2), -e^{i(phi-omega)/2} sin(theta/2)],
         [e^{-i(phi-omega)/2} sin(theta/2),  e^{i(phi+omega)/2} cos(theta/2)]]
    """
    phi, theta, omega = np.broadcast_arrays(
        np.asarray(phi, dtype=float), np.asarray(theta, dtype=float), np.asarray(omega, dtype=float)
    )
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    plus = np.exp(-0.5j * (phi + omega))
    minus = np.exp(0.5j * (phi - omega))
    out = np.empty(phi.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = plus * c
    out[..., 0, 1] = -minus * s
    out[..., 1, 0] = np.conj(minus) * s
    out[..., 1, 1] = np.conj(plus) * c
    return out


def gate_matrix(kind, params=()):
    kind = kind.upper()
    if kind in FIXED_1Q:
        return FIXED_1Q[kind].copy()
    if kind in FIXED_2Q:
        return FIXED_2Q[kind].copy()
    if kind in ROTATIONS:
        return rotation_matrices(kind, params[0])
    if kind == "ROT":
        return rot_matrices(*params)
    raise ConfigurationError(f"unknown gate kind {kind!r}")


@dataclass(frozen=True)
class Gate:
    """A concrete gate: kind, qubit indices and bound angles (radians).

    For two-qubit gates the first qubit is the control where that applies.
    """

    kind: str
    qubits: tuple
    params: tuple = ()

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if kind not in N_PARAMS:
            raise ConfigurationError(f"unknown gate kind {kind!r}")
        if len(self.qubits) != N_QUBITS[kind]:
            raise ConfigurationError(f"{kind} acts on {N_QUBITS[kind]} qubit(s), got {self.qubits}")
        if len(self.params) != N_PARAMS[kind]:
            raise ConfigurationError(f"{kind} takes {N_PARAMS[kind]} angle(s), got {len(self.params)}")
        if len(set(self.qubits)) != len(self.qubits):
            raise UsageError(f"{kind}: control and target must differ, got {self.qubits}")

    def matrix(self):
        return gate_matrix(self.kind, self.params)


def _check_n_qubits(n_qubits):
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}")


def n_qubits_of(dim):
    n = int(dim).bit_length() - 1
    if dim != 1 << n or n < 1:
        raise UsageError(f"state dimension {dim} is not a power of two")
    return n


def zero_states(batch, n_qubits):
    """``batch`` copies of ``|0...0>``, shape ``(batch, 2**n)``."""
    _check_n_qubits(n_qubits)
    states = np.zeros((batch, 1 << n_qubits), dtype=complex)
    states[:, 0] = 1.0
    return states


def _check_qubits(qubits, n):
    for q in qubits:
        if not 0 <= q < n:
            raise UsageError(f"qubit index {q} out of range for {n} qubits")


def apply_matrix(states, matrix, qubits):
    """Apply a ``2**k x 2**k`` matrix to ``qubits`` of every state in the stack.

    ``matrix`` is either shared, shape ``(d, d)``, or per-state, shape
    ``(batch, d, d)``.  The first entry of ``qubits`` is the most significant
    bit of the matrix's row index.  Returns a new array.
    """
    batch, dim = states.shape
    n = n_qubits_of(dim)
    _check_qubits(qubits, n)
    if len(qubits) == 1:
        q = qubits[0]
        psi = states.reshape(batch, dim >> (q + 1), 2, 1 << q)
        if matrix.ndim == 3:
            matrix = matrix[:, None]
        return np.matmul(matrix, psi).reshape(batch, dim)
    k = len(qubits)
    # qubit q sits on tensor axis n - q (axis 0 is the batch)
    axes = [n - q for q in qubits]
    psi = states.reshape((batch,) + (2,) * n)
    psi = np.moveaxis(psi, axes, range(n + 1 - k, n + 1))
    moved_shape = psi.shape
    psi = psi.reshape(batch, -1, 1 << k)
    if matrix.ndim == 2:
        psi = psi @ matrix.T
    else:
        psi = psi @ np.swapaxes(matrix, -1, -2)
    psi = np.moveaxis(psi.reshape(moved_shape), range(n + 1 - k, n + 1), axes)
    return np.ascontiguousarray(psi).reshape(batch, dim)


@functools.lru_cache(maxsize=None)
def _permutation(kind, qubits, n):
    """Source index for every output amplitude of a permutation gate."""
    idx = np.arange(1 << n)
    a, b = qubits
    bit_a = (idx >> a) & 1
    bit_b = (idx >> b) & 1
    if kind == "CNOT":
        return idx ^ (bit_a << b)
    # SWAP
    return idx ^ ((bit_a ^ bit_b) << a) ^ ((bit_a ^ bit_b) << b)


def apply_op(states, kind, qubits, matrix=None):
    """Apply a gate by kind; CNOT and SWAP become index permutations.

    ``matrix`` is required for every other kind (shared or per-state).
    """
    if kind in ("CNOT", "SWAP"):
        n = n_qubits_of(states.shape[1])
        _check_qubits(qubits, n)
        return states[:, _permutation(kind, tuple(qubits), n)]
    if matrix is None:
        matrix = gate_matrix(kind)
    return apply_matrix(states, matrix, qubits)


def z_signs(n_qubits):
    """``(2**n, n)`` table of Z eigenvalues: ``+1`` where bit ``q`` is 0, else ``-1``."""
    idx = np.arange(1 << n_qubits)
    bits = (idx[:, None] >> np.arange(n_qubits)[None, :]) & 1
    return 1.0 - 2.0 * bits


def z_expectations(states):
    """``<Z_q>`` for every qubit of every state, shape ``(batch, n)``."""
    n = n_qubits_of(states.shape[1])
    probs = states.real**2 + states.imag**2
    return probs @ z_signs(n)


def overlaps(a, b):
    """Row-wise ``|<a|b>|**2 / (<a|a> <b|b>)``.

    Normalising by the computed norms makes identical rows give exactly 1.
    """
    ab = np.einsum("bi,bi->b", a.conj(), b)
    aa = np.einsum("bi,bi->b", a.conj(), a).real
    bb = np.einsum("bi,bi->b", b.conj(), b).real
    return np.clip(np.abs(ab) ** 2 / (aa * bb), 0.0, 1.0)


@dataclass(frozen=True)
class StateVector:
    """Immutable pure state of ``n_qubits`` qubits."""

    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        n_qubits_of(amps.size)
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self):
        return self.amplitudes.size.bit_length() - 1

    def norm(self):
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self):
        return np.abs(self.amplitudes) ** 2

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits})"


def init_state(n_qubits):
    """``|0...0>`` on ``n_qubits`` qubits (1 to 12)."""
    return StateVector(zero_states(1, n_qubits)[0])


def apply_gate(state, gate):
    n = state.n_qubits
    for q in gate.qubits:
        if not 0 <= q < n:
            raise UsageError(f"{gate.kind}: qubit index {q} out of range for {n} qubits")
    out = apply_op(state.amplitudes[None, :], gate.kind, gate.qubits, gate.matrix())
    return StateVector(out[0])


def expectation_z(state, qubit):
    if not 0 <= qubit < state.n_qubits:
        raise UsageError(f"qubit index {qubit} out of range for {state.n_qubits} qubits")
    probs = state.probabilities()
    return float(probs @ z_signs(state.n_qubits)[:, qubit])


def fidelity(a, b):
    """``|<a|b>|**2`` for two states of the same size, clipped into [0, 1]."""
    if a.n_qubits != b.n_qubits:
        raise UsageError(f"fidelity between {a.n_qubits}- and {b.n_qubits}-qubit states")
    return float(overlaps(a.amplitudes[None, :], b.amplitudes[None, :])[0])
