"""Circuit IR, circuit builders, execution and circuit-level gradients.

A :class:`CircuitIR` is an ordered list of :class:`GateSpec` whose angles are
not numbers but :class:`Slot` references, resolved at execution time:

* ``const``      - a fixed angle (used by random circuits),
* ``feature``    - ``scale * features[index]`` (data encoding),
* ``trainable``  - ``trainables[index]`` (variational angles).

Gradients with respect to every angle *occurrence* are available two ways:
:func:`shift_jacobian` (two-point parameter shift, one pair of extra circuit
runs per occurrence) and :func:`adjoint_angle_grads` (a single reverse sweep).
Both are exact for the ``exp(-i theta P / 2)`` rotations used here;
:func:`slot_gradients` maps occurrence gradients back onto feature and
trainable slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sim
from .errors import ConfigurationError, FormatError, UsageError
from .sim import Gate, StateVector

HALF_PI = math.pi / 2
RQC_ROTATIONS = ("RX", "RY", "RZ")


@dataclass(frozen=True)
class Slot:
    kind: str  # "const" | "feature" | "trainable"
    index: int = 0
    value: float = 0.0  # constant angle, or the scale of a feature slot

    def angle(self, features, trainables):
        if self.kind == "const":
            return self.value
        if self.kind == "feature":
            return self.value * features[..., self.index]
        return trainables[self.index]


def const(value):
    return Slot("const", 0, float(value))


def feature(index, scale=1.0):
    return Slot("feature", int(index), float(scale))


def trainable(index):
    return Slot("trainable", int(index))


@dataclass(frozen=True)
class GateSpec:
    kind: str
    qubits: tuple
    slots: tuple = ()


@dataclass(frozen=True)
class CircuitIR:
    """Immutable gate list over ``n_qubits`` with declared slot bounds."""

    n_qubits: int
    ops: tuple = ()
    n_features: int = 0
    n_trainables: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not 1 <= self.n_qubits <= sim.MAX_QUBITS:
            raise ConfigurationError(f"n_qubits must be in [1, {sim.MAX_QUBITS}], got {self.n_qubits}")
        for op in self.ops:
            if op.kind not in sim.N_PARAMS:
                raise ConfigurationError(f"unknown gate kind {op.kind!r}")
            if len(op.slots) != sim.N_PARAMS[op.kind] or len(op.qubits) != sim.N_QUBITS[op.kind]:
                raise ConfigurationError(f"malformed {op.kind} op: qubits={op.qubits} slots={op.slots}")
            if any(not 0 <= q < self.n_qubits for q in op.qubits):
                raise ConfigurationError(f"{op.kind} on {op.qubits} exceeds {self.n_qubits} qubits")
            if len(set(op.qubits)) != len(op.qubits):
                raise ConfigurationError(f"{op.kind}: repeated qubit in {op.qubits}")
            for slot in op.slots:
                if slot.kind == "feature" and not 0 <= slot.index < self.n_features:
                    raise ConfigurationError(f"feature slot {slot.index} >= declared {self.n_features}")
                if slot.kind == "trainable" and not 0 <= slot.index < self.n_trainables:
                    raise ConfigurationError(f"trainable slot {slot.index} >= declared {self.n_trainables}")
                if slot.kind not in ("const", "feature", "trainable"):
                    raise ConfigurationError(f"unknown slot kind {slot.kind!r}")

    def then(self, other):
        """Concatenate two circuits on the same register."""
        if other.n_qubits != self.n_qubits:
            raise ConfigurationError("cannot compose circuits on different registers")
        return CircuitIR(
            self.n_qubits,
            self.ops + other.ops,
            max(self.n_features, other.n_features),
            max(self.n_trainables, other.n_trainables),
        )

    def __len__(self):
        return len(self.ops)

    def occurrences(self):
        """``(op_index, param_index, slot)`` for every angle in gate order."""
        return [(i, p, s) for i, op in enumerate(self.ops) for p, s in enumerate(op.slots)]


# --- builders --------------------------------------------------------------


def angle_embedding(n_qubits, weights=None, feature_offset=0):
    """``RY(pi * w_j * x_{offset+j})`` on qubit ``j``."""
    if weights is None:
        weights = [1.0] * n_qubits
    if len(weights) != n_qubits:
        raise ConfigurationError(f"{len(weights)} embedding weights for {n_qubits} qubits")
    ops = [
        GateSpec("RY", (j,), (feature(feature_offset + j, math.pi * float(w)),))
        for j, w in enumerate(weights)
    ]
    return CircuitIR(n_qubits, ops, n_features=feature_offset + n_qubits)


def strongly_entangling_block(n_qubits, trainable_offset=0):
    """One ``Rot`` per qubit on trainable slots, then a CNOT ring ``q -> q+1 mod n``.

    Consumes ``3 * n_qubits`` trainable slots starting at ``trainable_offset``.
    """
    if n_qubits < 2:
        raise ConfigurationError("an entangling block needs at least 2 qubits")
    ops = []
    for q in range(n_qubits):
        k = trainable_offset + 3 * q
        ops.append(GateSpec("ROT", (q,), (trainable(k), trainable(k + 1), trainable(k + 2))))
    for q in range(n_qubits):
        ops.append(GateSpec("CNOT", (q, (q + 1) % n_qubits)))
    return CircuitIR(n_qubits, ops, n_trainables=trainable_offset + 3 * n_qubits)


@dataclass(frozen=True)
class RqcSpec:
    """Seed and shape of a random quantum circuit.

    Each layer draws, from a PCG64 stream seeded with ``seed``: one rotation
    kind per qubit (uniform over RX/RY/RZ, qubit order), one angle per qubit
    (uniform on ``[0, 2 pi)``), then a CNOT on a uniformly drawn ordered pair
    of distinct qubits.
    """

    seed: int
    n_qubits: int = 4
    depth: int = 4

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"RQC seed must fit in 64 unsigned bits, got {self.seed}")
        if self.depth < 0:
            raise ConfigurationError(f"RQC depth must be >= 0, got {self.depth}")
        if not 1 <= self.n_qubits <= sim.MAX_QUBITS:
            raise ConfigurationError(f"bad RQC width {self.n_qubits}")


def build_rqc(spec):
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.n_qubits
    ops = []
    for _ in range(spec.depth):
        kinds = rng.integers(0, len(RQC_ROTATIONS), size=n)
        angles = rng.random(size=n) * (2 * math.pi)
        for q in range(n):
            ops.append(GateSpec(RQC_ROTATIONS[kinds[q]], (q,), (const(angles[q]),)))
        if n >= 2:
            control = int(rng.integers(0, n))
            target = int(rng.integers(0, n - 1))
            if target >= control:
                target += 1
            ops.append(GateSpec("CNOT", (control, target)))
    return CircuitIR(n, ops)


# --- execution -------------------------------------------------------------


def _check_inputs(circuit, features, trainables):
    if circuit.n_features and (features is None or np.shape(features)[-1] < circuit.n_features):
        raise UsageError(f"circuit needs {circuit.n_features} features, got shape {np.shape(features)}")
    if circuit.n_trainables and (trainables is None or len(trainables) < circuit.n_trainables):
        raise UsageError(f"circuit needs {circuit.n_trainables} trainables, got {0 if trainables is None else len(trainables)}")


def resolve_gates(circuit, features=None, trainables=None):
    """Bind slots for a single sample, giving concrete :class:`~qpatch.sim.Gate` objects."""
    _check_inputs(circuit, features, trainables)
    f = None if features is None else np.asarray(features, dtype=float)
    t = None if trainables is None else np.asarray(trainables, dtype=float)
    return [
        Gate(op.kind, op.qubits, tuple(float(s.angle(f, t)) for s in op.slots))
        for op in circuit.ops
    ]


def execute(circuit, features=None, trainables=None, initial=None):
    """Run ``circuit`` on one state; gates applied one by one with :func:`sim.apply_gate`."""
    state = sim.init_state(circuit.n_qubits) if initial is None else initial
    if state.n_qubits != circuit.n_qubits:
        raise UsageError(f"{circuit.n_qubits}-qubit circuit on a {state.n_qubits}-qubit state")
    for gate in resolve_gates(circuit, features, trainables):
        state = sim.apply_gate(state, gate)
    return state


def resolve_angles(circuit, features, trainables, batch):
    """Per-op angle arrays: shape ``(n_params,)`` if shared, ``(batch, n_params)`` if data-dependent."""
    _check_inputs(circuit, features, trainables)
    out = []
    for op in circuit.ops:
        if not op.slots:
            out.append(None)
            continue
        if any(s.kind == "feature" for s in op.slots):
            cols = [np.broadcast_to(s.angle(features, trainables), (batch,)) for s in op.slots]
            out.append(np.stack(cols, axis=1).astype(float))
        else:
            out.append(np.array([s.angle(features, trainables) for s in op.slots], dtype=float))
    return out


def _op_matrices(ops, angles):
    """Matrix for every op (``None`` for permutation gates).

    Parametrised matrices are built in one vectorised call per
    (kind, shared-or-per-sample) group.
    """
    out = [None] * len(ops)
    groups = {}
    for i, (op, a) in enumerate(zip(ops, angles)):
        if a is None:
            if op.kind not in ("CNOT", "SWAP"):
                out[i] = sim.gate_matrix(op.kind)
        else:
            groups.setdefault((op.kind, a.ndim), []).append(i)
    for (kind, _), idx in groups.items():
        stacked = np.stack([angles[i] for i in idx])
        if kind == "ROT":
            mats = sim.rot_matrices(stacked[..., 0], stacked[..., 1], stacked[..., 2])
        else:
            mats = sim.rotation_matrices(kind, stacked[..., 0])
        for j, i in enumerate(idx):
            out[i] = mats[j]
    return out


def _batch_inputs(circuit, features, states):
    if features is not None:
        features = np.atleast_2d(np.asarray(features, dtype=float))
    if states is None:
        batch = 1 if features is None else features.shape[0]
        states = sim.zero_states(batch, circuit.n_qubits)
    batch = states.shape[0]
    if features is not None and features.shape[0] != batch:
        raise UsageError(f"{features.shape[0]} feature rows for {batch} states")
    return features, states


def run(circuit, features=None, trainables=None, states=None):
    """Batched execution.

    ``features`` has shape ``(batch, n_features)``; ``states`` defaults to
    ``|0...0>`` for each row.  Returns the final states, ``(batch, 2**n)``.
    """
    features, states = _batch_inputs(circuit, features, states)
    angles = resolve_angles(circuit, features, trainables, states.shape[0])
    return _run_ops(circuit.ops, angles, states)


def _run_ops(ops, angles, states, matrices=None):
    if matrices is None:
        matrices = _op_matrices(ops, angles)
    for op, m in zip(ops, matrices):
        states = sim.apply_op(states, op.kind, op.qubits, m)
    return states


def expectations(circuit, features=None, trainables=None, states=None):
    """``<Z_q>`` of the output state for every qubit, shape ``(batch, n)``."""
    return sim.z_expectations(run(circuit, features, trainables, states))


# --- gradients -------------------------------------------------------------


def shift_jacobian(circuit, features=None, trainables=None, states=None, occurrences=None):
    """Jacobian of every ``<Z_q>`` with respect to every angle occurrence.

    Each occurrence is shifted by ``+-pi/2`` in isolation and
    ``d<Z>/da = (f(a + pi/2) - f(a - pi/2)) / 2``.  Shape
    ``(batch, n_occurrences, n_qubits)``, occurrences ordered as
    :meth:`CircuitIR.occurrences`.  ``occurrences`` restricts the work to the
    listed positions; the other rows are left at zero.
    """
    features, states = _batch_inputs(circuit, features, states)
    batch = states.shape[0]
    angles = resolve_angles(circuit, features, trainables, batch)
    occ = circuit.occurrences()
    jac = np.zeros((batch, len(occ), circuit.n_qubits))
    # prefix[i] is the state entering op i
    matrices = _op_matrices(circuit.ops, angles)
    prefix = [states]
    for op, m in zip(circuit.ops, matrices):
        prefix.append(sim.apply_op(prefix[-1], op.kind, op.qubits, m))
    selected = range(len(occ)) if occurrences is None else occurrences
    for k in selected:
        i, p, _ = occ[k]
        op = circuit.ops[i]
        values = []
        for shift in (HALF_PI, -HALF_PI):
            a = np.array(angles[i], copy=True)
            a[..., p] += shift
            (m,) = _op_matrices([op], [a])
            psi = sim.apply_op(prefix[i], op.kind, op.qubits, m)
            psi = _run_ops(circuit.ops[i + 1:], None, psi, matrices[i + 1:])
            values.append(sim.z_expectations(psi))
        jac[:, k, :] = (values[0] - values[1]) / 2
    return jac


def _elementary(circuit, angles):
    """Expand ops into ``(kind, qubits, angle, occurrence)`` steps; ROT becomes RZ RY RZ."""
    steps = []
    k = 0
    for op, a in zip(circuit.ops, angles):
        if a is None:
            steps.append((op.kind, op.qubits, None, None))
        elif op.kind == "ROT":
            for p, kind in ((0, "RZ"), (1, "RY"), (2, "RZ")):
                steps.append((kind, op.qubits, a[..., p], k + p))
            k += 3
        else:
            steps.append((op.kind, op.qubits, a[..., 0], k))
            k += 1
    return steps, k


def _step_matrices(steps):
    """Forward matrices and stacked ``(psi, lambda)`` daggers for every step.

    Rotation matrices are built in one vectorised call per (kind, sharing) group.
    """
    fwd = [None] * len(steps)
    groups = {}
    for i, (kind, _, angle, _) in enumerate(steps):
        if angle is None:
            if kind not in ("CNOT", "SWAP"):
                fwd[i] = sim.gate_matrix(kind)
            continue
        groups.setdefault((kind, np.ndim(angle)), []).append(i)
    for (kind, ndim), idx in groups.items():
        mats = sim.rotation_matrices(kind, np.stack([steps[i][2] for i in idx]))
        for j, i in enumerate(idx):
            fwd[i] = mats[j]
    back = []
    for m in fwd:
        if m is None:
            back.append(None)
        elif m.ndim == 3:
            md = _dagger(m)
            back.append(np.concatenate([md, md]))
        else:
            back.append(_dagger(m))
    return fwd, back


def _dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def adjoint_angle_grads(circuit, features=None, trainables=None, dz=None, states=None):
    """Vector-Jacobian product of the Z expectations by reverse-mode sweep.

    Returns ``d/da sum_q dz[b, q] <Z_q>_b`` for every angle occurrence, shape
    ``(batch, n_occurrences)``, and the forward ``<Z>`` values.  ``dz`` may
    be a callable that receives the forward ``<Z>`` values and returns the
    cotangent, so callers can avoid a second forward pass.  Agrees with
    ``einsum('bkq,bq->bk', shift_jacobian(...), dz)`` to rounding error.

    For a rotation ``exp(-i a P / 2)`` the derivative is ``Im <lam|P|psi>``
    with ``psi`` the state just after the gate and ``lam`` the adjoint state
    there.
    """
    features, states = _batch_inputs(circuit, features, states)
    batch = states.shape[0]
    angles = resolve_angles(circuit, features, trainables, batch)
    steps, n_occ = _elementary(circuit, angles)
    fwd, back = _step_matrices(steps)
    psi = states
    for (kind, qubits, _, _), m in zip(steps, fwd):
        psi = sim.apply_op(psi, kind, qubits, m)
    z = sim.z_expectations(psi)
    signs = sim.z_signs(circuit.n_qubits)
    if callable(dz):
        dz = dz(z)
    lam = psi * (np.asarray(dz, dtype=float) @ signs.T)
    pair = np.concatenate([psi, lam])
    grads = np.zeros((batch, n_occ))
    for (kind, qubits, _, k), md in zip(reversed(steps), reversed(back)):
        if k is not None:
            psi, lam = pair[:batch], pair[batch:]
            if kind == "RZ":
                grads[:, k] = np.imag(lam.conj() * psi) @ signs[:, qubits[0]]
            else:
                p_psi = sim.apply_matrix(psi, sim.PAULI[kind[1]], qubits)
                grads[:, k] = np.einsum("bi,bi->b", lam.conj(), p_psi).imag
        pair = sim.apply_op(pair, kind, qubits, md)
    return grads, z


def slot_gradients(circuit, occ_grads):
    """Fold occurrence gradients ``(batch, n_occ)`` onto slots.

    Returns ``(d_features, d_trainables)`` with shapes
    ``(batch, n_features)`` and ``(batch, n_trainables)``.
    """
    batch = occ_grads.shape[0]
    d_feat = np.zeros((batch, circuit.n_features))
    d_train = np.zeros((batch, circuit.n_trainables))
    for k, (_, _, slot) in enumerate(circuit.occurrences()):
        if slot.kind == "feature":
            d_feat[:, slot.index] += slot.value * occ_grads[:, k]
        elif slot.kind == "trainable":
            d_train[:, slot.index] += occ_grads[:, k]
    return d_feat, d_train


# --- text serialization ----------------------------------------------------


def _slot_text(slot):
    if slot.kind == "const":
        return f"c:{slot.value!r}"
    if slot.kind == "feature":
        return f"f:{slot.index}*{slot.value!r}"
    return f"t:{slot.index}"


def _parse_slot(token):
    tag, _, body = token.partition(":")
    if tag == "c":
        return const(float(body))
    if tag == "f":
        idx, _, scale = body.partition("*")
        return feature(int(idx), float(scale))
    if tag == "t":
        return trainable(int(body))
    raise FormatError(f"bad slot token {token!r}")


def to_text(circuit):
    """Line format: header ``QPIR v1 n_qubits=<n> ...`` then ``KIND q0 [q1] slot...``."""
    lines = [
        f"QPIR v1 n_qubits={circuit.n_qubits} n_features={circuit.n_features} "
        f"n_trainables={circuit.n_trainables}"
    ]
    for op in circuit.ops:
        parts = [op.kind, *map(str, op.qubits), *map(_slot_text, op.slots)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def from_text(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("QPIR v1"):
        raise FormatError("missing 'QPIR v1' header")
    header = dict(tok.split("=", 1) for tok in lines[0].split()[2:] if "=" in tok)
    if "n_qubits" not in header:
        raise FormatError("header lacks n_qubits")
    ops = []
    for lineno, line in enumerate(lines[1:], start=2):
        kind, *rest = line.split()
        kind = kind.upper()
        if kind not in sim.N_QUBITS:
            raise FormatError(f"line {lineno}: unknown gate {kind!r}")
        nq = sim.N_QUBITS[kind]
        try:
            qubits = tuple(int(t) for t in rest[:nq])
            slots = tuple(_parse_slot(t) for t in rest[nq:])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        ops.append(GateSpec(kind, qubits, slots))
    n_feat = int(header.get("n_features", 0))
    n_train = int(header.get("n_trainables", 0))
    for op in ops:
        for s in op.slots:
            if s.kind == "feature":
                n_feat = max(n_feat, s.index + 1)
            elif s.kind == "trainable":
                n_train = max(n_train, s.index + 1)
    try:
        return CircuitIR(int(header["n_qubits"]), ops, n_feat, n_train)
    except ConfigurationError as exc:
        raise FormatError(str(exc)) from exc


def save_circuit(circuit, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(to_text(circuit))


def load_circuit(path):
    with open(path, encoding="ascii") as fh:
        return from_text(fh.read())


__all__ = [
    "CircuitIR",
    "GateSpec",
    "RqcSpec",
    "Slot",
    "StateVector",
    "adjoint_angle_grads",
    "angle_embedding",
    "build_rqc",
    "const",
    "execute",
    "expectations",
    "feature",
    "from_text",
    "load_circuit",
    "resolve_gates",
    "run",
    "save_circuit",
    "shift_jacobian",
    "slot_gradients",
    "strongly_entangling_block",
    "to_text",
    "trainable",
]
