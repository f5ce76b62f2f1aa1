"""A short walk through the statevector layer.

Run with ``python demos/simulator_tour.py``.
"""

import math

import numpy as np

from qpatch import circuits, sim
from qpatch.sim import Gate

# Hadamard on |0> gives an equal superposition.
plus = sim.apply_gate(sim.init_state(1), Gate("H", (0,)))
print("H|0> =", np.round(plus.amplitudes, 4), " <Z> =", round(sim.expectation_z(plus, 0), 12))

# Qubit 0 is the least significant bit, so |q1 q0> = |0 1> sits at index 1.
state = sim.StateVector(np.eye(4)[1])
after = sim.apply_gate(state, Gate("CNOT", (0, 1)))
print("CNOT(0->1) maps index 1 to index", int(np.argmax(np.abs(after.amplitudes))))

# Fidelity between |0> and RY(theta)|0> is cos^2(theta / 2).
for theta in (0.0, math.pi / 2, math.pi):
    rotated = sim.apply_gate(sim.init_state(1), Gate("RY", (0,), (theta,)))
    print(f"theta={theta:.3f}  F={sim.fidelity(sim.init_state(1), rotated):.6f}  "
          f"cos^2={math.cos(theta / 2) ** 2:.6f}")

# Circuits carry slots instead of numbers; an embedding followed by one
# entangling block is the unit the classifier repeats.
circ = circuits.angle_embedding(4).then(circuits.strongly_entangling_block(4))
print(circuits.to_text(circ).splitlines()[0], f"({len(circ)} ops)")
x = np.array([0.1, 0.5, 0.9, 0.0])
theta = np.random.default_rng(0).uniform(-0.5, 0.5, 12)
print("<Z_q> =", np.round(circuits.expectations(circ, [x], theta)[0], 4))

# The same gradient two ways: parameter shift and one adjoint sweep.
dz = np.array([[1.0, 0.0, 0.0, 0.0]])
shift = np.einsum("bkq,bq->bk", circuits.shift_jacobian(circ, [x], theta), dz)
adjoint, _ = circuits.adjoint_angle_grads(circ, [x], theta, dz)
print("max |shift - adjoint| =", float(np.max(np.abs(shift - adjoint))))
