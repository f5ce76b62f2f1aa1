"""Independent reference computations used by the test-suite.

Nothing here touches the batched kernels: operators are assembled as full
``2**n x 2**n`` matrices from explicit basis-index bookkeeping.
"""

import numpy as np


def full_operator(matrix, qubits, n):
    """Embed a 2**k x 2**k gate acting on ``qubits`` (first = high bit) into n qubits."""
    k = len(qubits)
    dim = 1 << n
    op = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        sub_in = 0
        for q in qubits:
            sub_in = (sub_in << 1) | ((col >> q) & 1)
        for sub_out in range(1 << k):
            row = col
            for pos, q in enumerate(qubits):
                bit = (sub_out >> (k - 1 - pos)) & 1
                row = (row & ~(1 << q)) | (bit << q)
            op[row, col] += matrix[sub_out, sub_in]
    return op


def random_state(rng, n):
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


def random_unitary(rng, d):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta):
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def rot(phi, theta, omega):
    return rz(omega) @ ry(theta) @ rz(phi)


CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def z_expectation(psi, q):
    probs = np.abs(psi) ** 2
    signs = np.array([1.0 if not (i >> q) & 1 else -1.0 for i in range(len(psi))])
    return float(probs @ signs)


def classifier_state(x_eff, theta, n_qubits):
    """Re-uploading classifier state via dense matrix products (features already w * x, padded)."""
    n_blocks = len(x_eff) // n_qubits
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[0] = 1
    for b in range(n_blocks):
        for j in range(n_qubits):
            psi = full_operator(ry(np.pi * x_eff[b * n_qubits + j]), [j], n_qubits) @ psi
        for q in range(n_qubits):
            a = theta[3 * n_qubits * b + 3 * q: 3 * n_qubits * b + 3 * q + 3]
            psi = full_operator(rot(*a), [q], n_qubits) @ psi
        for q in range(n_qubits):
            psi = full_operator(CNOT, [q, (q + 1) % n_qubits], n_qubits) @ psi
    return psi


def central_difference(f, x, h=1e-4):
    """Central finite-difference gradient of a scalar function of a float array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


def max_rel_err(a, b):
    """``max|a - b| / max|b|``: error relative to the reference gradient's scale."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
