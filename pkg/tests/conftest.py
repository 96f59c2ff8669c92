"""Independent reference routines shared by the test modules.

Nothing here imports the package's operator builders: each helper rebuilds
its object from Pauli matrices with plain loops so it can serve as an oracle.
"""

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def kron_all(factors):
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = np.kron(out, f)
    return out


def site_op(op, site, n):
    return kron_all([op if k == site else PAULI["I"] for k in range(n)])


def naive_xxz(n, j_xy, j_z, b_c, b_sat):
    """Sum-of-Kronecker-products XXZ Hamiltonian in rad/us (inputs in MHz)."""
    w = 2 * np.pi
    s = {a: PAULI[a] / 2 for a in "XYZ"}
    h = w * b_c * site_op(s["Z"], 0, n)
    for i in range(1, n):
        h = h + w * j_xy[i - 1] * (
            site_op(s["X"], 0, n) @ site_op(s["X"], i, n) + site_op(s["Y"], 0, n) @ site_op(s["Y"], i, n)
        )
        h = h + w * j_z[i - 1] * site_op(s["Z"], 0, n) @ site_op(s["Z"], i, n)
        h = h + w * b_sat[i - 1] * site_op(s["Z"], i, n)
    return h


def expm_taylor(a, squarings=20, terms=30):
    """Scaling-and-squaring Taylor exponential, independent of eigh."""
    a = a / 2**squarings
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def x_rotation(theta):
    return np.cos(theta / 2) * PAULI["I"] - 1j * np.sin(theta / 2) * PAULI["X"]


def random_unitary(dim, rng):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(dim, rng):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
