"""Spin operators and central-spin Hamiltonians.

Conventions
-----------
- Site 0 is the central spin, sites 1..N-1 are satellites.
- Tensor slot 0 is the most significant bit of the basis index.
- ``|up>`` is index 0 of each 2x2 block, so a set bit means spin down.
- Configuration values are cyclic frequencies in MHz and times in us.
  Hamiltonians are returned in angular units (rad/us); :func:`angular` is the
  single place where the 2*pi conversion happens.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SX, SY, SZ = SIGMA_X / 2, SIGMA_Y / 2, SIGMA_Z / 2


def angular(freq_mhz):
    """Convert a cyclic frequency in MHz to an angular frequency in rad/us."""
    return TWO_PI * np.asarray(freq_mhz, dtype=float)


@dataclass(frozen=True)
class SystemSpec:
    """Static model parameters.

    All frequencies are cyclic (MHz), ``period`` is in us and the pulse
    errors are dimensionless fractions of a pi rotation.
    """

    n_spins: int
    j_xy_mean: float = 1.0
    j_z_mean: float = 1.0
    delta_j: float = 0.0
    b_central: float = 0.0
    b_satellite: float = 0.0
    delta_b_satellite: float = 0.0
    e_central: float = 0.0
    e_satellite: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 2:
            raise ValueError(f"n_spins must be an integer >= 2, got {self.n_spins}")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        if self.delta_j < 0 or self.delta_b_satellite < 0:
            raise ValueError("disorder widths must be non-negative")
        for name in ("e_central", "e_satellite"):
            if not -1 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (-1, 1)")

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    def uniform(self) -> "CouplingRealization":
        """Realization with every satellite at the mean values."""
        k = self.n_spins - 1
        return CouplingRealization(
            j_xy=(self.j_xy_mean,) * k,
            j_z=(self.j_z_mean,) * k,
            b_sat=(self.b_satellite,) * k,
            seed=0,
        )


@dataclass(frozen=True)
class CouplingRealization:
    """Per-satellite couplings and Zeeman energies (MHz) and the seed used."""

    j_xy: tuple[float, ...]
    j_z: tuple[float, ...]
    b_sat: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        for name in ("j_xy", "j_z", "b_sat"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not len(self.j_xy) == len(self.j_z) == len(self.b_sat):
            raise ValueError("coupling lists must have equal length")

    @property
    def n_satellites(self) -> int:
        return len(self.j_z)


def embed_site_operator(op: np.ndarray, site: int, n_spins: int) -> np.ndarray:
    """Return ``I x ... x op x ... x I`` with ``op`` at tensor slot ``site``."""
    if not 0 <= site < n_spins:
        raise ValueError(f"site {site} out of range for {n_spins} spins")
    op = np.asarray(op, dtype=complex)
    left = np.eye(2**site, dtype=complex)
    right = np.eye(2 ** (n_spins - site - 1), dtype=complex)
    return np.kron(np.kron(left, op), right)


@lru_cache(maxsize=None)
def z_signs(n_spins: int) -> np.ndarray:
    """Diagonal of ``S_z`` for every site, shape ``(2**n_spins, n_spins)``.

    Entry ``[k, i]`` is +1/2 when bit ``i`` (counted from the most significant
    end) of ``k`` is clear and -1/2 when it is set.
    """
    idx = np.arange(2**n_spins)[:, None]
    shift = n_spins - 1 - np.arange(n_spins)[None, :]
    signs = 0.5 - ((idx >> shift) & 1)
    signs.setflags(write=False)
    return signs


def _check_lengths(spec: SystemSpec, real: CouplingRealization) -> None:
    if real.n_satellites != spec.n_spins - 1:
        raise ValueError(
            f"realization has {real.n_satellites} satellites, spec needs {spec.n_spins - 1}"
        )


def _diagonal_energies(spec: SystemSpec, real: CouplingRealization) -> np.ndarray:
    signs = z_signs(spec.n_spins)
    central, sats = signs[:, 0], signs[:, 1:]
    jz = angular(real.j_z)
    bsat = angular(real.b_sat)
    return central * (sats @ jz) + angular(spec.b_central) * central + sats @ bsat


def build_xxz_hamiltonian(spec: SystemSpec, real: CouplingRealization) -> np.ndarray:
    """XXZ central-spin Hamiltonian in rad/us (dense, Hermitian, traceless)."""
    _check_lengths(spec, real)
    n = spec.n_spins
    h = np.diag(_diagonal_energies(spec, real)).astype(complex)
    # flip-flop part: S_x S_x + S_y S_y = (S+ S- + S- S+)/2
    sp0 = embed_site_operator(SX + 1j * SY, 0, n)
    for i, jxy in enumerate(angular(real.j_xy), start=1):
        spi = embed_site_operator(SX + 1j * SY, i, n)
        hop = sp0 @ spi.conj().T
        h += 0.5 * jxy * (hop + hop.conj().T)
    return h


def build_effective_ising_hamiltonian(spec: SystemSpec, real: CouplingRealization) -> np.ndarray:
    """Ising part of the XXZ Hamiltonian (flip-flop terms dropped), diagonal."""
    _check_lengths(spec, real)
    return np.diag(_diagonal_energies(spec, real)).astype(complex)


def build_finite_pulse_drive(
    spec: SystemSpec,
    eta: float,
    b_sat: Sequence[float] | None = None,
) -> Callable[[float], np.ndarray]:
    """Time-dependent AC drive that replaces the instantaneous pi pulses.

    The central spin is driven at ``b_central`` and satellite ``i`` at
    ``b_sat[i]`` (nominal ``b_satellite`` for all when ``b_sat`` is None),
    each with an envelope of area ``pi (1 - e)`` spread over the last
    ``eta * period`` of every period.

    Returns
    -------
    callable
        ``V(t)`` giving the drive matrix in rad/us at time ``t`` (us).
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    n, period = spec.n_spins, spec.period
    window = eta * period
    if b_sat is None:
        b_sat = (spec.b_satellite,) * (n - 1)
    if len(b_sat) != n - 1:
        raise ValueError("b_sat must have one entry per satellite")
    amp_c = np.pi * (1 - spec.e_central) / window
    amp_s = np.pi * (1 - spec.e_satellite) / window
    w_c = float(angular(spec.b_central))
    w_s = angular(b_sat)
    sx = [embed_site_operator(SX, i, n) for i in range(n)]
    zero = np.zeros((2**n, 2**n), dtype=complex)

    def drive(t: float) -> np.ndarray:
        s = np.ceil(t / period)
        if s < 1 or not (s * period - window < t < s * period):
            return zero.copy()
        v = amp_c * np.cos(w_c * t) * sx[0]
        for i in range(1, n):
            v = v + amp_s * np.cos(w_s[i - 1] * t) * sx[i]
        return v

    return drive
