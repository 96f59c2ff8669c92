"""Analytic and semi-analytic references.

Closed-form two-period states of the effective Ising model for three and four
spins, resonance predicates, the first-order BCH generator of the H2I
protocol and the power-law fit of H2I lifetimes against the pulse count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evolve import floquet_pulses, propagator
from .spinops import (
    SX,
    SY,
    SZ,
    CouplingRealization,
    SystemSpec,
    angular,
    build_effective_ising_hamiltonian,
    embed_site_operator,
)

RESONANCE_TOL = 1e-9
H2I_THRESHOLD = 0.46

# Fixed partner parameters of the two closed-form regimes (MHz).
VARY_B_COUPLING = 1.0
VARY_J_FIELD = 300.0

# Exponent multipliers (in units of iJ/2) of the four-spin, varying-J form.
_N4_J_MULT = np.array([-3, -1, -1, 1, -1, 1, 1, 3, 3, 1, 1, -1, 1, -1, -1, -3])


class OracleError(ValueError):
    """Unsupported oracle input."""


def _normalized(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def two_period_closed_form(
    n_spins: int,
    regime: str,
    value: float,
    e_central: float,
    amplitudes: Sequence[complex],
    period: float = 1.0,
) -> np.ndarray:
    """State after two periods of the effective Ising model, in closed form.

    Parameters
    ----------
    n_spins : {3, 4}
    regime : {"vary_b", "vary_j"}
        ``vary_b`` treats ``value`` as ``b_central`` (MHz) at a coupling of
        1 MHz; ``vary_j`` treats it as the isotropic coupling ``J`` (MHz) at
        ``b_central = 300`` MHz.
    e_central : float
        Central pulse error; satellites are pulsed perfectly.
    amplitudes : sequence of complex
        Initial amplitudes in the computational basis.

    Returns
    -------
    numpy.ndarray
        Normalized amplitude vector. Agreement with direct evolution holds up
        to a global phase.
    """
    if n_spins not in (3, 4) or regime not in ("vary_b", "vary_j"):
        raise OracleError(f"no closed form for n_spins={n_spins}, regime={regime!r}")
    a = np.asarray(amplitudes, dtype=complex)
    dim = 2**n_spins
    if a.shape != (dim,):
        raise OracleError(f"need {dim} amplitudes, got shape {a.shape}")
    half = dim // 2
    partner = (np.arange(dim) + half) % dim
    err = np.pi * e_central
    c, s = np.cos(err), np.sin(err)
    out = np.empty(dim, dtype=complex)

    if regime == "vary_b":
        ph = np.exp(-1j * float(angular(value)) * period)
        # lower half carries the conjugate phases
        phs = np.where(np.arange(dim) < half, ph, np.conj(ph))
        if n_spins == 3:
            out = a / 2 * ((-1 + phs) - (1 + phs) * c) - 1j * a[partner] / 2 * (1 + 1 / phs) * s
        else:
            out = a / 2 * ((1 + phs) - (-1 + phs) * c) - 1j * a[partner] / 2 * (-1 + 1 / phs) * s
        return _normalized(out)

    jt = float(angular(value)) * period
    if n_spins == 3:
        signs = {0: -1, 3: 1, 4: 1, 7: -1}
        for k in range(dim):
            if k in signs:
                ph = np.exp(1j * signs[k] * jt)
                out[k] = a[k] / 2 * (1 - ph - c - ph * c) - 1j * a[partner[k]] / 2 * (1 + 1 / ph) * s
            else:
                out[k] = -a[k] * c - 1j * a[partner[k]] * s
        return _normalized(out)

    ph = np.exp(1j * _N4_J_MULT * jt / 2)
    out = a / 2 * (-1 + ph + c + ph * c) + 1j * a[partner] / 2 * (1 + 1 / ph) * s
    return _normalized(out)


def multi_period_closed_form(e_central: float, amplitudes: Sequence[complex], n_periods: int) -> np.ndarray:
    """Three-spin state after an even number of periods at integer ``b_central``.

    With a 1 MHz coupling and integer field the two-period map is a pure
    rotation of the central spin by the pulse error, so each amplitude mixes
    with its central-spin partner as ``cos(n e / 2)`` and ``i sin(n e / 2)``.
    """
    if n_periods % 2:
        raise OracleError("closed form holds for even period counts only")
    a = np.asarray(amplitudes, dtype=complex)
    if a.shape != (8,):
        raise OracleError("need 8 amplitudes")
    theta = n_periods * np.pi * e_central / 2
    partner = (np.arange(8) + 4) % 8
    return _normalized(a * np.cos(theta) + 1j * a[partner] * np.sin(theta))


def closed_form_setting(n_spins: int, regime: str, value: float, e_central: float) -> SystemSpec:
    """The :class:`SystemSpec` a closed form describes."""
    if regime == "vary_b":
        b, j = value, VARY_B_COUPLING
    elif regime == "vary_j":
        b, j = VARY_J_FIELD, value
    else:
        raise OracleError(f"unknown regime {regime!r}")
    return SystemSpec(n_spins, j_xy_mean=j, j_z_mean=j, b_central=b, e_central=e_central)


def effective_ising_evolution(
    spec: SystemSpec, amplitudes: Sequence[complex], n_periods: int = 2,
    real: CouplingRealization | None = None,
) -> np.ndarray:
    """Numeric reference: ``(U_pi exp(-i H_eff T))^n`` applied to ``amplitudes``."""
    real = real or spec.uniform()
    u = floquet_pulses(spec) @ propagator(build_effective_ising_hamiltonian(spec, real), spec.period)
    psi = _normalized(np.asarray(amplitudes, dtype=complex))
    for _ in range(n_periods):
        psi = u @ psi
    return psi


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Phase-insensitive overlap ``|<a|b>|^2 / (|a|^2 |b|^2)``."""
    return float(abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real))


# -- resonance predicates ---------------------------------------------------


def _is_integer(x: float) -> bool:
    return abs(x - round(x)) <= RESONANCE_TOL


def resonance_predicate(parity: str, quantity: str, value: float, period: float = 1.0) -> bool:
    """Whether a field or coupling sits on a perfect period-doubling resonance.

    Parameters
    ----------
    parity : {"even", "odd"}
        Parity of the spin count. For couplings, ``odd`` follows the
        three-spin condition and ``even`` the four-spin one.
    quantity : {"b_central", "j_total"}
    value : float
        Cyclic frequency in MHz; the condition is applied to ``value * period``.
    """
    if parity not in ("even", "odd"):
        raise OracleError(f"parity must be 'even' or 'odd', got {parity!r}")
    x = abs(value) * period
    if quantity == "b_central":
        return _is_integer(x) if parity == "even" else _is_integer(x - 0.5)
    if quantity == "j_total":
        if parity == "odd":
            return _is_integer(x - 0.5)
        odd_int = _is_integer(x) and round(x) % 2 == 1
        third = _is_integer((3 * x - 1) / 2)
        return odd_int or third
    raise OracleError(f"quantity must be 'b_central' or 'j_total', got {quantity!r}")


def blocking_predicate(value: float, period: float = 1.0) -> bool:
    """True for couplings ``2(x+1)`` MHz, where antipodal pairing is lost."""
    x = abs(value) * period
    return _is_integer(x / 2)


# -- BCH generator ----------------------------------------------------------


def _isotropic_couplings(real: CouplingRealization) -> np.ndarray:
    if not np.allclose(real.j_xy, real.j_z, rtol=0, atol=1e-12):
        raise OracleError("BCH generator needs isotropic couplings (j_xy == j_z)")
    return angular(real.j_z)


def bch_terms(spec: SystemSpec, real: CouplingRealization, m: int, e_z: float, t: float):
    """The two merged generators ``A`` (z pulse) and ``B`` (free step ``t/m``)."""
    if m < 1:
        raise OracleError("m must be >= 1")
    n = spec.n_spins
    j = _isotropic_couplings(real)
    a = 1j * np.pi * (1 - e_z) * embed_site_operator(SZ, 0, n)
    heis = np.zeros((2**n, 2**n), dtype=complex)
    for i, ji in enumerate(j, start=1):
        for op in (SX, SY, SZ):
            heis += ji * embed_site_operator(op, 0, n) @ embed_site_operator(op, i, n)
    b = -1j * (t / m) * heis
    return a, b


def bch_exponent(spec: SystemSpec, real: CouplingRealization, m: int, e_z: float, t: float) -> np.ndarray:
    """``-i H~ t`` assembled term by term from its printed coefficients."""
    n = spec.n_spins
    j = _isotropic_couplings(real)
    if m < 1:
        raise OracleError("m must be >= 1")
    sz0 = embed_site_operator(SZ, 0, n)
    sp0 = embed_site_operator(SX + 1j * SY, 0, n)
    sm0 = sp0.conj().T
    rot = np.pi * (1 - e_z)
    g = 1j * rot * m * sz0
    for i, ji in enumerate(j, start=1):
        szi = embed_site_operator(SZ, i, n)
        spi = embed_site_operator(SX + 1j * SY, i, n)
        smi = spi.conj().T
        g = g - 1j * ji * t * sz0 @ szi
        g = g + (rot * ji * t / 2 - 1j * ji * t) * (sp0 / 2) @ smi
        g = g - (rot * ji * t / 2 + 1j * ji * t) * (sm0 / 2) @ spi
    return g


def bch_effective_hamiltonian(
    spec: SystemSpec, real: CouplingRealization, m: int, e_z: float, t: float
) -> np.ndarray:
    """``H~`` with ``-i H~ t`` given by :func:`bch_exponent`.

    Every retained term is anti-Hermitian, so ``H~`` is Hermitian. It is
    exposed as a diagnostic generator and is never used to propagate states.
    """
    if t <= 0:
        raise OracleError("t must be positive")
    return 1j * bch_exponent(spec, real, m, e_z, t) / t


# -- H2I scaling ------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    """Power law ``n = (m / alpha)^beta`` fitted in log-log space."""

    alpha: float
    beta: float
    residuals: np.ndarray
    data: tuple[tuple[float, float], ...]
    threshold: float = H2I_THRESHOLD

    def predict(self, m) -> np.ndarray:
        return (np.asarray(m, dtype=float) / self.alpha) ** self.beta


def h2i_scaling_fit(points: Sequence[tuple[float, float]], threshold: float = H2I_THRESHOLD) -> ScalingFit:
    """Least-squares fit of ``log n = beta (log m - log alpha)``.

    Two points give the exact interpolating power law.
    """
    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < 2:
        raise OracleError("need at least two (m, n_cycles) pairs")
    if np.any(data <= 0) or not np.all(np.isfinite(data)):
        raise OracleError("m and n_cycles must be positive and finite")
    if np.any(np.diff(data[:, 0]) <= 0):
        raise OracleError("m must be strictly increasing")
    x, y = np.log(data[:, 0]), np.log(data[:, 1])
    beta, intercept = np.polyfit(x, y, 1)
    if beta == 0 or not np.isfinite(beta):
        raise OracleError("degenerate fit (beta = 0)")
    alpha = float(np.exp(-intercept / beta))
    residuals = y - (beta * x + intercept)
    return ScalingFit(alpha, float(beta), residuals, tuple(map(tuple, data)), threshold)


def h2i_cycle_count(central_series, threshold: float = H2I_THRESHOLD) -> int:
    """Number of leading periods with central staggered magnetization >= threshold.

    ``central_series[k]`` is the value after ``k + 1`` periods. A series that
    never drops below the threshold returns its full length.
    """
    vals = np.asarray(central_series, dtype=float)
    below = np.flatnonzero(vals < threshold)
    return int(below[0]) if below.size else len(vals)
