"""Propagators and state evolution.

States are plain numpy arrays: a 1-D vector is a pure state, a 2-D array is
a density matrix. Propagators are dense unitary matrices; global phases are
never removed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .spinops import (
    SX,
    SZ,
    SystemSpec,
    CouplingRealization,
    angular,
    build_finite_pulse_drive,
    build_xxz_hamiltonian,
    embed_site_operator,
)


class ContractError(RuntimeError):
    """A numerical contract (Hermiticity, unitarity, ...) was violated."""


HERMITIAN_TOL = 1e-10
UNITARY_TOL = 1e-9


@dataclass(frozen=True)
class PulseSpec:
    """A round of simultaneous single-site rotations.

    ``sign`` is the sign of the exponent: -1 gives ``exp(-i angle (1-e) S)``
    as used for the Floquet x pulses, +1 the ``exp(+i ...)`` of the H2I
    z pulses.
    """

    axis: str
    angle: float
    error: float | Sequence[float]
    targets: tuple[int, ...]
    sign: int = -1

    def __post_init__(self):
        if self.axis not in ("x", "z"):
            raise ValueError(f"axis must be 'x' or 'z', got {self.axis!r}")
        if not self.targets:
            raise ValueError("pulse needs at least one target")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))


@dataclass(frozen=True)
class FloquetProtocol:
    """Which one-period drive to use.

    ``mode`` is ``"zeeman_mismatch"`` (free evolution then instantaneous
    pulses), ``"h2i"`` (``m_h2i`` z pulses on the central spin interleaved
    with free evolution) or ``"finite_pulse"`` (AC drive over the last
    ``eta`` fraction of the period).
    """

    mode: str = "zeeman_mismatch"
    m_h2i: int = 0
    e_z: float = 0.0
    eta: float = 0.0
    integrator_steps_per_pulse: int = 512
    drive_disordered_bsat: bool = False

    def __post_init__(self):
        modes = ("zeeman_mismatch", "h2i", "finite_pulse")
        if self.mode not in modes:
            raise ValueError(f"mode must be one of {modes}, got {self.mode!r}")
        if self.mode == "h2i" and self.m_h2i < 1:
            raise ValueError("h2i mode needs m_h2i >= 1")
        if self.mode != "h2i" and (self.m_h2i or self.e_z):
            raise ValueError("m_h2i and e_z only apply to h2i mode")
        if self.mode == "finite_pulse":
            if not 0 < self.eta < 1:
                raise ValueError("finite_pulse mode needs 0 < eta < 1")
            if self.integrator_steps_per_pulse < 1:
                raise ValueError("integrator_steps_per_pulse must be positive")
        elif self.eta:
            raise ValueError("eta only applies to finite_pulse mode")


def hermiticity_defect(h: np.ndarray) -> float:
    return float(np.max(np.abs(h - h.conj().T)))


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` through a Hermitian eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(h))))
    if hermiticity_defect(h) > HERMITIAN_TOL * scale:
        raise ContractError("propagator needs a Hermitian generator")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def _rotation(axis: str, theta: float, sign: int) -> np.ndarray:
    s = SX if axis == "x" else SZ
    # exp(sign * i * theta * S) with S = sigma/2
    return np.cos(theta / 2) * np.eye(2) + sign * 1j * np.sin(theta / 2) * (2 * s)


def pulse_unitary(spec: SystemSpec, pulses: PulseSpec) -> np.ndarray:
    """Product of single-site rotations ``exp(sign i angle (1-e) S_axis)``."""
    n = spec.n_spins
    if any(not 0 <= t < n for t in pulses.targets):
        raise ValueError(f"pulse targets {pulses.targets} out of range")
    errors = np.broadcast_to(np.asarray(pulses.error, dtype=float), (len(pulses.targets),))
    factors = [np.eye(2, dtype=complex) for _ in range(n)]
    for site, err in zip(pulses.targets, errors):
        factors[site] = _rotation(pulses.axis, pulses.angle * (1 - err), pulses.sign)
    u = factors[0]
    for f in factors[1:]:
        u = np.kron(u, f)
    return u


def floquet_pulses(spec: SystemSpec) -> np.ndarray:
    """Imperfect pi x pulses on every spin, errors ``e_central``/``e_satellite``."""
    n = spec.n_spins
    errors = [spec.e_central] + [spec.e_satellite] * (n - 1)
    return pulse_unitary(spec, PulseSpec("x", np.pi, errors, tuple(range(n))))


def h2i_pulse(spec: SystemSpec, e_z: float) -> np.ndarray:
    """``exp(+i pi (1 - e_z) S_z0)``."""
    return pulse_unitary(spec, PulseSpec("z", np.pi, e_z, (0,), sign=1))


def floquet_operator(
    spec: SystemSpec, real: CouplingRealization, protocol: FloquetProtocol
) -> np.ndarray:
    """One-period unitary for the instantaneous-pulse protocols."""
    if protocol.mode not in ("zeeman_mismatch", "h2i"):
        raise ValueError(
            f"floquet_operator handles instantaneous pulses only, got {protocol.mode!r}"
        )
    h = build_xxz_hamiltonian(spec, real)
    u_pi = floquet_pulses(spec)
    if protocol.mode == "zeeman_mismatch":
        u_free = propagator(h, spec.period)
    else:
        m = protocol.m_h2i
        step = h2i_pulse(spec, protocol.e_z) @ propagator(h, spec.period / m)
        u_free = np.linalg.matrix_power(step, m)
    u = u_pi @ u_free
    if unitarity_defect(u) > UNITARY_TOL:
        raise ContractError(f"Floquet operator unitarity defect {unitarity_defect(u):.2e}")
    return u


def _window_propagator(h, drive, t0, window, steps):
    u = np.eye(h.shape[0], dtype=complex)
    dt = window / steps
    for k in range(steps):
        u = propagator(h + drive(t0 + (k + 0.5) * dt), dt) @ u
    return u


@dataclass
class FinitePulseResult:
    """One-period propagator plus the step-doubling convergence diagnostic."""

    unitary: np.ndarray
    steps: int
    convergence_error: float
    converged: bool


def finite_pulse_propagator(
    spec: SystemSpec,
    real: CouplingRealization,
    eta: float,
    steps: int = 512,
    *,
    drive_disordered_bsat: bool = False,
    tol: float = 1e-6,
    check_convergence: bool = True,
    drive=None,
) -> FinitePulseResult:
    """One-period propagator with AC pulses of duration ``eta * period``.

    Free evolution for ``(1 - eta) T`` is followed by midpoint
    piecewise-constant exponentials of ``H + V(t)`` across the pulse window.
    When ``check_convergence`` is set the window is re-integrated with
    ``2 * steps`` and the max entry difference is reported; ``converged`` is
    False when it exceeds ``tol``.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    period = spec.period
    h = build_xxz_hamiltonian(spec, real)
    if drive is None:
        b_sat = real.b_sat if drive_disordered_bsat else None
        drive = build_finite_pulse_drive(spec, eta, b_sat)
    window = eta * period
    t0 = period - window
    u_free = propagator(h, t0)
    u_win = _window_propagator(h, drive, t0, window, steps)
    err = 0.0
    if check_convergence:
        u_fine = _window_propagator(h, drive, t0, window, 2 * steps)
        err = float(np.max(np.abs(u_fine - u_win)))
    u = u_win @ u_free
    defect = unitarity_defect(u)
    if defect > 1e-8:
        raise ContractError(f"finite-pulse propagator unitarity defect {defect:.2e}")
    return FinitePulseResult(u, steps, err, err <= tol)


def period_unitary(spec: SystemSpec, real: CouplingRealization, protocol: FloquetProtocol):
    """Dispatch to the propagator matching ``protocol.mode``."""
    if protocol.mode == "finite_pulse":
        res = finite_pulse_propagator(
            spec,
            real,
            protocol.eta,
            protocol.integrator_steps_per_pulse,
            drive_disordered_bsat=protocol.drive_disordered_bsat,
            check_convergence=False,
        )
        return res.unitary
    return floquet_operator(spec, real, protocol)


def product_state(bits: str) -> np.ndarray:
    """Pure z-basis product state from a string over ``{u, d}`` (site 0 first)."""
    bits = bits.strip().lower()
    if not bits or set(bits) - {"u", "d"}:
        raise ValueError(f"state must be a string over 'u'/'d', got {bits!r}")
    index = int(bits.replace("u", "0").replace("d", "1"), 2)
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[index] = 1.0
    return psi


def depolarize_satellites(psi0: np.ndarray, p: float) -> np.ndarray:
    """Apply ``rho -> (1-p) rho + p I/2`` to every satellite of a product state.

    ``psi0`` must be a single z-basis vector; the central spin is untouched.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    psi0 = np.asarray(psi0)
    nz = np.flatnonzero(np.abs(psi0) > 1e-12)
    if psi0.ndim != 1 or len(nz) != 1:
        raise ValueError("depolarize_satellites needs a z-basis product state")
    n = int(np.log2(psi0.size))
    index = int(nz[0])
    rho = None
    for site in range(n):
        bit = (index >> (n - 1 - site)) & 1
        proj = np.zeros((2, 2), dtype=complex)
        proj[bit, bit] = 1.0
        factor = proj if site == 0 else (1 - p) * proj + (p / 2) * np.eye(2)
        rho = factor if rho is None else np.kron(rho, factor)
    return rho


def step(state: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance a pure or mixed state by one application of ``u``."""
    if state.shape[0] != u.shape[0]:
        raise ValueError(f"state dimension {state.shape[0]} != propagator {u.shape[0]}")
    if state.ndim == 1:
        return u @ state
    return u @ state @ u.conj().T


def evolve_stroboscopic(state0: np.ndarray, u: np.ndarray, n_periods: int) -> Iterator[np.ndarray]:
    """Yield ``U^n state0`` (or ``U^n rho U^-n``) for ``n = 1..n_periods``.

    No renormalization is applied.
    """
    state = np.asarray(state0, dtype=complex)
    if state.shape[0] != u.shape[0]:
        raise ValueError(f"state dimension {state.shape[0]} != propagator {u.shape[0]}")
    for _ in range(n_periods):
        state = step(state, u)
        yield state


def is_valid_state(state: np.ndarray, tol: float = 1e-10) -> bool:
    if state.ndim == 1:
        return abs(np.linalg.norm(state) - 1) <= tol
    if abs(np.trace(state) - 1) > tol or hermiticity_defect(state) > tol:
        return False
    return float(np.linalg.eigvalsh(state).min()) >= -1e-9
