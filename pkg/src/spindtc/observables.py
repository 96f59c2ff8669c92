"""Stroboscopic observables, the stability count and Floquet spectra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evolve import ContractError, unitarity_defect
from .spinops import z_signs

HIGH = 0.95
LOW = 0.05


def _populations(state: np.ndarray) -> np.ndarray:
    if state.ndim == 1:
        return np.abs(state) ** 2
    return np.real(np.diagonal(state))


def magnetizations(state: np.ndarray) -> np.ndarray:
    """``<S_z,i>`` for every site of a pure or mixed state."""
    n = int(round(np.log2(state.shape[0])))
    return _populations(state) @ z_signs(n)


def staggered_magnetization(state: np.ndarray, site: int, n: int) -> float:
    """``|(-1)^n <S_z,site>|``."""
    n_spins = int(round(np.log2(state.shape[0])))
    if not 0 <= site < n_spins:
        raise ValueError(f"site {site} out of range for {n_spins} spins")
    return abs((-1) ** n * float(magnetizations(state)[site]))


def satellite_average(values) -> float:
    """Mean of the per-satellite absolute staggered magnetizations."""
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0:
        raise ValueError("no satellite values to average")
    return float(values.mean())


def return_probability(state0: np.ndarray, state: np.ndarray) -> float:
    """``|<psi0|psi>|^2``; for density matrices the overlap ``tr(rho0 rho)``."""
    if state0.ndim == 1 and state.ndim == 1:
        return float(abs(np.vdot(state0, state)) ** 2)
    rho0 = np.outer(state0, state0.conj()) if state0.ndim == 1 else state0
    rho = np.outer(state, state.conj()) if state.ndim == 1 else state
    return float(np.real(np.sum(rho0.conj() * rho)))


@dataclass
class StroboscopicSeries:
    """Per-period observables for ``n = 1..n_periods``.

    ``satellites`` has shape ``(n_periods, N-1)``; all magnitude arrays hold
    absolute staggered values.
    """

    n: np.ndarray
    central: np.ndarray
    satellites: np.ndarray
    return_prob: np.ndarray

    @property
    def satellite_avg(self) -> np.ndarray:
        return self.satellites.mean(axis=1)

    def __len__(self) -> int:
        return len(self.n)


def trajectory(state0: np.ndarray, u: np.ndarray, n_periods: int) -> StroboscopicSeries:
    """Evolve ``state0`` under ``u`` and record every period.

    Same result as ``record_series(state0, evolve_stroboscopic(state0, u, n))``
    without materializing the states.
    """
    state0 = np.asarray(state0, dtype=complex)
    n_spins = int(round(np.log2(state0.shape[0])))
    zs = z_signs(n_spins)
    mags = np.empty((n_periods, n_spins))
    probs = np.empty(n_periods)
    state = state0
    pure = state0.ndim == 1
    u_dag = u.conj().T
    for k in range(n_periods):
        if pure:
            state = u @ state
            mags[k] = (state.real**2 + state.imag**2) @ zs
            probs[k] = abs(np.vdot(state0, state)) ** 2
        else:
            state = u @ state @ u_dag
            mags[k] = np.real(np.diagonal(state)) @ zs
            probs[k] = np.real(np.sum(state0.conj() * state))
    mags = np.abs(mags)
    return StroboscopicSeries(np.arange(1, n_periods + 1), mags[:, 0], mags[:, 1:], probs)


def record_series(state0: np.ndarray, states) -> StroboscopicSeries:
    """Collect observables from an iterable of evolved states (n = 1, 2, ...)."""
    mags, probs = [], []
    for state in states:
        mags.append(np.abs(magnetizations(state)))
        probs.append(return_probability(state0, state))
    mags = np.array(mags).reshape(len(probs), -1)
    return StroboscopicSeries(
        n=np.arange(1, len(probs) + 1),
        central=mags[:, 0],
        satellites=mags[:, 1:],
        return_prob=np.array(probs),
    )


@dataclass(frozen=True)
class StabilityCount:
    n_stable: int
    cap: int
    thresholds: tuple[float, float] = (HIGH, LOW)


class StabilityCounter:
    """Incremental form of :func:`stability_count`.

    Feed ``P(T), P(2T), ...`` in order through :meth:`push`; it returns False
    once later values can no longer change the count, so callers can stop
    evolving early.

    With ``strict=False`` (default) the rule is applied as written: the
    count is the largest even ``n`` with ``P(2kT) >= high`` for all
    ``k <= n/2`` and ``P((2l+1)T) <= low`` for all ``l < n/2 - 1``, so the
    last odd period before ``n`` is unconstrained. ``strict=True`` also
    requires that last odd period to satisfy the low threshold.
    """

    def __init__(self, cap: int, high: float = HIGH, low: float = LOW, strict: bool = False):
        if cap < 0:
            raise ValueError("cap must be non-negative")
        self.cap, self.high, self.low, self.strict = cap, high, low, strict
        self.period = 0
        self.bound = cap - cap % 2

    @property
    def done(self) -> bool:
        return self.period >= self.bound

    def push(self, p: float) -> bool:
        if self.done:
            return False
        self.period += 1
        k = self.period
        if k % 2 == 0 and p < self.high:
            self.bound = min(self.bound, k - 2)
        elif k % 2 == 1 and p > self.low:
            self.bound = min(self.bound, k - 1 if self.strict else k + 1)
        return not self.done

    def result(self) -> StabilityCount:
        if not self.done:
            raise ValueError("stability count needs more periods")
        return StabilityCount(self.bound, self.cap, (self.high, self.low))


def stability_count(p_series, cap: int, strict: bool = False) -> StabilityCount:
    """Largest even period count over which the return probability stays
    stroboscopically close to its initial value.

    ``p_series[k-1]`` is ``P(kT)``. The series may be shorter than ``cap``
    only if the count terminates before it runs out.
    """
    p_series = np.asarray(p_series, dtype=float)
    counter = StabilityCounter(cap, strict=strict)
    for p in p_series:
        if not counter.push(p):
            break
    if not counter.done:
        raise ValueError(f"series of length {len(p_series)} too short for cap {cap}")
    return counter.result()


@dataclass
class FloquetSpectrum:
    eigenvalues: np.ndarray
    pairing_defect: float
    pairs: list = field(default_factory=list)


def pairing_defect(eigenvalues: np.ndarray) -> tuple[float, list]:
    """Greedy antipodal matching of eigenvalues sorted by eigenphase.

    Each eigenvalue, in order of increasing phase, is paired with the unused
    eigenvalue minimizing ``|l_k + l_j|``. Returns the largest pair residual
    and the index pairs. An unmatched leftover (odd count) scores 2.
    """
    lam = np.asarray(eigenvalues)
    order = np.argsort(np.angle(lam), kind="stable")
    used = np.zeros(len(lam), dtype=bool)
    pairs, worst = [], 0.0
    for k in order:
        if used[k]:
            continue
        used[k] = True
        free = np.flatnonzero(~used)
        if free.size == 0:
            worst = 2.0
            break
        j = free[np.argmin(np.abs(lam[k] + lam[free]))]
        used[j] = True
        pairs.append((int(k), int(j)))
        worst = max(worst, float(abs(lam[k] + lam[j])))
    return worst, pairs


def floquet_spectrum(u: np.ndarray) -> FloquetSpectrum:
    """Eigenvalues of a Floquet operator and their antipodal pairing defect."""
    if unitarity_defect(u) > 1e-6:
        raise ContractError("floquet_spectrum needs a unitary operator")
    lam = np.linalg.eigvals(u)
    lam = lam[np.argsort(np.angle(lam), kind="stable")]
    defect, pairs = pairing_defect(lam)
    return FloquetSpectrum(lam, defect, pairs)
