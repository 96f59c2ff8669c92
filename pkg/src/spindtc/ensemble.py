"""Disorder ensembles, seed derivation and phase-diagram sweeps."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .evolve import ContractError, FloquetProtocol, period_unitary, unitarity_defect, UNITARY_TOL
from .observables import StabilityCounter, StroboscopicSeries, trajectory
from .spinops import CouplingRealization, SystemSpec

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_child_seed(master: int, indices: Sequence[int]) -> int:
    """Stateless 64-bit child seed for a path of integer indices.

    Each index is folded in with the SplitMix64 finalizer:
    ``h <- mix(h + GOLDEN_GAMMA + mix(index))`` starting from ``mix(master)``.
    The finalizer is a bijection on 64-bit words, so two paths that differ
    only in their last index never collide.
    """
    h = _splitmix64(int(master))
    for i in indices:
        h = _splitmix64(h + GOLDEN_GAMMA + _splitmix64(int(i)))
    return h


@dataclass(frozen=True)
class EnsembleConfig:
    """How disorder realizations are drawn and combined.

    The satellite Zeeman disorder width lives on :class:`SystemSpec`
    (``delta_b_satellite``).
    """

    n_realizations: int = 100
    master_seed: int = 0
    disorder_mode: str = "independent"
    average_mode: str = "mean_abs"
    threads: int = 1

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.disorder_mode not in ("independent", "correlated"):
            raise ValueError(f"unknown disorder_mode {self.disorder_mode!r}")
        if self.average_mode != "mean_abs":
            raise ValueError("average_mode must be 'mean_abs'")
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def sample_realization(
    spec: SystemSpec, config: EnsembleConfig, index: int, cell: Sequence[int] = ()
) -> CouplingRealization:
    """Draw realization ``index`` (optionally within sweep ``cell``).

    Couplings are Gaussian with standard deviation ``delta_j``; satellite
    Zeeman energies are uniform on ``b_satellite +- delta_b_satellite``.
    """
    seed = derive_child_seed(config.master_seed, [*cell, index])
    rng = np.random.default_rng(seed)
    k = spec.n_spins - 1
    dev_xy = rng.standard_normal(k)
    dev_z = dev_xy if config.disorder_mode == "correlated" else rng.standard_normal(k)
    dev_b = rng.uniform(-1.0, 1.0, k)
    return CouplingRealization(
        j_xy=spec.j_xy_mean + spec.delta_j * dev_xy,
        j_z=spec.j_z_mean + spec.delta_j * dev_z,
        b_sat=spec.b_satellite + spec.delta_b_satellite * dev_b,
        seed=seed,
    )


def _checked_unitary(spec, real, protocol, label):
    u = period_unitary(spec, real, protocol)
    defect = unitarity_defect(u)
    if defect > UNITARY_TOL:
        raise ContractError(f"{label}: unitarity defect {defect:.2e} (seed {real.seed})")
    return u


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class EnsembleResult:
    mean: StroboscopicSeries
    realizations: list[CouplingRealization]
    per_realization: list[StroboscopicSeries] = field(default_factory=list)


def mean_series(series: Sequence[StroboscopicSeries]) -> StroboscopicSeries:
    """Average absolute series over realizations, reduced in list order."""
    first = series[0]
    central = np.zeros_like(first.central)
    sats = np.zeros_like(first.satellites)
    probs = np.zeros_like(first.return_prob)
    for s in series:
        central += s.central
        sats += s.satellites
        probs += s.return_prob
    r = len(series)
    return StroboscopicSeries(first.n.copy(), central / r, sats / r, probs / r)


def run_ensemble(
    spec: SystemSpec,
    protocol: FloquetProtocol,
    initial_state: np.ndarray,
    config: EnsembleConfig,
    n_periods: int,
    *,
    cell: Sequence[int] = (),
    keep_realizations: bool = True,
) -> EnsembleResult:
    """Evolve every disorder realization and average the observables.

    Realizations are independent work units; the result does not depend on
    ``config.threads``.
    """
    if initial_state.shape[0] != spec.dim:
        raise ValueError(f"initial state has dimension {initial_state.shape[0]}, need {spec.dim}")

    def one(index):
        real = sample_realization(spec, config, index, cell)
        u = _checked_unitary(spec, real, protocol, f"realization {index}")
        return real, trajectory(initial_state, u, n_periods)

    out = _map(one, range(config.n_realizations), config.threads)
    reals = [r for r, _ in out]
    series = [s for _, s in out]
    return EnsembleResult(mean_series(series), reals, series if keep_realizations else [])


def count_stable_periods(u: np.ndarray, state0: np.ndarray, cap: int, strict: bool = False) -> int:
    """Stability count of one trajectory, evolving only as far as needed."""
    counter = StabilityCounter(cap, strict=strict)
    psi = np.asarray(state0, dtype=complex)
    if psi.ndim != 1:
        raise ValueError("stability counts are defined for pure initial states")
    state = psi
    while not counter.done:
        state = u @ state
        counter.push(abs(np.vdot(psi, state)) ** 2)
    return counter.result().n_stable


def ensemble_counts(
    spec: SystemSpec,
    protocol: FloquetProtocol,
    initial_state: np.ndarray,
    config: EnsembleConfig,
    cap: int,
    cell: Sequence[int] = (),
) -> list[int]:
    """Per-realization stability counts, in realization order."""

    def one(index):
        real = sample_realization(spec, config, index, cell)
        u = _checked_unitary(spec, real, protocol, f"cell {tuple(cell)} realization {index}")
        return count_stable_periods(u, initial_state, cap)

    return _map(one, range(config.n_realizations), config.threads)


# -- sweeps -----------------------------------------------------------------

PROTOCOL_AXES = ("m_h2i", "e_z", "eta")


def apply_axis(
    spec: SystemSpec, protocol: FloquetProtocol, name: str, value: float, j_total: float | None
):
    """Return ``(spec, protocol)`` with one swept parameter set.

    Besides any :class:`SystemSpec` or protocol field, ``name`` may be
    ``e`` (both pulse errors), ``j`` (isotropic ``j_xy = j_z``) or
    ``j_z_fixed_total`` (``j_z`` with ``2 j_xy + j_z = j_total``).
    """
    if name == "e":
        return replace(spec, e_central=value, e_satellite=value), protocol
    if name == "j":
        return replace(spec, j_xy_mean=value, j_z_mean=value), protocol
    if name == "j_z_fixed_total":
        if j_total is None:
            raise ValueError("j_z_fixed_total axis needs j_total")
        return replace(spec, j_z_mean=value, j_xy_mean=(j_total - value) / 2), protocol
    if name in PROTOCOL_AXES:
        value = int(value) if name == "m_h2i" else value
        return spec, replace(protocol, **{name: value})
    if name in SystemSpec.__dataclass_fields__ and name != "n_spins":
        return replace(spec, **{name: value}), protocol
    raise ValueError(f"unknown sweep axis {name!r}")


@dataclass
class SweepAxis:
    name: str
    values: tuple[float, ...]

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)


@dataclass
class SweepCell:
    i: int
    j: int
    value1: float
    value2: float
    seed: int
    counts: list[int] = field(default_factory=list)
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.error is None

    @property
    def median(self) -> float:
        return float(np.median(self.counts)) if self.valid else float("nan")

    @property
    def iqr(self) -> float:
        if not self.valid:
            return float("nan")
        q1, q3 = np.percentile(self.counts, [25, 75])
        return float(q3 - q1)

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "j": self.j,
            "value1": self.value1,
            "value2": self.value2,
            "seed": self.seed,
            "counts": self.counts,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SweepCell":
        return cls(**d)


@dataclass
class SweepGrid:
    """Rectangular two-parameter grid and, after a sweep, its cells."""

    axis1: SweepAxis
    axis2: SweepAxis
    j_total: float | None = None
    cells: list[SweepCell] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.axis1.values), len(self.axis2.values)

    def medians(self) -> np.ndarray:
        out = np.full(self.shape, np.nan)
        for c in self.cells:
            out[c.i, c.j] = c.median
        return out

    def cell(self, value1: float, value2: float) -> SweepCell:
        for c in self.cells:
            if np.isclose(c.value1, value1) and np.isclose(c.value2, value2):
                return c
        raise KeyError((value1, value2))


def sweep_phase_diagram(
    spec: SystemSpec,
    grid: SweepGrid,
    config: EnsembleConfig,
    *,
    protocol: FloquetProtocol | None = None,
    initial_state: np.ndarray,
    cap: int = 10_000,
    checkpoint_dir: str | Path | None = None,
    on_cell: Callable[[SweepCell], None] | None = None,
) -> SweepGrid:
    """Median stability count for every cell of ``grid``.

    Realization ``r`` of cell ``(i, j)`` is seeded with
    ``derive_child_seed(master, [i, j, r])``, so cell values do not depend on
    evaluation order. A failing cell is recorded with its error and the sweep
    carries on. With ``checkpoint_dir`` each finished cell is written to
    ``cell_<i>_<j>.json`` and reused on the next call.
    """
    protocol = protocol or FloquetProtocol()
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    cells = []
    for i, v1 in enumerate(grid.axis1.values):
        for j, v2 in enumerate(grid.axis2.values):
            path = ckpt / f"cell_{i}_{j}.json" if ckpt is not None else None
            if path is not None and path.exists():
                cell = SweepCell.from_json(json.loads(path.read_text()))
            else:
                cell = SweepCell(i, j, v1, v2, derive_child_seed(config.master_seed, [i, j]))
                try:
                    s, p = apply_axis(spec, protocol, grid.axis1.name, v1, grid.j_total)
                    s, p = apply_axis(s, p, grid.axis2.name, v2, grid.j_total)
                    cell.counts = ensemble_counts(s, p, initial_state, config, cap, cell=(i, j))
                except (ValueError, ContractError, np.linalg.LinAlgError) as exc:
                    log.warning("cell (%d, %d) failed: %s", i, j, exc)
                    cell.error = f"{type(exc).__name__}: {exc}"
                if path is not None:
                    path.write_text(json.dumps(cell.to_json(), sort_keys=True))
            if on_cell is not None:
                on_cell(cell)
            cells.append(cell)
    return SweepGrid(grid.axis1, grid.axis2, grid.j_total, cells)
