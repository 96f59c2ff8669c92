"""Command-line experiment driver.

Subcommands ``simulate``, ``sweep``, ``spectrum``, ``verify`` and
``fit-h2i`` read a TOML experiment file (except ``verify``), write CSV
results plus a ``manifest.json`` into the output directory and exit with

0 on success, 1 on a configuration error, 2 on a numeric contract
violation and 3 when an oracle check fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, oracle
from .ensemble import (
    EnsembleConfig,
    SweepAxis,
    SweepGrid,
    apply_axis,
    run_ensemble,
    sample_realization,
    sweep_phase_diagram,
)
from .evolve import (
    ContractError,
    FloquetProtocol,
    depolarize_satellites,
    floquet_operator,
    floquet_pulses,
    period_unitary,
    product_state,
    propagator,
)
from .observables import floquet_spectrum
from .spinops import CouplingRealization, SystemSpec, build_xxz_hamiltonian, angular

log = logging.getLogger("spindtc")

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_ORACLE = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid experiment file; the message carries the offending line."""


# -- configuration -----------------------------------------------------------

SYSTEM_ALIASES = {"e": ("e_central", "e_satellite"), "j": ("j_xy_mean", "j_z_mean")}
SECTION_KEYS = {
    "system": set(SystemSpec.__dataclass_fields__) | set(SYSTEM_ALIASES),
    "protocol": set(FloquetProtocol.__dataclass_fields__),
    "ensemble": set(EnsembleConfig.__dataclass_fields__),
    "run": {"initial_state", "n_periods", "cap", "out"},
    "sweep": {"axis1", "values1", "axis2", "values2", "j_total"},
    "spectrum": {"realization"},
    "fit_h2i": {"m_values", "n_periods", "threshold"},
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    system: SystemSpec
    protocol: FloquetProtocol
    ensemble: EnsembleConfig
    initial_state: str
    mixed_p: float | None = None
    n_periods: int = 100
    cap: int = 10_000
    out: str = "out"
    sweep: dict = field(default_factory=dict)
    spectrum: dict = field(default_factory=dict)
    fit_h2i: dict = field(default_factory=dict)

    def state(self) -> np.ndarray:
        psi = product_state(self.initial_state)
        return psi if self.mixed_p is None else depolarize_satellites(psi, self.mixed_p)

    def to_dict(self) -> dict:
        return {
            "system": dataclasses.asdict(self.system),
            "protocol": dataclasses.asdict(self.protocol),
            "ensemble": dataclasses.asdict(self.ensemble),
            "run": {
                "initial_state": self.initial_state,
                "mixed_p": self.mixed_p,
                "n_periods": self.n_periods,
                "cap": self.cap,
                "out": self.out,
            },
            "sweep": self.sweep,
            "spectrum": self.spectrum,
            "fit_h2i": self.fit_h2i,
        }


def _locate(text: str, section: str | None, key: str | None = None) -> str:
    """``"<line N>"`` for a key (or table header) in the raw TOML text."""
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            if key is None and current == section:
                return f"line {lineno}"
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return f"line {lineno}"
    return "line ?"


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate an experiment file; raise :class:`ConfigError`."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    def fail(section, key, msg):
        raise ConfigError(f"{source}:{_locate(text, section, key)}: [{section}] {key}: {msg}")

    for section, body in raw.items():
        if section not in SECTION_KEYS:
            raise ConfigError(f"{source}:{_locate(text, section)}: unknown table [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: [{section}] must be a table")
        for key in body:
            if key not in SECTION_KEYS[section]:
                fail(section, key, "unknown key")
    for section in ("system", "run"):
        if section not in raw:
            raise ConfigError(f"{source}: missing table [{section}]")

    def build(section, cls, values):
        try:
            return cls(**values)
        except (TypeError, ValueError) as exc:
            key = next((k for k in raw.get(section, {}) if k in str(exc)), None)
            if key is None:
                raise ConfigError(f"{source}:{_locate(text, section)}: [{section}] {exc}") from None
            fail(section, key, str(exc))

    sys_vals = {}
    for key, value in raw["system"].items():
        for target in SYSTEM_ALIASES.get(key, (key,)):
            sys_vals[target] = value
    if "n_spins" not in sys_vals:
        raise ConfigError(f"{source}:{_locate(text, 'system')}: [system] n_spins is required")
    system = build("system", SystemSpec, sys_vals)
    protocol = build("protocol", FloquetProtocol, raw.get("protocol", {}))
    ensemble = build("ensemble", EnsembleConfig, raw.get("ensemble", {}))

    run = raw["run"]
    if "initial_state" not in run:
        raise ConfigError(f"{source}:{_locate(text, 'run')}: [run] initial_state is required")
    parts = str(run["initial_state"]).split()
    bits, mixed_p = parts[0], None
    for mod in parts[1:]:
        m = re.fullmatch(r"mixed:p=([0-9.eE+-]+)", mod)
        if not m:
            fail("run", "initial_state", f"unknown modifier {mod!r}")
        mixed_p = float(m.group(1))
        if not 0 <= mixed_p <= 1:
            fail("run", "initial_state", "mixed:p must lie in [0, 1]")
    if set(bits) - {"u", "d"}:
        fail("run", "initial_state", f"bitstring must use 'u'/'d', got {bits!r}")
    if len(bits) != system.n_spins:
        fail("run", "initial_state", f"length {len(bits)} != n_spins {system.n_spins}")
    for key in ("n_periods", "cap"):
        if key in run and (not isinstance(run[key], int) or run[key] < 1):
            fail("run", key, "must be a positive integer")

    sweep = dict(raw.get("sweep", {}))
    if sweep:
        for key in ("axis1", "values1", "axis2", "values2"):
            if key not in sweep:
                raise ConfigError(f"{source}:{_locate(text, 'sweep')}: [sweep] {key} is required")
        for axis in ("axis1", "axis2"):
            try:
                apply_axis(system, protocol, sweep[axis], 0.0, sweep.get("j_total", 0.0))
            except ValueError as exc:
                # value-dependent failures are per-cell; only unknown names are fatal
                if "unknown sweep axis" in str(exc):
                    fail("sweep", axis, str(exc))
        for key in ("values1", "values2"):
            if not isinstance(sweep[key], list) or not sweep[key]:
                fail("sweep", key, "must be a non-empty list")
    fit = dict(raw.get("fit_h2i", {}))
    if fit and "m_values" in fit and (len(fit["m_values"]) < 2 or min(fit["m_values"]) < 1):
        fail("fit_h2i", "m_values", "need at least two positive pulse counts")

    return ExperimentConfig(
        system=system,
        protocol=protocol,
        ensemble=ensemble,
        initial_state=bits,
        mixed_p=mixed_p,
        n_periods=run.get("n_periods", 100),
        cap=run.get("cap", 10_000),
        out=run.get("out", "out"),
        sweep=sweep,
        spectrum=dict(raw.get("spectrum", {})),
        fit_h2i=fit,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


# -- output handling ---------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class OutputDir:
    """Tracks written files so a failed run can remove its partial outputs."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.created_dir = not self.path.exists()
        self.path.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def write(self, name: str, text: str) -> Path:
        p = self.path / name
        p.write_text(text)
        if p not in self.files:
            self.files.append(p)
        return p

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        lines = [",".join(header)]
        lines.extend(",".join(_fmt(v) for v in row) for row in rows)
        return self.write(name, "\n".join(lines) + "\n")

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self.created_dir:
            try:
                self.path.rmdir()
            except OSError:
                pass

    def manifest(self, command: str, config: ExperimentConfig | None, started: float, results=None):
        info = {
            "command": command,
            "code_version": __version__,
            "master_seed": config.ensemble.master_seed if config else None,
            "config": config.to_dict() if config else None,
            "checksums": {
                p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files
            },
            "results": results or {},
            "started_unix": started,
            "wall_seconds": time.time() - started,
            "python": platform.python_version(),
            "numpy": np.__version__,
        }
        self.write("manifest.json", json.dumps(info, indent=2, sort_keys=True) + "\n")


GNUPLOT_SERIES = """set datafile separator ','
set key autotitle columnhead
set xlabel 'n (periods)'
set ylabel 'staggered magnetization'
plot 'series.csv' using 1:2 with lines, '' using 1:3 with lines
"""

GNUPLOT_GRID = """set datafile separator ','
set xlabel '{x}'
set ylabel '{y}'
set cblabel 'median stable periods'
set view map
splot 'grid.csv' every ::1 using 1:2:3 with points pointtype 5 pointsize 2 palette notitle
"""

GNUPLOT_SPECTRUM = """set datafile separator ','
set size square
set xrange [-1.1:1.1]
set yrange [-1.1:1.1]
plot 'spectrum.csv' every ::1 using 2:3 with points pointtype 7 notitle
"""


# -- subcommands -------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: OutputDir, emit_gnuplot: bool = False) -> dict:
    res = run_ensemble(
        cfg.system, cfg.protocol, cfg.state(), cfg.ensemble, cfg.n_periods, keep_realizations=False
    )
    m = res.mean
    k = cfg.system.n_spins - 1
    header = ["n", "central_staggered", "satellite_avg"]
    header += [f"satellite_{i}" for i in range(1, k + 1)] + ["return_prob"]
    rows = (
        [n, c, s_avg, *sats, p]
        for n, c, s_avg, sats, p in zip(m.n, m.central, m.satellite_avg, m.satellites, m.return_prob)
    )
    out.write_csv("series.csv", header, rows)
    if emit_gnuplot:
        out.write("plot.gp", GNUPLOT_SERIES)
    return {"n_periods": cfg.n_periods, "min_central": float(m.central.min())}


def cmd_sweep(cfg: ExperimentConfig, out: OutputDir, emit_gnuplot: bool = False) -> dict:
    if not cfg.sweep:
        raise ConfigError("sweep needs a [sweep] table")
    grid = SweepGrid(
        SweepAxis(cfg.sweep["axis1"], cfg.sweep["values1"]),
        SweepAxis(cfg.sweep["axis2"], cfg.sweep["values2"]),
        cfg.sweep.get("j_total"),
    )
    if cfg.state().ndim != 1:
        raise ConfigError("sweep needs a pure initial state")
    result = sweep_phase_diagram(
        cfg.system,
        grid,
        cfg.ensemble,
        protocol=cfg.protocol,
        initial_state=cfg.state(),
        cap=cfg.cap,
        checkpoint_dir=out.path / "checkpoints",
    )
    rows = [
        [c.value1, c.value2, c.median, c.iqr, c.seed] for c in result.cells
    ]
    out.write_csv("grid.csv", ["axis1", "axis2", "count_median", "count_iqr", "seed"], rows)
    if emit_gnuplot:
        out.write("plot.gp", GNUPLOT_GRID.format(x=grid.axis1.name, y=grid.axis2.name))
    invalid = [(c.i, c.j, c.error) for c in result.cells if not c.valid]
    return {"cells": len(result.cells), "invalid_cells": invalid}


def _spectrum_realization(cfg: ExperimentConfig) -> CouplingRealization:
    which = cfg.spectrum.get("realization", "mean")
    if which == "mean":
        return cfg.system.uniform()
    if isinstance(which, int) and which >= 0:
        return sample_realization(cfg.system, cfg.ensemble, which)
    raise ConfigError(f"[spectrum] realization must be 'mean' or a non-negative index, got {which!r}")


def cmd_spectrum(cfg: ExperimentConfig, out: OutputDir, emit_gnuplot: bool = False) -> dict:
    u = period_unitary(cfg.system, _spectrum_realization(cfg), cfg.protocol)
    spec = floquet_spectrum(u)
    lam = spec.eigenvalues
    rows = ([k, z.real, z.imag, np.angle(z)] for k, z in enumerate(lam))
    out.write_csv("spectrum.csv", ["index", "re", "im", "phase"], rows)
    out.write("pairing_defect.txt", _fmt(spec.pairing_defect) + "\n")
    if emit_gnuplot:
        out.write("plot.gp", GNUPLOT_SPECTRUM)
    print(f"pairing defect: {spec.pairing_defect:.6e}")
    return {"pairing_defect": spec.pairing_defect}


def cmd_fit_h2i(cfg: ExperimentConfig, out: OutputDir, emit_gnuplot: bool = False) -> dict:
    if cfg.protocol.mode != "h2i":
        raise ConfigError("fit-h2i needs [protocol] mode = 'h2i'")
    m_values = [int(m) for m in cfg.fit_h2i.get("m_values", [20, 40, 60, 80, 100])]
    n_max = int(cfg.fit_h2i.get("n_periods", cfg.n_periods))
    threshold = float(cfg.fit_h2i.get("threshold", oracle.H2I_THRESHOLD))
    points = []
    for m in m_values:
        proto = dataclasses.replace(cfg.protocol, m_h2i=m)
        res = run_ensemble(cfg.system, proto, cfg.state(), cfg.ensemble, n_max, keep_realizations=False)
        points.append((m, oracle.h2i_cycle_count(res.mean.central, threshold)))
    out.write_csv("h2i_cycles.csv", ["m", "n_cycles"], points)
    try:
        fit = oracle.h2i_scaling_fit(points, threshold)
    except oracle.OracleError as exc:
        raise ContractError(f"scaling fit failed: {exc}") from None
    print(f"alpha = {fit.alpha:.6g}  beta = {fit.beta:.6g}")
    return {"alpha": fit.alpha, "beta": fit.beta, "residuals": fit.residuals.tolist(), "points": points}


# -- verify ------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)


def _check_closed_forms() -> float:
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for n in (3, 4):
        for regime, lo, hi in (("vary_b", 295.0, 305.0), ("vary_j", 0.2, 4.5)):
            for _ in range(8):
                value, e_c = rng.uniform(lo, hi), rng.uniform(-0.2, 0.2)
                a = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
                cf = oracle.two_period_closed_form(n, regime, value, e_c, a)
                ref = oracle.effective_ising_evolution(oracle.closed_form_setting(n, regime, value, e_c), a)
                worst = max(worst, 1 - oracle.fidelity(cf, ref))
    return worst


def _check_multi_period() -> float:
    rng = np.random.default_rng(7)
    worst = 0.0
    for n_periods in (2, 4, 8):
        e_c = rng.uniform(-0.2, 0.2)
        a = rng.normal(size=8) + 1j * rng.normal(size=8)
        cf = oracle.multi_period_closed_form(e_c, a, n_periods)
        ref = oracle.effective_ising_evolution(
            oracle.closed_form_setting(3, "vary_b", 300.0, e_c), a, n_periods
        )
        worst = max(worst, 1 - oracle.fidelity(cf, ref))
    return worst


def _check_bch() -> float:
    spec = SystemSpec(3)
    real = CouplingRealization([1.0, 1.3], [1.0, 1.3], [0.0, 0.0])
    m, e_z, t = 7, 0.02, 1.0
    a, b = oracle.bch_terms(spec, real, m, e_z, t)
    direct = m * (a + b + 0.5 * (a @ b - b @ a))
    return float(np.max(np.abs(oracle.bch_exponent(spec, real, m, e_z, t) - direct)))


def _check_resonances() -> float:
    cases = [
        (("even", "b_central", 300.0), True),
        (("odd", "b_central", 300.0), False),
        (("odd", "b_central", 300.5), True),
        (("odd", "j_total", 1.5), True),
        (("even", "j_total", 1.0), True),
        (("even", "j_total", 1 / 3), True),
        (("even", "j_total", 2.0), False),
    ]
    wrong = sum(oracle.resonance_predicate(*args) != want for args, want in cases)
    # the printed resonance factors must actually vanish at the predicted values
    for b in (300.0, 300.5):
        v = np.exp(1j * float(angular(b)))
        wrong += oracle.resonance_predicate("odd", "b_central", b) != bool(abs(1 + v) < 1e-9)
        wrong += oracle.resonance_predicate("even", "b_central", b) != bool(abs(1 - v) < 1e-9)
    return float(wrong)


def _check_heff_consistency() -> float:
    spec = SystemSpec(3, b_central=300.0, e_central=0.05, e_satellite=0.05)
    real = spec.uniform()
    u_full = floquet_operator(spec, real, FloquetProtocol())
    h_eff = np.diag(np.diag(build_xxz_hamiltonian(spec, real)))
    u_eff = floquet_pulses(spec) @ propagator(h_eff, spec.period)
    psi_f = psi_e = product_state("udu")
    worst = 0.0
    for _ in range(10):
        psi_f, psi_e = u_full @ psi_f, u_eff @ psi_e
        worst = max(worst, 1 - oracle.fidelity(psi_f, psi_e))
    return worst


def _check_periodicity() -> float:
    spec = SystemSpec(3, b_central=0.0)
    rng = np.random.default_rng(3)
    jz = rng.uniform(0.5, 1.5, 2)
    base = CouplingRealization([0.0, 0.0], jz, [0.0, 0.0])
    shifted = CouplingRealization([0.0, 0.0], jz + 2.0 / spec.period, [0.0, 0.0])
    u1 = propagator(build_xxz_hamiltonian(spec, base), spec.period)
    u2 = propagator(build_xxz_hamiltonian(spec, shifted), spec.period)
    k = np.unravel_index(np.argmax(np.abs(u1)), u1.shape)
    phase = u2[k] / u1[k]
    return float(np.max(np.abs(u2 - phase * u1)))


VERIFY_CHECKS: list[tuple[str, Callable[[], float], float]] = [
    ("closed forms vs effective Ising evolution (1 - fidelity)", _check_closed_forms, 1e-10),
    ("multi-period three-spin form (1 - fidelity)", _check_multi_period, 1e-10),
    ("BCH assembly vs direct commutator", _check_bch, 1e-12),
    ("resonance predicates (mismatches)", _check_resonances, 0.0),
    ("full model vs effective Ising, 10 periods (1 - fidelity)", _check_heff_consistency, 1e-2),
    ("J_z T -> J_z T + 4 pi periodicity", _check_periodicity, 1e-9),
]


def run_verify(checks=None) -> list[CheckResult]:
    results = []
    for name, fn, tol in checks or VERIFY_CHECKS:
        t0 = time.perf_counter()
        try:
            residual = float(fn())
        except Exception as exc:  # a crashing oracle is a failing oracle
            log.error("%s raised %s", name, exc)
            residual = float("inf")
        results.append(CheckResult(name, residual, tol, time.perf_counter() - t0))
    return results


def cmd_verify(out: OutputDir | None = None) -> int:
    results = run_verify()
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{status}  {r.name:<{width}}  residual={r.residual:.3e}  "
            f"tol={r.tolerance:.1e}  time={r.seconds * 1e3:.1f} ms"
        )
    if out is not None:
        rows = ([r.name, r.residual, r.tolerance, r.seconds, int(r.passed)] for r in results)
        out.write_csv("verify.csv", ["check", "residual", "tolerance", "seconds", "passed"], rows)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ORACLE


# -- entry point -------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "spectrum": cmd_spectrum,
    "fit-h2i": cmd_fit_h2i,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spindtc", description="Driven central-spin time-crystal simulator."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "verify", help="TOML experiment file")
        p.add_argument("--seed", type=int, help="override [ensemble] master_seed")
        p.add_argument("--threads", type=int, help="override [ensemble] threads")
        p.add_argument("--cap", type=int, help="override [run] cap")
        p.add_argument("--out", help="output directory (overrides [run] out)")
        p.add_argument("--emit-gnuplot", action="store_true", help="write a plot.gp script")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    ens = {}
    if args.seed is not None:
        ens["master_seed"] = args.seed
    if args.threads is not None:
        ens["threads"] = args.threads
    try:
        if ens:
            cfg.ensemble = dataclasses.replace(cfg.ensemble, **ens)
    except ValueError as exc:
        raise ConfigError(f"command line: {exc}") from None
    if args.cap is not None:
        if args.cap < 1:
            raise ConfigError("command line: --cap must be positive")
        cfg.cap = args.cap
    if args.out is not None:
        cfg.out = args.out
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    started = time.time()

    if args.command == "verify":
        out = OutputDir(args.out) if args.out else None
        code = cmd_verify(out)
        if out is not None:
            out.manifest("verify", None, started, {"exit_code": code})
        return code

    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = OutputDir(cfg.out)
    try:
        results = COMMANDS[args.command](cfg, out, args.emit_gnuplot)
        out.manifest(args.command, cfg, started, results)
    except ConfigError as exc:
        out.cleanup()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, np.linalg.LinAlgError) as exc:
        out.cleanup()
        print(f"numeric contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ValueError as exc:
        out.cleanup()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
