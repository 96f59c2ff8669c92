import csv
import json
import textwrap
from pathlib import Path

import numpy as np
import pytest

from spindtc import cli, oracle
from spindtc.ensemble import EnsembleConfig, count_stable_periods, sample_realization
from spindtc.evolve import FloquetProtocol, floquet_operator, product_state
from spindtc.observables import pairing_defect

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
[system]
n_spins = 2
j = 1.0
b_central = 300.0
e = 0.05

[ensemble]
n_realizations = 2
master_seed = 7

[run]
initial_state = "ud"
n_periods = 10
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def _read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_simulate_minimal(tmp_path, capsys):
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--config", _write(tmp_path, MINIMAL), "--out", str(out)])
    assert rc == 0
    rows = _read_csv(out / "series.csv")
    assert len(rows) == 10
    assert list(rows[0]) == ["n", "central_staggered", "satellite_avg", "satellite_1", "return_prob"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["master_seed"] == 7
    assert set(man["checksums"]) == {"series.csv"}
    assert man["config"]["system"]["b_central"] == 300.0


def test_simulate_rerun_byte_identical(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"])
    assert (tmp_path / "a/series.csv").read_bytes() == (tmp_path / "b/series.csv").read_bytes()


def test_seed_override(tmp_path):
    text = MINIMAL.replace("b_central = 300.0", "b_central = 300.0\ndelta_j = 0.3")
    cfg = _write(tmp_path, text)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "8"])
    assert (tmp_path / "a/series.csv").read_bytes() != (tmp_path / "b/series.csv").read_bytes()
    assert json.loads((tmp_path / "b/manifest.json").read_text())["master_seed"] == 8


def test_emit_gnuplot(tmp_path):
    out = tmp_path / "o"
    cli.main(["simulate", "--config", _write(tmp_path, MINIMAL), "--out", str(out), "--emit-gnuplot"])
    assert "series.csv" in (out / "plot.gp").read_text()


@pytest.mark.parametrize(
    "mutation, fragment",
    [
        (('initial_state = "ud"', 'initial_state = "udu"'), "line 13"),
        (("n_spins = 2", "n_spins = 2\nbogus = 1"), "line 4"),
        (("e = 0.05", "e = 1.5"), "line 6"),
        (("n_periods = 10", "n_periods = -3"), "line 14"),
        (("master_seed = 7", "master_seed = -7"), "line 10"),
        (("[run]", "[run\n"), "line"),
    ],
)
def test_config_errors_line_precise(tmp_path, capsys, mutation, fragment):
    text = MINIMAL.replace(*mutation)
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--config", _write(tmp_path, text), "--out", str(out)])
    assert rc == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert fragment in err
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG


def test_contract_violation_cleans_outputs(tmp_path, monkeypatch):
    from spindtc import ensemble
    from spindtc.evolve import ContractError

    def boom(*args, **kwargs):
        raise ContractError("unitarity defect 1e-3")

    monkeypatch.setattr(ensemble, "period_unitary", boom)
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--config", _write(tmp_path, MINIMAL), "--out", str(out)])
    assert rc == cli.EXIT_CONTRACT
    assert not out.exists()


SWEEP = """
[system]
n_spins = 3
j = 1.0
delta_j = 0.2
b_central = 300.0
e = 0.05

[ensemble]
n_realizations = 3
master_seed = 5

[run]
initial_state = "uud"
cap = 40

[sweep]
axis1 = "j"
values1 = [1.0, 2.0]
axis2 = "e"
values2 = [0.02, 0.05]
"""


def test_sweep_grid_file(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep", "--config", _write(tmp_path, SWEEP), "--out", str(out)]) == 0
    rows = _read_csv(out / "grid.csv")
    assert list(rows[0]) == ["axis1", "axis2", "count_median", "count_iqr", "seed"]
    assert len(rows) == 4
    assert (out / "checkpoints").is_dir()


def test_sweep_single_cell_equals_single_run(tmp_path):
    text = SWEEP.replace("values1 = [1.0, 2.0]", "values1 = [1.0]").replace("values2 = [0.02, 0.05]", "values2 = [0.05]")
    out = tmp_path / "s"
    cli.main(["sweep", "--config", _write(tmp_path, text), "--out", str(out)])
    row = _read_csv(out / "grid.csv")[0]
    cfg = cli.load_config(_write(tmp_path, text, "again.toml"))
    counts = []
    for r in range(3):
        real = sample_realization(cfg.system, cfg.ensemble, r, cell=(0, 0))
        u = floquet_operator(cfg.system, real, FloquetProtocol())
        counts.append(count_stable_periods(u, product_state("uud"), 40))
    assert float(row["count_median"]) == np.median(counts)


def test_sweep_resume_identical(tmp_path):
    cfg = _write(tmp_path, SWEEP)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cli.main(["sweep", "--config", cfg, "--out", str(out_a)])
    cli.main(["sweep", "--config", cfg, "--out", str(out_b)])
    (out_b / "grid.csv").unlink()
    for f in sorted((out_b / "checkpoints").glob("*.json"))[1:]:
        f.unlink()
    cli.main(["sweep", "--config", cfg, "--out", str(out_b)])
    assert (out_a / "grid.csv").read_bytes() == (out_b / "grid.csv").read_bytes()


def test_sweep_unknown_axis(tmp_path, capsys):
    text = SWEEP.replace('axis1 = "j"', 'axis1 = "colour"')
    assert cli.main(["sweep", "--config", _write(tmp_path, text), "--out", str(tmp_path / "s")]) == 1
    assert "line 18" in capsys.readouterr().err


SPECTRUM = """
[system]
n_spins = 2
j = 0.0
e = 0.0

[run]
initial_state = "uu"
"""


def test_spectrum_perfect_pulses(tmp_path):
    out = tmp_path / "sp"
    assert cli.main(["spectrum", "--config", _write(tmp_path, SPECTRUM), "--out", str(out)]) == 0
    rows = _read_csv(out / "spectrum.csv")
    lam = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    # exp(-i pi S_x) on each spin: eigenvalues (+-i)(+-i) = {+1, -1, -1, +1}
    assert np.allclose(np.abs(lam), 1)
    assert float((out / "pairing_defect.txt").read_text()) == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_spectrum_file_round_trip(tmp_path, j):
    out = tmp_path / f"sp{j}"
    assert cli.main(["spectrum", "--config", str(CONFIGS / f"spectrum_j{j}.toml"), "--out", str(out)]) == 0
    rows = _read_csv(out / "spectrum.csv")
    lam = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    recomputed, _ = pairing_defect(lam)
    assert recomputed == pytest.approx(float((out / "pairing_defect.txt").read_text()), abs=1e-12)


def test_spectrum_defect_ordering(tmp_path):
    d = {}
    for j in (1, 2, 3, 4):
        out = tmp_path / f"sp{j}"
        cli.main(["spectrum", "--config", str(CONFIGS / f"spectrum_j{j}.toml"), "--out", str(out)])
        d[j] = float((out / "pairing_defect.txt").read_text())
    assert max(d[1], d[3]) * 10 <= min(d[2], d[4])


def test_verify_passes(capsys, tmp_path):
    assert cli.main(["verify", "--out", str(tmp_path / "v")]) == 0
    text = capsys.readouterr().out
    lines = [ln for ln in text.splitlines() if ln.strip()]
    assert len(lines) == len(cli.VERIFY_CHECKS)
    for ln in lines:
        assert ln.startswith("PASS") and "residual=" in ln and "tol=" in ln and "time=" in ln
    assert (tmp_path / "v/verify.csv").exists()


def test_verify_detects_mutation(monkeypatch, capsys):
    monkeypatch.setattr(oracle, "_N4_J_MULT", oracle._N4_J_MULT * np.r_[[2], np.ones(15)])
    assert cli.main(["verify"]) == cli.EXIT_ORACLE
    failing = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
    assert failing
    residual = float(failing[0].split("residual=")[1].split()[0])
    assert residual > 1e-6


FIT = """
[system]
n_spins = 3
j = 1.0
delta_j = 0.2
e = 0.05

[protocol]
mode = "h2i"
m_h2i = 2
e_z = 0.0

[ensemble]
n_realizations = 4
master_seed = 3

[run]
initial_state = "uud"

[fit_h2i]
m_values = [2, 4, 8]
n_periods = 60
"""


def test_fit_h2i_runs(tmp_path, capsys):
    out = tmp_path / "f"
    rc = cli.main(["fit-h2i", "--config", _write(tmp_path, FIT), "--out", str(out)])
    rows = _read_csv(out / "h2i_cycles.csv") if rc == 0 else []
    assert rc in (0, cli.EXIT_CONTRACT)
    if rc == 0:
        assert [int(r["m"]) for r in rows] == [2, 4, 8]
        man = json.loads((out / "manifest.json").read_text())
        assert np.isfinite(man["results"]["beta"])


def test_fit_h2i_requires_h2i_mode(tmp_path):
    text = FIT.replace('mode = "h2i"\nm_h2i = 2\ne_z = 0.0', 'mode = "zeeman_mismatch"')
    assert cli.main(["fit-h2i", "--config", _write(tmp_path, text), "--out", str(tmp_path / "f")]) == 1


def test_mixed_initial_state(tmp_path):
    text = MINIMAL.replace('"ud"', '"ud mixed:p=0.5"')
    out = tmp_path / "m"
    assert cli.main(["simulate", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
    rows = _read_csv(out / "series.csv")
    assert float(rows[0]["satellite_avg"]) <= 0.25 + 1e-9


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_parse(name):
    cfg = cli.load_config(CONFIGS / name)
    assert len(cfg.initial_state) == cfg.system.n_spins


def test_shipped_onset_config(tmp_path):
    cfg = cli.load_config(CONFIGS / "onset_bc300.toml")
    assert cfg.system.b_central == 300.0 and cfg.initial_state == "uududu"
    text = (CONFIGS / "onset_bc300.toml").read_text().replace("n_periods = 1000", "n_periods = 60")
    out = tmp_path / "onset"
    assert cli.main(["simulate", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
    rows = _read_csv(out / "series.csv")
    assert min(float(r["central_staggered"]) for r in rows) >= 0.4
