import copy
import json
import re

import numpy as np
import pytest

from cavity_sed import cli
from cavity_sed.config import ConfigError, load_config, parse_config, parse_quantity
from cavity_sed.errors import ConvergenceError
from cavity_sed.model import LinearDetuning
from cavity_sed.observables import SPECTRUM_COLUMNS
from cavity_sed.tables import read_csv

BASE = {
    "system": {
        "kappa": "1 kappa",
        "recoil": "0.0029239766081871343 kappa",
        "delta_c": "5 kappa",
        "eta": "0.1 kappa",
        "coupling": "0.5 kappa",
        "mode": "fabry_perot",
        "detuning": {"kind": "linear", "delta0": "0 kappa", "delta1": "2 omega_R"},
        "pump": {"kind": "off"},
    },
    "lattice": {"n_sites": 3, "wannier_width": "0.05 lambda"},
    "sampler": "mi",
    "ensemble": {"n_realizations": 40, "seed": 7, "chunk_size": 16},
    "sweep": {"variable": "atom_detuning", "start": "-0.2 kappa", "stop": "0.3 kappa", "n_points": 5},
}


def _doc(**edits):
    d = copy.deepcopy(BASE)
    for path, value in edits.items():
        node = d
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[k]
        if value is None:
            node.pop(keys[-1])
        else:
            node[keys[-1]] = value
    return d


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return p


def test_parse_quantity_units():
    assert parse_quantity("2 omega_R", recoil=0.01) == pytest.approx(0.02)
    assert parse_quantity(" -1.5e-3 kappa ") == -1.5e-3
    assert parse_quantity("0.08 lambda") == 0.08
    with pytest.raises(ConfigError):
        parse_quantity("3")
    with pytest.raises(ConfigError):
        parse_quantity("1 omega_R")


def test_valid_config_builds_experiment():
    cfg = parse_config(_doc())
    assert cfg.params.detuning == LinearDetuning(0.0, 2 / 342)
    assert cfg.lattice.n_atoms == 3 and cfg.experiment.chunk_size == 16
    assert cfg.sweep.n_points == 5
    assert cfg.sha256 == parse_config(_doc()).sha256


@pytest.mark.parametrize(
    "edits, field",
    [
        ({"system__extra": "1 kappa"}, "system"),
        ({"system__delta_c": "5"}, "system.delta_c"),
        ({"system__eta": None}, "system"),
        ({"sampler": "fermi"}, "sampler"),
        ({"lattice__n_sites": 0}, "lattice"),
        ({"system__detuning": {"kind": "linear", "delta0": "0 kappa"}}, "system.detuning"),
    ],
)
def test_schema_violations_name_the_field(edits, field):
    with pytest.raises(ConfigError) as err:
        parse_config(_doc(**edits))
    assert str(err.value).startswith(field)


def test_json_syntax_error_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "system": {\n    "kappa": "1 kappa",,\n  }\n}\n')
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert re.search(r"line 3, column \d+", str(err.value))


def test_bad_config_exits_2_without_partial_output(tmp_path, capsys):
    cfg = _write(tmp_path, _doc(system__kappa="one"))
    out = tmp_path / "run"
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_CONFIG
    assert "system.kappa" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == [cfg]


def test_subcommand_mismatch_exits_2(tmp_path):
    cfg = _write(tmp_path, _doc())
    assert cli.main(["dressed-scan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["spectrum", "--config", str(cfg), "--workers", "0"]) == cli.EXIT_CONFIG


def test_solver_failure_exits_3_with_diagnostics(tmp_path, monkeypatch):
    def failing(cfg, out):
        (out / "half.csv").write_text("x\n")
        raise ConvergenceError("no steady state", residual=1.0)

    monkeypatch.setitem(cli.COMMANDS, "spectrum", failing)
    out = tmp_path / "o"
    cfg = _write(tmp_path, _doc())
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_SOLVER
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["error"] == "ConvergenceError" and diag["diagnostics"]["residual"] == 1.0
    assert sorted(p.name for p in out.iterdir()) == ["diagnostics.json"]
    assert not any(p.name.startswith(".o.partial") for p in tmp_path.iterdir())


def test_spectrum_run_manifest_and_round_trip(tmp_path):
    cfg = _write(tmp_path, _doc())
    out = cli.run("spectrum", cfg, tmp_path / "a")
    header = (out / "spectrum.csv").read_text().splitlines()[0]
    assert header == ",".join(SPECTRUM_COLUMNS)
    assert "spectrum.csv" in (out / "spectrum.gp").read_text()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and man["command"] == "spectrum"
    assert set(man["outputs"]) == {"spectrum.csv", "spectrum.gp"}
    assert {"artifact", "python", "numpy", "scipy"} <= set(man["versions"])
    again = cli.run("spectrum", out / "manifest.json", tmp_path / "b")
    assert json.loads((again / "manifest.json").read_text())["outputs"] == man["outputs"]
    parallel = cli.run("spectrum", cfg, tmp_path / "c", workers=2)
    assert json.loads((parallel / "manifest.json").read_text())["outputs"] == man["outputs"]
    other = cli.run("spectrum", cfg, tmp_path / "d", seed=8)
    assert json.loads((other / "manifest.json").read_text())["outputs"] != man["outputs"]


def test_csv_number_format(tmp_path):
    out = cli.run("spectrum", _write(tmp_path, _doc()), tmp_path / "a")
    row = (out / "spectrum.csv").read_text().splitlines()[1].split(",")
    mantissa = re.fullmatch(r"-?(\d\.\d+)e[-+]\d+", row[0]).group(1)
    assert len(mantissa.replace(".", "")) >= 12


def test_sample_and_eigenmodes_outputs(tmp_path):
    cfg = _write(tmp_path, _doc(system__eta="0 kappa"))
    out = cli.run("sample", cfg, tmp_path / "s")
    assert (out / "realizations.csv").read_text().startswith("realization,atom,x_over_lambda,site,coupled\n")
    out = cli.run("eigenmodes", cfg, tmp_path / "e")
    hist = read_csv(out / "histogram.csv")
    assert list(hist) == ["mode_class", "mode_rank", "gamma_over_unit", "delta_over_unit", "count"]
    assert hist["count"].sum() == 40 * 3
    assert (out / "histogram.gp").exists()


def test_dressed_scan_output(tmp_path):
    doc = _doc(sweep={"variable": "cavity_detuning", "start": "-2 kappa", "stop": "2 kappa", "n_points": 3})
    out = cli.run("dressed-scan", _write(tmp_path, doc), tmp_path / "d")
    t = read_csv(out / "dressed_scan.csv")
    assert len(t["branch"]) == 3 * 4 and set(t["branch"]) == {0.0, 1.0, 2.0, 3.0}


def test_two_atom_exact_and_compare(tmp_path):
    doc = _doc(
        lattice={"n_sites": 2, "wannier_width": "0.08 lambda"},
        sweep={"variable": "atom_detuning", "start": "3 omega_R", "stop": "4 omega_R", "n_points": 2},
        options={"grid_spacing": "0.01 lambda", "profile_at": "3 omega_R"},
    )
    out = cli.run("two-atom-exact", _write(tmp_path, doc), tmp_path / "x")
    assert {"spectrum.csv", "two_body.csv", "one_body.csv", "manifest.json"} <= {p.name for p in out.iterdir()}
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["conservation_error"] < 1e-10
    assert read_csv(out / "one_body.csv")["rho_1"].sum() > 0
    out = cli.run("compare", _write(tmp_path, doc), tmp_path / "c")
    cmp = read_csv(out / "compare.csv")
    assert np.all(cmp["se_total"] > 0) and np.all(np.isfinite(cmp["z_total"]))


def test_emit_plot_script(tmp_path):
    t = tmp_path / "spectrum.csv"
    t.write_text("sweep_value,total\n")
    script = cli.emit_plot_script(t, "spectrum")
    assert "logscale y" in script and "'spectrum.csv'" in script
    assert "view map" in cli.emit_plot_script(t, "histogram")
    with pytest.raises(ValueError):
        cli.emit_plot_script(t, "pie")
    with pytest.raises(FileNotFoundError):
        cli.emit_plot_script(tmp_path / "missing.csv", "spectrum")
