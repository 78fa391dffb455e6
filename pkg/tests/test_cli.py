import csv
import json
import math
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

import degenloc.cli as cli
from degenloc.cli import ConfigError, ExperimentConfig, main
from degenloc.greens import LemmaFalsified, decay_fit, greens, verify_ldt_bounds
from degenloc.operator import LatticeInterval

from conftest import calibration_params

CAL_MODEL = {"lam": 1e4, "v": "cos", "w": "sin2", "omega": "golden", "phase": [0.1234, 0.3141]}


def run(tmp_path, name, command, config):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / name
    rc = main([command, "--config", str(cfg), "--out", str(out)])
    return rc, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load(path):
    return json.loads(path.read_text())


# -- config -------------------------------------------------------------------

def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"model": dict(CAL_MODEL, E=5000), "run": {"N": 40}},
                                     "greens")
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert again.config_hash() == cfg.config_hash()


@pytest.mark.parametrize("patch,field", [
    ({"model": {"lam": 1, "E": 0, "omega": [1.5, 0.2]}}, "model.omega[0]"),
    ({"model": {"lam": "big", "E": 0}}, "model.lam"),
    ({"model": {"lam": 1}}, "model.E"),
    ({"model": {"lam": 1, "E": 0, "v": "sawtooth"}}, "model.v"),
    ({"model": {"lam": 1, "E": 0}, "run": {"N": 4, "bogus": 1}}, "run.bogus"),
    ({"model": {"lam": 1, "E": 0}, "run": {"N": 2.5}}, "run.N"),
    ({"model": {"lam": 1, "E": 0}, "run": {}}, "run.N"),
    ({"model": {"lam": 1, "E": 0}, "run": {"N": 3}, "output": {"formats": ["png"]}},
     "output.formats"),
])
def test_field_level_errors(patch, field):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(patch, "greens")
    assert err.value.field == field


def test_malformed_omega_exit_code(tmp_path, capsys):
    rc, _ = run(tmp_path, "bad", "greens",
                {"model": {"lam": 5, "E": 1, "omega": [1.2, 0.3]}, "run": {"N": 3}})
    assert rc == 2
    assert "model.omega[0]" in capsys.readouterr().err


def test_yaml_config(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("model:\n  lam: 5\n  E: 1\n  phase: [0.0, 0.25]\nrun:\n  interval: [0, 0]\n")
    assert main(["greens", "-c", str(cfg), "-o", str(tmp_path / "y")]) == 0


def test_unparseable_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text("{not json")
    assert main(["greens", "-c", str(cfg)]) == 2


# -- greens -------------------------------------------------------------------

def test_single_site_greens(tmp_path):
    rc, out = run(tmp_path, "g1", "greens",
                  {"model": {"lam": 5, "E": 1, "v": "cos", "w": "sin2", "phase": [0, 0.25]},
                   "run": {"interval": [0, 0]}})
    assert rc == 0
    rows = read_csv(out / "greens.csv")
    assert len(rows) == 1 and float(rows[0]["G"]) == 0.25


def test_greens_api_parity(tmp_path):
    rc, out = run(tmp_path, "g40", "greens", {"model": dict(CAL_MODEL, E=5000.0), "run": {"N": 40}})
    assert rc == 0
    rep = load(out / "greens_report.json")
    G = greens(calibration_params(E=5000.0), LatticeInterval.centered(40))
    assert rep["verdict"] == json.loads(json.dumps(verify_ldt_bounds(G, 0.9, 0.5, 40).as_dict()))
    assert rep["decay_fit"] == decay_fit(G).as_dict()
    assert rep["operator_norm"] == G.operator_norm
    rows = read_csv(out / "greens.csv")
    assert float(rows[5]["G"]) == G.entries[0, 5]


def test_singular_exit_code(tmp_path):
    from degenloc.model import Phase, builtin_function
    from degenloc.operator import ModelParameters, assemble_H0
    from conftest import calibration_omega
    p = ModelParameters(3.0, 0.0, builtin_function("cos"), builtin_function("const"),
                        calibration_omega(), Phase(0.2, 0.0))
    E = float(np.linalg.eigvalsh(assemble_H0(p, LatticeInterval.centered(4)).to_dense())[2])
    rc, _ = run(tmp_path, "sing", "greens",
                {"model": {"lam": 3.0, "E": E, "w": "const", "phase": [0.2, 0.0]},
                 "run": {"N": 4}})
    assert rc == 3


def test_paste_and_perturbation_sections(tmp_path):
    rc, out = run(tmp_path, "gp", "greens",
                  {"model": dict(CAL_MODEL, E=-3000.0, phase=[0.71, 0.05]),
                   "run": {"N": 50, "paste_M": 25, "perturbation_eps": 1e-9,
                           "perturbation_K": 3}})
    assert rc == 0
    rep = load(out / "greens_report.json")
    assert "paste" in rep and rep["perturbation"]["condition_ok"]
    assert rep["perturbation"]["norm_ok"] and rep["perturbation"]["decay_ok"]


def test_falsification_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise LemmaFalsified("pasted bound failed")
    monkeypatch.setattr(cli, "paste_intervals", boom)
    monkeypatch.setattr(cli, "coupling_goodness",
                        lambda G, M, b: type("V", (), {"good": True})())
    rc, _ = run(tmp_path, "gf", "greens",
                {"model": dict(CAL_MODEL, E=0.0), "run": {"N": 20, "paste_M": 11}})
    assert rc == 4


# -- badset -------------------------------------------------------------------

def test_badset_empty(tmp_path):
    rc, out = run(tmp_path, "be", "badset",
                  {"model": {"lam": 1e4, "E": 0.0, "v": "const"}, "run": {"scales": [10]}})
    assert rc == 0
    rep = load(out / "badset_report.json")
    assert rep["reports"][0]["bad_fraction"] == 0.0
    assert read_csv(out / "bad_cells_E0_N10.csv") == []


def test_badset_full(tmp_path):
    rc, out = run(tmp_path, "bf", "badset",
                  {"model": {"lam": 1.0, "E": 0.5}, "run": {"scales": [20]}})
    assert rc == 0
    rep = load(out / "badset_report.json")["reports"][0]
    assert rep["bad_fraction"] == 1.0
    assert len(read_csv(out / "bad_cells_E0_N20.csv")) == rep["samples"] == 64 * 64


def test_badset_calibration_scan(tmp_path):
    from degenloc.model import MonteCarloSampler
    from degenloc.msa import bad_set_estimate
    rc, out = run(tmp_path, "bc", "badset",
                  {"model": dict(CAL_MODEL, energies=[-5000.0, 5000.0]),
                   "run": {"scales": [20], "sampler": {"kind": "mc", "count": 1000, "seed": 3},
                           "workers": 1}})
    assert rc == 0
    rows = read_csv(out / "badset_summary.csv")
    for row in rows:
        r = bad_set_estimate(calibration_params(E=float(row["E"])), 20,
                             MonteCarloSampler(1000, 3))
        assert float(row["bad_fraction"]) == r.bad_fraction
    assert load(out / "manifest.json")["workers"] == 1


# -- msa ----------------------------------------------------------------------

def test_msa_single_scale(tmp_path):
    rc, out = run(tmp_path, "m1", "msa",
                  {"model": {"lam": 3.0, "E": 1.5}, "run": {"scales": [10], "phases_per_scale": 50,
                                                            "initial_check": False}})
    assert rc == 0
    scales = load(out / "msa_report.json")["energies"][0]["scales"]
    assert len(scales) == 1 and scales[0]["phases"] == 50


def test_msa_ladder_violation(tmp_path, capsys):
    rc, _ = run(tmp_path, "mv", "msa",
                {"model": {"lam": 3.0, "E": 1.5}, "run": {"scales": [10, 40], "delta": 0.9}})
    assert rc == 2
    assert "induction window" in capsys.readouterr().err


def test_msa_two_scale_calibration(tmp_path):
    rc, out = run(tmp_path, "m2", "msa",
                  {"model": dict(CAL_MODEL, E=5000.0),
                   "run": {"scales": [20, 40], "delta": 0.5, "phases_per_scale": 30}})
    assert rc == 0
    rep = load(out / "msa_report.json")["energies"][0]
    assert rep["initial_scale"]["consistent"] == rep["initial_scale"]["phases"]
    a, b = rep["scales"]
    assert b["bad_fraction"] <= a["bad_fraction"]


def test_msa_budget_exit(tmp_path):
    rc, out = run(tmp_path, "mb", "msa",
                  {"model": {"lam": 3.0, "E": 1.5},
                   "run": {"scales": [8, 16], "delta": 0.5, "phases_per_scale": 20, "budget": 50,
                           "initial_check": False}})
    assert rc == 3
    assert load(out / "manifest.json")["status"] == "incomplete"


# -- spectrum and lyapunov ----------------------------------------------------

def test_spectrum_single_site(tmp_path):
    rc, out = run(tmp_path, "s1", "spectrum",
                  {"model": {"lam": 3.0, "phase": [0.1, 0.3]},
                   "run": {"interval": [0, 0], "lyapunov": False}})
    assert rc == 0
    rep = load(out / "eigen_report.json")
    expect = 3.0 * math.cos(2 * math.pi * 0.1) / math.sin(2 * math.pi * 0.3) ** 2
    assert rep["eigenvalues"][0] == pytest.approx(expect, rel=1e-12)


def test_spectrum_laplacian(tmp_path):
    rc, out = run(tmp_path, "sl", "spectrum",
                  {"model": {"lam": 0.0, "w": "const"}, "run": {"N": 10, "lyapunov": False}})
    assert rc == 0
    ev = np.array(load(out / "eigen_report.json")["eigenvalues"])
    k = np.arange(1, 22)
    np.testing.assert_allclose(ev, -2 * np.cos(np.pi * k / 22), atol=1e-12)


def test_spectrum_calibration(tmp_path):
    rc, out = run(tmp_path, "sc", "spectrum", {"model": dict(CAL_MODEL), "run": {"N": 100}})
    assert rc == 0
    rep = load(out / "eigen_report.json")
    assert rep["route"] in ("tridiagonal", "pencil")
    assert rep["localized_fraction"] >= 0.95
    assert rep["min_localized_rate"] >= 1 / 18
    assert abs(rep["median_rate_over_lyapunov"] - 1) < 0.1
    rows = read_csv(out / "eigen_decay.csv")
    assert len(rows) == 201


def test_lyapunov_free_line(tmp_path):
    rc, out = run(tmp_path, "l0", "lyapunov",
                  {"model": {"lam": 0.0, "w": "const"}, "run": {"energies": [-1.0, 0.0, 1.0]}})
    assert rc == 0
    assert all(float(r["gamma"]) < 1e-3 for r in read_csv(out / "lyapunov.csv"))


def test_lyapunov_constant_closed_form(tmp_path):
    rc, out = run(tmp_path, "lc", "lyapunov",
                  {"model": {"lam": 5.0, "v": "const", "w": "const", "energies": [0.0, 1.0]}})
    assert rc == 0
    for r in read_csv(out / "lyapunov.csv"):
        x = abs(5.0 - float(r["E"]))
        assert float(r["gamma"]) == pytest.approx(math.log((x + math.sqrt(x * x - 4)) / 2),
                                                  rel=2e-3)


def test_lyapunov_calibration_sweep(tmp_path):
    from degenloc.spectrum import lyapunov_many
    E = [-5000.0, 0.0, 5000.0]
    rc, out = run(tmp_path, "lk", "lyapunov", {"model": dict(CAL_MODEL, energies=E)})
    assert rc == 0
    got = [float(r["gamma"]) for r in read_csv(out / "lyapunov.csv")]
    assert got == [e.gamma for e in lyapunov_many(calibration_params(), E)]


# -- determinism and manifest -------------------------------------------------

def test_byte_identical_reruns(tmp_path):
    config = {"model": dict(CAL_MODEL, energies=[0.0, 5000.0]),
              "run": {"scales": [10], "sampler": {"kind": "mc", "count": 1000, "seed": 1}}}
    _, a = run(tmp_path, "r1", "badset", config)
    _, b = run(tmp_path, "r2", "badset", config)
    files = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    assert files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = load(a / "manifest.json"), load(b / "manifest.json")
    assert ma["config_hash"] == mb["config_hash"]
    assert ma["outputs"] == mb["outputs"]


def test_manifest_contents(tmp_path):
    rc, out = run(tmp_path, "mf", "lyapunov", {"model": {"lam": 0.0, "w": "const"}})
    m = load(out / "manifest.json")
    assert set(m) >= {"config_hash", "version", "wall_time", "stages", "outputs", "config"}
    assert {o["file"] for o in m["outputs"]} == {"lyapunov.csv", "lyapunov_report.json"}
    assert m["config"]["command"] == "lyapunov"


def test_schema_covers_outputs():
    schema = json.loads(resources.files("degenloc").joinpath("data/csv_schema.json").read_text())
    names = set(schema["files"])
    assert {"greens.csv", "badset_summary.csv", "msa_scales.csv", "eigen_decay.csv",
            "lyapunov.csv", "bad_cells_E{i}_N{N}.csv"} <= names


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"lam": 0.0, "w": "const"}, "run": {"energies": [0.5]}}))
    res = subprocess.run([sys.executable, "-m", "degenloc", "lyapunov", "-c", str(cfg), "-o",
                          str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "lyapunov.csv").exists()
