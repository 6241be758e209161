import json

import numpy as np
import pytest

from lightvar.cli import main
from lightvar.fileio import read_container, read_grid_state

SMALL = """[grid]
nx = 12
ny = 12
n_levels = 30
[osse]
n_hours = 1
obs_per_hour = 15
nmc_valid_times = 4
[scheme]
name = 1d3dvar
n_cycles = 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return str(path)


def run(out, *argv):
    code = main(list(argv) + ["--out", str(out)])
    return code, json.loads((out / "manifest.json").read_text())


def test_cape_command(tmp_path):
    code, man = run(tmp_path / "cape", "cape", "--t-sfc", "301")
    assert code == 0
    assert man["status"] == "ok" and man["exit_code"] == 0
    assert man["results"]["cape"] > 0
    assert all(c["passed"] for c in man["checks"].values())
    assert "parcel.csv" in man["outputs"]
    assert man["thresholds"]["operator"]["cape_min"] == 325.973
    assert {"lightvar", "numpy", "scipy", "python"} <= set(man["versions"])


def test_flashrate_command(tmp_path, capsys):
    code, man = run(tmp_path / "fr", "flashrate", "--cape", "325.973", "1000")
    assert code == 0
    rates = man["results"]["flash_rate"]
    assert rates[0] == pytest.approx(0.0, abs=1e-12) and rates[1] > 0
    assert "check zero_rate_at_cape_min: pass" in capsys.readouterr().out


def test_flashrate_below_threshold_is_a_categorised_error(tmp_path, capsys):
    code, man = run(tmp_path / "fr", "flashrate", "--cape", "100")
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error [below-threshold]:")
    assert man["status"] == "error" and man["error"]["category"] == "below-threshold"


def test_missing_input_exits_2(tmp_path, capsys):
    code = main(["cape", "--column", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error [")


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[qc]\nmin_improvement = -1\n")
    code = main(["cape", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error [invalid-config]" in capsys.readouterr().err


def test_adjoint_check_command(tmp_path):
    code, man = run(tmp_path / "adj", "adjoint-check", "--cases", "4")
    assert code == 0
    assert all(v["max_error"] <= 1e-10 for v in man["results"].values())


def test_alpha_test_large_perturbation(tmp_path):
    code, man = run(tmp_path / "alpha", "alpha-test", "--amplitude", "14")
    assert code == 0
    assert man["results"]["log10_at_1"] >= -1.0
    rows = (tmp_path / "alpha" / "alpha_test.csv").read_text().splitlines()
    assert len(rows) == 22


def test_gen_osse_then_verify_and_nmc(tmp_path, config):
    scen = tmp_path / "scen"
    code, man = run(scen, "gen-osse", "--config", config, "--seed", "2")
    assert code == 0
    assert man["results"]["n_truth_states"] == 2
    code, man = run(tmp_path / "v", "verify", "--field", str(scen / "background.lvb"),
                    "--truth", str(scen / "truth_h00.lvb"), "--obs", str(scen / "obs.csv"),
                    "--config", config)
    assert code == 0
    bg = read_grid_state(scen / "background.lvb").temperature
    truth = read_grid_state(scen / "truth_h00.lvb").temperature
    assert man["results"]["rmse"] == pytest.approx(np.sqrt(((bg - truth) ** 2).mean()))
    assert man["results"]["innovation_count"] > 0
    code, man = run(tmp_path / "nmc", "nmc-stats", "--scenario", str(scen), "--config", config)
    assert code == 0
    assert man["results"]["n_levels"] == 30
    assert read_container(tmp_path / "nmc" / "bcov.lvb", "bcov")[0] == "bcov"


def test_reruns_are_bit_identical(tmp_path, config):
    for name in ("a", "b"):
        assert main(["retrieve-1dvar", "--config", config, "--seed", "1",
                     "--out", str(tmp_path / name)]) in (0, 1)
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "manifest.json":
            ma, mb = json.loads((a / rel).read_text()), json.loads((b / rel).read_text())
            ma.pop("argv"), mb.pop("argv")
            assert ma == mb
        else:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_default_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LIGHTVAR_OUT", str(tmp_path / "runs"))
    assert main(["cape", "--seed", "3"]) == 0
    assert (tmp_path / "runs" / "cape-seed3" / "manifest.json").exists()


def test_assimilate_command(tmp_path, config):
    code, man = run(tmp_path / "asm", "assimilate", "--config", config, "--scheme",
                    "3dvar_direct")
    assert code == 0
    assert man["results"]["scheme"] == "3dvar_direct"
    assert (tmp_path / "asm" / "analysis.lvb").exists()


def test_failed_check_exits_1(tmp_path):
    # without observations the analysis is the free run, so it cannot beat it
    path = tmp_path / "noobs.ini"
    text = SMALL.replace("nmc_valid_times = 4", "nmc_valid_times = 4\nobs_min_flash_rate = 1e9")
    path.write_text(text)
    code, man = run(tmp_path / "cyc", "cycle", "--config", str(path))
    assert code == 1
    assert man["status"] == "checks_failed"
    assert man["checks"]["analysis_beats_free_run"]["passed"] is False
