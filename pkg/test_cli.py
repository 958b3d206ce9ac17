# test_cli.py
import sys
import os
import json

import pandas as pd
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
from components.cli import configs_from_preset, load_presets, main
from services.fixtures import FIXTURE_DIR, load_fixture


def fixture_sign_lines(path):
    lines = path.read_text().splitlines()
    return [l for l in lines if l.startswith("+ ")], [l for l in lines if l.startswith("- ")]


# --- sample ---

def test_sample_writes_balanced_fixture(tmp_path):
    out = tmp_path / "h.txt"
    assert main(["sample", "--n", "16", "--k", "32", "--scheme", "binary", "--seed", "7", "--out", str(out)]) == 0
    plus, minus = fixture_sign_lines(out)
    assert len(plus) == len(minus) == 16
    assert load_fixture(out).K == 32


def test_sample_rejects_odd_k(tmp_path, capsys):
    code = main(["sample", "--n", "16", "--k", "31", "--scheme", "binary", "--seed", "0", "--out", str(tmp_path / "h.txt")])
    assert code == 2
    assert "K must be even for binary scheme" in capsys.readouterr().err
    assert not (tmp_path / "h.txt").exists()


def test_sample_rejects_k_beyond_n_total(tmp_path, capsys):
    assert main(["sample", "--n", "8", "--k", "100", "--out", str(tmp_path / "h.txt")]) == 2
    assert "N_total=70" in capsys.readouterr().err


def test_sample_from_p(tmp_path):
    out = tmp_path / "h.txt"
    assert main(["sample", "--n", "16", "--p", "0.01", "--out", str(out)]) == 0
    assert load_fixture(out).K == 18


def test_sample_needs_k_or_p(tmp_path):
    assert main(["sample", "--n", "16", "--out", str(tmp_path / "h.txt")]) == 1
    assert main(["sample", "--n", "16", "--k", "8", "--p", "0.1", "--out", str(tmp_path / "h.txt")]) == 1


def test_missing_argument_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["sample", "--n", "8"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["spectrum", "--sector", "middle"])
    assert e.value.code == 1


# --- spectrum ---

def test_spectrum_of_large_fixture_is_refused(tmp_path, capsys):
    code = main(["spectrum", "--fixture", str(FIXTURE_DIR / "syk_n32_k30.txt"), "--out-dir", str(tmp_path)])
    assert code == 3
    assert "refused" in capsys.readouterr().err


def test_spectrum_writes_record_and_manifest(tmp_path):
    assert main(["spectrum", "--n", "12", "--k", "24", "--format", "csv", "--out-dir", str(tmp_path)]) == 0
    record = tmp_path / "N12_K24_binary_s0.csv"
    multiplicities = tmp_path / "N12_K24_binary_s0_multiplicities.csv"
    assert record.exists() and multiplicities.exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["version"] == 1
    assert set(manifest["files"]) == {record.name, multiplicities.name}
    assert manifest["files"][record.name]["command"] == "spectrum"
    frame = pd.read_csv(multiplicities)
    assert frame["multiplicity"].sum() == 64


def test_spectrum_reports_coinciding_sectors(tmp_path, capsys):
    assert main(["spectrum", "--n", "14", "--k", "56", "--sector", "both", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "sector spectra equal" in out
    assert "yes" in out


def test_single_sector_spectrum(tmp_path):
    assert main(["spectrum", "--n", "10", "--k", "20", "--sector", "odd", "--out-dir", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "N10_K20_binary_s0_multiplicities.csv")
    assert set(frame["sector"]) == {"sector-odd"}
    assert frame["multiplicity"].sum() == 16


def test_spectrum_flag_conflicts(tmp_path):
    fixture = str(FIXTURE_DIR / "syk_n32_k30.txt")
    assert main(["spectrum", "--fixture", fixture, "--n", "32", "--out-dir", str(tmp_path)]) == 1
    assert main(["spectrum", "--n", "12", "--out-dir", str(tmp_path)]) == 1


# --- validate-fixture ---

def test_validate_shipped_fixtures(capsys):
    assert main(["validate-fixture"]) == 0
    out = capsys.readouterr().out
    assert "OK: N=32 K=30 (+:15 −:15)" in out
    assert "OK: N=34 K=36 (+:18 −:18)" in out


def test_validate_duplicate_fixture(tmp_path, capsys):
    path = tmp_path / "dup.txt"
    path.write_text("N=8\nC=auto\n+ 1 2 3 4\n- 1 2 3 5\n+ 1 2 3 4\n- 2 3 4 5\n")
    assert main(["validate-fixture", str(path)]) == 2
    assert "duplicate" in capsys.readouterr().err


# --- stats ---

def test_preset_grid():
    preset = load_presets()["2"]
    configs = configs_from_preset(preset, max_n=16)
    ks = {N: sorted(c.K for c in configs if c.N == N) for N in (14, 16)}
    assert ks == {14: [6, 14, 28, 56], 16: [8, 16, 32, 64]}
    assert all(c.eigenvalue_budget == 2 ** 20 for c in configs)
    assert configs_from_preset(preset, max_n=16, realizations=5)[0].n_realizations == 5


def test_dense_preset_cells():
    configs = configs_from_preset(load_presets()["4"], n=8, realizations=1)
    binary = sorted(c.K for c in configs if c.scheme == "binary")
    assert binary == [8, 16, 32, 70]
    assert [c.K for c in configs if c.scheme == "dense"] == [70]


def test_stats_figure_preset(tmp_path):
    code = main(["stats", "--figure", "3", "--n", "8", "--realizations", "2", "--workers", "1",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    cell = tmp_path / "N8_K16_binary"
    assert (cell / "sff_g_beta0.csv").exists()
    sidecar = json.loads((cell / "sff_g_beta0.json").read_text())
    assert sidecar["beta"] == 0.0 and sidecar["n_realizations"] == 2
    provenance = json.loads((cell / "provenance.json").read_text())
    assert len(provenance["seeds"]) == 2
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert sorted(summary["K"]) == [4, 8, 16, 32]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"]["N8_K16_binary/sff_g_beta0.csv"]["command"] == "stats --figure 3"


def test_stats_from_config(tmp_path):
    config = {"N": 8, "scheme": "gaussian", "K": 20, "n_realizations": 2, "persist": False,
              "grid": {"n_points": 40, "t_min": 0.1, "t_max": 100.0}, "alphas": [1.0]}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    out_dir = tmp_path / "out"
    assert main(["stats", "--config", str(path), "--workers", "1", "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "N8_K20_gaussian" / "sff_h_alpha1_beta0.csv").exists()
    assert (out_dir / "gap_ratio.csv").exists()
    assert (out_dir / "ramp_onset.csv").exists()


def test_stats_from_spectra(tmp_path):
    for seed in ("1", "2"):
        assert main(["spectrum", "--n", "10", "--k", "20", "--seed", seed, "--out-dir", str(tmp_path)]) == 0
    files = sorted(str(p) for p in tmp_path.glob("N10_K20_binary_s*.bin"))
    out_dir = tmp_path / "stats"
    assert main(["stats", "--spectra", *files, "--out-dir", str(out_dir)]) == 0
    summary = pd.read_csv(out_dir / "summary.csv")
    assert summary["n_completed"].iloc[0] == 2
    assert summary["rmt_ensemble"].iloc[0] == "GUE"


@pytest.mark.parametrize("argv", [
    ["stats"],
    ["stats", "--figure", "2", "--config", "c.json"],
    ["stats", "--figure", "2", "--n", "14", "--max-n", "16"],
    ["stats", "--figure", "2", "--max-n", "10"],
])
def test_stats_flag_conflicts(tmp_path, argv):
    assert main(argv + ["--out-dir", str(tmp_path)]) == 1


def test_stats_rejects_odd_binary_k(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"N": 12, "scheme": "binary", "K": 31, "n_realizations": 3}))
    assert main(["stats", "--config", str(path), "--out-dir", str(tmp_path / "out")]) == 2
    assert "K must be even for binary scheme" in capsys.readouterr().err


def test_stats_with_no_completed_realizations(tmp_path):
    config = {"N": 8, "p": 1e-6, "sampling": "bernoulli", "n_realizations": 2, "persist": False,
              "grid": {"n_points": 40, "t_min": 0.1, "t_max": 100.0}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    assert main(["stats", "--config", str(path), "--workers", "1", "--out-dir", str(tmp_path / "out")]) == 2


def test_stats_with_only_failing_cells(tmp_path):
    config = {"N": 32, "K": 30, "n_realizations": 1, "persist": False}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    assert main(["stats", "--config", str(path), "--out-dir", str(tmp_path / "out")]) == 2


@pytest.mark.slow
def test_figure_two_at_desk_scale(tmp_path):
    assert main(["stats", "--figure", "2", "--max-n", "16", "--out-dir", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "gap_ratio.csv")
    densest = table[table["N"] == 16].sort_values("K").iloc[-1]
    reference = pd.read_csv(tmp_path / "rmt_reference.csv")
    goe = reference.loc[reference["ensemble"] == "GOE", "mean_r"].iloc[0]
    assert abs(densest["mean_r"] - goe) < 0.02
