import json

import numpy as np
import pytest

from qscope import cli
from qscope.scanctl import RunConfig


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- config parsing ----------------------------------------------------------------

def test_minimal_movie_config_fills_defaults(tmp_path):
    cfg = cli.parse_config(write(tmp_path, "regime = bad_cavity\ngamma = 2   # rate\n\n"))
    ref = RunConfig()
    assert cfg.gamma == 2.0
    assert (cfg.kappa, cfg.sigma, cfg.alpha, cfg.seed) == (ref.kappa, ref.sigma, ref.alpha, ref.seed)


def test_scan_keys_build_schedule(tmp_path):
    text = "\n".join(["regime = good_cavity", "kappa = 0.1", "initial = thermal", "n_th = 0.6",
                      "scan.mode = linear_scan", "scan.z0_start = -5", "scan.z0_end = 5", "scan.T = 10",
                      "scan.n_scans = 3", "gammaT = 500", "tau = 0.2", "trajectories = 4", "seed = 9"])
    cfg = cli.parse_config(write(tmp_path, text))
    assert cfg.schedule.mode == "linear_scan" and cfg.schedule.n_scans == 3
    assert cfg.gamma == pytest.approx(50.0)
    assert (cfg.tau, cfg.n_trajectories, cfg.seed) == (0.2, 4, 9)


@pytest.mark.parametrize("text, word", [
    ("kappa = 0", "kappa"),
    ("gamma = nan", "gamma"),
    ("gamma = inf", "gamma"),
    ("colour = red", "colour"),
    ("gamma 1", "key = value"),
    ("gamma = 1\ngamma = 2", "duplicate"),
    ("dimension = 2.5", "dimension"),
    ("regime = manybody\ninitial = fermi_ground\nalpha = 2", "alpha"),
    ("regime = bad_cavity\nn_fermions = 16", "n_fermions"),
])
def test_config_errors_name_the_problem(tmp_path, text, word):
    with pytest.raises(cli.ConfigError, match=word):
        cli.parse_config(write(tmp_path, text))


def test_friedel_config_reports_nondemolition_guard(tmp_path, capsys):
    text = "\n".join(["regime = manybody", "initial = fermi_ground", "n_fermions = 16", "sigma = 0.01",
                      f"kappa = {4 * np.pi ** 2!r}", "gammaT = 400", "scan.mode = linear_scan",
                      "scan.z0_start = -0.5", "scan.z0_end = 0.5", "scan.T = 1"])
    cfg = cli.parse_config(write(tmp_path, text))
    assert cfg.gamma == pytest.approx(400.0)
    from qscope.scanctl import evaluate_guards

    g = evaluate_guards(cfg, warn=False)
    assert g["nondemolition_ok"] and g["nondemolition_bound"] == pytest.approx(1e4)


def test_guard_warning_goes_to_stderr(tmp_path, capsys):
    cli.parse_config(write(tmp_path, "regime = bad_cavity\nkappa = 2"))
    assert "kappa/omega" in capsys.readouterr().err


# --- output tables -----------------------------------------------------------------

def test_header_only_table(tmp_path):
    paths = cli.emit([cli.OutputTable("jumps", ["time", "from_n", "to_n"], np.empty((0, 3)))], tmp_path, "csv", {})
    assert (tmp_path / "jumps.csv").read_text() == "time,from_n,to_n\n"
    header, rows = cli.read_table(paths[0])
    assert header == ["time", "from_n", "to_n"] and rows.shape == (0, 3)


def test_floats_round_trip_exactly(tmp_path):
    rng = np.random.default_rng(0)
    rows = np.column_stack([rng.normal(size=50) * 10.0 ** rng.integers(-30, 30, 50), np.full(50, 1 / 3)])
    rows[0, 0] = np.nan
    t = cli.OutputTable("x", ["a", "b"], rows)
    for fmt in ("csv", "json_lines"):
        _, back = cli.read_table(cli.write_table(t, tmp_path, fmt))
        np.testing.assert_array_equal(back, rows)


def test_unwritable_output_is_an_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        cli.emit([], blocker / "sub", "csv", {})


# --- end to end --------------------------------------------------------------------

MOVIE = "regime = bad_cavity\ngamma = 1\ndimension = 8\nscan.T = 0.5\ndt = 0.01\ntau = 0.05\n"


def test_movie_reruns_are_byte_identical(tmp_path):
    cfgp = write(tmp_path, MOVIE)
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["movie", "--config", str(cfgp), "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["jumps.csv", "manifest.json", "populations.csv", "trajectory.csv"]
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["seed"] == 3 and man["code_version"] and man["config"]["gamma"] == 1.0
    assert "T_coll" in man["guards"]


def test_csv_and_json_lines_agree(tmp_path):
    cfgp = write(tmp_path, MOVIE)
    assert cli.main(["movie", "--config", str(cfgp), "--out", str(tmp_path / "c")]) == 0
    assert cli.main(["movie", "--config", str(cfgp), "--out", str(tmp_path / "j"), "--format", "json_lines"]) == 0
    for name in ("trajectory", "populations"):
        hc, rc = cli.read_table(tmp_path / "c" / f"{name}.csv")
        hj, rj = cli.read_table(tmp_path / "j" / f"{name}.jsonl")
        assert hc == hj
        np.testing.assert_array_equal(rc, rj)


def test_error_exit_writes_record(tmp_path, capsys):
    cfgp = write(tmp_path, "kappa = 0\n")
    out = tmp_path / "err"
    assert cli.main(["movie", "--config", str(cfgp), "--out", str(out)]) == 2
    rec = json.loads((out / "error.json").read_text())
    assert rec["error"] == "ConfigError" and "kappa" in rec["message"]
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ConfigError"


def test_focus_and_ensemble_commands(tmp_path):
    assert cli.main(["focus", "--epsilon", "0.1", "--beta", "0.2", "--out", str(tmp_path / "f")]) == 0
    h, rows = cli.read_table(tmp_path / "f" / "focus.csv")
    assert h == ["z", "overlap", "f"] and rows.shape[0] > 100
    cfgp = write(tmp_path, MOVIE + "trajectories = 3\n")
    assert cli.main(["ensemble", "--config", str(cfgp), "--out", str(tmp_path / "e")]) == 0
    h, rows = cli.read_table(tmp_path / "e" / "ensemble.csv")
    assert h[-1] == "I_tau_oracle" and np.all(np.isfinite(rows))


def test_friedel_command_small(tmp_path, capsys):
    out = tmp_path / "fr"
    args = ["friedel", "--n-fermions", "4", "--sigma", "0.04", "--kappa", "40", "--gammaT", "20",
            "--tau-frac", "0.04", "--trajectories", "3", "--seed", "1", "--out", str(out)]
    assert cli.main(args) == 0
    h, rows = cli.read_table(out / "friedel.csv")
    assert h[:3] == ["z0", "I_tau", "theory_n"]
    assert "band_coverage" in capsys.readouterr().out
