import csv
import math

import numpy as np
import pytest

from matching_pendulum.cli_io import (
    CSV_FIELDS,
    OUT_DIR_ENV,
    ConfigError,
    load_config,
    main,
    parse_matrix,
    read_trajectory_csv,
    verify,
    write_trajectory_csv,
)
from matching_pendulum.digital_loop import DEFAULT_DISCRETE, DiscreteGains
from matching_pendulum.pendulum_model import State
from matching_pendulum.sim_engine import Scenario, simulate


def header_line(path):
    with open(path) as fh:
        return next(line for line in fh if not line.startswith("#")).strip()


def test_parse_matrix():
    np.testing.assert_array_equal(parse_matrix("[[1, 2], [3, 4]]"), [[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        parse_matrix("[[1, 2], [3]]")
    with pytest.raises(ValueError):
        parse_matrix("[[1, 2], [3, 4]", shape=(2, 2))
    with pytest.raises(ValueError):
        parse_matrix("[1, 2]", shape=(3,))


def test_run_fig7(tmp_path, capsys):
    out = tmp_path / "fig7.csv"
    assert main(["run", "--preset", "fig7", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "status: converged" in text
    assert "observer_spectral_radius: 0.924" in text
    assert header_line(out) == ",".join(CSV_FIELDS)
    cols = read_trajectory_csv(out)
    assert cols["t"][-1] == pytest.approx(60.0, abs=0.0143)
    assert np.all(np.diff(cols["t"]) > 0)
    assert np.all(np.isfinite(cols["theta_hat"]))


def test_run_fig5(tmp_path, capsys):
    out = tmp_path / "fig5.csv"
    assert main(["run", "--preset", "fig5", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "status: converged" in text
    assert "linear_gains: p1=24.0676" in text
    cols = read_trajectory_csv(out)
    assert np.all(np.isnan(cols["theta_hat"]))  # continuous runs carry no estimate


def test_default_out_dir_from_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    assert main(["run", "--preset", "fig2", "--horizon", "1"]) == 0
    assert (tmp_path / "fig2.csv").exists()


def test_flags_override_preset(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["run", "--preset", "fig7", "--horizon", "0.5", "--theta0", "0.1", "--out", str(out)]) == 0
    cols = read_trajectory_csv(out)
    assert cols["theta"][0] == 0.1
    assert cols["t"][-1] == pytest.approx(0.5, abs=0.0143)


def test_malformed_matrix_config(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[discrete]\ntau = 0.0143\nG_d = [[0.168, 0], [-0.0001, 0.165], [0.509, 0]\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 1
    err = capsys.readouterr().err
    assert "bad.ini:3" in err and "G_d" in err
    assert not (tmp_path / "x.csv").exists()


def test_wrong_shape_config(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[discrete]\nA_d = [[1, 0], [0, 1]]\n")
    with pytest.raises(ConfigError, match="A_d"):
        load_config(cfg)


def test_unknown_key_config(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[design]\nsigma_zero = 1\n")
    with pytest.raises(ConfigError, match=r"bad.ini:2: \[design\] sigma_zero"):
        load_config(cfg)


def test_config_roundtrip_values(tmp_path):
    cfg = tmp_path / "ok.ini"
    cfg.write_text(
        "[scenario]\npreset = fig6\nhorizon = 5\ninitial = [0.2, 0, 0, 0]\n"
        "[design]\nmu_0 = 16.0\n[output]\npath = out/run.csv\n"
    )
    rc = load_config(cfg)
    assert rc.scenario.controller == "linear" and rc.scenario.mode == "sampled"
    assert rc.scenario.horizon == 5.0 and rc.scenario.initial == State(0.2, 0, 0, 0)
    assert rc.design.mu_0 == 16.0
    assert str(rc.out) == "out/run.csv"


def test_verify_defaults(capsys):
    assert main(["verify"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8 and all(line.startswith("PASS") for line in lines)


def test_verify_perturbed_sigma(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[design]\nsigma_0 = -1.0\n")
    assert main(["verify", "--config", str(cfg)]) == 3
    out = capsys.readouterr().out
    assert "FAIL sigma_jump_error" in out


def test_verify_scaled_observer_gain():
    # 10x keeps the observer stable (rho 0.958); 20x does not
    ok = DiscreteGains(DEFAULT_DISCRETE.tau, DEFAULT_DISCRETE.A_d, DEFAULT_DISCRETE.B_d, DEFAULT_DISCRETE.C, 10 * DEFAULT_DISCRETE.G_d)
    bad = DiscreteGains(DEFAULT_DISCRETE.tau, DEFAULT_DISCRETE.A_d, DEFAULT_DISCRETE.B_d, DEFAULT_DISCRETE.C, 20 * DEFAULT_DISCRETE.G_d)
    by_name = lambda checks: {c.name: c for c in checks}
    assert by_name(verify(discrete=ok, n_theta=9, n_x=5))["observer_spectral_radius"].ok
    assert not by_name(verify(discrete=bad, n_theta=9, n_x=5))["observer_spectral_radius"].ok


def test_verify_scaled_gain_via_cli(tmp_path, capsys):
    cfg = tmp_path / "g.ini"
    cfg.write_text("[discrete]\nG_d = [[3.36, 0], [-0.002, 3.3], [10.18, 0], [-0.078, 9.46]]\n")
    assert main(["verify", "--config", str(cfg), "--grid", "9", "5"]) == 3
    assert "FAIL observer_spectral_radius" in capsys.readouterr().out


def test_sweep_single_step(tmp_path, capsys):
    out = tmp_path / "sw.csv"
    args = ["sweep", "--preset", "fig7", "--horizon", "5", "--tau-min", "0.02", "--tau-max", "0.05", "--steps", "1", "--out", str(out)]
    assert main(args) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and float(rows[0]["tau"]) == 0.02


@pytest.mark.parametrize("preset,status", [("fig7", "converged"), ("fig7-large", "diverged")])
def test_sweep_reference_tau(tmp_path, capsys, preset, status):
    out = tmp_path / "sw.csv"
    args = ["sweep", "--preset", preset, "--tau-min", "0.0143", "--tau-max", "0.0143", "--steps", "1", "--out", str(out)]
    assert main(args) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [(float(r["tau"]), r["status"]) for r in rows] == [(0.0143, status)]


def test_sweep_include(tmp_path, capsys):
    out = tmp_path / "sw.csv"
    args = ["sweep", "--preset", "fig7", "--horizon", "5", "--tau-min", "0.02", "--tau-max", "0.04",
            "--steps", "2", "--include", "0.0143", "--out", str(out)]
    assert main(args) == 0
    with open(out) as fh:
        taus = [float(r["tau"]) for r in csv.DictReader(fh)]
    assert taus == [0.0143, 0.02, 0.04]


def test_sweep_bad_range(capsys):
    assert main(["sweep", "--tau-min", "0.05", "--tau-max", "0.01"]) == 1


def test_geometry_exit_code(tmp_path, capsys):
    assert main(["run", "--controller", "matching", "--theta0", "1.6", "--horizon", "1", "--out", str(tmp_path / "g.csv")]) == 2


def test_csv_round_trip(tmp_path):
    tr = simulate(Scenario(mode="sampled", horizon=0.5))
    path = tmp_path / "t.csv"
    write_trajectory_csv(tr, path, comments=["note"])
    cols = read_trajectory_csv(path)
    np.testing.assert_array_equal(cols["t"], tr.t)
    np.testing.assert_array_equal(np.column_stack([cols[k] for k in CSV_FIELDS[1:5]]), tr.states)
    np.testing.assert_array_equal(np.column_stack([cols[k] for k in CSV_FIELDS[5:9]]), tr.x_hat)
    np.testing.assert_array_equal(cols["u"], tr.u)
    np.testing.assert_array_equal(cols["H_hat"], tr.H)


def test_read_rejects_foreign_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_trajectory_csv(path)
