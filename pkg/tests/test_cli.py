import csv
import json
import math

import numpy as np
import pytest

from continuum_backstep import cli
from continuum_backstep.kernels import KernelSolverError


def _rows(path):
    return list(csv.DictReader(open(path)))


def _usage_exit(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    return exc.value.code


def test_kernels_single_channel_vanish(tmp_path):
    assert cli.main(["kernels", "--n", "1", "--mode", "exact", "--m", "65",
                     "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "kernels_n1_exact.csv")
    assert max(abs(float(r["k"])) for r in rows) <= 1e-10
    meta = json.load(open(tmp_path / "kernels_n1_exact.json"))
    assert meta["residual"]["max_u"] <= 1e-10


def test_kernels_sampled_v_column(tmp_path):
    assert cli.main(["kernels", "--n", "8", "--mode", "sampled", "--m", "33",
                     "--out", str(tmp_path)]) == 0
    vals = {float(r["k"]) for r in _rows(tmp_path / "kernels_n8_sampled.csv") if r["i"] == "9"}
    assert vals == {35 / (2 * math.pi**2)}


def test_kernels_continuum_mode(tmp_path):
    assert cli.main(["kernels", "--n", "3", "--mode", "continuum", "--m", "33", "--n-y", "6",
                     "--out", str(tmp_path)]) == 0
    meta = json.load(open(tmp_path / "kernels_n3_continuum.json"))
    assert meta["continuum_provenance"].startswith("numeric")


@pytest.mark.parametrize("argv", [
    ["kernels", "--n", "0"],
    ["convergence", "--n-list"],
    ["reproduce", "fig9"],
    ["reproduce"],
    ["simulate", "--m", "1"],
    ["simulate", "--t-end", "-1"],
    ["kernels", "--params", "/nonexistent.json"],
    ["convergence", "--params", __file__],
])
def test_usage_errors_exit_2(argv, tmp_path):
    assert _usage_exit(argv + ["--out", str(tmp_path)]) == 2


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 3, "bogus": 1}))
    assert _usage_exit(["kernels", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"command": "simulate"}))
    assert _usage_exit(["kernels", "--config", str(cfg)]) == 2


def test_solver_failure_exit_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise KernelSolverError("non-finite kernel row")

    monkeypatch.setattr(cli, "solve_exact_kernels", boom)
    assert cli.main(["kernels", "--n", "2", "--out", str(tmp_path)]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_simulate_flags_instability(tmp_path):
    assert cli.main(["simulate", "--n", "1", "2", "--m", "48", "--t-end", "20",
                     "--save-stride", "16", "--svg", "--out", str(tmp_path)]) == 0
    assert json.load(open(tmp_path / "trajectory_n1_sampled.json"))["unstable"] is True
    assert json.load(open(tmp_path / "trajectory_n2_sampled.json"))["unstable"] is False
    assert (tmp_path / "controls_sampled.svg").read_text().startswith("<svg")
    assert list(_rows(tmp_path / "trajectory_n2_sampled.csv")[0]) == ["t", "U", "E_norm"]


def test_simulate_controllers_are_tagged(tmp_path):
    for ctrl in ("exact", "sampled", "open"):
        assert cli.main(["simulate", "--n", "3", "--m", "33", "--t-end", "1", "--controller", ctrl,
                         "--snapshots", "0", "1", "--out", str(tmp_path)]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"trajectory_n3_exact.csv", "trajectory_n3_sampled.csv",
            "trajectory_n3_open-loop.csv", "snapshots_n3_exact.csv"} <= names
    snaps = _rows(tmp_path / "snapshots_n3_exact.csv")
    assert len(snaps) == 2 * 4 * 33


def test_config_round_trip_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--n", "2", "3", "--m", "33", "--t-end", "2",
                     "--controller", "exact", "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", str(a / "config.json"), "--out", str(b)]) == 0
    for f in a.iterdir():
        if f.suffix == ".csv":
            assert f.read_bytes() == (b / f.name).read_bytes()
    ca = json.load(open(a / "config.json"))
    cb = json.load(open(b / "config.json"))
    ca.pop("out")
    cb.pop("out")
    assert ca == cb


def test_convergence_outputs(tmp_path):
    assert cli.main(["convergence", "--n-list", "2", "4", "8", "--m", "65",
                     "--out", str(tmp_path)]) == 0
    conv = _rows(tmp_path / "convergence.csv")
    agg = [float(r["delta_aggregate"]) for r in conv]
    assert [int(r["n"]) for r in conv] == [2, 4, 8]
    assert agg[0] > agg[1] > agg[2]
    assert list(_rows(tmp_path / "timings.csv")[0]) == ["n", "t_exact_s", "t_sampled_s"]
    err = _rows(tmp_path / "param_error.csv")
    assert float(err[0]["theta"]) > float(err[2]["theta"])
    manifest = json.load(open(tmp_path / "manifest.json"))
    assert "convergence.csv" in manifest["files"]


def test_reproduce_fig2_has_five_curves(tmp_path):
    assert cli.main(["reproduce", "fig2", "--m", "33", "--t-end", "1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "fig2_controls.csv")
    assert list(rows[0]) == ["t", "U_n2", "U_n3", "U_n4", "U_n5", "U_n6"]
    assert (tmp_path / "fig2_controls.svg").exists()


def test_reproduce_fig7_compares_exact_and_sampled(tmp_path):
    assert cli.main(["reproduce", "fig7", "--m", "33", "--t-end", "1", "--out", str(tmp_path)]) == 0
    dist = _rows(tmp_path / "fig7_distance.csv")
    assert [int(r["n"]) for r in dist] == [3, 5, 10, 20]
    header = list(_rows(tmp_path / "fig7_controls.csv")[0])
    assert "U_n20_exact" in header and "U_n3" in header


def test_reproduce_fig3_from_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"figure": "fig3", "m": 17, "t_end": 1.0}))
    out = tmp_path / "o"
    assert cli.main(["reproduce", "--config", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out / "fig3_un.csv")
    assert list(rows[0]) == ["t", "max_un_n2", "max_un_n3", "max_un_n4", "max_un_n5"]
    assert np.isfinite([float(v) for v in rows[-1].values()]).all()


def test_help_documents_columns(capsys):
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--help"])
    assert "t, U, E_norm" in capsys.readouterr().out
