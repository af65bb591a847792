import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from asymrls.bpsk import ordinary_point, ordinary_tau
from asymrls import cli
from asymrls.cli import main
from asymrls.errors import NonConvergence

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_small(tmp_path, **over):
    raw = json.loads((CONFIGS / "two_block.json").read_text())
    raw.update(N=128, **over)
    p = tmp_path / "small.json"
    p.write_text(json.dumps(raw))
    return p


def test_predict_matches_closed_form(tmp_path, capsys):
    assert main(["predict", "--config", str(CONFIGS / "bpsk_ordinary.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    # objective lambda 0.2 is engine lambda 0.1 under prox_scale 1
    assert out["lambda_engine"] == pytest.approx(0.1, rel=1e-15)
    assert out["tau"] == pytest.approx(ordinary_tau(0.1, 1.0), abs=1e-8)
    pt = ordinary_point(0.1, 1.0, 0.1, "rederived")
    assert out["theta2"] == pytest.approx(pt.theta2, abs=1e-8)
    assert out["distortions"]["sign_error"] == pytest.approx(pt.P_E, abs=1e-8)


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["predict", "--config", str(tmp_path / "absent.json")]) == 1
    assert "absent.json" in capsys.readouterr().err


def test_bad_field_exits_1(tmp_path, capsys):
    p = write_small(tmp_path, sigma2=-1)
    assert main(["simulate", "--config", str(p)]) == 1
    assert "sigma2" in capsys.readouterr().err


def test_failed_trial_is_a_row(tmp_path, capsys):
    p = write_small(tmp_path, solver={"kind": "gamp", "max_iter": 1})
    assert main(["simulate", "--config", str(p)]) == 0
    assert "failed:NonConvergence" in capsys.readouterr().out


def test_numerical_failure_exits_2(tmp_path, capsys, monkeypatch):
    def fail(cfg):
        raise NonConvergence("stuck", residual=1.0)

    monkeypatch.setattr(cli, "replica_prediction", fail)
    assert main(["predict", "--config", str(write_small(tmp_path))]) == 2
    assert "NonConvergence" in capsys.readouterr().err


def test_invalid_threads_exits_1(tmp_path):
    assert main(["simulate", "--config", str(write_small(tmp_path)), "--threads", "0"]) == 1


def test_simulate_is_byte_identical(tmp_path):
    p = write_small(tmp_path)
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(["simulate", "--config", str(p), "--trials", "3", "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(p), "--trials", "3", "--out", str(b)]) == 0
    assert main(["simulate", "--config", str(p), "--trials", "3", "--threads", "2", "--out", str(c)]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert len(rows) == 6 and {r["trial"] for r in rows} == {"0", "1", "2"}


def test_seed_override_changes_output(tmp_path):
    p = write_small(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--config", str(p), "--out", str(a)])
    main(["simulate", "--config", str(p), "--seed", "99", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_simulate_json(tmp_path, capsys):
    assert main(["simulate", "--config", str(write_small(tmp_path)), "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["aggregate"]["trials"] == 1 and len(out["rows"]) == 2


def test_tune_single_block(tmp_path, capsys):
    raw = json.loads((CONFIGS / "bpsk_ordinary.json").read_text())
    p = tmp_path / "b.json"
    p.write_text(json.dumps(raw))
    assert main(["tune", "--config", str(p)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["distortion"] == "sign_error"
    assert out["stationary"] and not out["boundary"]
    assert out["lambda_star_objective"] == pytest.approx(2 * out["lambda_star"], rel=1e-15)


def test_bpsk_curve_csv(capsys):
    assert main(["bpsk-curve", "--rho", "1.0", "--relaxation", "ordinary", "--db-min", "0",
                 "--db-max", "4", "--db-step", "2"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [float(r["inv_sigma2_dB"]) for r in rows] == [0.0, 2.0, 4.0]
    pe = [float(r["P_E"]) for r in rows]
    assert pe[0] > pe[1] > pe[2]


def test_bpsk_curve_rejects_bad_grid(capsys):
    assert main(["bpsk-curve", "--db-step", "0"]) == 1


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "asymrls.cli", "predict", "--config",
                          str(CONFIGS / "bpsk_ordinary.json")], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["iterations"] > 0
