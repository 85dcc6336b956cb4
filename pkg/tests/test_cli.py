import json
import math

import numpy as np
import pytest

from contactsde import cli


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, name="cfg.json", **fields):
    path = tmp_path / name
    path.write_text(json.dumps(fields))
    return str(path)


def test_list_systems(capsys):
    code, out, _ = run_cli(capsys, "list-systems")
    assert code == 0
    payload = json.loads(out)
    ids = [e["id"] for e in payload["systems"]]
    assert ids == ["dissipative-2d", "sasaki-einstein-t11"]
    assert payload["systems"][0]["dim"] == 5


def test_simulate_deterministic_bytes(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.05, dt=0.001, seed=42)
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    code1, _, _ = run_cli(capsys, "simulate", "--config", cfg, "--out", str(out1))
    code2, _, _ = run_cli(capsys, "simulate", "--config", cfg, "--out", str(out2))
    assert code1 == code2 == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0] == "t,q1,q2,p1,p2,z,lambda"
    assert len(lines) == 52
    first = lines[1].split(",")
    assert [float(v) for v in first[:6]] == [0.0, 1.0, 0.0, 2.0, 0.0, 0.0]
    assert float(first[6]) == 1.0


def test_simulate_dt_mismatch_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.1, dt=0.0003)
    code, _, err = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 2
    assert "dt" in err


def test_simulate_deterministic_lambda_column(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        system={"chart": "darboux", "n": 1, "h0": "z", "noise": [], "constants": {}},
        T=1.0, dt=1e-3, initial_state=[0.5, 0.5, 1.0],
    )
    code, out, _ = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 0
    rows = out.strip().splitlines()
    lam_final = float(rows[-1].split(",")[-1])
    assert abs(lam_final - math.exp(-1.0)) <= 1e-8


def test_simulate_inline_requires_initial_state(tmp_path, capsys):
    cfg = write_config(
        tmp_path, system={"chart": "darboux", "n": 1, "h0": "z"}, T=0.1, dt=0.01
    )
    code, _, err = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 2
    assert "initial_state" in err


def test_verify_contact_dissipative(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=1.0, dt=1e-3, seed=2024)
    code, out, _ = run_cli(capsys, "verify-contact", "--config", cfg)
    assert code == 0
    report = json.loads(out)
    assert report["dt_levels"] == [4e-3, 2e-3, 1e-3]
    assert all(o >= 0.9 for o in report["fitted_orders"])
    assert report["lambda_max_deviation"] <= 1e-12
    assert report["strict_contactomorphism"] is False
    assert report["max_defect_finest"] <= 1e-2


def test_verify_contact_nonzero_t0_and_param_override(tmp_path, capsys):
    # closed form is exp(-gamma (t - t0)) with the override gamma applied
    cfg = write_config(
        tmp_path, system="dissipative-2d", t0=0.5, T=0.9, dt=1e-3, seed=3,
        params={"gamma": 0.25},
    )
    code, out, _ = run_cli(capsys, "verify-contact", "--config", cfg)
    assert code == 0
    report = json.loads(out)
    assert report["config"]["conformal_factor"] == "exp(-0.25*(t - 0.5))"
    assert report["lambda_max_deviation"] <= 1e-12
    assert report["lambda_final"] == pytest.approx(math.exp(-0.25 * 0.4), abs=1e-12)


def test_simulate_nonzero_t0_time_column(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", t0=2.0, T=2.05, dt=0.01, seed=1)
    code, out, _ = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 0
    rows = out.strip().splitlines()
    assert float(rows[1].split(",")[0]) == 2.0
    assert float(rows[-1].split(",")[0]) == pytest.approx(2.05, abs=1e-12)


def test_verify_contact_se_strict_flag(tmp_path, capsys):
    cfg = write_config(
        tmp_path, system="sasaki-einstein-t11", T=0.048, dt=5e-4, seed=1,
    )
    code, out, _ = run_cli(capsys, "verify-contact", "--config", cfg)
    assert code == 0
    report = json.loads(out)
    assert report["strict_contactomorphism"] is True
    assert report["lambda_final"] == 1.0
    assert report["lambda_max_deviation"] == 0.0


def test_verify_contact_roundtrips_effective_config(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.2, dt=1e-3, seed=7)
    code, out, _ = run_cli(capsys, "verify-contact", "--config", cfg)
    assert code == 0
    effective = json.loads(out)["config"]
    cfg2 = tmp_path / "effective.json"
    cfg2.write_text(json.dumps(effective))
    code2, out2, _ = run_cli(capsys, "verify-contact", "--config", str(cfg2))
    assert code2 == 0
    assert out2 == out


def test_check_integrability_pass_fail(tmp_path, capsys):
    cfg = write_config(tmp_path, system="sasaki-einstein-t11", T=0.1, dt=1e-3, seed=5)
    ok_args = [
        "check-integrability", "--config", cfg,
        "--integral", "1",
        "--integral", "(1/3)*cos(theta1)",
        "--integral", "(1/3)*cos(theta2)",
    ]
    code, out, _ = run_cli(capsys, *ok_args)
    assert code == 0
    report = json.loads(out)
    assert report["passed"] is True
    assert report["min_singular_value"] >= 0.1

    bad_args = [
        "check-integrability", "--config", cfg,
        "--integral", "1",
        "--integral", "(1/3)*cos(theta1)",
        "--integral", "phi1",
    ]
    code, out, _ = run_cli(capsys, *bad_args)
    assert code == 1
    assert json.loads(out)["max_pairwise_bracket"] == pytest.approx(1.0, abs=1e-12)

    code, _, _ = run_cli(capsys, *bad_args, "--report-only")
    assert code == 0

    code, _, err = run_cli(
        capsys, "check-integrability", "--config", cfg, "--integral", "1", "--integral", "phi1"
    )
    assert code == 2


def test_bracket_command(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=1.0, dt=1e-3)
    code, out, _ = run_cli(capsys, "bracket", "--config", cfg, "-f", "q1", "-g", "p1")
    assert code == 0
    assert json.loads(out)["bracket"] == 1.0
    code, out, _ = run_cli(
        capsys, "bracket", "--config", cfg, "-f", "z", "-g", "1", "--state", "0,0,0,0,2.0"
    )
    assert json.loads(out)["bracket"] == -1.0
    code, _, err = run_cli(
        capsys, "bracket", "--config", cfg, "-f", "z", "-g", "1", "--state", "0,0,oops,0,0"
    )
    assert code == 2 and "state" in err
    code, _, err = run_cli(
        capsys, "bracket", "--config", cfg, "-f", "z", "-g", "1", "--state", "0,0"
    )
    assert code == 2


def test_check_integrability_samples_validated(tmp_path, capsys):
    cfg = write_config(tmp_path, system="sasaki-einstein-t11", T=0.1, dt=1e-3)
    code, _, err = run_cli(
        capsys, "check-integrability", "--config", cfg,
        "--integral", "1", "--integral", "(1/3)*cos(theta1)",
        "--integral", "(1/3)*cos(theta2)", "--samples", "0",
    )
    assert code == 2 and "samples" in err


def test_monte_carlo_worker_count_invariance(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.1, dt=0.01, seed=3)
    args = ["monte-carlo", "--config", cfg, "--observable", "z", "--paths", "200"]
    code1, out1, _ = run_cli(capsys, *args, "--workers", "1")
    code2, out2, _ = run_cli(capsys, *args, "--workers", "2")
    assert code1 == code2 == 0
    assert out1 == out2
    stats = json.loads(out1)
    assert stats["n_paths"] == 200
    assert stats["stderr"] == pytest.approx(math.sqrt(stats["variance"] / 200), abs=1e-18)


def test_monte_carlo_constant_observable(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.05, dt=0.01, seed=3)
    code, out, _ = run_cli(
        capsys, "monte-carlo", "--config", cfg, "--observable", "1", "--paths", "16"
    )
    assert code == 0
    assert json.loads(out)["variance"] == 0.0


def test_convergence_command_deterministic_system(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        system={"chart": "darboux", "n": 1, "h0": "p1^2/2 + q1^4/4 + 0.1*z",
                "noise": [], "constants": {}},
        T=1.024, dt=1e-3, initial_state=[1.0, 0.5, 0.0],
    )
    code, out, _ = run_cli(capsys, "convergence", "--config", cfg, "--levels", "4")
    assert code == 0
    report = json.loads(out)
    assert all(o >= 1.9 for o in report["orders"])


def test_unknown_system_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, system="missing", T=0.1, dt=0.01)
    code, _, err = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 2
    assert "missing" in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    # midpoint fixed point cannot contract at this step size
    cfg = write_config(
        tmp_path,
        system={"chart": "darboux", "n": 1, "h0": "50*(q1^2 + p1^2)",
                "noise": [], "constants": {}},
        T=2.0, dt=1.0, scheme="midpoint", initial_state=[1.0, 1.0, 0.0],
    )
    code, _, err = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 3
    assert "numerical failure" in err


def test_bad_scheme_and_bad_expression(tmp_path, capsys):
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.1, dt=0.01, scheme="rk4")
    code, _, err = run_cli(capsys, "simulate", "--config", cfg)
    assert code == 2
    cfg = write_config(tmp_path, system="dissipative-2d", T=0.1, dt=0.01)
    code, _, err = run_cli(
        capsys, "monte-carlo", "--config", cfg, "--observable", "z +", "--paths", "4"
    )
    assert code == 2
