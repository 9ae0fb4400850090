import json
import math

import numpy as np
import pytest

from tcpalign import cli
from tcpalign.errors import InvalidInputError, PhaseOrderError, VisionStarvationError
from tcpalign.harness import report as rep
from tcpalign.harness.runner import CaseSim, run_case, run_phase_orientation, run_phase_position
from tcpalign.harness.scenario import Scenario, noiseless

QUICK = {
    "schedule.orientation_updates": 2, "schedule.position_updates": 2,
    "schedule.initial_wait": 1.0, "schedule.final_hold": 2.0, "schedule.metric_window": 1.0,
    "schedule.max_wait": 2.0, "calibration.dwell_start": 2.0,
}


def quick(**extra) -> Scenario:
    return Scenario(name="quick").with_overrides(**QUICK, **extra)


def test_scenario_round_trip_and_unknown_keys(tmp_path):
    s = quick(seed=5)
    s.save(tmp_path / "s.json")
    again = Scenario.load(tmp_path / "s.json")
    assert again.to_dict() == s.to_dict()
    with pytest.raises(InvalidInputError):
        Scenario.from_dict({"vision": {"sigma": 1}})
    with pytest.raises(InvalidInputError):
        Scenario.from_dict({"bogus": 1})
    with pytest.raises(InvalidInputError):
        Scenario(ablate=["everything"])
    assert Scenario.from_dict({}).to_dict() == Scenario().to_dict()


def test_position_phase_requires_calibration():
    cs = CaseSim(quick())
    with pytest.raises(PhaseOrderError):
        run_phase_position(cs)


def test_vision_starvation_is_reported():
    res = run_case(quick(**{"vision.dropout_rate": 1.0}))
    assert not res.ok and res.error.startswith("VisionStarvationError")
    cs = CaseSim(quick(**{"vision.dropout_rate": 1.0}))
    with pytest.raises(VisionStarvationError):
        run_phase_orientation(cs)


def test_noise_free_rigid_case_is_exact():
    """No noise, no deflection, no mount error: every error goes to ~0,
    including the ground-truth tool-to-hole distance."""
    s = noiseless(quick(**{"scene.camera_mount_euler_deg": [0.0, 0.0, 0.0]}))
    res = run_case(s)
    assert res.ok, res.error
    assert np.all(res.orientation["mean_abs_deg"][:2] < 1e-3)
    assert res.orientation["true_axis_deg"] < 1e-3
    assert res.calibration["rotation_error_deg"] < 1e-3
    assert np.all(res.calibration["residual_max_mm"] < 1e-3)
    assert np.all(res.position["mean_abs_mm"] < 0.05)
    assert res.position["true_lateral_mm"] < 0.05
    assert abs(res.position["true_depth_mm"]) < 0.05


def test_threaded_mode_matches_single_thread():
    s = quick(**{"vision.outlier_rate": 0.05, "vision.dropout_rate": 0.05})
    a = rep.case_row(run_case(s, 1))
    b = rep.case_row(run_case(s, 1, threaded=True))
    assert a == b


def test_outliers_are_gated():
    res = run_case(quick(**{"vision.outlier_rate": 0.1}), 0)
    assert res.ok
    assert res.rejections.get("jump", 0) > 10


def test_report_recompute_and_cli(tmp_path, capsys):
    s = quick(cases=2)
    s.save(tmp_path / "quick.json")
    out = tmp_path / "run"
    code = cli.main(["run", str(tmp_path / "quick.json"), "--out", str(out), "--format",
                     "structured"])
    printed = json.loads(capsys.readouterr().out)
    stored = json.loads((out / "report.json").read_text())
    assert printed == stored and code == (0 if stored["passed"] else 1)
    assert len(stored["cases"]) == 2 and (out / "cases.csv").exists()
    assert (out / "logs" / "case_001" / "position.csv").exists()

    again = rep.recompute(out, s)
    for k in rep.COLUMNS:
        assert again["mean"][k] == pytest.approx(stored["mean"][k], abs=1e-9)

    # calibrate subcommand on the logged streams
    logs = out / "logs" / "case_000"
    assert cli.main(["calibrate", str(logs / "slam.csv"), str(logs / "tcp.csv"),
                     "--out", str(tmp_path / "cal.json")]) == 0
    calib = json.loads((tmp_path / "cal.json").read_text())
    assert np.allclose(np.array(calib["residual_mean_abs"]) * 1e3,
                       [stored["cases"][0][f"resid_mean_{a}_mm"] for a in "xyz"], atol=1e-6)
    capsys.readouterr()
    assert cli.main(["report", str(out), "--scenario", str(tmp_path / "quick.json")]) in (0, 1)
    assert "[position]" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == 2
    assert cli.main(["campaign", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["run", "--ablate", "nothing"])


def test_acceptance_flags_follow_thresholds():
    s = Scenario()
    row = dict.fromkeys(rep.COLUMNS, 0.1)
    row.update(case=0, ok=True, error=None, rejections={})
    assert rep.build_report(s, [row])["passed"]
    bad = dict(row, pos_z_mm=7.0)
    r = rep.build_report(s, [bad])
    assert not r["passed"] and not r["acceptance"]["pos_z_mm"]
    assert not rep.build_report(s, [])["passed"]
    assert math.isclose(rep.build_report(s, [row, bad])["mean"]["pos_z_mm"], 3.55)
