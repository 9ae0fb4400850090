"""Campaign aggregation, tables and output files.

A run directory looks like::

    report.json          structured report (deterministic for a fixed seed)
    report.txt           the same tables as text
    cases.csv            one row per case
    logs/case_NNN/       orientation.csv, position.csv, slam.csv, tcp.csv

``recompute`` rebuilds the tables from ``logs/`` alone.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .. import calibration
from ..errors import InvalidInputError
from ..registration import MatchOptions
from .runner import CaseResult, PhaseLog, run_case, window_mean
from .scenario import Scenario

REPORT_VERSION = 1
DIGITS = 9

TABLES = {
    "orientation": ["orient_x_deg", "orient_y_deg", "orient_z_deg"],
    "calibration": ["resid_mean_x_mm", "resid_mean_y_mm", "resid_mean_z_mm",
                    "resid_max_x_mm", "resid_max_y_mm", "resid_max_z_mm", "calib_rot_err_deg"],
    "position": ["pos_x_mm", "pos_y_mm", "pos_z_mm", "true_lateral_mm", "true_depth_mm"],
}
EXTRA = ["true_axis_deg", "deflection_mm"]
COLUMNS = [c for cols in TABLES.values() for c in cols] + EXTRA


def _num(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return None if not math.isfinite(x) else round(x, DIGITS)


def case_row(res: CaseResult) -> dict:
    row = dict.fromkeys(COLUMNS)
    row.update(case=res.case, ok=res.ok, error=res.error, deflection_mm=res.deflection_mm)
    if res.orientation:
        o = res.orientation["mean_abs_deg"]
        row.update(orient_x_deg=o[0], orient_y_deg=o[1], orient_z_deg=o[2],
                   true_axis_deg=res.orientation["true_axis_deg"])
    if res.calibration:
        c = res.calibration
        mean, mx = c["residual_mean_mm"], c["residual_max_mm"]
        row.update(resid_mean_x_mm=mean[0], resid_mean_y_mm=mean[1], resid_mean_z_mm=mean[2],
                   resid_max_x_mm=mx[0], resid_max_y_mm=mx[1], resid_max_z_mm=mx[2],
                   calib_rot_err_deg=c["rotation_error_deg"])
    if res.position:
        p = res.position["mean_abs_mm"]
        row.update(pos_x_mm=p[0], pos_y_mm=p[1], pos_z_mm=p[2],
                   true_lateral_mm=res.position["true_lateral_mm"],
                   true_depth_mm=res.position["true_depth_mm"])
    for k in COLUMNS:
        row[k] = _num(row[k])
    row["rejections"] = dict(res.rejections)
    return row


def aggregate(rows: list[dict], how=np.mean) -> dict:
    out = {}
    for k in COLUMNS:
        vals = [r[k] for r in rows if r.get(k) is not None]
        out[k] = _num(how(vals)) if vals else None
    return out


def acceptance(mean: dict, worst: dict, rows: list[dict], s: Scenario) -> dict:
    """Pass/fail per threshold; a missing value (phase not run) fails."""
    a = s.acceptance

    def below(v, lim):
        return v is not None and v <= lim

    checks = {
        "all_cases_completed": bool(rows) and all(r["ok"] for r in rows),
        "orient_x_deg": below(mean["orient_x_deg"], a.orient_x_deg),
        "orient_y_deg": below(mean["orient_y_deg"], a.orient_y_deg),
        "pos_x_mm": below(mean["pos_x_mm"], a.pos_x_mm),
        "pos_y_mm": below(mean["pos_y_mm"], a.pos_y_mm),
        "pos_z_mm": below(mean["pos_z_mm"], a.pos_z_mm),
        "true_lateral_mm": below(mean["true_lateral_mm"], a.true_lateral_mm),
    }
    if "vision" not in s.ablate:
        checks["residual_mean_mm"] = all(
            below(worst[f"resid_mean_{ax}_mm"], a.residual_mean_mm) for ax in "xyz")
        checks["residual_max_mm"] = all(
            below(worst[f"resid_max_{ax}_mm"], a.residual_max_mm) for ax in "xyz")
    return checks


def build_report(s: Scenario, rows: list[dict]) -> dict:
    mean = aggregate(rows, np.mean)
    worst = aggregate(rows, np.max)
    checks = acceptance(mean, worst, rows, s)
    return {
        "version": REPORT_VERSION,
        "scenario": s.name,
        "seed": s.seed,
        "ablate": sorted(s.ablate),
        "cases": rows,
        "mean": mean,
        "max": worst,
        "acceptance": checks,
        "passed": all(checks.values()),
    }


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- text tables ---------------------------------------------------------------

def _fmt(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def format_tables(report: dict) -> str:
    lines = [f"scenario {report['scenario']}  seed {report['seed']}  "
             f"ablate {','.join(report['ablate']) or 'none'}", ""]
    for name, cols in TABLES.items():
        head = ["case"] + cols
        width = [max(len(h), 6) for h in head]
        lines.append(f"[{name}]")
        lines.append("  ".join(h.rjust(w) for h, w in zip(head, width)))
        for r in report["cases"]:
            cells = [str(r["case"])] + [_fmt(r[c]) for c in cols]
            lines.append("  ".join(c.rjust(w) for c, w in zip(cells, width)))
        cells = ["mean"] + [_fmt(report["mean"][c]) for c in cols]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cells, width)))
        lines.append("")
    failed = [r for r in report["cases"] if not r["ok"]]
    for r in failed:
        lines.append(f"case {r['case']} failed: {r['error']}")
    lines.append("acceptance: " + ", ".join(
        f"{k}={'pass' if v else 'FAIL'}" for k, v in report["acceptance"].items()))
    lines.append("PASSED" if report["passed"] else "FAILED")
    return "\n".join(lines) + "\n"


# -- files ---------------------------------------------------------------------

def _write_log(path: Path, plog: PhaseLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(plog.columns)
        for row in plog.rows:
            w.writerow([repr(v) for v in row])


def _read_log(path: Path) -> PhaseLog:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    plog = PhaseLog(rows[0])
    plog.rows = [[float(v) for v in r] for r in rows[1:] if r]
    return plog


def write_case_logs(res: CaseResult, logdir: Path) -> None:
    d = Path(logdir) / f"case_{res.case:03d}"
    d.mkdir(parents=True, exist_ok=True)
    if res.orientation:
        _write_log(d / "orientation.csv", res.orientation["log"])
    if res.position:
        _write_log(d / "position.csv", res.position["log"])
    if res.calibration:
        calibration.save_pair(res.calibration["pair"], d / "slam.csv", d / "tcp.csv")
    meta = {"case": res.case, "ok": res.ok, "error": res.error,
            "deflection_mm": _num(res.deflection_mm), "rejections": res.rejections}
    if res.calibration:
        meta["calib_rot_err_deg"] = _num(res.calibration["rotation_error_deg"])
    (d / "case.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def write_outputs(report: dict, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report))
    (out / "report.txt").write_text(format_tables(report))
    with open(out / "cases.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["case", "ok"] + COLUMNS
        w.writerow(head)
        for r in report["cases"]:
            w.writerow(["" if r[k] is None else r[k] for k in head])
        w.writerow(["mean", ""] + ["" if report["mean"][k] is None else report["mean"][k]
                                   for k in COLUMNS])


def run_campaign(s: Scenario, out: Optional[Path] = None, progress=None,
                 threaded: bool = False) -> dict:
    """Run ``s.cases`` cases (case index re-seeds the target placement)."""
    rows = []
    for i in range(s.cases):
        res = run_case(s, i, threaded)
        rows.append(case_row(res))
        if out is not None:
            write_case_logs(res, Path(out) / "logs")
        if progress:
            progress(res)
    report = build_report(s, rows)
    if out is not None:
        write_outputs(report, out)
    return report


def recompute(run_dir: Path, s: Optional[Scenario] = None) -> dict:
    """Rebuild the report tables from the per-case logs in ``run_dir/logs``.

    Orientation/position means come from the logged error series; calibration
    residuals are recomputed by re-running the matcher on the logged SLAM/TCP
    streams. Ground-truth-only columns are taken from each case's metadata.
    """
    run_dir = Path(run_dir)
    if s is None:
        prev = run_dir / "report.json"
        s = Scenario()
        if prev.exists():
            old = json.loads(prev.read_text())
            s = s.with_overrides(name=old["scenario"], seed=old["seed"], ablate=old["ablate"])
    cal = s.calibration
    opts = MatchOptions(cal.max_iterations, cal.convergence_tol, cal.robust_loss_scale,
                        math.radians(cal.rotation_cap_deg))
    win = s.schedule.metric_window
    case_dirs = sorted((run_dir / "logs").glob("case_*"))
    if not case_dirs:
        raise InvalidInputError(f"no case logs under {run_dir / 'logs'}")
    rows = []
    for d in case_dirs:
        meta = json.loads((d / "case.json").read_text())
        row = dict.fromkeys(COLUMNS)
        row.update(case=meta["case"], ok=meta["ok"], error=meta["error"],
                   deflection_mm=meta["deflection_mm"], rejections=meta["rejections"],
                   calib_rot_err_deg=meta.get("calib_rot_err_deg"))
        if (d / "orientation.csv").exists():
            plog = _read_log(d / "orientation.csv")
            o = window_mean(plog, win, [1, 2, 3])
            row.update(orient_x_deg=o[0], orient_y_deg=o[1], orient_z_deg=o[2],
                       true_axis_deg=window_mean(plog, win, [4])[0])
        if (d / "slam.csv").exists():
            result = calibration.calibrate(calibration.load_pair(d / "slam.csv", d / "tcp.csv"),
                                           opts, coarse="coarse" not in s.ablate)
            mean, mx = result.residuals.mean_abs * 1e3, result.residuals.max_abs * 1e3
            row.update(resid_mean_x_mm=mean[0], resid_mean_y_mm=mean[1], resid_mean_z_mm=mean[2],
                       resid_max_x_mm=mx[0], resid_max_y_mm=mx[1], resid_max_z_mm=mx[2])
        if (d / "position.csv").exists():
            plog = _read_log(d / "position.csv")
            p = window_mean(plog, win, [1, 2, 3])
            true = window_mean(plog, win, [4, 5])
            row.update(pos_x_mm=p[0], pos_y_mm=p[1], pos_z_mm=p[2],
                       true_lateral_mm=true[0], true_depth_mm=true[1])
        for k in COLUMNS:
            row[k] = _num(row[k])
        rows.append(row)
    return build_report(s, rows)
