"""Command line entry point: ``tcpalign {run,campaign,calibrate,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import calibration
from .errors import TcpAlignError
from .harness import report as rep
from .harness.scenario import ABLATIONS, Scenario
from .registration import MatchOptions


def _scenario(args, path=None) -> Scenario:
    s = Scenario.load(path) if path else Scenario()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "cases", None) is not None:
        changes["cases"] = args.cases
    if args.ablate:
        changes["ablate"] = sorted(set(s.ablate) | set(args.ablate))
    return s.with_overrides(**changes) if changes else s


def _emit(report: dict, fmt: str) -> None:
    sys.stdout.write(rep.dumps(report) if fmt == "structured" else rep.format_tables(report))


def _progress(res):
    logging.getLogger("tcpalign").info("case %d %s", res.case, "ok" if res.ok else res.error)


def cmd_run(args) -> int:
    s = _scenario(args, args.scenario)
    report = rep.run_campaign(s, args.out, _progress, args.threaded)
    _emit(report, args.format)
    return 0 if report["passed"] else 1


def cmd_campaign(args) -> int:
    files = sorted(Path(args.directory).glob("*.json"))
    if not files:
        print(f"no scenario files (*.json) in {args.directory}", file=sys.stderr)
        return 2
    summary = {}
    for f in files:
        s = _scenario(args, f)
        out = Path(args.out) / s.name if args.out else None
        report = rep.run_campaign(s, out, _progress, args.threaded)
        summary[s.name] = report
    combined = {"scenarios": summary, "passed": all(r["passed"] for r in summary.values())}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "campaign.json").write_text(rep.dumps(combined))
    if args.format == "structured":
        sys.stdout.write(rep.dumps(combined))
    else:
        sys.stdout.write("\n".join(rep.format_tables(r) for r in summary.values()))
    return 0 if combined["passed"] else 1


def cmd_calibrate(args) -> int:
    pair = calibration.load_pair(args.slam, args.tcp)
    opts = MatchOptions(args.max_iterations, robust_loss_scale=args.loss_scale,
                        rotation_cap=math.radians(args.rotation_cap))
    result = calibration.calibrate(pair, opts, coarse="coarse" not in (args.ablate or []))
    text = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    s = Scenario.load(args.scenario) if args.scenario else None
    report = rep.recompute(args.run_dir, s)
    if args.out:
        rep.write_outputs(report, args.out)
    _emit(report, args.format)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcpalign", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out", default=None, help=out_help)
        sp.add_argument("--ablate", action="append", choices=ABLATIONS,
                        help="disable a pipeline stage (repeatable)")
        sp.add_argument("--format", choices=("text", "structured"), default="text")

    r = sub.add_parser("run", help="run one scenario file and print its report")
    r.add_argument("scenario", nargs="?", help="scenario JSON (defaults if omitted)")
    r.add_argument("--cases", type=int, default=None)
    r.add_argument("--threaded", action="store_true", help="run the vision side on its own thread")
    common(r, "directory for report files and logs")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("campaign", help="run every scenario in a directory")
    c.add_argument("directory")
    c.add_argument("--cases", type=int, default=None)
    c.add_argument("--threaded", action="store_true", help="run the vision side on its own thread")
    common(c, "directory; one sub-directory per scenario")
    c.set_defaults(func=cmd_campaign)

    k = sub.add_parser("calibrate", help="calibrate from SLAM and TCP trajectory CSVs")
    k.add_argument("slam")
    k.add_argument("tcp")
    k.add_argument("--max-iterations", type=int, default=50)
    k.add_argument("--loss-scale", type=float, default=0.005, help="Huber scale [m]")
    k.add_argument("--rotation-cap", type=float, default=30.0, help="degrees")
    common(k, "write the calibration JSON here")
    k.set_defaults(func=cmd_calibrate)

    q = sub.add_parser("report", help="recompute tables from a run directory's logs")
    q.add_argument("run_dir")
    q.add_argument("--scenario", default=None, help="scenario JSON used for the run")
    common(q, "directory for the recomputed report files")
    q.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TcpAlignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
