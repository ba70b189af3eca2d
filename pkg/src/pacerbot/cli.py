"""``pacerbot`` command-line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .experiments import (
    EXIT_ABORT,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SELFTEST,
    MatrixFormatError,
    anova_report,
    format_extended,
    format_lap,
    format_study,
    read_matrix,
    run_calibrate,
    run_extended,
    run_lap,
    run_session,
    run_study,
    selftest,
    write_report,
)
from .outputs import RunDirectory
from .simulation import SessionAbort
from .telemetry import session_summary

COMMANDS = ("lap", "calibrate", "session", "study", "extended", "anova", "report", "selftest")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. plant.speed_noise_std=0.1 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (same as --set master_seed=N)")
    common.add_argument("--output-dir", help="output directory (overrides config and PACERBOT_OUTPUT_DIR)")

    parser = argparse.ArgumentParser(prog="pacerbot", description="Robot-paced interval running simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lap", parents=[common], help="robot alone at fixed target speeds")
    sub.add_parser("calibrate", parents=[common], help="one calibration against a simulated runner")
    sub.add_parser("session", parents=[common], help="calibration plus one interval session")
    sub.add_parser("study", parents=[common], help="within-subjects study over all conditions")
    sub.add_parser("extended", parents=[common], help="repeated long interval sessions")
    p = sub.add_parser("anova", parents=[common], help="repeated-measures ANOVA on a CSV matrix")
    p.add_argument("csv", help="subjects x conditions CSV with a header row")
    p = sub.add_parser("report", parents=[common], help="plot-ready CSVs from a study run")
    p.add_argument("--run", help="study output directory (default: <output_dir>/study)")
    sub.add_parser("selftest", parents=[common], help="quick headline checks; exit 4 on failure")
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    cfg = load_config(args.config, overrides)
    if args.output_dir:
        from dataclasses import replace
        cfg = replace(cfg, output_dir=args.output_dir)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(cfg.output_dir)
    cmd = args.command

    if cmd == "anova":
        try:
            names, data = read_matrix(args.csv)
            print(anova_report(names, data), end="")
        except (MatrixFormatError, OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    if cmd == "selftest":
        checks = selftest(cfg)
        for name, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_SELFTEST

    out = RunDirectory(root / cmd, cmd, cfg)
    try:
        if cmd == "lap":
            print(format_lap(run_lap(cfg, out)), end="")
        elif cmd == "calibrate":
            u_bar, profile, _ = run_calibrate(cfg, out)
            print(f"u_bar {u_bar:.3f} m/s -> slow {profile.u_slow:.3f}, fast {profile.u_fast:.3f} m/s")
        elif cmd == "session":
            result = run_session(cfg, out)
            report = session_summary(result.log, result.schedule, result.profile, cfg.metrics.window,
                                     cfg.metrics.guard_band, result.schedule_t0)
            out.write_text(f"{cfg.session.condition}_report.txt", report.to_text())
            print(f"u_bar {result.u_bar:.3f} m/s")
            print(report.to_text(), end="")
        elif cmd == "study":
            study = run_study(cfg, out)
            print(format_study(study), end="")
        elif cmd == "extended":
            print(format_extended(run_extended(cfg, out)), end="")
        elif cmd == "report":
            run_dir = Path(args.run) if args.run else root / "study"
            write_report(run_dir, out)
            print(f"wrote plot data to {out.root}")
    except SessionAbort as exc:
        out.notes.append(f"aborted: {exc}")
        out.write_manifest()
        print(f"session aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except FileNotFoundError as exc:
        out.notes.append(str(exc))
        out.write_manifest()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.finish()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
