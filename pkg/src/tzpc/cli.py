"""Command-line front end.

Exit codes: 0 ok, 1 failed check, 2 configuration error, 3 missing
prerequisite, 4 runtime or solver error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config, packaged_scenarios
from .pipeline import (
    MissingPrerequisite,
    run_checks,
    stage_generate,
    stage_learn,
    stage_offline,
    stage_reach,
    stage_simulate,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_PREREQ, EXIT_RUNTIME = 0, 1, 2, 3, 4
COMMANDS = ("check", "generate-data", "learn", "offline", "simulate", "reach", "all")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tzpc", description="Data-driven tube MPC pipeline.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True,
                   help=f"scenario JSON file or packaged name ({', '.join(packaged_scenarios())})")
    p.add_argument("--out", default="out", help="artifact directory (default: ./out)")
    p.add_argument("--seed", type=int, default=None, help="run a single closed-loop seed instead of run.seeds")
    p.add_argument("--steps", type=int, default=None, help="closed-loop steps (overrides run.steps)")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")
    p.add_argument("--timing", action="store_true",
                   help="record solve times in run CSVs (makes them differ between invocations)")
    return p


def _setup_logging(quiet: bool) -> None:
    level = LOG_LEVELS.get(os.environ.get("TZPC_LOG", "").lower(), logging.ERROR if quiet else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.quiet)

    def say(msg):
        if not args.quiet:
            print(msg)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.steps is not None and args.steps < 1:
        print("config error: --steps must be positive", file=sys.stderr)
        return EXIT_CONFIG
    seeds = None if args.seed is None else [args.seed]
    out = Path(args.out)

    try:
        if args.command == "check":
            results = run_checks(cfg)
            for r in results:
                say(r.line())
            failed = [r for r in results if r.ok is False]
            say(f"{len(failed)} check(s) failed" if failed else "all checks passed")
            return EXIT_CHECK if failed else EXIT_OK
        out.mkdir(parents=True, exist_ok=True)
        todo = COMMANDS[1:-1] if args.command == "all" else (args.command,)
        aborted = []
        for cmd in todo:
            if cmd == "generate-data":
                trs = stage_generate(cfg, out)
                say(f"generate-data: {len(trs)} trajectories -> {out / 'data'}")
            elif cmd == "learn":
                ms, delta = stage_learn(cfg, out)
                say(f"learn: ||I_M||_F = {ms.fro_norm:.4g}, covering radius = {delta:.4g}")
            elif cmd == "offline":
                b = stage_offline(cfg, out)
                say(f"offline: kappa = {b.kappa}, alpha = {b.terminal.level:.4g}, "
                    f"S has {b.s_rpi.order} generators")
            elif cmd == "simulate":
                logs = stage_simulate(cfg, out, seeds, args.steps, args.timing)
                aborted = [s for s, lg in logs.items() if lg.aborted]
                say(f"simulate: {len(logs)} run(s), {len(aborted)} aborted")
            elif cmd == "reach":
                sets = stage_reach(cfg, out, seeds)
                say(f"reach: {sum(len(v) for v in sets.values())} sets over {len(sets)} run(s)")
        if aborted:
            print(f"runtime error: closed loop aborted for seed(s) {aborted}", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    except MissingPrerequisite as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
