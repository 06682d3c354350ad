"""Command-line entry point: ``flowvtr {scenario,teach,repeat,eval,gen-traj-lib,trace}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import List, Optional

from .harness import (
    TRACE_COLUMNS,
    LogFormatError,
    RunLog,
    Scenario,
    ScenarioError,
    builtin_scenario,
    evaluate,
    run_repeat,
    run_teach,
    trace_rows,
)
from .perception import WorldFileError
from .planner import LibraryConfig, LibraryConfigError, LibraryFileError, generate_library, load_library, save_library
from .scenarios import BUILTIN
from .teach import MapFileError, MapIOError, TeachError, load_map, save_map

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_SCHEMA = 4
EXIT_RUNTIME = 5


class UsageError(Exception):
    pass


def _load_scenario(spec: str) -> Scenario:
    """A scenario file, or ``builtin:NAME[:SEED]``."""
    if spec.startswith("builtin:"):
        parts = spec.split(":")
        if len(parts) not in (2, 3) or parts[1] not in BUILTIN:
            raise UsageError(f"unknown built-in scenario {spec!r}; choose from {', '.join(BUILTIN)}")
        try:
            seed = int(parts[2]) if len(parts) == 3 else 0
        except ValueError:
            raise UsageError(f"bad seed in {spec!r}") from None
        return builtin_scenario(parts[1], seed=seed)
    return Scenario.load(spec)


def cmd_scenario(args) -> int:
    if args.name not in BUILTIN:
        raise UsageError(f"unknown built-in scenario {args.name!r}; choose from {', '.join(BUILTIN)}")
    sc = builtin_scenario(args.name, seed=args.seed)
    out = Path(args.out)
    if args.world_out:
        sc.world.save(args.world_out)
        wref = Path(args.world_out).resolve()
        try:
            wref = wref.relative_to(out.resolve().parent)
        except ValueError:
            pass
        from dataclasses import replace
        sc = replace(sc, world_file=str(wref))
        sc.save(out, embed_world=False)
    else:
        sc.save(out)
    print(f"wrote scenario {sc.name!r} (seed {sc.rng_seed}) to {out}")
    return EXIT_OK


def cmd_teach(args) -> int:
    sc = _load_scenario(args.scenario)
    kmap, log = run_teach(sc)
    save_map(kmap, args.out)
    if args.log:
        log.save(args.log)
    print(f"map: {len(kmap)} keyframes from {len(log.ticks)} frames -> {args.out}")
    return EXIT_OK


def cmd_repeat(args) -> int:
    kmap = load_map(args.map)
    sc = _load_scenario(args.scenario)
    lib = load_library(args.library) if args.library else None
    teach_log = RunLog.load(args.teach_log) if args.teach_log else None
    log, metrics = run_repeat(kmap, sc, library=lib, teach_log=teach_log)
    log.save(args.out)
    print(metrics.format(include_timing=args.timing))
    return EXIT_OK


def cmd_eval(args) -> int:
    rep = RunLog.load(args.repeat)
    teach = RunLog.load(args.teach)
    metrics = evaluate(rep, teach)
    if args.json:
        print(json.dumps(metrics.to_dict(), sort_keys=True))
    else:
        print(metrics.format())
    return EXIT_OK


def cmd_gen_traj_lib(args) -> int:
    cfg = LibraryConfig(segments=args.segments, segment_length=args.segment_length, speed=args.speed,
                        omega_max=args.omega_max, angular_samples=args.angular_samples,
                        sample_dt=args.sample_dt)
    lib = generate_library(cfg)
    save_library(lib, args.out)
    print(f"library: {len(lib)} candidates -> {args.out}")
    return EXIT_OK


def cmd_trace(args) -> int:
    log = RunLog.load(args.log)
    if log.header.get("mode") != "repeat":
        raise LogFormatError("trace needs a repeat log")
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in trace_rows(log):
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    print(f"trace: {len(log.ticks)} rows -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    lib_defaults = LibraryConfig()
    p = argparse.ArgumentParser(prog="flowvtr", description="Feature-flow visual teach and repeat in simulation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenario", help="write a built-in scenario to a file")
    s.add_argument("name", help=f"one of: {', '.join(BUILTIN)}")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--world-out", help="store the world separately and reference it from the scenario")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("teach", help="drive the teach path and build a keyframe map")
    s.add_argument("--scenario", required=True, help="scenario file or builtin:NAME[:SEED]")
    s.add_argument("--out", required=True, help="map file to write")
    s.add_argument("--log", help="also write the teach run log")
    s.set_defaults(func=cmd_teach)

    s = sub.add_parser("repeat", help="repeat a taught map in closed loop")
    s.add_argument("--map", required=True)
    s.add_argument("--scenario", required=True, help="scenario file or builtin:NAME[:SEED]")
    s.add_argument("--out", required=True, help="run log to write")
    s.add_argument("--library", help="pre-generated candidate library")
    s.add_argument("--teach-log", help="teach log, for the end-point distance")
    s.add_argument("--timing", action="store_true", help="include mean tick time in the printed metrics")
    s.set_defaults(func=cmd_repeat)

    s = sub.add_parser("eval", help="metrics of a repeat log against a teach log")
    s.add_argument("--repeat", required=True)
    s.add_argument("--teach", required=True)
    s.add_argument("--json", action="store_true", help="one JSON object instead of key: value lines")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen-traj-lib", help="generate the offline trajectory candidate library")
    s.add_argument("--out", required=True)
    s.add_argument("--segments", type=int, default=lib_defaults.segments)
    s.add_argument("--segment-length", type=float, default=lib_defaults.segment_length)
    s.add_argument("--speed", type=float, default=lib_defaults.speed)
    s.add_argument("--omega-max", type=float, default=lib_defaults.omega_max)
    s.add_argument("--angular-samples", type=int, default=lib_defaults.angular_samples)
    s.add_argument("--sample-dt", type=float, default=lib_defaults.sample_dt)
    s.set_defaults(func=cmd_gen_traj_lib)

    s = sub.add_parser("trace", help="export tracker telemetry of a repeat log as CSV")
    s.add_argument("--log", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trace)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, LibraryConfigError) as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (MapIOError, OSError) as exc:
        code, msg = EXIT_FILE, str(exc)
    except (MapFileError, ScenarioError, WorldFileError, LogFormatError, LibraryFileError) as exc:
        code, msg = EXIT_SCHEMA, str(exc)
    except (TeachError, ValueError, RuntimeError) as exc:
        code, msg = EXIT_RUNTIME, str(exc)
    print(f"flowvtr {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
