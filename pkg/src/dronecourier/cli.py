"""Command line entry points: run a mission, sweep the detector, plot a trace."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .sim import run, sweep_detection
from .world import ScenarioError

EXIT_BY_OUTCOME = {"DONE": 0, "FAILED": 2, "CRASHED": 3, "TIMEOUT": 4}


def _cmd_run(args) -> int:
    try:
        report = run(args.scenario, seed_override=args.seed, out_dir=args.out,
                     dump_images=args.dump_images,
                     dump_occupancy_every=args.dump_occupancy,
                     max_sim_time=args.max_sim_time)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_BY_OUTCOME.get(report.outcome, 1)


def _cmd_sweep(args) -> int:
    results = sweep_detection(tilt=math.radians(args.tilt), out_csv=args.out)
    for label, info in results.items():
        print(f"{label}: max detected distance "
              f"{info['max_distance'] if info['max_distance'] is not None else 'none'} m, "
              f"avg {info['avg_ms']:.2f} ms, max {info['max_ms']:.2f} ms")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(args.trace)
    if not path.exists():
        print(f"trace not found: {path}", file=sys.stderr)
        return 1
    states, transitions = [], []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            if rec["type"] == "drone_state":
                states.append(rec)
            elif rec["type"] == "state_transition":
                transitions.append(rec)
    if not states:
        print("trace holds no drone_state records", file=sys.stderr)
        return 1
    ts = np.array([r["t"] for r in states])
    pos = np.array([r["pos"] for r in states])
    clearance = np.array([r["clearance"] if r["clearance"] is not None else np.nan
                          for r in states])

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    axes[0].plot(pos[:, 0], pos[:, 1], "b-")
    axes[0].plot(pos[0, 0], pos[0, 1], "go", label="start")
    axes[0].plot(pos[-1, 0], pos[-1, 1], "rs", label="end")
    axes[0].set_xlabel("east [m]")
    axes[0].set_ylabel("north [m]")
    axes[0].set_title("top-down path")
    axes[0].axis("equal")
    axes[0].legend()

    axes[1].plot(ts, pos[:, 2], "b-")
    for tr in transitions:
        axes[1].axvline(tr["t"], color="0.8", lw=0.8)
    axes[1].set_xlabel("time [s]")
    axes[1].set_ylabel("altitude [m]")
    axes[1].set_title("altitude profile")

    axes[2].plot(ts, clearance, "b-")
    axes[2].axhline(0.4, color="r", ls="--", lw=0.8, label="0.4 m")
    axes[2].set_xlabel("time [s]")
    axes[2].set_ylabel("clearance [m]")
    axes[2].set_title("true obstacle clearance")
    axes[2].legend()

    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dronecourier",
                                     description="Headless balcony-delivery drone simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a delivery mission")
    p_run.add_argument("scenario", help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--dump-images", action="store_true", help="write debug PGM frames")
    p_run.add_argument("--dump-occupancy", type=int, default=None, metavar="N",
                       help="write occupied-cell CSV every N mission ticks")
    p_run.add_argument("--max-sim-time", type=float, default=300.0,
                       help="simulated-time budget in seconds")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep-detection",
                             help="max detection distance and latency per resolution")
    p_sweep.add_argument("--tilt", type=float, default=0.0, help="marker tilt in degrees")
    p_sweep.add_argument("--out", default="sweep.csv", help="output CSV path")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_plot = sub.add_parser("plot", help="render an SVG summary of a trace")
    p_plot.add_argument("trace", help="trace.jsonl from a run")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
