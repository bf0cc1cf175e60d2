"""Command-line harness.

Verbs: simulate, train, sweep-hs, compare-alloc, sweep-ts, alloc-bench.
Exit codes: 0 success, 1 config error, 2 fatal runtime infeasibility.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

OUT_DIR_ENV = "UAVSIM_OUT_DIR"


def _add_common(sub):
    sub.add_argument("--preset", default=None, help="built-in scenario preset")
    sub.add_argument("--config", default=None, help="scenario JSON file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the scenario master seed")
    sub.add_argument("--out-dir", default=None,
                     help=f"output directory (default ${OUT_DIR_ENV} or '.')")


def _parse_floats(text: str) -> List[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _parse_ints(text: str) -> List[int]:
    return [int(tok) for tok in text.split(",") if tok]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavsim",
        description="UAV trajectory planning simulator with QoS-aware "
                    "bandwidth/power allocation")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="run one seeded episode")
    _add_common(sim)
    sim.add_argument("--policy", default="follow-centroid",
                     help="stationary-centroid | follow-centroid | checkpoint path")
    sim.add_argument("--episode-seed", type=int, default=0)
    sim.add_argument("--require-feasible", action="store_true",
                     help="exit 2 if any slot is infeasible")

    tr = subs.add_parser("train", help="train the trajectory policy")
    _add_common(tr)
    tr.add_argument("--iterations", type=int, default=None,
                    help="override ppo.iterations")

    hs = subs.add_parser("sweep-hs", help="altitude x speed throughput grid")
    _add_common(hs)
    hs.add_argument("--altitudes", type=_parse_floats, default=[50.0, 100.0, 150.0])
    hs.add_argument("--speeds", type=_parse_floats, default=[10.0, 16.0, 20.0, 30.0])
    hs.add_argument("--seeds", type=int, default=10, help="number of seeds")
    hs.add_argument("--policy", default="follow-centroid")
    hs.add_argument("--workers", type=int, default=None)

    ca = subs.add_parser("compare-alloc",
                         help="heuristic vs dual-ascent time series")
    _add_common(ca)
    ca.add_argument("--fronthauls", type=_parse_floats, default=[500e6, 200e6])
    ca.add_argument("--seeds", type=int, default=10)
    ca.add_argument("--policy", default="follow-centroid")
    ca.add_argument("--workers", type=int, default=None)

    ts = subs.add_parser("sweep-ts", help="throughput-vs-time curves")
    _add_common(ts)
    ts.add_argument("--altitudes", type=_parse_floats, default=None)
    ts.add_argument("--user-counts", type=_parse_ints, default=None,
                    help="comma list of K values (groups of 4 then individuals)")
    ts.add_argument("--seeds", type=int, default=10)
    ts.add_argument("--policy", default="follow-centroid")
    ts.add_argument("--workers", type=int, default=None)

    ab = subs.add_parser("alloc-bench", help="run allocators on a JSONL file")
    _add_common(ab)
    ab.add_argument("instances", help="JSON-lines file of slot instances")

    return parser


def _load_scenario(args):
    from .scenario import ScenarioError, from_dict, load_scenario, preset
    if args.config and args.preset:
        raise ScenarioError("config: pass either --config or --preset, not both")
    if args.config:
        scn = load_scenario(args.config)
    else:
        scn = preset(args.preset or "paper-s4")
    if args.seed is not None:
        data = scn.to_dict()
        data["seed"] = args.seed
        scn = from_dict(data)
    return scn


def _out_dir(args) -> str:
    out = args.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _user_mix(k: int):
    """K users as the preset shape: groups of 4 first, remainder individual."""
    groups = []
    remaining = k
    while remaining >= 8 and len(groups) < 3:
        groups.append(4)
        remaining -= 4
    return groups, remaining


def main(argv: Optional[List[str]] = None) -> int:
    from .scenario import ScenarioError

    args = build_parser().parse_args(argv)
    try:
        scn = _load_scenario(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1

    out = _out_dir(args)

    from . import harness

    if args.command == "simulate":
        from .policy import CheckpointError
        try:
            trace, summary = harness.run_episode(scn, args.policy, args.episode_seed)
        except (ValueError, CheckpointError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        trace_path = os.path.join(out, f"trace_seed{args.episode_seed}.csv")
        summary_path = os.path.join(out, f"summary_seed{args.episode_seed}.csv")
        harness.export_trace(trace, scn, trace_path)
        harness.export_summary(summary, summary_path)
        print(f"wrote {trace_path} ({summary.episode_length} slots, "
              f"mean sum rate {summary.mean_sum_rate / 1e6:.2f} Mbit/s)")
        infeasible = any(r["status"] == "infeasible" for r in trace.rows) \
            or summary.episode_length < scn.n_slots
        if args.require_feasible and infeasible:
            print("error: episode hit an infeasible slot", file=sys.stderr)
            return 2
        return 0

    if args.command == "train":
        from .policy import train
        ppo = scn.ppo
        if args.iterations is not None:
            from dataclasses import replace
            ppo = replace(ppo, iterations=args.iterations)

        def progress(iteration, reward):
            if (iteration + 1) % max(1, ppo.iterations // 20) == 0:
                print(f"iteration {iteration + 1}/{ppo.iterations}: "
                      f"mean episode reward {reward:.1f}")

        policy, curve = train(scn, ppo=ppo, progress=progress)
        ckpt = os.path.join(out, "policy.ckpt")
        policy.save(ckpt, fingerprint=scn.fingerprint())
        curve_rows = [{"iteration": i, "mean_episode_reward": r}
                      for i, r in enumerate(curve)]
        curve_path = os.path.join(out, "training_curve.csv")
        harness.export_rows(curve_rows, curve_path,
                            ["iteration", "mean_episode_reward"])
        print(f"wrote {ckpt} and {curve_path}")
        return 0

    if args.command == "sweep-hs":
        rows = harness.sweep_altitude_speed(
            scn, args.altitudes, args.speeds, range(args.seeds),
            policy_spec=args.policy, workers=args.workers)
        path = os.path.join(out, "sweep_altitude_speed.csv")
        harness.export_rows(rows, path,
                            ["altitude", "v_max", "mean_sum_rate", "n_seeds"])
        print(f"wrote {path} ({len(rows)} cells)")
        return 0

    if args.command == "compare-alloc":
        rows = harness.compare_allocators(
            scn, args.fronthauls, range(args.seeds),
            policy_spec=args.policy, workers=args.workers)
        path = os.path.join(out, "compare_allocators.csv")
        harness.export_rows(
            rows, path,
            ["c_fronthaul", "seed", "allocator", "slot", "sum_rate", "status"])
        print(f"wrote {path} ({len(rows)} rows)")
        return 0

    if args.command == "sweep-ts":
        if (args.altitudes is None) == (args.user_counts is None):
            print("error: pass exactly one of --altitudes or --user-counts",
                  file=sys.stderr)
            return 1
        kw = {}
        if args.altitudes is not None:
            kw["altitudes"] = args.altitudes
        else:
            kw["user_counts"] = [_user_mix(k) for k in args.user_counts]
        rows = harness.sweep_time_series(scn, range(args.seeds),
                                         policy_spec=args.policy,
                                         workers=args.workers, **kw)
        path = os.path.join(out, "sweep_time_series.csv")
        harness.export_rows(rows, path, ["series", "slot", "mean_sum_rate"])
        print(f"wrote {path} ({len(rows)} rows)")
        return 0

    if args.command == "alloc-bench":
        path = os.path.join(out, "alloc_bench.csv")
        try:
            rows = harness.alloc_bench(args.instances, path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"wrote {path} ({len(rows)} instances)")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
