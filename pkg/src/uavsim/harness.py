"""Episode runner, metrics, experiment sweeps, and file interfaces.

Traces and summaries are delimited text with a header row and 12-significant-
digit decimal formatting; metrics are computed from the formatted values so
that re-parsing an emitted file reproduces the summary exactly.
"""

from __future__ import annotations

import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .allocation import (FEASIBLE, INFEASIBLE, allocate_slot,
                         dual_ascent_baseline)
from .policy import (FollowCentroidController, PolicyParameters, RolloutResult,
                     StationaryCentroidController, TrainedController,
                     rollout_episode)
from .scenario import ScenarioConfig
from .world import SimWorld


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def round12(value: float) -> float:
    """The value as it survives the trace format."""
    return float(_fmt(value))


# --------------------------------------------------------------------------
# Trace and metrics


@dataclass
class EpisodeTrace:
    n_users: int
    rows: List[dict]

    def header(self) -> List[str]:
        cols = ["slot", "uav_x", "uav_y", "status", "reward", "sum_rate"]
        for k in range(self.n_users):
            cols += [f"u{k}_x", f"u{k}_y", f"u{k}_group", f"u{k}_los",
                     f"u{k}_b", f"u{k}_p", f"u{k}_s", f"u{k}_r"]
        return cols


@dataclass
class MetricsSummary:
    mean_sum_rate: float
    jain_index: float
    qos_violation_fraction: float
    los_fraction: float
    fronthaul_binding_fraction: float
    episode_length: int

    def as_dict(self) -> dict:
        return {
            "mean_sum_rate": self.mean_sum_rate,
            "jain_index": self.jain_index,
            "qos_violation_fraction": self.qos_violation_fraction,
            "los_fraction": self.los_fraction,
            "fronthaul_binding_fraction": self.fronthaul_binding_fraction,
            "episode_length": self.episode_length,
        }


def trace_from_rollout(rollout: RolloutResult, n_users: int) -> EpisodeTrace:
    rows = []
    for rec in rollout.records:
        row = {
            "slot": rec.slot,
            "uav_x": rec.uav_xy[0],
            "uav_y": rec.uav_xy[1],
            "status": rec.alloc.status,
            "reward": rec.reward,
            "sum_rate": rec.alloc.sum_rate,
        }
        for k in range(n_users):
            row[f"u{k}_x"] = rec.users_xy[k, 0]
            row[f"u{k}_y"] = rec.users_xy[k, 1]
            row[f"u{k}_group"] = -1 if rec.user_groups[k] is None else rec.user_groups[k]
            row[f"u{k}_los"] = int(rec.los[k])
            row[f"u{k}_b"] = rec.alloc.b[k]
            row[f"u{k}_p"] = rec.alloc.p[k]
            row[f"u{k}_s"] = rec.alloc.s[k]
            row[f"u{k}_r"] = rec.alloc.r[k]
        rows.append(row)
    return EpisodeTrace(n_users=n_users, rows=rows)


def compute_metrics(trace: EpisodeTrace, scenario: ScenarioConfig) -> MetricsSummary:
    """Pure function of the (format-rounded) trace."""
    k = trace.n_users
    n = len(trace.rows)
    if n == 0:
        return MetricsSummary(0.0, 1.0, 0.0, 0.0, 0.0, 0)
    sum_rates = [round12(row["sum_rate"]) for row in trace.rows]
    mean_sum = round12(sum(sum_rates) / n)
    user_means = []
    for u in range(k):
        user_means.append(sum(round12(row[f"u{u}_r"]) for row in trace.rows) / n)
    total = sum(user_means)
    sq = sum(x * x for x in user_means)
    jain = round12(total * total / (k * sq)) if sq > 0 else 1.0
    qos_bad = sum(1 for row in trace.rows if row["status"] != FEASIBLE)
    los = sum(round12(row[f"u{u}_los"]) for row in trace.rows for u in range(k))
    binding = sum(1 for r in sum_rates
                  if r >= scenario.alloc.c_fronthaul * (1.0 - 1e-6))
    return MetricsSummary(
        mean_sum_rate=mean_sum,
        jain_index=jain,
        qos_violation_fraction=round12(qos_bad / n),
        los_fraction=round12(los / (n * k)),
        fronthaul_binding_fraction=round12(binding / n),
        episode_length=n,
    )


# --------------------------------------------------------------------------
# Episode running


def make_controller(scenario: ScenarioConfig, policy_spec):
    """Resolve a policy spec: controller object, baseline name, or checkpoint."""
    if hasattr(policy_spec, "act"):
        return policy_spec
    if isinstance(policy_spec, PolicyParameters):
        return TrainedController(policy_spec, stochastic=False)
    if policy_spec == "stationary-centroid":
        return StationaryCentroidController()
    if policy_spec == "follow-centroid":
        return FollowCentroidController(scenario.v_max, scenario.slot_duration)
    if isinstance(policy_spec, str) and os.path.exists(policy_spec):
        policy, _ = PolicyParameters.load(
            policy_spec, expected_fingerprint=scenario.fingerprint(),
            expected_state_dim=2 + 2 * scenario.n_users)
        return TrainedController(policy, stochastic=False)
    raise ValueError(f"unknown policy spec {policy_spec!r}")


def run_episode(scenario: ScenarioConfig, policy_spec, seed: int,
                policy_seed: Optional[int] = None,
                allocator: str = "heuristic",
                on_infeasible: str = "terminate",
                ) -> Tuple[EpisodeTrace, MetricsSummary]:
    """One seeded episode; deterministic given (scenario.seed, seed)."""
    controller = make_controller(scenario, policy_spec)
    world = SimWorld(scenario, episode_seed=seed, policy_seed=policy_seed)
    rollout = rollout_episode(world, controller, scenario.n_slots,
                              allocator=allocator, on_infeasible=on_infeasible)
    trace = trace_from_rollout(rollout, scenario.n_users)
    return trace, compute_metrics(trace, scenario)


# --------------------------------------------------------------------------
# Sweeps


def _with_overrides(scenario: ScenarioConfig, **kw) -> ScenarioConfig:
    data = scenario.to_dict()
    if "altitude" in kw:
        data["uav"]["altitude"] = kw["altitude"]
    if "v_max" in kw:
        data["uav"]["v_max"] = kw["v_max"]
    if "c_fronthaul" in kw:
        data["allocation"]["c_fronthaul"] = kw["c_fronthaul"]
    if "users" in kw:
        groups, individuals = kw["users"]
        data["users"] = {"group_sizes": groups, "individuals": individuals}
    from .scenario import from_dict
    return from_dict(data)


def _pool_map(fn, items, workers: Optional[int]):
    if workers is None or workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_altitude_speed(scenario: ScenarioConfig, altitudes: Sequence[float],
                         speeds: Sequence[float], seeds: Sequence[int],
                         policy_spec: str = "follow-centroid",
                         workers: Optional[int] = None) -> List[dict]:
    """Mean throughput grid over (altitude, v_max), averaged across seeds."""
    if not altitudes or not speeds:
        raise ValueError("altitude and speed lists must be nonempty")
    cells = [(h, v) for h in altitudes for v in speeds]

    def run_cell(cell):
        h, v = cell
        scn = _with_overrides(scenario, altitude=h, v_max=v)
        rates = [run_episode(scn, policy_spec, seed)[1].mean_sum_rate
                 for seed in seeds]
        return {"altitude": h, "v_max": v,
                "mean_sum_rate": float(np.mean(rates)),
                "n_seeds": len(list(seeds))}

    rows = _pool_map(run_cell, cells, workers)
    rows.sort(key=lambda r: (r["altitude"], r["v_max"]))
    return rows


def compare_allocators(scenario: ScenarioConfig, fronthauls: Sequence[float],
                       seeds: Sequence[int],
                       policy_spec: str = "follow-centroid",
                       workers: Optional[int] = None) -> List[dict]:
    """Identical seeded episodes through the heuristic and dual-ascent arms.

    Infeasible slots are recorded, not fatal, so the series stay aligned.
    """
    jobs = [(cf, seed) for cf in fronthauls for seed in seeds]

    def run_job(job):
        cf, seed = job
        scn = _with_overrides(scenario, c_fronthaul=cf)
        out = []
        for arm in ("heuristic", "dual"):
            trace, _ = run_episode(scn, policy_spec, seed, allocator=arm,
                                   on_infeasible="continue")
            for row in trace.rows:
                out.append({"c_fronthaul": cf, "seed": seed, "allocator": arm,
                            "slot": row["slot"], "sum_rate": row["sum_rate"],
                            "status": row["status"]})
        return out

    rows = [r for chunk in _pool_map(run_job, jobs, workers) for r in chunk]
    rows.sort(key=lambda r: (r["c_fronthaul"], r["seed"], r["allocator"], r["slot"]))
    return rows


def sweep_time_series(scenario: ScenarioConfig, seeds: Sequence[int],
                      altitudes: Optional[Sequence[float]] = None,
                      user_counts: Optional[Sequence[Tuple[List[int], int]]] = None,
                      policy_spec: str = "follow-centroid",
                      workers: Optional[int] = None) -> List[dict]:
    """Per-slot throughput averaged across seeds, for each altitude or K."""
    if (altitudes is None) == (user_counts is None):
        raise ValueError("pass exactly one of altitudes or user_counts")
    if altitudes is not None:
        variants = [("altitude", h, _with_overrides(scenario, altitude=h))
                    for h in altitudes]
    else:
        variants = [("k", sum(g) + ind, _with_overrides(scenario, users=(g, ind)))
                    for g, ind in user_counts]

    def run_variant(variant):
        key, value, scn = variant
        acc: Dict[int, List[float]] = {}
        for seed in seeds:
            trace, _ = run_episode(scn, policy_spec, seed, on_infeasible="continue")
            for row in trace.rows:
                acc.setdefault(row["slot"], []).append(row["sum_rate"])
        return [{"series": f"{key}={value:g}", "slot": slot,
                 "mean_sum_rate": float(np.mean(vals))}
                for slot, vals in sorted(acc.items())]

    rows = [r for chunk in _pool_map(run_variant, variants, workers) for r in chunk]
    rows.sort(key=lambda r: (r["series"], r["slot"]))
    return rows


# --------------------------------------------------------------------------
# Delimited-file interfaces


def export_trace(trace: EpisodeTrace, scenario: ScenarioConfig, path: str) -> None:
    """Write the trace, re-validating allocation invariants on every row."""
    for row in trace.rows:
        _validate_row(row, trace.n_users, scenario)
    cols = trace.header()
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in trace.rows:
            fh.write(",".join(_cell(row[c]) for c in cols) + "\n")


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _fmt(float(value))


def _validate_row(row: dict, n_users: int, scenario: ScenarioConfig) -> None:
    p = scenario.alloc
    sb = sum(row[f"u{k}_b"] for k in range(n_users))
    sp = sum(row[f"u{k}_p"] for k in range(n_users))
    sr = sum(row[f"u{k}_r"] for k in range(n_users))
    if sb > p.b_total * (1 + 1e-9) or sp > p.p_total * (1 + 1e-9) \
            or sr > p.c_fronthaul * (1 + 1e-6):
        raise ValueError(f"slot {row['slot']}: budget invariant violated at write time")
    for k in range(n_users):
        s = row[f"u{k}_s"]
        if s < -1e-15 or s > p.s_cap * (1 + 1e-9):
            raise ValueError(f"slot {row['slot']}: slack bound violated for user {k}")
        if row["status"] != INFEASIBLE \
                and row[f"u{k}_r"] < p.r_min - s - 1e-6 * p.r_min:
            raise ValueError(f"slot {row['slot']}: QoS contract violated for user {k}")


def parse_trace(path: str) -> EpisodeTrace:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            cells = line.strip().split(",")
            row = {}
            for name, cell in zip(header, cells):
                if name == "status":
                    row[name] = cell
                elif name == "slot" or name.endswith(("_group", "_los")):
                    row[name] = int(cell)
                else:
                    row[name] = float(cell)
            rows.append(row)
    n_users = sum(1 for c in header if re.fullmatch(r"u\d+_x", c))
    return EpisodeTrace(n_users=n_users, rows=rows)


def export_summary(summary: MetricsSummary, path: str) -> None:
    data = summary.as_dict()
    with open(path, "w") as fh:
        fh.write(",".join(data.keys()) + "\n")
        fh.write(",".join(_cell(v) for v in data.values()) + "\n")


def parse_summary(path: str) -> MetricsSummary:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cells = fh.readline().strip().split(",")
    data = dict(zip(header, cells))
    return MetricsSummary(
        mean_sum_rate=float(data["mean_sum_rate"]),
        jain_index=float(data["jain_index"]),
        qos_violation_fraction=float(data["qos_violation_fraction"]),
        los_fraction=float(data["los_fraction"]),
        fronthaul_binding_fraction=float(data["fronthaul_binding_fraction"]),
        episode_length=int(data["episode_length"]),
    )


def export_rows(rows: List[dict], path: str, columns: Optional[List[str]] = None) -> None:
    """Generic delimited export for grids and series (header always written)."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[c]) for c in columns) + "\n")


def parse_rows(path: str) -> List[dict]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header == [""]:
            return out
        for line in fh:
            cells = line.strip().split(",")
            row = {}
            for name, cell in zip(header, cells):
                try:
                    row[name] = int(cell)
                except ValueError:
                    try:
                        row[name] = float(cell)
                    except ValueError:
                        row[name] = cell
            out.append(row)
    return out


# --------------------------------------------------------------------------
# Allocation bench (slot instances from a JSON-lines file)


def alloc_bench(instances_path: str, out_path: str) -> List[dict]:
    """Run both allocators on instances read from a JSON-lines file.

    Each line: {"a": [...], "params": {"b_total": ..., "p_total": ...,
    "r_min": ..., "c_fronthaul": ..., optional overrides}}.
    """
    from .allocation import AllocParams
    rows = []
    with open(instances_path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                spec = json.loads(line)
                a = np.asarray(spec["a"], dtype=float)
                params = AllocParams(**spec["params"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{instances_path}:{i + 1}: bad instance: {exc}") from exc
            heur = allocate_slot(a, params)
            dual = dual_ascent_baseline(a, params)
            rows.append({
                "instance": i, "k": int(a.size),
                "heuristic_status": heur.status,
                "heuristic_sum_rate": heur.sum_rate,
                "heuristic_max_slack": float(heur.s.max()) if a.size else 0.0,
                "dual_status": dual.status,
                "dual_sum_rate": dual.sum_rate,
            })
    export_rows(rows, out_path)
    return rows
