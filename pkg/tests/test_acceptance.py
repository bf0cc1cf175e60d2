"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The training criterion (8) dominates the runtime; everything else
finishes in about a minute.
"""

import math
import time

import numpy as np
import pytest

from conftest import feasible_alloc_instance, harsh_alloc_instance, refined_los_oracle
from uavsim.allocation import (FEASIBLE, INFEASIBLE, allocate_slot,
                               concave_oracle, waterfill_residual)
from uavsim.channel import ChannelConfig, achievable_rate, sample_fading_power
from uavsim.geometry import Building, UrbanMap, classify_link, point_in_any_building
from uavsim.harness import compare_allocators, run_episode, sweep_altitude_speed
from uavsim.nets import flatten, unflatten
from uavsim.policy import (PpoConfig, TrainedController, gaussian_logp,
                           ppo_loss_and_grads, train)
from uavsim.scenario import preset
from uavsim.world import SimWorld


def report(criterion: int, name: str, passed: bool, detail: str = "") -> None:
    verdict = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {criterion:2d} [{verdict}] {name}" + (f" ({detail})" if detail else ""))
    assert passed, f"criterion {criterion}: {name} ({detail})"


class TestCriterion1AllocatorNearOptimality:
    def test_heuristic_within_5_percent_of_oracle(self):
        rng = np.random.default_rng(42)
        instances = []
        for _ in range(100):
            k = int(rng.integers(2, 4))
            instances.append(feasible_alloc_instance(rng, k))

        t0 = time.perf_counter()
        results = [allocate_slot(a, p) for a, p in instances]
        heur_time = time.perf_counter() - t0

        worst = 1.0
        for (a, p), heur in zip(instances, results):
            orc = concave_oracle(a, p)
            assert orc.status == FEASIBLE
            worst = min(worst, heur.sum_rate / orc.sum_rate)
        report(1, "allocator within 95% of the convex oracle",
               worst >= 0.95 and heur_time < 0.010,
               f"worst ratio {worst:.4f}, heuristic runtime {heur_time * 1e3:.2f} ms")


class TestCriterion2BudgetQosSweep:
    def test_ten_thousand_slots_no_violations(self):
        rng = np.random.default_rng(7)
        k = 22
        t0 = time.perf_counter()
        violations = 0
        for _ in range(10_000):
            a, params = harsh_alloc_instance(rng, k)
            out = allocate_slot(a, params)
            if out.violations(params):
                violations += 1
        elapsed = time.perf_counter() - t0
        report(2, "budget/QoS invariants over 1e4 slots at K=22",
               violations == 0 and elapsed < 30.0,
               f"{violations} violations, {elapsed:.1f} s")


class TestCriterion3WaterfillKkt:
    def test_kkt_and_grid_oracle(self):
        from test_allocation import _grid_oracle
        rng = np.random.default_rng(11)
        kkt_bad = 0
        oracle_bad = 0
        for _ in range(1000):
            k = int(rng.integers(1, 6))
            b = rng.uniform(1e5, 1e7, k)
            a = rng.uniform(1e6, 1e10, k)
            p_min = rng.uniform(0.0, 0.05, k)
            p_rem = rng.uniform(0.01, 1.5)
            baseline = sum(achievable_rate(b[i], p_min[i], a[i]) for i in range(k))
            c_f = baseline * rng.uniform(1.05, 4.0) + 1e6
            dp = waterfill_residual(b, a, p_min, p_rem, c_f)
            active = dp > 0
            if active.any():
                mu = (dp + b / a)[active]
                if np.ptp(mu) > 1e-6 * mu.max():
                    kkt_bad += 1
                if (~active).any() and (b / a)[~active].min() < mu.max() * (1 - 1e-6):
                    kkt_bad += 1
            got = sum(achievable_rate(b[i], p_min[i] + dp[i], a[i]) for i in range(k))
            want = _grid_oracle(b, a, p_min, p_rem, c_f)
            if abs(got - want) > 1e-6 * max(want, 1.0):
                oracle_bad += 1
        report(3, "water-filling KKT and grid-oracle agreement",
               kkt_bad == 0 and oracle_bad == 0,
               f"kkt disagreements {kkt_bad}, oracle disagreements {oracle_bad}")


class TestCriterion4LosOracle:
    def test_ten_thousand_scenes(self):
        rng = np.random.default_rng(13)
        disagreements = 0
        for _ in range(10_000):
            n_b = int(rng.integers(1, 5))
            buildings = []
            for _ in range(n_b):
                w, d = rng.uniform(8.0, 60.0, 2)
                x = rng.uniform(0.0, 300.0 - w)
                y = rng.uniform(0.0, 300.0 - d)
                buildings.append(Building(x, x + w, y, y + d, rng.uniform(5.0, 120.0)))
            try:
                m = UrbanMap(300.0, 300.0, buildings)
            except ValueError:
                continue  # overlapping draw, skip the scene
            h_uav = rng.uniform(20.0, 300.0)
            uav = (rng.uniform(0, 300), rng.uniform(0, 300), h_uav)
            user = rng.uniform(0, 300, 2)
            got = classify_link(uav, user, m).is_los
            want = refined_los_oracle(uav, user, m, coarse=4000)
            if got != want:
                # Excuse only scenes inside the 1e-6 geometric margin band.
                margin = _scene_margin(uav, user, m)
                if margin > 1e-6 * h_uav:
                    disagreements += 1
        report(4, "LoS classifier agrees with the sampling oracle",
               disagreements == 0, f"{disagreements} disagreements")


def _scene_margin(uav, user, urban_map):
    """Distance of the scene from the LoS/NLoS decision boundary."""
    from uavsim.geometry import segment_footprint_overlap
    p0 = (uav[0], uav[1])
    margins = []
    for b in urban_map.buildings:
        if p0 == (user[0], user[1]):
            continue
        t = segment_footprint_overlap(p0, user, b)
        if t is None:
            continue
        z_min = uav[2] * (1.0 - t[1])
        margins.append(abs(z_min - b.height))
    return min(margins) if margins else math.inf


class TestCriterion5FadingNormalization:
    def test_unit_mean(self):
        cfg = ChannelConfig(kappa=10.0)
        rng = np.random.default_rng(17)
        los = float(sample_fading_power(True, cfg, rng, size=1_000_000).mean())
        nlos = float(sample_fading_power(False, cfg, rng, size=1_000_000).mean())
        ok = 0.995 <= los <= 1.005 and 0.995 <= nlos <= 1.005
        report(5, "fading mean power within 0.5% of unity",
               ok, f"LoS {los:.5f}, NLoS {nlos:.5f}")


class TestCriterion6MobilityInvariants:
    def test_fifty_seeds(self):
        scn = preset("paper-s4")
        t0 = time.perf_counter()
        violations = 0
        for seed in range(50):
            world = SimWorld(scn, episode_seed=seed)
            for _ in range(120):
                world.step_users()
                by_id = {g.id: g for g in world.groups}
                for g in world.groups:
                    if not (0 <= g.rp_position[0] <= scn.x_max
                            and 0 <= g.rp_position[1] <= scn.y_max):
                        violations += 1
                    if point_in_any_building(g.rp_position, world.urban_map):
                        violations += 1
                for u in world.users:
                    if not (0 <= u.position[0] <= scn.x_max
                            and 0 <= u.position[1] <= scn.y_max):
                        violations += 1
                    if point_in_any_building(u.position, world.urban_map):
                        violations += 1
                    if u.is_member:
                        d = np.linalg.norm(u.position - by_id[u.group_id].rp_position)
                        if d > scn.mobility.r_dev_max + 1e-9:
                            violations += 1
        elapsed = time.perf_counter() - t0
        report(6, "mobility invariants over 50 seeded episodes",
               violations == 0 and elapsed < 10.0,
               f"{violations} violations, {elapsed:.1f} s")


class TestCriterion7PpoGradients:
    def test_finite_differences_all_parameters(self):
        from uavsim.policy import PolicyParameters
        cfg = PpoConfig(hidden=(8, 8), init_log_std=math.log(2.0))
        rng = np.random.default_rng(19)
        policy = PolicyParameters.initialize(6, cfg, action_cap=16.0, rng=rng)
        n = 3
        states = rng.uniform(0, 1, (n, 6))
        mean = policy.actor_mean(states)
        raw = mean + np.exp(policy.params["log_std"]) * rng.standard_normal((n, 2))
        old_logp = gaussian_logp(raw, mean, policy.params["log_std"]) \
            + rng.normal(0.0, 0.1, n)
        adv = rng.normal(size=n)
        ret = rng.normal(size=n)

        _, grads, _ = ppo_loss_and_grads(policy, states, raw, old_logp, adv, ret, cfg)
        flat_g = flatten(grads)
        theta0 = flatten(policy.params)
        eps = 1e-6

        def loss_at(vec):
            new = unflatten(vec, policy.params)
            saved = {k: v.copy() for k, v in policy.params.items()}
            for k in policy.params:
                policy.params[k][...] = new[k]
            loss, _, _ = ppo_loss_and_grads(policy, states, raw, old_logp,
                                            adv, ret, cfg)
            for k in policy.params:
                policy.params[k][...] = saved[k]
            return loss

        bad = 0
        for idx in range(theta0.size):
            vec = theta0.copy()
            vec[idx] = theta0[idx] + eps
            hi = loss_at(vec)
            vec[idx] = theta0[idx] - eps
            lo = loss_at(vec)
            fd = (hi - lo) / (2 * eps)
            denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
            if abs(fd - flat_g[idx]) / denom > 1e-4:
                bad += 1
        report(7, "PPO gradients match finite differences on every parameter",
               bad == 0, f"{bad} of {theta0.size} parameters off")


class TestCriterion8Training:
    def test_training_improves_and_beats_baseline(self):
        scn = preset("paper-s4")
        t0 = time.perf_counter()
        policy, curve = train(scn)
        train_minutes = (time.perf_counter() - t0) / 60.0
        tenth = max(1, len(curve) // 10)
        first = float(np.mean(curve[:tenth]))
        last = float(np.mean(curve[-tenth:]))
        improved = last >= first + 0.2 * abs(first)

        rates_tr, rates_st = [], []
        for seed in range(20):
            _, s_tr = run_episode(scn, TrainedController(policy), seed)
            _, s_st = run_episode(scn, "stationary-centroid", seed)
            rates_tr.append(s_tr.mean_sum_rate)
            rates_st.append(s_st.mean_sum_rate)
        ratio = float(np.mean(rates_tr) / np.mean(rates_st))
        report(8, "training improves reward and beats the stationary baseline",
               improved and ratio >= 1.10 and train_minutes <= 30.0,
               f"reward first 10% {first:.0f} vs final 10% {last:.0f}, "
               f"throughput ratio {ratio:.3f}, {train_minutes:.1f} min")


class TestCriterion9AltitudeTrend:
    def test_interior_maximum(self):
        scn = preset("paper-s4")
        altitudes = [50.0, 100.0, 150.0, 300.0, 1000.0]
        rows = sweep_altitude_speed(scn, altitudes, [20.0], range(20),
                                    policy_spec="follow-centroid", workers=4)
        by_h = {row["altitude"]: row["mean_sum_rate"] for row in rows}
        interior_best = max(by_h[h] for h in altitudes[1:-1])
        non_monotone = interior_best > by_h[50.0] and interior_best > by_h[1000.0]
        detail = ", ".join(f"H={h:g}: {by_h[h] / 1e6:.1f}M" for h in altitudes)
        report(9, "altitude sweep has an interior maximizer", non_monotone, detail)


class TestCriterion10DualAscentDegrades:
    def test_low_fronthaul_breaks_dual_not_heuristic(self):
        scn = preset("paper-s4")
        rows = compare_allocators(scn, [200e6], range(20),
                                  policy_spec="follow-centroid", workers=4)
        heur_infeasible = sum(1 for r in rows
                              if r["allocator"] == "heuristic"
                              and r["status"] == INFEASIBLE)
        seeds_with_dual_failures = set()
        for r in rows:
            if r["allocator"] == "dual" and r["status"] == INFEASIBLE:
                seeds_with_dual_failures.add(r["seed"])
        frac = len(seeds_with_dual_failures) / 20.0
        report(10, "dual ascent breaks at low fronthaul while the heuristic relaxes",
               heur_infeasible == 0 and frac >= 0.8,
               f"heuristic infeasible slots {heur_infeasible}, "
               f"dual-failure seed fraction {frac:.2f}")


class TestCriterion11Determinism:
    def test_traces_summaries_checkpoints_identical(self, tmp_path):
        from dataclasses import replace

        from uavsim.harness import export_summary, export_trace
        from uavsim.scenario import from_dict

        scn = preset("paper-s4")
        blobs = []
        for i in range(2):
            trace, summary = run_episode(scn, "follow-centroid", seed=5)
            tp = tmp_path / f"trace{i}.csv"
            sp = tmp_path / f"summary{i}.csv"
            export_trace(trace, scn, str(tp))
            export_summary(summary, str(sp))
            blobs.append((tp.read_bytes(), sp.read_bytes()))
        files_ok = blobs[0] == blobs[1]

        data = scn.to_dict()
        data["horizon"]["n_slots"] = 10
        data["users"] = {"group_sizes": [2], "individuals": 2}
        data["ppo"].update({"iterations": 2, "episodes_per_update": 2,
                            "epochs": 2, "minibatch_size": 16, "hidden": [16, 16]})
        small = from_dict(data)
        ckpts = []
        curves = []
        for i in range(2):
            policy, curve = train(small)
            path = tmp_path / f"policy{i}.ckpt"
            policy.save(str(path), fingerprint=small.fingerprint())
            ckpts.append(path.read_bytes())
            curves.append(curve)
        ckpt_ok = ckpts[0] == ckpts[1] and curves[0] == curves[1]
        report(11, "byte-identical traces, summaries, and checkpoints",
               files_ok and ckpt_ok,
               f"files identical: {files_ok}, checkpoints identical: {ckpt_ok}")
