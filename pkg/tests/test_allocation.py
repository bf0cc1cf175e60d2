import math

import numpy as np
import pytest

from conftest import PRESET_PARAMS, feasible_alloc_instance, harsh_alloc_instance
from uavsim.allocation import (FEASIBLE, INFEASIBLE, RELAXED, AllocParams,
                               allocate_slot, concave_oracle,
                               dual_ascent_baseline, min_power,
                               priority_metric, rebalance_bandwidth,
                               waterfill_residual)
from uavsim.channel import achievable_rate


def params(**kw):
    base = dict(b_total=20e6, p_total=2.0, r_min=1e6, c_fronthaul=500e6)
    base.update(kw)
    return AllocParams(**base)


class TestMinPower:
    def test_unit_spectral_efficiency(self):
        assert min_power(1e6, 1e6, 2.0) == pytest.approx(1e6 / 2.0, rel=1e-12)

    def test_zero_target(self):
        assert min_power(1e6, 0.0, 1.0) == 0.0

    def test_substitution(self):
        assert min_power(1e6, 2e6, 1e6) == pytest.approx(3.0, rel=1e-12)

    def test_zero_bandwidth_rejected(self):
        with pytest.raises(ValueError, match="bandwidth"):
            min_power(0.0, 1e6, 1e6)

    def test_round_trips_through_rate(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            b = rng.uniform(1e4, 2e7)
            a = rng.uniform(1e5, 1e10)
            r = rng.uniform(1e4, 5e7)
            p = min_power(b, r, a)
            assert achievable_rate(b, p, a) == pytest.approx(r, rel=1e-9)


class TestPriorityMetric:
    def test_unit_case(self):
        assert priority_metric(1e6, 1e6, 2.0) == pytest.approx(2.0, rel=1e-12)

    def test_linear_in_a(self):
        x = priority_metric(5e5, 2e6, 3.0)
        assert priority_metric(5e5, 2e6, 6.0) == pytest.approx(2 * x, rel=1e-12)

    def test_decreasing_in_target(self):
        last = math.inf
        for r in np.linspace(1e5, 5e6, 30):
            chi = priority_metric(1e6, r, 1e6)
            assert chi < last
            last = chi

    def test_zero_target_sentinel(self):
        assert priority_metric(1e6, 0.0, 1.0) == math.inf


class TestRebalance:
    def test_symmetric(self):
        assert np.allclose(rebalance_bandwidth([1.0, 1.0], 20e6), [10e6, 10e6])

    def test_weighted(self):
        b = rebalance_bandwidth([1.0, 3.0], 20e6)
        assert np.allclose(b, [15e6, 5e6])

    def test_exact_sum(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            chis = rng.uniform(0.1, 10.0, size=rng.integers(1, 8))
            b = rebalance_bandwidth(chis, 20e6)
            assert b.sum() == 20e6
            assert (b >= 0).all()

    def test_infinite_chi_gets_zero(self):
        b = rebalance_bandwidth([1.0, math.inf], 20e6)
        assert b[1] == 0.0 and b[0] == 20e6

    def test_all_infinite_equal_split(self):
        b = rebalance_bandwidth([math.inf, math.inf], 20e6)
        assert np.allclose(b, [10e6, 10e6]) and b.sum() == 20e6


class TestWaterfill:
    def test_symmetric_split(self):
        b = np.array([1e6, 1e6])
        a = np.array([1e7, 1e7])
        dp = waterfill_residual(b, a, np.zeros(2), 2.0, 1e12)
        assert np.allclose(dp, [1.0, 1.0], rtol=1e-8)

    def test_zero_residual(self):
        dp = waterfill_residual([1e6], [1e7], [0.1], 0.0, 1e12)
        assert np.array_equal(dp, [0.0])

    def test_kkt_water_level(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            k = int(rng.integers(1, 5))
            b = rng.uniform(1e5, 1e7, k)
            a = rng.uniform(1e5, 1e10, k)
            p_rem = rng.uniform(0.01, 2.0)
            dp = waterfill_residual(b, a, np.zeros(k), p_rem, 1e12)
            assert dp.sum() <= p_rem * (1 + 1e-9)
            active = dp > 0
            if active.any():
                mu = (dp + b / a)[active]
                assert np.ptp(mu) <= 1e-6 * mu.max()
                if (~active).any():
                    assert (b / a)[~active].min() >= mu.max() * (1 - 1e-6)

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            k = int(rng.integers(1, 5))
            b = rng.uniform(1e5, 1e7, k)
            a = rng.uniform(1e6, 1e10, k)
            p_min = rng.uniform(0.0, 0.1, k)
            p_rem = rng.uniform(0.01, 1.5)
            baseline = sum(achievable_rate(b[i], p_min[i], a[i]) for i in range(k))
            # The caller guarantees the baseline respects the cap.
            c_f = baseline * rng.uniform(1.02, 3.0) + 1e6
            dp = waterfill_residual(b, a, p_min, p_rem, c_f)
            got = sum(achievable_rate(b[i], p_min[i] + dp[i], a[i]) for i in range(k))
            want = _grid_oracle(b, a, p_min, p_rem, c_f)
            assert got <= c_f * (1 + 1e-6)
            assert got == pytest.approx(want, rel=1e-6)

    def test_rate_cap_enforced(self):
        b = np.array([1e6, 1e6])
        a = np.array([1e9, 1e8])
        p_min = np.zeros(2)
        dp = waterfill_residual(b, a, p_min, 2.0, 5e6)
        total = sum(achievable_rate(b[i], dp[i], a[i]) for i in range(2))
        assert total <= 5e6 * (1 + 1e-6)
        assert total >= 5e6 * (1 - 1e-6)


def _grid_oracle(b, a, p_min, p_rem, c_f, points=2000, stages=4):
    """Multi-stage grid search over the water level, vectorized per stage."""
    b = np.asarray(b, float)
    a = np.asarray(a, float)
    p_min = np.asarray(p_min, float)
    base = b / a
    lo = base.min()
    hi = lo + p_rem

    def eval_grid(mus):
        dp = np.maximum(mus[:, None] - base[None, :], 0.0)  # (G, K)
        spend = dp.sum(axis=1)
        p = p_min[None, :] + dp
        rates = (b[None, :] * np.log1p(a[None, :] * p / b[None, :]) / np.log(2.0)).sum(axis=1)
        return spend, rates

    best_rate = eval_grid(np.array([lo]))[1][0]
    for _ in range(stages):
        mus = np.linspace(lo, hi, points)
        spend, rates = eval_grid(mus)
        feas = np.nonzero((spend <= p_rem) & (rates <= c_f))[0]
        if feas.size == 0:
            break
        idx = feas[-1]  # rates increase with the level
        best_rate = max(best_rate, rates[idx])
        lo = mus[idx]
        hi = mus[idx + 1] if idx + 1 < points else hi
        if hi <= lo:
            break
    return best_rate


class TestAllocateSlot:
    def test_single_strong_user(self):
        out = allocate_slot([1e9], params())
        assert out.status == FEASIBLE
        assert out.s[0] == 0.0
        assert out.b[0] == 20e6
        assert out.r[0] >= 1e6
        assert out.p.sum() <= 2.0 * (1 + 1e-9)

    def test_tiny_fronthaul_raises_slack_on_min_chi(self):
        # Two users, C_f below 2 * R_min: slack must rise, first on the user
        # needing more power (smaller chi = smaller a here).
        p = params(c_fronthaul=1.9e6)
        out = allocate_slot([1e7, 1e9], p)
        assert out.status in (RELAXED, INFEASIBLE)
        assert out.s[0] >= out.s[1]
        assert out.s[0] > 0

    def test_empty_input(self):
        out = allocate_slot([], params())
        assert out.status == FEASIBLE and out.b.size == 0

    def test_nonpositive_a_rejected(self):
        with pytest.raises(ValueError):
            allocate_slot([1e6, 0.0], params())

    def test_budget_invariants_and_qos(self):
        rng = np.random.default_rng(4)
        for i in range(300):
            k = int(rng.integers(1, 8))
            a, p = harsh_alloc_instance(rng, k)
            out = allocate_slot(a, p)
            assert out.violations(p) == []

    def test_near_oracle_in_tracking_regime(self):
        rng = np.random.default_rng(5)
        for i in range(100):
            k = int(rng.integers(2, 4))
            a, p = feasible_alloc_instance(rng, k)
            heur = allocate_slot(a, p)
            orc = concave_oracle(a, p)
            assert orc.status == FEASIBLE
            assert heur.sum_rate >= 0.95 * orc.sum_rate
            assert orc.sum_rate >= heur.sum_rate * (1 - 1e-9)

    def test_zero_slack_when_oracle_feasible(self):
        rng = np.random.default_rng(6)
        checked = 0
        for i in range(200):
            k = int(rng.integers(1, 4))
            a, p = feasible_alloc_instance(rng, k)
            orc = concave_oracle(a, p, s_fixed=np.zeros(k))
            if orc.status != FEASIBLE:
                continue
            out = allocate_slot(a, p)
            assert not out.s.any()
            assert out.status == FEASIBLE
            checked += 1
        assert checked >= 150

    def test_deterministic(self):
        a = [3e9, 7e8, 2e9]
        p = params()
        one = allocate_slot(a, p)
        two = allocate_slot(a, p)
        assert np.array_equal(one.b, two.b)
        assert np.array_equal(one.p, two.p)
        assert np.array_equal(one.r, two.r)

    def test_infeasible_when_slack_cap_insufficient(self):
        # C_f below K * 0.9 * R_min cannot be pre-trimmed within the cap.
        p = params(c_fronthaul=1.5e6)
        out = allocate_slot([1e9, 1e9], p)
        assert out.status == INFEASIBLE
        assert out.violations(p) == []  # hard invariants still hold

    def test_power_starved_instance_relaxes_or_fails(self):
        # Deeply faded users cannot reach R_min within 2 W.
        p = params()
        out = allocate_slot([1e4, 1e4], p)
        assert out.status == INFEASIBLE
        assert out.p.sum() <= p.p_total * (1 + 1e-9)

    def test_fronthaul_cap_saturation(self):
        # Strong users with a small cap: rates must saturate C_f, not exceed it.
        p = params(c_fronthaul=3e7)
        out = allocate_slot([1e10, 1e10, 1e10], p)
        assert out.status == FEASIBLE
        assert out.sum_rate <= 3e7 * (1 + 1e-6)
        assert out.sum_rate >= 3e7 * (1 - 1e-3)


class TestDualAscent:
    def test_single_user_matches_heuristic(self):
        a = np.array([5e9])
        p = params()
        heur = allocate_slot(a, p)
        dual = dual_ascent_baseline(a, p)
        assert dual.status == FEASIBLE
        assert dual.sum_rate == pytest.approx(heur.sum_rate, rel=0.01)

    def test_symmetric_instance_symmetric_output(self):
        a = np.array([2e9, 2e9])
        dual = dual_ascent_baseline(a, params())
        assert abs(dual.b[0] - dual.b[1]) <= 1e-6 * max(dual.b.max(), 1.0)
        assert abs(dual.p[0] - dual.p[1]) <= 1e-6 * max(dual.p.max(), 1.0)

    def test_tight_fronthaul_reports_infeasible(self):
        # C_f below K * R_min: no zero-slack point exists, confirmed by the oracle.
        p = params(c_fronthaul=1.5e6)
        a = np.array([1e9, 1e9])
        orc = concave_oracle(a, p, s_fixed=np.zeros(2))
        assert orc.status == INFEASIBLE
        dual = dual_ascent_baseline(a, p)
        assert dual.status == INFEASIBLE
        heur = allocate_slot(a, p)
        assert heur.status in (RELAXED, INFEASIBLE)

    def test_budget_safety(self):
        rng = np.random.default_rng(7)
        for i in range(30):
            k = int(rng.integers(1, 5))
            a, p = harsh_alloc_instance(rng, k)
            out = dual_ascent_baseline(a, p)
            assert out.b.sum() <= p.b_total * (1 + 1e-9)
            assert out.p.sum() <= p.p_total * (1 + 1e-9)
            assert out.r.sum() <= p.c_fronthaul * (1 + 1e-6)

    def test_deterministic(self):
        a = [3e9, 9e8]
        one = dual_ascent_baseline(a, params())
        two = dual_ascent_baseline(a, params())
        assert np.array_equal(one.b, two.b) and np.array_equal(one.p, two.p)


class TestConcaveOracle:
    def test_symmetric_optimum(self):
        # Symmetry plus concavity pins the optimal value at 2 * rate(B/2, P/2).
        a = np.array([1e9, 1e9])
        out = concave_oracle(a, params())
        assert out.status == FEASIBLE
        want = 2.0 * achievable_rate(10e6, 1.0, 1e9)
        assert out.sum_rate == pytest.approx(want, rel=1e-5)
        assert out.r[0] == pytest.approx(out.r[1], rel=5e-3)

    def test_single_user_full_budgets(self):
        p = params()
        out = concave_oracle(np.array([1e9]), p)
        assert out.b[0] == pytest.approx(20e6, rel=1e-4)
        assert out.p[0] == pytest.approx(2.0, rel=1e-4)

    def test_respects_fronthaul(self):
        p = params(c_fronthaul=3e7)
        out = concave_oracle(np.array([1e10, 1e10]), p)
        assert out.status == FEASIBLE
        assert out.sum_rate <= 3e7 * (1 + 1e-6)
        assert out.sum_rate >= 3e7 * (1 - 1e-3)
        assert (out.r >= p.r_min * (1 - 1e-5)).all()

    def test_detects_empty_qos_polytope(self):
        out = concave_oracle(np.array([1e4, 1e4]), params())
        assert out.status == INFEASIBLE

    def test_scale_guard(self):
        with pytest.raises(ValueError, match="test-scale"):
            concave_oracle(np.ones(9), params())


class TestParams:
    def test_defaults_derived(self):
        p = params()
        assert p.delta_s == pytest.approx(1e4)
        assert p.s_cap == pytest.approx(1e5)

    def test_validation(self):
        with pytest.raises(ValueError):
            AllocParams(b_total=0.0, p_total=1.0, r_min=1.0, c_fronthaul=1.0)
        with pytest.raises(ValueError):
            params(max_iters=0)
