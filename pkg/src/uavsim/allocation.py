"""Per-slot QoS-aware bandwidth and power allocation.

allocate_slot implements the heuristic: equal-split bandwidth init, slack
raising while the fronthaul or power budget is violated, pairwise bandwidth
shifts from the max-priority to the min-priority user, then water-filling of
the residual power under the fronthaul cap. A Lagrangian dual-ascent baseline
and a convex-program oracle (for tests) solve the same per-slot problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

LN2 = math.log(2.0)
_INV_LN2 = 1.0 / LN2

FEASIBLE = "feasible"
RELAXED = "relaxed"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class AllocParams:
    b_total: float                 # Hz
    p_total: float                 # W
    r_min: float                   # bit/s
    c_fronthaul: float             # bit/s
    delta_b: Optional[float] = None   # Hz, default b_total / (10 K) at call time
    delta_s: Optional[float] = None   # bit/s, default r_min / 100
    max_iters: int = 50
    s_cap: Optional[float] = None     # bit/s, default r_min / 10
    rebalance_init: bool = False      # init bandwidth from the priority weights

    def __post_init__(self):
        for name in ("b_total", "p_total", "r_min", "c_fronthaul"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_s is None:
            object.__setattr__(self, "delta_s", self.r_min / 100.0)
        if self.s_cap is None:
            object.__setattr__(self, "s_cap", self.r_min / 10.0)
        if not self.delta_s > 0 or not self.s_cap > 0:
            raise ValueError("delta_s and s_cap must be positive")
        if self.delta_b is not None and not self.delta_b > 0:
            raise ValueError("delta_b must be positive when given")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SlotAllocation:
    b: np.ndarray   # Hz
    p: np.ndarray   # W
    s: np.ndarray   # bit/s
    r: np.ndarray   # bit/s
    status: str

    @property
    def sum_rate(self) -> float:
        return float(self.r.sum())

    def violations(self, params: AllocParams) -> list:
        """Budget-safety and QoS-contract violations, empty when clean."""
        out = []
        if self.b.sum() > params.b_total * (1 + 1e-9):
            out.append(f"sum b = {self.b.sum()} exceeds {params.b_total}")
        if self.p.sum() > params.p_total * (1 + 1e-9):
            out.append(f"sum p = {self.p.sum()} exceeds {params.p_total}")
        if self.r.sum() > params.c_fronthaul * (1 + 1e-6):
            out.append(f"sum r = {self.r.sum()} exceeds {params.c_fronthaul}")
        if np.any(self.s < -1e-15) or np.any(self.s > params.s_cap * (1 + 1e-9)):
            out.append("slack outside [0, s_cap]")
        if self.status != INFEASIBLE:
            qos = params.r_min - self.s - 1e-6 * params.r_min
            if np.any(self.r < qos):
                bad = int(np.argmin(self.r - qos))
                out.append(f"user {bad} rate {self.r[bad]} below QoS floor {qos[bad]}")
        return out


def _rates_vec(b: np.ndarray, p: np.ndarray, a: np.ndarray) -> np.ndarray:
    r = np.zeros_like(np.asarray(b, dtype=float))
    m = b > 0
    r[m] = b[m] * np.log1p(a[m] * p[m] / b[m]) * _INV_LN2
    return r


def _pmin_vec(b: np.ndarray, rhat: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Vector form of the minimum power meeting per-user rate targets."""
    out = np.zeros_like(b)
    need = rhat > 0
    ok = need & (b > 0)
    with np.errstate(over="ignore"):
        out[ok] = np.expm1(rhat[ok] / b[ok] * LN2) * b[ok] / a[ok]
    out[need & (b <= 0)] = np.inf
    return out


def _chi_vec(a: np.ndarray, rhat: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vector priority metric; +inf for zero targets, 0 for zero bandwidth."""
    out = np.full_like(b, np.inf)
    need = rhat > 0
    zero_b = need & (b <= 0)
    ok = need & (b > 0)
    with np.errstate(over="ignore"):
        denom = np.expm1(rhat[ok] / b[ok] * LN2)
        out[ok] = np.where(np.isfinite(denom), a[ok] / denom, 0.0)
    out[zero_b] = 0.0
    return out


def min_power(b: float, r_target: float, a: float) -> float:
    """Minimum transmit power so that rate(b, p) reaches r_target."""
    if not a > 0:
        raise ValueError("SNR coefficient must be positive")
    if r_target < 0 or b < 0:
        raise ValueError("bandwidth and rate target must be nonnegative")
    if r_target == 0:
        return 0.0
    if b == 0:
        raise ValueError("zero bandwidth cannot meet a positive rate target; "
                         "assign bandwidth first")
    return math.expm1(r_target / b * LN2) * b / a


def priority_metric(b: float, r_target: float, a: float) -> float:
    """chi = a / (2^(r_target/b) - 1); +inf marks a zero target (lowest priority)."""
    if not b > 0:
        raise ValueError("bandwidth must be positive")
    if r_target <= 0:
        return math.inf
    denom = math.expm1(r_target / b * LN2)
    return a / denom if math.isfinite(denom) else 0.0


def rebalance_bandwidth(chis, b_total: float) -> np.ndarray:
    """Proportional split b_k = B * w_k / sum w with w = 1/chi.

    Infinite-chi users get weight zero; if every weight vanishes the split is
    equal. One nonzero-weight user absorbs the rounding residue so the sum is
    exactly b_total.
    """
    chis = np.asarray(chis, dtype=float)
    k = chis.size
    w = np.zeros(k)
    finite = np.isfinite(chis)
    with np.errstate(divide="ignore"):
        w[finite] = 1.0 / chis[finite]
    total = w.sum()
    if total <= 0:
        b = np.full(k, b_total / k)
        absorber = k - 1
    else:
        b = b_total * w / total
        absorber = int(np.max(np.nonzero(w > 0)[0]))
    # Iterate the residue into the absorber until the float sum is exact.
    for _ in range(4):
        diff = b_total - b.sum()
        if diff == 0.0:
            break
        b[absorber] += diff
    return b


def waterfill_residual(b, a, p_min, p_rem: float, c_fronthaul: float) -> np.ndarray:
    """Residual-power water-filling dp_k = [mu - b_k/a_k]^+ under the rate cap.

    The water level is found by bisection so that sum dp = p_rem; if the
    resulting sum rate exceeds the fronthaul cap, an outer bisection shrinks
    the level until sum R <= c_fronthaul. Both bisections keep the feasible
    side, so the returned spend never overshoots either budget.
    """
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    p_min = np.asarray(p_min, dtype=float)
    k = b.size
    dp = np.zeros(k)
    if k == 0 or p_rem <= 0:
        return dp
    base = (b / a).tolist()
    bl = b.tolist()
    al = a.tolist()
    pl = p_min.tolist()

    def spend(mu: float) -> float:
        s = 0.0
        for x in base:
            d = mu - x
            if d > 0.0:
                s += d
        return s

    def sum_rate(mu: float) -> float:
        s = 0.0
        for i in range(k):
            if bl[i] <= 0.0:
                continue
            d = mu - base[i]
            p = pl[i] + (d if d > 0.0 else 0.0)
            s += bl[i] * math.log1p(al[i] * p / bl[i]) * _INV_LN2
        return s

    lo = min(base)
    hi = lo + p_rem  # spend(hi) >= p_rem by construction
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = spend(mid)
        if s > p_rem:
            hi = mid
        else:
            lo = mid
            if p_rem - s <= 1e-9 * p_rem:
                break
    mu = lo

    if sum_rate(mu) > c_fronthaul:
        floor = min(base)
        if sum_rate(floor) > c_fronthaul:
            return dp  # baseline rates already at the cap: nothing to spend
        lo2, hi2 = floor, mu
        for _ in range(200):
            mid = 0.5 * (lo2 + hi2)
            s = sum_rate(mid)
            if s > c_fronthaul:
                hi2 = mid
            else:
                lo2 = mid
                if c_fronthaul - s <= 1e-9 * c_fronthaul:
                    break
        mu = lo2

    for i in range(k):
        d = mu - base[i]
        if d > 0.0:
            dp[i] = d
    return dp


def _argmin_chi_below_cap(chi: np.ndarray, s: np.ndarray, s_cap: float) -> Optional[int]:
    below = s < s_cap
    if not below.any():
        return None
    return int(np.argmin(np.where(below, chi, np.inf)))


def _scale_p_to_fronthaul(b, p, a, c_fronthaul: float) -> np.ndarray:
    """Uniformly scale power down until sum rate <= c_fronthaul (keep low side)."""
    if _rates_vec(b, p, a).sum() <= c_fronthaul:
        return p
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = _rates_vec(b, mid * p, a).sum()
        if s > c_fronthaul:
            hi = mid
        else:
            lo = mid
            if c_fronthaul - s <= 1e-9 * c_fronthaul:
                break
    return lo * p


def allocate_slot(a, params: AllocParams) -> SlotAllocation:
    """QoS-aware heuristic allocation for one slot.

    Status is feasible when no slack was needed, relaxed when some slack in
    (0, s_cap] closed the gap, and infeasible when the budgets cannot be met
    even with every slack at its cap; infeasible allocations are projected
    back onto the budget and fronthaul region so the hard invariants hold.
    """
    a = np.asarray(a, dtype=float)
    k = a.size
    if k == 0:
        z = np.zeros(0)
        return SlotAllocation(z, z.copy(), z.copy(), z.copy(), FEASIBLE)
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("all SNR coefficients must be positive and finite")

    big_b, big_p = params.b_total, params.p_total
    r_min, c_f = params.r_min, params.c_fronthaul
    delta_b = params.delta_b if params.delta_b is not None else big_b / (10.0 * k)
    delta_s, s_cap = params.delta_s, params.s_cap

    b = np.full(k, big_b / k)
    if params.rebalance_init:
        b = rebalance_bandwidth(_chi_vec(a, np.full(k, r_min), b), big_b)
    s = np.zeros(k)
    infeasible = False
    trim_guard = k * (int(math.ceil(s_cap / delta_s)) + 2)

    p_min = np.zeros(k)
    for _ in range(params.max_iters):
        rhat = r_min - s
        guard = trim_guard
        while rhat.sum() > c_f:
            idx = _argmin_chi_below_cap(_chi_vec(a, rhat, b), s, s_cap)
            guard -= 1
            if idx is None or guard < 0:
                infeasible = True
                break
            s[idx] = min(s[idx] + delta_s, s_cap)
            rhat = r_min - s
        if infeasible:
            break
        p_min = _pmin_vec(b, rhat, a)
        if p_min.sum() <= big_p:
            break
        chi = _chi_vec(a, rhat, b)
        k1 = int(np.argmin(chi))
        k2 = int(np.argmax(chi))
        b[k1] += delta_b
        b[k2] = max(b[k2] - delta_b, 0.0)
        b *= big_b / b.sum()

    if not infeasible:
        rhat = r_min - s
        p_min = _pmin_vec(b, rhat, a)
        guard = trim_guard
        while p_min.sum() > big_p:
            idx = _argmin_chi_below_cap(_chi_vec(a, rhat, b), s, s_cap)
            guard -= 1
            if idx is None or guard < 0:
                infeasible = True
                break
            s[idx] = min(s[idx] + delta_s, s_cap)
            rhat = r_min - s
            p_min = _pmin_vec(b, rhat, a)

    if infeasible:
        rhat = r_min - s
        p = _pmin_vec(b, rhat, a)
        p[~np.isfinite(p)] = 0.0
        total = p.sum()
        if total > big_p:
            p *= big_p / total
        p = _scale_p_to_fronthaul(b, p, a, c_f)
        return SlotAllocation(b, p, s, _rates_vec(b, p, a), INFEASIBLE)

    p = p_min.copy()
    p_rem = big_p - p.sum()
    if p_rem > 0:
        p += waterfill_residual(b, a, p_min, p_rem, c_f)
    status = RELAXED if s.any() else FEASIBLE
    return SlotAllocation(b, p, s, _rates_vec(b, p, a), status)


def _project_budgets(b, p, a, params: AllocParams):
    b = np.array(b, dtype=float)
    p = np.array(p, dtype=float)
    tb = b.sum()
    if tb > params.b_total:
        b *= params.b_total / tb
    tp = p.sum()
    if tp > params.p_total:
        p *= params.p_total / tp
    p = _scale_p_to_fronthaul(b, p, a, params.c_fronthaul)
    return b, p, _rates_vec(b, p, a)


def dual_ascent_baseline(a, params: AllocParams, iterations: int = 500,
                         grid_points: int = 33, step_scale: float = 1.0) -> SlotAllocation:
    """Dual subgradient baseline for the per-slot problem with zero slack.

    The fronthaul, bandwidth, and power rows get scalar multipliers and every
    QoS row a per-user multiplier. The Lagrangian is normalized (bandwidth and
    power as budget fractions, rates against the strongest single-user rate)
    so all multipliers live at O(1); subgradients are clipped and the step is
    step_scale/sqrt(t). The inner maximization is separable: power is
    closed-form given the multipliers and bandwidth is searched on a grid.

    Primal recovery projects the running iterate and, over the second half of
    the run, its ergodic tail average onto the bandwidth/power budget
    simplexes; the QoS multipliers are driven by the projected rates. A
    candidate counts as feasible when it meets every QoS row and the fronthaul
    cap; the best such candidate is returned. When none exists the status is
    infeasible and the least-violating candidate (largest worst-user rate) is
    returned with its power scaled back under the cap so the hard budget
    invariants still hold.
    """
    a = np.asarray(a, dtype=float)
    k = a.size
    if k == 0:
        z = np.zeros(0)
        return SlotAllocation(z, z.copy(), z.copy(), z.copy(), FEASIBLE)
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("all SNR coefficients must be positive and finite")

    big_b, big_p = params.b_total, params.p_total
    r_min, c_f = params.r_min, params.c_fronthaul
    # Normalized problem: b' = b/B, p' = p/P, rates against the best
    # single-user full-budget rate.
    a_hat = a * big_p / big_b
    r_scale = big_b * math.log1p(a_hat.max()) * _INV_LN2
    k_s = big_b / r_scale
    bgrid = np.linspace(0.0, 1.0, grid_points)
    inv_a_hat = 1.0 / a_hat
    c_f_n = c_f / r_scale

    nu = 0.0
    lam_b = 0.0
    lam_p = 0.0
    theta = np.zeros(k)
    tail_b = np.zeros(k)
    tail_p = np.zeros(k)
    tail_n = 0
    tail_start = max(1, iterations // 2)
    best: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    best_sum = -math.inf
    least_bad: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    least_bad_margin = -math.inf

    def budget_project(cand_b, cand_p):
        sb = cand_b.sum()
        sp = cand_p.sum()
        pb = cand_b * (big_b / sb) if sb > big_b else cand_b.copy()
        pp = cand_p * (big_p / sp) if sp > big_p else cand_p.copy()
        return pb, pp, _rates_vec(pb, pp, a)

    for t in range(1, iterations + 1):
        c = 1.0 + theta - nu
        if lam_p > 0:
            coef = np.maximum(c * k_s / (lam_p * LN2) - inv_a_hat, 0.0)
        else:
            coef = np.full(k, np.inf)
        with np.errstate(invalid="ignore"):
            p_grid = np.minimum(coef[:, None] * bgrid[None, :], 1.0)
        p_grid[:, 0] = 0.0
        rates_n = np.zeros((k, grid_points))
        pos_b = bgrid[1:]
        rates_n[:, 1:] = k_s * pos_b[None, :] * np.log1p(
            a_hat[:, None] * p_grid[:, 1:] / pos_b[None, :]) * _INV_LN2
        obj = c[:, None] * rates_n - lam_b * bgrid[None, :] - lam_p * p_grid
        idx = np.argmax(obj, axis=1)
        rows = np.arange(k)
        served = c > 0
        b_t = np.where(served, bgrid[idx], 0.0) * big_b
        p_t = np.where(served, p_grid[rows, idx], 0.0) * big_p
        r_t = _rates_vec(b_t, p_t, a)
        pb, pp, pr = budget_project(b_t, p_t)

        step = step_scale / math.sqrt(t)
        nu = max(0.0, nu + step * min(max(r_t.sum() / r_scale - c_f_n, -1.0), 1.0))
        lam_b = max(0.0, lam_b + step * min(max(b_t.sum() / big_b - 1.0, -1.0), 1.0))
        lam_p = max(0.0, lam_p + step * min(max(p_t.sum() / big_p - 1.0, -1.0), 1.0))
        theta = np.maximum(0.0, theta + step * np.clip((r_min - pr) / r_min, -1.0, 1.0))

        candidates = [(pb, pp, pr)]
        if t >= tail_start:
            tail_n += 1
            tail_b += (b_t - tail_b) / tail_n
            tail_p += (p_t - tail_p) / tail_n
            candidates.append(budget_project(tail_b, tail_p))
        for cand in candidates:
            sr = cand[2].sum()
            cap_ok = sr <= c_f * (1 + 1e-6)
            # Rank fallbacks by worst-user rate, cap-respecting ones first.
            margin = cand[2].min() / r_min - (0.0 if cap_ok else 1e9)
            if margin > least_bad_margin:
                least_bad, least_bad_margin = cand, margin
            if cand[2].min() >= r_min * (1.0 - 1e-6) and cap_ok and sr > best_sum:
                best, best_sum = cand, sr

    zeros = np.zeros(k)
    if best is not None:
        return SlotAllocation(best[0], best[1], zeros, best[2], FEASIBLE)
    bb, pp, _ = least_bad
    pp = _scale_p_to_fronthaul(bb, pp, a, c_f)
    return SlotAllocation(bb, pp, zeros, _rates_vec(bb, pp, a), INFEASIBLE)


_SOLVER_ORDER = ("CLARABEL", "ECOS", "SCS")


def _solve_robust(cp, problem) -> str:
    """Try the conic solvers in order; return the status of the first success."""
    installed = set(cp.installed_solvers())
    last = "no_solver"
    for name in _SOLVER_ORDER:
        if name not in installed:
            continue
        try:
            problem.solve(solver=name)
        except cp.error.SolverError:
            last = "solver_error"
            continue
        if problem.status in ("optimal", "optimal_inaccurate", "infeasible"):
            return problem.status
        last = problem.status
    return last


def concave_oracle(a, params: AllocParams, s_fixed=None) -> SlotAllocation:
    """Global optimum of the per-slot problem with frozen slacks (test oracle).

    Solves the convex program without the fronthaul row; when its optimum
    exceeds the cap, the optimal value equals the cap and a witness is found
    by bisecting the segment from the minimum-power QoS point to the
    unconstrained maximizer (the sum rate is concave along it). Declared
    infeasible when the QoS polytope is empty or exceeds the power budget.
    """
    import cvxpy as cp  # deferred: only tests and benchmarks need the solver

    a = np.asarray(a, dtype=float)
    k = a.size
    if k == 0:
        z = np.zeros(0)
        return SlotAllocation(z, z.copy(), z.copy(), z.copy(), FEASIBLE)
    if k > 8:
        raise ValueError("concave_oracle is a test-scale oracle (K <= 8)")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("all SNR coefficients must be positive and finite")
    s_fixed = np.zeros(k) if s_fixed is None else np.asarray(s_fixed, dtype=float)
    big_b, big_p = params.b_total, params.p_total
    r_min, c_f = params.r_min, params.c_fronthaul
    rhat = np.maximum(r_min - s_fixed, 0.0)
    status_if_ok = FEASIBLE if not s_fixed.any() else RELAXED
    zeros = np.zeros(k)

    def infeasible_result():
        return SlotAllocation(zeros.copy(), zeros.copy(), s_fixed.copy(),
                              zeros.copy(), INFEASIBLE)

    if rhat.sum() > c_f * (1 + 1e-9):
        return infeasible_result()

    # Normalized variables keep the exponential cone well scaled.
    a_hat = a * big_p / big_b
    r_hat_n = rhat / big_b

    bv = cp.Variable(k, nonneg=True)
    pv = cp.Variable(k, nonneg=True)
    rate_n = -cp.rel_entr(bv, bv + cp.multiply(a_hat, pv)) / LN2
    feas = cp.Problem(cp.Minimize(cp.sum(pv)),
                      [cp.sum(bv) <= 1.0, rate_n >= r_hat_n])
    status = _solve_robust(cp, feas)
    if status not in ("optimal", "optimal_inaccurate") or feas.value is None:
        return infeasible_result()
    if feas.value * big_p > big_p * (1 + 1e-6):
        return infeasible_result()
    b0 = np.maximum(np.asarray(bv.value).ravel() * big_b, 0.0)
    p0 = _pmin_vec(b0, rhat, a)  # polish: exact QoS equality at the solver's b
    if not np.all(np.isfinite(p0)) or p0.sum() > big_p * (1 + 1e-6):
        p0 = np.maximum(np.asarray(pv.value).ravel() * big_p, 0.0)

    bv2 = cp.Variable(k, nonneg=True)
    pv2 = cp.Variable(k, nonneg=True)
    rate2 = -cp.rel_entr(bv2, bv2 + cp.multiply(a_hat, pv2)) / LN2
    main = cp.Problem(cp.Maximize(cp.sum(rate2)),
                      [cp.sum(bv2) <= 1.0, cp.sum(pv2) <= 1.0, rate2 >= r_hat_n])
    status = _solve_robust(cp, main)
    if status not in ("optimal", "optimal_inaccurate") or main.value is None:
        return infeasible_result()
    b_star = np.clip(np.asarray(bv2.value).ravel() * big_b, 0.0, None)
    p_star = np.clip(np.asarray(pv2.value).ravel() * big_p, 0.0, None)
    if b_star.sum() > big_b:
        b_star *= big_b / b_star.sum()
    if p_star.sum() > big_p:
        p_star *= big_p / p_star.sum()
    r_star = _rates_vec(b_star, p_star, a)
    if r_star.sum() <= c_f:
        return SlotAllocation(b_star, p_star, s_fixed.copy(), r_star, status_if_ok)

    # Fronthaul binds: walk back toward the minimum-power QoS point.
    def rates_at(t: float):
        bb = (1.0 - t) * b0 + t * b_star
        pp = (1.0 - t) * p0 + t * p_star
        return bb, pp, _rates_vec(bb, pp, a)

    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        _, _, rr = rates_at(mid)
        total = rr.sum()
        if total > c_f:
            hi = mid
        else:
            lo = mid
            if c_f - total <= 1e-9 * c_f:
                break
    bb, pp, rr = rates_at(lo)
    return SlotAllocation(bb, pp, s_fixed.copy(), rr, status_if_ok)
