"""Shared test helpers: scene generators and independent oracles."""

import numpy as np

from uavsim.allocation import AllocParams
from uavsim.geometry import Building, UrbanMap


def random_buildings(rng, n, x_max=300.0, y_max=300.0, min_size=5.0, max_size=40.0,
                     h_lo=10.0, h_hi=80.0):
    """Non-overlapping axis-aligned buildings by rejection sampling."""
    out = []
    attempts = 0
    while len(out) < n and attempts < 1000:
        attempts += 1
        w = rng.uniform(min_size, max_size)
        d = rng.uniform(min_size, max_size)
        x = rng.uniform(0.0, x_max - w)
        y = rng.uniform(0.0, y_max - d)
        cand = Building(x, x + w, y, y + d, rng.uniform(h_lo, h_hi))
        clash = any(cand.x_lo < b.x_hi and b.x_lo < cand.x_hi
                    and cand.y_lo < b.y_hi and b.y_lo < cand.y_hi for b in out)
        if not clash:
            out.append(cand)
    return out


def random_map(rng, n_buildings, x_max=300.0, y_max=300.0, **kw):
    return UrbanMap(x_max, y_max, random_buildings(rng, n_buildings, x_max, y_max, **kw))


def dense_overlap_oracle(p0, p1, building, samples=10_000):
    """Footprint-overlap interval estimated from evenly spaced points."""
    t = np.linspace(0.0, 1.0, samples)
    x = p0[0] + t * (p1[0] - p0[0])
    y = p0[1] + t * (p1[1] - p0[1])
    inside = ((building.x_lo <= x) & (x <= building.x_hi)
              & (building.y_lo <= y) & (y <= building.y_hi))
    if not inside.any():
        return None
    idx = np.nonzero(inside)[0]
    return float(t[idx[0]]), float(t[idx[-1]])


def refined_los_oracle(uav, user, urban_map, coarse=10_000, zoom_rounds=6, zoom=64):
    """LoS verdict from containment queries only, refined near footprint exits.

    Independent of the slab-clipping path: it samples the segment, finds each
    footprint-crossing run, refines the exit parameter by repeated local
    sampling, and tests the path height there against the roof.
    """
    x_q, y_q, h_uav = uav
    p1 = np.asarray(user, dtype=float)
    p0 = np.asarray([x_q, y_q], dtype=float)

    def inside(ts, b):
        pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
        return ((b.x_lo <= pts[:, 0]) & (pts[:, 0] <= b.x_hi)
                & (b.y_lo <= pts[:, 1]) & (pts[:, 1] <= b.y_hi))

    if np.allclose(p0, p1):
        return not any(b.contains(p1) for b in urban_map.buildings)

    t = np.linspace(0.0, 1.0, coarse)
    for b in urban_map.buildings:
        mask = inside(t, b)
        if not mask.any():
            continue
        last = int(np.nonzero(mask)[0][-1])
        lo = t[last]
        hi = t[last + 1] if last + 1 < coarse else 1.0
        if last + 1 >= coarse:
            t_out = 1.0
        else:
            for _ in range(zoom_rounds):
                ts = np.linspace(lo, hi, zoom)
                m = inside(ts, b)
                if not m.any():
                    break
                j = int(np.nonzero(m)[0][-1])
                lo = ts[j]
                hi = ts[j + 1] if j + 1 < zoom else hi
            t_out = lo
        if h_uav * (1.0 - t_out) <= b.height:
            return False
    return True


PRESET_PARAMS = AllocParams(b_total=20e6, p_total=2.0, r_min=1e6, c_fronthaul=500e6)


def feasible_alloc_instance(rng, k, center_lo=3e9, center_hi=3e10, spread=1.5):
    """Random feasible per-slot instance in the tracking-UAV regime.

    Users sit at comparable range under a UAV that follows them, so the SNR
    coefficients of one slot are within a small multiplicative spread of a
    common center (LoS at 100-250 m under the preset channel constants).
    """
    center = np.exp(rng.uniform(np.log(center_lo), np.log(center_hi)))
    half = np.log(spread) / 2.0
    a = center * np.exp(rng.uniform(-half, half, size=k))
    return a, PRESET_PARAMS


def harsh_alloc_instance(rng, k):
    """Wide-spread instance mixing strong LoS and deeply faded NLoS users."""
    a = np.exp(rng.uniform(np.log(3e5), np.log(3e10), size=k))
    return a, PRESET_PARAMS
