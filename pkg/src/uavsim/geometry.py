"""Urban map geometry: building prisms, boundary reflection, LoS classification.

All coordinates are meters. Buildings are vertical prisms with axis-aligned
rectangular footprints and flat roofs; ground users sit at z=0 and the UAV
flies at a fixed altitude H. Footprint containment is closed-set, so a
grazing segment counts as blocked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Building:
    """Axis-aligned rectangular footprint with roof height in meters."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    height: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ValueError(f"degenerate footprint: x [{self.x_lo}, {self.x_hi}], "
                             f"y [{self.y_lo}, {self.y_hi}]")
        if not self.height > 0:
            raise ValueError(f"building height must be positive, got {self.height}")

    def contains(self, p) -> bool:
        x, y = float(p[0]), float(p[1])
        return self.x_lo <= x <= self.x_hi and self.y_lo <= y <= self.y_hi


class UrbanMap:
    """Rectangular world [0, x_max] x [0, y_max] with non-overlapping buildings."""

    def __init__(self, x_max: float, y_max: float, buildings: Sequence[Building] = ()):
        if not (x_max > 0 and y_max > 0):
            raise ValueError(f"map bounds must be positive, got ({x_max}, {y_max})")
        self.x_max = float(x_max)
        self.y_max = float(y_max)
        self.buildings = tuple(buildings)
        for i, b in enumerate(self.buildings):
            if b.x_lo < 0 or b.y_lo < 0 or b.x_hi > self.x_max or b.y_hi > self.y_max:
                raise ValueError(f"building {i} footprint leaves the map boundary")
        for i in range(len(self.buildings)):
            for j in range(i + 1, len(self.buildings)):
                a, b = self.buildings[i], self.buildings[j]
                if a.x_lo < b.x_hi and b.x_lo < a.x_hi and a.y_lo < b.y_hi and b.y_lo < a.y_hi:
                    raise ValueError(f"buildings {i} and {j} have overlapping footprints")
        # Cached arrays for the vectorized kernels.
        if self.buildings:
            self._xlo = np.array([b.x_lo for b in self.buildings])
            self._xhi = np.array([b.x_hi for b in self.buildings])
            self._ylo = np.array([b.y_lo for b in self.buildings])
            self._yhi = np.array([b.y_hi for b in self.buildings])
            self._h = np.array([b.height for b in self.buildings])
        else:
            self._xlo = self._xhi = self._ylo = self._yhi = self._h = np.empty(0)

    @property
    def n_buildings(self) -> int:
        return len(self.buildings)


@dataclass(frozen=True)
class LosVerdict:
    """LoS indicator plus the first blocking building, if any."""

    is_los: bool
    blocking_building: Optional[int] = None
    t_out: Optional[float] = None

    def __post_init__(self):
        if self.is_los and self.blocking_building is not None:
            raise ValueError("LoS verdict cannot carry a blocking building")


def _axis_interval(c0: float, c1: float, lo: np.ndarray, hi: np.ndarray):
    """Per-box t-interval of one coordinate slab for the segment c(t)=c0+t(c1-c0)."""
    d = c1 - c0
    if d == 0.0:
        inside = (lo <= c0) & (c0 <= hi)
        t0 = np.where(inside, -np.inf, np.inf)
        t1 = np.where(inside, np.inf, -np.inf)
        return t0, t1
    t0 = (lo - c0) / d
    t1 = (hi - c0) / d
    return np.minimum(t0, t1), np.maximum(t0, t1)


def _clip_to_footprints(p0, p1, xlo, xhi, ylo, yhi):
    """Slab-clip the 2-D segment against every footprint.

    Returns (t_in, t_out, hit) arrays over boxes; the interval is the maximal
    subinterval of [0, 1] inside the closed footprint.
    """
    tx0, tx1 = _axis_interval(float(p0[0]), float(p1[0]), xlo, xhi)
    ty0, ty1 = _axis_interval(float(p0[1]), float(p1[1]), ylo, yhi)
    t_in = np.maximum(np.maximum(tx0, ty0), 0.0)
    t_out = np.minimum(np.minimum(tx1, ty1), 1.0)
    hit = t_in <= t_out
    return t_in, t_out, hit


def segment_footprint_overlap(p0, p1, building: Building) -> Optional[Tuple[float, float]]:
    """Maximal [t_in, t_out] of the segment p0 + t(p1 - p0) inside the footprint.

    Zero-length segments are rejected; callers test point containment instead.
    """
    if float(p0[0]) == float(p1[0]) and float(p0[1]) == float(p1[1]):
        raise ValueError("zero-length segment; use point containment instead")
    t_in, t_out, hit = _clip_to_footprints(
        p0, p1,
        np.array([building.x_lo]), np.array([building.x_hi]),
        np.array([building.y_lo]), np.array([building.y_hi]))
    if not hit[0]:
        return None
    return float(t_in[0]), float(t_out[0])


def classify_link(uav, user, urban_map: UrbanMap) -> LosVerdict:
    """LoS/NLoS verdict for the 3-D segment from the UAV (x, y, H) to a ground user.

    A building with footprint interval [t_in, t_out] blocks iff
    H * (1 - t_out) <= roof height; the path height decreases linearly toward
    the user, so the minimum over the footprint sits at t_out.
    """
    x_q, y_q, h_uav = float(uav[0]), float(uav[1]), float(uav[2])
    if not h_uav > 0:
        raise ValueError(f"UAV altitude must be positive, got {h_uav}")
    if urban_map.n_buildings == 0:
        return LosVerdict(is_los=True)
    p0 = (x_q, y_q)
    p1 = (float(user[0]), float(user[1]))
    if p0 == p1:
        # UAV directly overhead: the path is vertical, so only the shared
        # ground point can be inside a footprint.
        for i, b in enumerate(urban_map.buildings):
            if b.contains(p1):
                return LosVerdict(is_los=False, blocking_building=i, t_out=1.0)
        return LosVerdict(is_los=True)
    t_in, t_out, hit = _clip_to_footprints(
        p0, p1, urban_map._xlo, urban_map._xhi, urban_map._ylo, urban_map._yhi)
    z_min = h_uav * (1.0 - t_out)
    blocked = hit & (z_min <= urban_map._h)
    if not blocked.any():
        return LosVerdict(is_los=True)
    first = int(np.argmax(blocked))
    return LosVerdict(is_los=False, blocking_building=first, t_out=float(t_out[first]))


def classify_links(uav_xy, altitude: float, users_xy: np.ndarray, urban_map: UrbanMap) -> np.ndarray:
    """Vectorized LoS flags (True = LoS) for all users against all buildings.

    Equivalent to classify_link per user; users under the UAV degenerate to a
    vertical path whose interval is [0, 1], i.e. plain footprint containment.
    """
    users_xy = np.asarray(users_xy, dtype=float)
    k = users_xy.shape[0]
    if urban_map.n_buildings == 0:
        return np.ones(k, dtype=bool)
    q = np.asarray(uav_xy, dtype=float)
    d = users_xy - q[None, :]
    t_in = np.zeros((k, urban_map.n_buildings))
    t_out = np.ones((k, urban_map.n_buildings))
    bounds = ((urban_map._xlo, urban_map._xhi), (urban_map._ylo, urban_map._yhi))
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis, (lo, hi) in enumerate(bounds):
            dc = d[:, axis][:, None]
            t0 = (lo[None, :] - q[axis]) / dc
            t1 = (hi[None, :] - q[axis]) / dc
            a0 = np.minimum(t0, t1)
            a1 = np.maximum(t0, t1)
            par = d[:, axis] == 0.0
            if par.any():
                inside = (lo <= q[axis]) & (q[axis] <= hi)
                a0[par] = np.where(inside, -np.inf, np.inf)
                a1[par] = np.where(inside, np.inf, -np.inf)
            t_in = np.maximum(t_in, a0)
            t_out = np.minimum(t_out, a1)
    hit = t_in <= t_out
    z_min = altitude * (1.0 - t_out)
    blocked = hit & (z_min <= urban_map._h[None, :])
    return ~blocked.any(axis=1)


def point_in_any_building(p, urban_map: UrbanMap) -> bool:
    """Closed-set containment of a ground point in any footprint."""
    if urban_map.n_buildings == 0:
        return False
    x, y = float(p[0]), float(p[1])
    return bool(np.any((urban_map._xlo <= x) & (x <= urban_map._xhi)
                       & (urban_map._ylo <= y) & (y <= urban_map._yhi)))


def segment_blocked(p0, p1, urban_map: UrbanMap, min_height: float = 0.0) -> bool:
    """True if the 2-D segment crosses any footprint with roof height >= min_height.

    Used by the mobility/UAV rejection rule; min_height lets the UAV ignore
    buildings below its altitude.
    """
    if urban_map.n_buildings == 0:
        return False
    if float(p0[0]) == float(p1[0]) and float(p0[1]) == float(p1[1]):
        x, y = float(p0[0]), float(p0[1])
        return bool(np.any((urban_map._xlo <= x) & (x <= urban_map._xhi)
                           & (urban_map._ylo <= y) & (y <= urban_map._yhi)
                           & (urban_map._h >= min_height)))
    _, _, hit = _clip_to_footprints(
        p0, p1, urban_map._xlo, urban_map._xhi, urban_map._ylo, urban_map._yhi)
    return bool(np.any(hit & (urban_map._h >= min_height)))


def _fold(value: float, limit: float) -> float:
    """Mirror a coordinate into [0, limit] across the violated boundaries."""
    if 0.0 <= value <= limit:
        return value
    period = 2.0 * limit
    m = math.fmod(value, period)
    if m < 0.0:
        m += period
    if m > limit:
        m = period - m
    return m


def reflect_into_bounds(p, urban_map: UrbanMap) -> np.ndarray:
    """Reflect a point across the map boundary until it lies inside."""
    return np.array([_fold(float(p[0]), urban_map.x_max),
                     _fold(float(p[1]), urban_map.y_max)])
