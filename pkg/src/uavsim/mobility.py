"""Hybrid group/individual user mobility.

Group users follow a reference-point group model: the RP random-walks and
members are re-placed each slot as a bounded polar perturbation around it.
Individual users random-walk. Individuals may join a nearby group and
members may detach, both probabilistically, once per slot before any motion.
Every step ends with boundary reflection and obstacle rejection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import UrbanMap, point_in_any_building, reflect_into_bounds, segment_blocked

_TWO_PI = 2.0 * math.pi
# One initial draw plus up to eight halved-length resamples.
_MAX_RESAMPLES = 8


@dataclass(frozen=True)
class MobilityConfig:
    v_user_max: float = 2.0       # m/s, step-length cap for RPs and individuals
    r_dev_max: float = 2.0        # m, member deviation cap around the RP
    d_g: float = 20.0             # m, attachment/detachment radius
    p_join: float = 0.5
    p_leave: float = 0.5
    slot_duration: float = 1.0    # s

    def __post_init__(self):
        for name in ("v_user_max", "r_dev_max", "d_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("p_join", "p_leave"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not self.slot_duration > 0:
            raise ValueError("slot_duration must be positive")


@dataclass(frozen=True)
class GroupState:
    id: int
    rp_position: np.ndarray  # (2,)


@dataclass(frozen=True)
class UserState:
    id: int
    position: np.ndarray     # (2,)
    group_id: Optional[int] = None  # None = individual, else member of that group

    @property
    def is_member(self) -> bool:
        return self.group_id is not None


def _valid(prev, candidate, urban_map: UrbanMap) -> bool:
    if point_in_any_building(candidate, urban_map):
        return False
    if (prev[0], prev[1]) == (candidate[0], candidate[1]):
        return True
    return not segment_blocked(prev, candidate, urban_map)


def _polar_step(origin, length: float, theta: float, urban_map: UrbanMap) -> np.ndarray:
    return reflect_into_bounds(
        (origin[0] + length * math.cos(theta), origin[1] + length * math.sin(theta)),
        urban_map)


def _rejected_move(prev, anchor, length: float, theta: float,
                   urban_map: UrbanMap, rng) -> Optional[np.ndarray]:
    """Move to anchor + polar(length, theta), resampling direction with halved
    length on building conflicts. Returns None when every attempt failed."""
    candidate = _polar_step(anchor, length, theta, urban_map)
    if _valid(prev, candidate, urban_map):
        return candidate
    for _ in range(_MAX_RESAMPLES):
        length *= 0.5
        theta = rng.uniform(0.0, _TWO_PI)
        candidate = _polar_step(anchor, length, theta, urban_map)
        if _valid(prev, candidate, urban_map):
            return candidate
    return None


def step_reference_point(group: GroupState, cfg: MobilityConfig,
                         urban_map: UrbanMap, rng) -> GroupState:
    """Advance a group RP one slot: uniform step length and direction."""
    v = rng.uniform(0.0, cfg.v_user_max * cfg.slot_duration)
    theta = rng.uniform(0.0, _TWO_PI)
    pos = _rejected_move(group.rp_position, group.rp_position, v, theta, urban_map, rng)
    if pos is None:
        return group  # stay in place
    return replace(group, rp_position=pos)


def step_group_member(user: UserState, group: GroupState, cfg: MobilityConfig,
                      urban_map: UrbanMap, rng) -> UserState:
    """Re-place a member as a bounded perturbation around its (stepped) RP."""
    if user.group_id != group.id:
        raise ValueError(f"user {user.id} is not a member of group {group.id}")
    r = rng.uniform(0.0, cfg.r_dev_max)
    phi = rng.uniform(0.0, _TWO_PI)
    pos = _rejected_move(user.position, group.rp_position, r, phi, urban_map, rng)
    if pos is None:
        # Snap to the RP: always valid and always inside the deviation radius,
        # unlike staying put once the RP has moved away.
        pos = np.array(group.rp_position, dtype=float)
    return replace(user, position=pos)


def step_individual(user: UserState, cfg: MobilityConfig,
                    urban_map: UrbanMap, rng) -> UserState:
    """Advance an individual user one random-walk slot."""
    if user.is_member:
        raise ValueError(f"user {user.id} is a group member, not an individual")
    v = rng.uniform(0.0, cfg.v_user_max * cfg.slot_duration)
    theta = rng.uniform(0.0, _TWO_PI)
    pos = _rejected_move(user.position, user.position, v, theta, urban_map, rng)
    if pos is None:
        return user
    return replace(user, position=pos)


def candidate_groups(user: UserState, groups: Sequence[GroupState],
                     cfg: MobilityConfig) -> set:
    """Group ids whose RP lies within the attachment radius (closed ball)."""
    out = set()
    for g in groups:
        if float(np.hypot(*(np.asarray(user.position) - np.asarray(g.rp_position)))) <= cfg.d_g:
            out.add(g.id)
    return out


def apply_mode_transitions(users: Sequence[UserState], groups: Sequence[GroupState],
                           cfg: MobilityConfig, rng) -> List[UserState]:
    """Evaluate join/leave transitions once, on current positions.

    Individuals with a nonempty candidate set join the nearest RP with
    probability p_join (ties to the lowest group id); members farther than
    d_g from their own RP leave with probability p_leave.
    """
    by_id = {g.id: g for g in groups}
    out: List[UserState] = []
    for u in users:
        if u.is_member:
            g = by_id[u.group_id]
            dist = float(np.hypot(*(np.asarray(u.position) - np.asarray(g.rp_position))))
            if dist > cfg.d_g and rng.uniform() < cfg.p_leave:
                u = replace(u, group_id=None)
        else:
            cand = candidate_groups(u, groups, cfg)
            if cand and rng.uniform() < cfg.p_join:
                best = min(
                    cand,
                    key=lambda gid: (float(np.hypot(*(np.asarray(u.position)
                                                      - np.asarray(by_id[gid].rp_position)))), gid))
                u = replace(u, group_id=best)
        out.append(u)
    return out


def step_world(users: Sequence[UserState], groups: Sequence[GroupState],
               cfg: MobilityConfig, urban_map: UrbanMap, rng
               ) -> Tuple[List[UserState], List[GroupState]]:
    """One mobility slot: transitions, then RP steps, member steps, individual steps."""
    users = apply_mode_transitions(users, groups, cfg, rng)
    new_groups = [step_reference_point(g, cfg, urban_map, rng) for g in groups]
    by_id = {g.id: g for g in new_groups}
    new_users: List[UserState] = []
    for u in users:
        if u.is_member:
            new_users.append(step_group_member(u, by_id[u.group_id], cfg, urban_map, rng))
        else:
            new_users.append(u)
    for i, u in enumerate(new_users):
        if not u.is_member:
            new_users[i] = step_individual(u, cfg, urban_map, rng)
    return new_users, new_groups
