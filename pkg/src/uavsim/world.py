"""Episode world: seeded placement, user stepping, per-slot link budgets."""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .channel import LinkBudget, large_scale_gain, link_distance, sample_fading_power
from .geometry import classify_links, point_in_any_building
from .mobility import GroupState, UserState, step_world
from .scenario import ScenarioConfig
from .seeding import FADING, MOBILITY, PLACEMENT, POLICY, episode_stream

# Training episodes draw from a disjoint seed range so evaluation seeds
# (small integers) never collide with them.
TRAIN_EPISODE_BASE = 10 ** 9


class SimWorld:
    """One seeded episode's environment state.

    Mobility, fading, placement, and policy sampling each use their own
    stream derived from (master seed, episode seed, purpose), so changing the
    policy seed leaves the mobility trace untouched.
    """

    def __init__(self, scenario: ScenarioConfig, episode_seed: int,
                 seed: Optional[int] = None, policy_seed: Optional[int] = None):
        self.scenario = scenario
        self.urban_map = scenario.urban_map()
        master = scenario.seed if seed is None else seed
        self.rng_mobility = episode_stream(master, episode_seed, MOBILITY)
        self.rng_fading = episode_stream(master, episode_seed, FADING)
        self.rng_policy = episode_stream(
            master, episode_seed if policy_seed is None else policy_seed, POLICY)
        rng_place = episode_stream(master, episode_seed, PLACEMENT)
        self.users, self.groups = self._place(rng_place)

    # -- initial placement ---------------------------------------------------
    def _free_point(self, rng, lo_margin: float = 0.0) -> np.ndarray:
        scn = self.scenario
        for _ in range(10_000):
            p = np.array([rng.uniform(lo_margin, scn.x_max - lo_margin),
                          rng.uniform(lo_margin, scn.y_max - lo_margin)])
            if not point_in_any_building(p, self.urban_map):
                return p
        raise RuntimeError("could not place a point outside the buildings")

    def _place(self, rng) -> Tuple[List[UserState], List[GroupState]]:
        scn = self.scenario
        groups: List[GroupState] = []
        users: List[UserState] = []
        uid = 0
        for gid, size in enumerate(scn.group_sizes):
            rp = self._free_point(rng)
            groups.append(GroupState(gid, rp))
            for _ in range(size):
                for _ in range(1000):
                    r = rng.uniform(0.0, scn.mobility.r_dev_max)
                    phi = rng.uniform(0.0, 2.0 * np.pi)
                    pos = rp + r * np.array([np.cos(phi), np.sin(phi)])
                    inside = (0.0 <= pos[0] <= scn.x_max and 0.0 <= pos[1] <= scn.y_max)
                    if inside and not point_in_any_building(pos, self.urban_map):
                        break
                else:
                    pos = rp.copy()
                users.append(UserState(uid, pos, group_id=gid))
                uid += 1
        for _ in range(scn.n_individuals):
            users.append(UserState(uid, self._free_point(rng)))
            uid += 1
        return users, groups

    # -- per-slot dynamics ----------------------------------------------------
    def users_xy(self) -> np.ndarray:
        return np.array([u.position for u in self.users])

    def user_groups(self) -> List[Optional[int]]:
        return [u.group_id for u in self.users]

    def step_users(self) -> None:
        self.users, self.groups = step_world(
            self.users, self.groups, self.scenario.mobility, self.urban_map,
            self.rng_mobility)

    def link_budgets(self, uav_xy) -> Tuple[np.ndarray, np.ndarray]:
        """LoS flags and allocator SNR coefficients for the current slot.

        Fading is sampled per user in id order in both allocator modes so the
        fading stream stays aligned whatever the mode or LoS pattern.
        """
        scn = self.scenario
        users = self.users_xy()
        los = classify_links(uav_xy, scn.altitude, users, self.urban_map)
        k = users.shape[0]
        budgets = []
        a = np.empty(k)
        for i in range(k):
            d = link_distance(uav_xy, users[i], scn.altitude)
            beta = large_scale_gain(d, bool(los[i]), scn.channel)
            g2 = sample_fading_power(bool(los[i]), scn.channel, self.rng_fading)
            fading = g2 if scn.channel.allocator_fading == "instantaneous" else 1.0
            coeff = beta * fading / scn.channel.noise_psd
            a[i] = coeff
            budgets.append(LinkBudget(distance=d, is_los=bool(los[i]),
                                      large_scale=beta, fading_power=g2,
                                      snr_coeff=coeff))
        self.last_budgets = budgets
        return los, a
