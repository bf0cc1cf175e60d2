"""Scenario configuration: schema, validation, presets, JSON round-trip."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

from .allocation import AllocParams
from .channel import ALLOCATOR_FADING_MODES, ChannelConfig
from .geometry import Building, UrbanMap
from .mobility import MobilityConfig
from .policy import PpoConfig, RewardWeights

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Config rejection naming the offending field."""


@dataclass
class ScenarioConfig:
    x_max: float
    y_max: float
    buildings: List[Building]
    group_sizes: List[int]
    n_individuals: int
    mobility: MobilityConfig
    channel: ChannelConfig
    alloc: AllocParams
    altitude: float
    v_max: float
    slot_duration: float
    n_slots: int
    reward: RewardWeights = field(default_factory=RewardWeights)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1:
            raise ScenarioError("group_sizes/n_individuals: need at least one user")
        if self.n_slots < 1:
            raise ScenarioError(f"n_slots: must be >= 1, got {self.n_slots}")
        if not self.altitude > 0:
            raise ScenarioError(f"altitude: must be positive, got {self.altitude}")
        if not self.v_max > 0:
            raise ScenarioError(f"v_max: must be positive, got {self.v_max}")
        if not self.slot_duration > 0:
            raise ScenarioError(f"slot_duration: must be positive, got {self.slot_duration}")
        if any(g < 1 for g in self.group_sizes):
            raise ScenarioError("group_sizes: every group needs at least one member")
        if self.n_individuals < 0:
            raise ScenarioError("n_individuals: must be nonnegative")
        if self.mobility.slot_duration != self.slot_duration:
            raise ScenarioError("mobility.slot_duration: must equal the scenario slot_duration")
        try:
            self.urban_map()
        except ValueError as exc:
            raise ScenarioError(f"buildings: {exc}") from exc

    @property
    def n_groups(self) -> int:
        return len(self.group_sizes)

    @property
    def n_users(self) -> int:
        return sum(self.group_sizes) + self.n_individuals

    def urban_map(self) -> UrbanMap:
        return UrbanMap(self.x_max, self.y_max, self.buildings)

    def fingerprint(self) -> str:
        """Digest of the fields a trained policy depends on."""
        payload = json.dumps({
            "k": self.n_users, "x_max": self.x_max, "y_max": self.y_max,
            "altitude": self.altitude, "v_max": self.v_max,
            "slot_duration": self.slot_duration,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    # -- dict / file round-trip ---------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "map": {
                "x_max": self.x_max,
                "y_max": self.y_max,
                "buildings": [[b.x_lo, b.x_hi, b.y_lo, b.y_hi, b.height]
                              for b in self.buildings],
            },
            "users": {"group_sizes": list(self.group_sizes),
                      "individuals": self.n_individuals},
            "mobility": {
                "v_user_max": self.mobility.v_user_max,
                "r_dev_max": self.mobility.r_dev_max,
                "d_g": self.mobility.d_g,
                "p_join": self.mobility.p_join,
                "p_leave": self.mobility.p_leave,
            },
            "channel": {
                "beta0": self.channel.beta0,
                "alpha_los": self.channel.alpha_los,
                "alpha_nlos": self.channel.alpha_nlos,
                "kappa": self.channel.kappa,
                "noise_psd": self.channel.noise_psd,
                "allocator_fading": self.channel.allocator_fading,
            },
            "allocation": {
                "b_total": self.alloc.b_total,
                "p_total": self.alloc.p_total,
                "r_min": self.alloc.r_min,
                "c_fronthaul": self.alloc.c_fronthaul,
                "delta_b": self.alloc.delta_b,
                "delta_s": self.alloc.delta_s,
                "max_iters": self.alloc.max_iters,
                "s_cap": self.alloc.s_cap,
                "rebalance_init": self.alloc.rebalance_init,
            },
            "uav": {"altitude": self.altitude, "v_max": self.v_max},
            "horizon": {"n_slots": self.n_slots, "slot_duration": self.slot_duration},
            "reward": {
                "eps": self.reward.eps,
                "lambda_qos": self.reward.lambda_qos,
                "eta_fronthaul": self.reward.eta_fronthaul,
                "mu_action": self.reward.mu_action,
                "infeasible_penalty": self.reward.infeasible_penalty,
            },
            "ppo": {
                "gamma": self.ppo.gamma,
                "gae_lambda": self.ppo.gae_lambda,
                "clip_ratio": self.ppo.clip_ratio,
                "learning_rate": self.ppo.learning_rate,
                "epochs": self.ppo.epochs,
                "minibatch_size": self.ppo.minibatch_size,
                "entropy_coef": self.ppo.entropy_coef,
                "episodes_per_update": self.ppo.episodes_per_update,
                "iterations": self.ppo.iterations,
                "hidden": list(self.ppo.hidden),
                "init_log_std": self.ppo.init_log_std,
                "value_coef": self.ppo.value_coef,
                "value_scale": self.ppo.value_scale,
            },
            "seed": self.seed,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _expect(data: dict, key: str, kind, where: str):
    if key not in data:
        raise ScenarioError(f"{where}.{key}: missing required field")
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ScenarioError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}")
    return value


def _section(data: dict, key: str) -> dict:
    return _expect(data, key, dict, "config")


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("config: expected a JSON object at the top level")
    version = data.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"version: unsupported schema version {version}")

    m = _section(data, "map")
    raw_buildings = _expect(m, "buildings", list, "map")
    buildings = []
    for i, row in enumerate(raw_buildings):
        if not isinstance(row, (list, tuple)) or len(row) != 5:
            raise ScenarioError(
                f"map.buildings[{i}]: expected [x_lo, x_hi, y_lo, y_hi, height]")
        try:
            buildings.append(Building(*[float(v) for v in row]))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"map.buildings[{i}]: {exc}") from exc

    users = _section(data, "users")
    mob = _section(data, "mobility")
    chan = _section(data, "channel")
    alloc = _section(data, "allocation")
    uav = _section(data, "uav")
    horizon = _section(data, "horizon")

    fading = chan.get("allocator_fading", "instantaneous")
    if fading not in ALLOCATOR_FADING_MODES:
        raise ScenarioError(
            f"channel.allocator_fading: must be one of {ALLOCATOR_FADING_MODES}")

    slot_duration = float(_expect(horizon, "slot_duration", float, "horizon"))

    def build(cls, kw, where):
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: {exc}") from exc

    mobility = build(MobilityConfig, dict(
        v_user_max=float(_expect(mob, "v_user_max", float, "mobility")),
        r_dev_max=float(_expect(mob, "r_dev_max", float, "mobility")),
        d_g=float(_expect(mob, "d_g", float, "mobility")),
        p_join=float(_expect(mob, "p_join", float, "mobility")),
        p_leave=float(_expect(mob, "p_leave", float, "mobility")),
        slot_duration=slot_duration), "mobility")
    channel = build(ChannelConfig, dict(
        beta0=float(_expect(chan, "beta0", float, "channel")),
        alpha_los=float(_expect(chan, "alpha_los", float, "channel")),
        alpha_nlos=float(_expect(chan, "alpha_nlos", float, "channel")),
        kappa=float(_expect(chan, "kappa", float, "channel")),
        noise_psd=float(_expect(chan, "noise_psd", float, "channel")),
        allocator_fading=fading), "channel")
    alloc_kw = dict(
        b_total=float(_expect(alloc, "b_total", float, "allocation")),
        p_total=float(_expect(alloc, "p_total", float, "allocation")),
        r_min=float(_expect(alloc, "r_min", float, "allocation")),
        c_fronthaul=float(_expect(alloc, "c_fronthaul", float, "allocation")))
    for opt in ("delta_b", "delta_s", "s_cap"):
        if alloc.get(opt) is not None:
            alloc_kw[opt] = float(alloc[opt])
    if "max_iters" in alloc:
        alloc_kw["max_iters"] = int(alloc["max_iters"])
    if "rebalance_init" in alloc:
        alloc_kw["rebalance_init"] = bool(alloc["rebalance_init"])
    allocation = build(AllocParams, alloc_kw, "allocation")

    reward = RewardWeights()
    if "reward" in data:
        rw = _section(data, "reward")
        reward = build(RewardWeights, {
            k: float(rw[k]) for k in ("eps", "lambda_qos", "eta_fronthaul",
                                      "mu_action", "infeasible_penalty") if k in rw},
            "reward")
    ppo = PpoConfig()
    if "ppo" in data:
        pp = dict(_section(data, "ppo"))
        if "hidden" in pp:
            pp["hidden"] = tuple(int(v) for v in pp["hidden"])
        for key in ("epochs", "minibatch_size", "episodes_per_update", "iterations"):
            if key in pp:
                pp[key] = int(pp[key])
        ppo = build(PpoConfig, pp, "ppo")

    try:
        return ScenarioConfig(
            x_max=float(_expect(m, "x_max", float, "map")),
            y_max=float(_expect(m, "y_max", float, "map")),
            buildings=buildings,
            group_sizes=[int(g) for g in _expect(users, "group_sizes", list, "users")],
            n_individuals=int(_expect(users, "individuals", int, "users")),
            mobility=mobility,
            channel=channel,
            alloc=allocation,
            altitude=float(_expect(uav, "altitude", float, "uav")),
            v_max=float(_expect(uav, "v_max", float, "uav")),
            slot_duration=slot_duration,
            n_slots=int(_expect(horizon, "n_slots", int, "horizon")),
            reward=reward,
            ppo=ppo,
            seed=int(data.get("seed", 0)),
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config: invalid JSON in {path}: {exc}") from exc
    return from_dict(data)


# --------------------------------------------------------------------------
# Presets

# 12 buildings on a jittered 4x3 grid, heights in [20, 60] m; generated once
# from map sub-seed 2026 and frozen here so the shipped layout is explicit.
_PRESET_BUILDINGS: Tuple[Tuple[float, float, float, float, float], ...] = (
    (43.65, 67.58, 35.19, 57.01, 49.1),
    (94.68, 130.28, 56.66, 84.17, 53.47),
    (179.3, 203.51, 46.11, 67.14, 35.88),
    (243.12, 264.83, 38.28, 59.2, 31.48),
    (10.48, 32.23, 114.09, 142.54, 46.3),
    (83.5, 115.41, 124.98, 148.9, 31.89),
    (185.89, 207.81, 122.22, 159.54, 55.5),
    (254.21, 282.38, 107.65, 139.17, 51.52),
    (9.7, 42.39, 221.35, 242.48, 43.1),
    (107.7, 140.98, 263.46, 289.72, 23.64),
    (184.59, 217.35, 243.12, 280.69, 59.79),
    (249.47, 269.15, 241.76, 260.89, 37.42),
)


def _paper_s4(group_sizes, n_individuals) -> ScenarioConfig:
    return ScenarioConfig(
        x_max=300.0,
        y_max=300.0,
        buildings=[Building(*row) for row in _PRESET_BUILDINGS],
        group_sizes=list(group_sizes),
        n_individuals=n_individuals,
        mobility=MobilityConfig(v_user_max=2.0, r_dev_max=2.0, d_g=20.0,
                                p_join=0.5, p_leave=0.5, slot_duration=1.0),
        # The allocator consumes mean-fading SNR coefficients in the preset;
        # sampled fading still drives the recorded link budgets.
        channel=ChannelConfig(beta0=1e-5, alpha_los=2.2, alpha_nlos=3.5,
                              kappa=10.0, noise_psd=1e-20,
                              allocator_fading="mean"),
        alloc=AllocParams(b_total=20e6, p_total=2.0, r_min=1e6,
                          c_fronthaul=500e6),
        altitude=100.0,
        v_max=16.0,
        slot_duration=1.0,
        n_slots=120,
        seed=0,
    )


_PRESETS = {
    # 3 groups of 4 plus 10 individuals: K = 22
    "paper-s4": lambda: _paper_s4([4, 4, 4], 10),
    # Fig. 6 caption variant: K = 20 (3 groups of 4 plus 8 individuals)
    "paper-s4-k20": lambda: _paper_s4([4, 4, 4], 8),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ScenarioError(
            f"preset: unknown preset {name!r}; available: {sorted(_PRESETS)}") from None


def preset_names() -> List[str]:
    return sorted(_PRESETS)
