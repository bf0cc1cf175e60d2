"""Trajectory policy: MDP state/action/reward, PPO training, baselines.

The actor is a two-hidden-layer tanh MLP emitting a 2-D Gaussian mean with a
state-independent log-std pair; the critic mirrors it with a scalar head.
Actions are sampled, then radially clipped to the per-slot speed cap;
log-probabilities are taken of the pre-clip sample.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .allocation import (INFEASIBLE, AllocParams, SlotAllocation,
                         allocate_slot, dual_ascent_baseline)
from .geometry import (UrbanMap, point_in_any_building, reflect_into_bounds,
                       segment_blocked)
from .nets import Adam, backward, forward, init_layers

log = logging.getLogger(__name__)

LN_2PI = math.log(2.0 * math.pi)
_RATE_UNIT = 1e6  # rewards work in Mbit/s for conditioning


@dataclass(frozen=True)
class RewardWeights:
    eps: float = 1.0              # Mbit/s, log-barrier offset
    lambda_qos: float = 1.0       # per Mbit/s
    eta_fronthaul: float = 1.0    # per Mbit/s
    mu_action: float = 1e-3       # per m^2
    infeasible_penalty: float = 5e4

    def __post_init__(self):
        for name in ("eps", "lambda_qos", "eta_fronthaul", "mu_action",
                     "infeasible_penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    episodes_per_update: int = 5
    iterations: int = 300
    hidden: Tuple[int, int] = (128, 128)
    init_log_std: float = math.log(8.0)
    value_coef: float = 0.5
    value_scale: float = 1e-3     # critic fits value_scale * return
    target_kl: float = 0.015      # early-stop threshold for the epoch loop

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must be in (0, 1]")
        if not 0.0 < self.clip_ratio < 1.0:
            raise ValueError("clip_ratio must be in (0, 1)")
        for name in ("learning_rate", "value_coef", "value_scale", "target_kl"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "minibatch_size", "episodes_per_update", "iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


# --------------------------------------------------------------------------
# MDP pieces


def build_state(uav_xy, users_xy, x_max: float, y_max: float) -> np.ndarray:
    """(x_q, y_q, x_1, y_1, ..., x_K, y_K), each normalized to [0, 1]."""
    users_xy = np.asarray(users_xy, dtype=float)
    state = np.empty(2 + 2 * users_xy.shape[0])
    state[0] = uav_xy[0] / x_max
    state[1] = uav_xy[1] / y_max
    state[2::2] = users_xy[:, 0] / x_max
    state[3::2] = users_xy[:, 1] / y_max
    return state


def denormalize_state(state: np.ndarray, x_max: float, y_max: float):
    """Inverse of build_state: (uav_xy, users_xy)."""
    uav = np.array([state[0] * x_max, state[1] * y_max])
    users = np.stack([state[2::2] * x_max, state[3::2] * y_max], axis=1)
    return uav, users


def clip_action(raw, v_max: float, slot_duration: float) -> np.ndarray:
    """Radial projection onto the per-slot displacement ball."""
    raw = np.asarray(raw, dtype=float)
    cap = v_max * slot_duration
    norm = float(np.hypot(raw[0], raw[1]))
    if norm > cap:
        return raw * (cap / norm)
    return raw.copy()


def compute_reward(rates, slacks, action, weights: RewardWeights,
                   params: AllocParams) -> float:
    """Log-utility minus QoS, fronthaul, and maneuver penalties (Mbit/s units)."""
    r = np.asarray(rates, dtype=float) / _RATE_UNIT
    s = np.asarray(slacks, dtype=float) / _RATE_UNIT
    r_min = params.r_min / _RATE_UNIT
    c_f = params.c_fronthaul / _RATE_UNIT
    util = float(np.log(weights.eps + r).sum())
    qos_pen = weights.lambda_qos * float(np.maximum(r_min + s - r, 0.0).sum())
    fh_pen = weights.eta_fronthaul * max(float(r.sum()) - c_f, 0.0)
    act = np.asarray(action, dtype=float)
    move_pen = weights.mu_action * float(act @ act)
    return util - qos_pen - fh_pen - move_pen


def kmeans_init(users_xy, urban_map: Optional[UrbanMap] = None) -> np.ndarray:
    """Single-cluster K-means, i.e. the user centroid, pushed out of buildings."""
    users_xy = np.asarray(users_xy, dtype=float)
    if users_xy.shape[0] < 1:
        raise ValueError("need at least one user")
    center = users_xy.mean(axis=0)
    if urban_map is None:
        return center
    for _ in range(8):
        if not point_in_any_building(center, urban_map):
            break
        for i, b in enumerate(urban_map.buildings):
            if b.contains(center):
                # Exit through the nearest edge, along its outward normal.
                exits = [
                    (center[0] - b.x_lo, np.array([b.x_lo - 1e-6, center[1]])),
                    (b.x_hi - center[0], np.array([b.x_hi + 1e-6, center[1]])),
                    (center[1] - b.y_lo, np.array([center[0], b.y_lo - 1e-6])),
                    (b.y_hi - center[1], np.array([center[0], b.y_hi + 1e-6])),
                ]
                center = min(exits, key=lambda e: e[0])[1]
                break
        center = reflect_into_bounds(center, urban_map)
    return center


# --------------------------------------------------------------------------
# Policy parameters and checkpointing


class CheckpointError(RuntimeError):
    pass


_MAGIC = b"UAVPOLCK"
_VERSION = 1


class PolicyParameters:
    """Actor/critic weights plus optimizer state, serializable bit-exactly."""

    def __init__(self, params: Dict[str, np.ndarray], hidden: Tuple[int, int],
                 action_cap: float, adam: Adam, step_count: int = 0,
                 learning_rate: float = 3e-4):
        self.params = params
        self.hidden = tuple(hidden)
        self.action_cap = float(action_cap)
        self.adam = adam
        self.step_count = int(step_count)
        self.learning_rate = float(learning_rate)

    # -- construction ------------------------------------------------------
    @classmethod
    def initialize(cls, state_dim: int, cfg: PpoConfig, action_cap: float,
                   rng: np.random.Generator) -> "PolicyParameters":
        h1, h2 = cfg.hidden
        actor = init_layers(rng, (state_dim, h1, h2, 2), final_scale=0.01)
        critic = init_layers(rng, (state_dim, h1, h2, 1))
        params: Dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(actor):
            params[f"actor_w{i}"] = w
            params[f"actor_b{i}"] = b
        for i, (w, b) in enumerate(critic):
            params[f"critic_w{i}"] = w
            params[f"critic_b{i}"] = b
        params["log_std"] = np.full(2, cfg.init_log_std)
        return cls(params, cfg.hidden, action_cap, Adam(params),
                   learning_rate=cfg.learning_rate)

    @property
    def state_dim(self) -> int:
        return self.params["actor_w0"].shape[1]

    def actor_layers(self):
        return [(self.params[f"actor_w{i}"], self.params[f"actor_b{i}"]) for i in range(3)]

    def critic_layers(self):
        return [(self.params[f"critic_w{i}"], self.params[f"critic_b{i}"]) for i in range(3)]

    def actor_mean(self, states: np.ndarray) -> np.ndarray:
        out, _ = forward(self.actor_layers(), states)
        return out

    def values(self, states: np.ndarray) -> np.ndarray:
        out, _ = forward(self.critic_layers(), states)
        return out[:, 0]

    def snapshot(self):
        return ({k: v.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.adam.m.items()},
                {k: v.copy() for k, v in self.adam.v.items()},
                self.adam.t)

    def restore(self, snap) -> None:
        params, m, v, t = snap
        for k in self.params:
            self.params[k][...] = params[k]
            self.adam.m[k][...] = m[k]
            self.adam.v[k][...] = v[k]
        self.adam.t = t

    # -- serialization -----------------------------------------------------
    def save(self, path: str, fingerprint: str = "") -> None:
        arrays: Dict[str, np.ndarray] = {}
        for k, v in self.params.items():
            arrays[f"p:{k}"] = v
        for k, v in self.adam.m.items():
            arrays[f"m:{k}"] = v
        for k, v in self.adam.v.items():
            arrays[f"v:{k}"] = v
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<I", _VERSION))
        fp = fingerprint.encode("utf-8")
        buf.write(struct.pack("<H", len(fp)))
        buf.write(fp)
        buf.write(struct.pack("<d", self.action_cap))
        buf.write(struct.pack("<d", self.learning_rate))
        buf.write(struct.pack("<QQ", self.step_count, self.adam.t))
        buf.write(struct.pack("<HH", *self.hidden))
        buf.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f8")
            enc = name.encode("utf-8")
            buf.write(struct.pack("<H", len(enc)))
            buf.write(enc)
            buf.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                buf.write(struct.pack("<Q", dim))
            buf.write(data.tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path: str, expected_fingerprint: Optional[str] = None,
             expected_state_dim: Optional[int] = None) -> Tuple["PolicyParameters", str]:
        with open(path, "rb") as fh:
            raw = fh.read()
        view = io.BytesIO(raw)
        if view.read(8) != _MAGIC:
            raise CheckpointError(f"{path}: not a policy checkpoint")
        (version,) = struct.unpack("<I", view.read(4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (fp_len,) = struct.unpack("<H", view.read(2))
        fingerprint = view.read(fp_len).decode("utf-8")
        (action_cap,) = struct.unpack("<d", view.read(8))
        (learning_rate,) = struct.unpack("<d", view.read(8))
        step_count, adam_t = struct.unpack("<QQ", view.read(16))
        hidden = struct.unpack("<HH", view.read(4))
        (n_arrays,) = struct.unpack("<I", view.read(4))
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", view.read(2))
            name = view.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", view.read(1))
            shape = struct.unpack(f"<{ndim}Q", view.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(view.read(8 * count), dtype="<f8").reshape(shape)
            arrays[name] = data.astype(np.float64).copy()
        params = {k[2:]: v for k, v in arrays.items() if k.startswith("p:")}
        if "actor_w0" not in params or "log_std" not in params:
            raise CheckpointError(f"{path}: missing parameter arrays")
        policy = cls(params, hidden, action_cap, Adam(params), step_count,
                     learning_rate)
        for k, v in arrays.items():
            if k.startswith("m:"):
                policy.adam.m[k[2:]][...] = v
            elif k.startswith("v:"):
                policy.adam.v[k[2:]][...] = v
        policy.adam.t = adam_t
        if expected_state_dim is not None and policy.state_dim != expected_state_dim:
            raise CheckpointError(
                f"{path}: checkpoint state dim {policy.state_dim} "
                f"does not match scenario state dim {expected_state_dim}")
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise CheckpointError(
                f"{path}: scenario fingerprint {fingerprint!r} does not match "
                f"{expected_fingerprint!r}")
        return policy, fingerprint


def act_online(policy: PolicyParameters, state: np.ndarray) -> np.ndarray:
    """Deterministic action: the clipped actor mean, one forward pass."""
    mean = policy.actor_mean(state[None, :])[0]
    cap = policy.action_cap
    norm = float(np.hypot(mean[0], mean[1]))
    if norm > cap:
        return mean * (cap / norm)
    return mean


def gaussian_logp(raw: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density of pre-clip samples, summed over dims."""
    z = (raw - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - LN_2PI


# --------------------------------------------------------------------------
# Controllers


class TrainedController:
    """Acts with the actor network; stochastic during training."""

    def __init__(self, policy: PolicyParameters, stochastic: bool = False):
        self.policy = policy
        self.stochastic = stochastic

    def act(self, state, uav_xy, users_xy, rng):
        mean = self.policy.actor_mean(state[None, :])[0]
        if self.stochastic:
            log_std = self.policy.params["log_std"]
            raw = mean + np.exp(log_std) * rng.standard_normal(2)
            logp = float(gaussian_logp(raw, mean, log_std))
        else:
            raw = mean
            logp = 0.0
        cap = self.policy.action_cap
        norm = float(np.hypot(raw[0], raw[1]))
        exec_a = raw * (cap / norm) if norm > cap else raw.copy()
        return exec_a, raw, logp


class StationaryCentroidController:
    """Holds the K-means initial position: zero displacement every slot."""

    def act(self, state, uav_xy, users_xy, rng):
        zero = np.zeros(2)
        return zero, zero, 0.0


class FollowCentroidController:
    """Moves toward the current user centroid at up to the speed cap."""

    def __init__(self, v_max: float, slot_duration: float):
        self.cap = v_max * slot_duration

    def act(self, state, uav_xy, users_xy, rng):
        target = np.asarray(users_xy, dtype=float).mean(axis=0)
        move = target - np.asarray(uav_xy, dtype=float)
        norm = float(np.hypot(move[0], move[1]))
        if norm > self.cap:
            move = move * (self.cap / norm)
        return move, move, 0.0


def baseline_policy(kind: str, v_max: float = 0.0, slot_duration: float = 1.0):
    """Factory for the comparison baselines."""
    if kind == "stationary-centroid":
        return StationaryCentroidController()
    if kind == "follow-centroid":
        return FollowCentroidController(v_max, slot_duration)
    raise ValueError(f"unknown baseline {kind!r}")


# --------------------------------------------------------------------------
# Rollouts


@dataclass
class SlotRecord:
    slot: int
    uav_xy: np.ndarray
    users_xy: np.ndarray
    user_groups: List[Optional[int]]
    los: np.ndarray
    alloc: SlotAllocation
    reward: float


@dataclass
class RolloutResult:
    states: np.ndarray        # (T, d)
    raw_actions: np.ndarray   # (T, 2)
    exec_actions: np.ndarray  # (T, 2)
    logps: np.ndarray         # (T,)
    rewards: np.ndarray       # (T,)
    next_states: np.ndarray   # (T, d)
    dones: np.ndarray         # (T,) True only on infeasibility termination
    records: List[SlotRecord] = field(default_factory=list)
    terminated_infeasible: bool = False

    @property
    def episode_reward(self) -> float:
        return float(self.rewards.sum())


def _move_uav(uav_xy, action, urban_map: UrbanMap, altitude: float, rng):
    """Apply the displacement with boundary reflection and the same
    obstacle-rejection rule users follow; only prisms at or above the flight
    altitude can block."""

    def ok(prev, cand):
        if segment_blocked(cand, cand, urban_map, min_height=altitude):
            return False
        if (prev[0], prev[1]) == (cand[0], cand[1]):
            return True
        return not segment_blocked(prev, cand, urban_map, min_height=altitude)

    cand = reflect_into_bounds(np.asarray(uav_xy) + np.asarray(action), urban_map)
    if ok(uav_xy, cand):
        return cand
    length = float(np.hypot(action[0], action[1]))
    for _ in range(8):
        length *= 0.5
        theta = rng.uniform(0.0, 2.0 * math.pi)
        cand = reflect_into_bounds(
            (uav_xy[0] + length * math.cos(theta), uav_xy[1] + length * math.sin(theta)),
            urban_map)
        if ok(uav_xy, cand):
            return cand
    return np.array(uav_xy, dtype=float)


def rollout_episode(world, controller, n_slots: int,
                    allocator: str = "heuristic",
                    on_infeasible: str = "terminate",
                    uav_start=None) -> RolloutResult:
    """Run one episode: per slot observe, act, move, step users, allocate.

    world is a SimWorld; allocator picks the per-slot solver ("heuristic" or
    "dual"); on_infeasible "terminate" ends the episode with the penalty
    reward, "continue" records the slot and keeps going (aligned series).
    """
    if allocator not in ("heuristic", "dual"):
        raise ValueError(f"unknown allocator {allocator!r}")
    if on_infeasible not in ("terminate", "continue"):
        raise ValueError(f"unknown infeasibility mode {on_infeasible!r}")
    scn = world.scenario
    uav = np.asarray(uav_start, dtype=float) if uav_start is not None \
        else kmeans_init(world.users_xy(), world.urban_map)
    states, raws, execs, logps, rewards, nexts, dones = [], [], [], [], [], [], []
    records: List[SlotRecord] = []
    terminated = False

    for slot in range(1, n_slots + 1):
        state = build_state(uav, world.users_xy(), scn.x_max, scn.y_max)
        exec_a, raw_a, logp = controller.act(state, uav, world.users_xy(),
                                             world.rng_policy)
        uav = _move_uav(uav, exec_a, world.urban_map, scn.altitude, world.rng_policy)
        world.step_users()
        los, a_vec = world.link_budgets(uav)
        if allocator == "heuristic":
            alloc = allocate_slot(a_vec, scn.alloc)
        else:
            alloc = dual_ascent_baseline(a_vec, scn.alloc)
        infeasible = alloc.status == INFEASIBLE
        if infeasible and on_infeasible == "terminate":
            reward = -scn.reward.infeasible_penalty
            done = True
        else:
            reward = compute_reward(alloc.r, alloc.s, exec_a, scn.reward, scn.alloc)
            done = False
        next_state = build_state(uav, world.users_xy(), scn.x_max, scn.y_max)

        states.append(state)
        raws.append(raw_a)
        execs.append(exec_a)
        logps.append(logp)
        rewards.append(reward)
        nexts.append(next_state)
        dones.append(done)
        records.append(SlotRecord(slot, uav.copy(), world.users_xy().copy(),
                                  world.user_groups(), los, alloc, reward))
        if done:
            terminated = True
            break

    return RolloutResult(
        states=np.array(states), raw_actions=np.array(raws),
        exec_actions=np.array(execs), logps=np.array(logps),
        rewards=np.array(rewards), next_states=np.array(nexts),
        dones=np.array(dones, dtype=bool), records=records,
        terminated_infeasible=terminated)


# --------------------------------------------------------------------------
# PPO


def _gae(rewards, values, final_value, dones, gamma, lam):
    t_len = len(rewards)
    adv = np.zeros(t_len)
    last = 0.0
    for t in reversed(range(t_len)):
        next_v = values[t + 1] if t + 1 < t_len else final_value
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv


def prepare_batch(buffer: Sequence[RolloutResult], policy: PolicyParameters,
                  cfg: PpoConfig):
    """Concatenate rollouts into (states, raw actions, old logp, adv, returns).

    Rewards are rescaled by value_scale so the critic regresses O(1) targets;
    advantages are normalized afterwards, so the actor is unaffected.
    """
    all_s, all_a, all_lp, all_adv, all_ret = [], [], [], [], []
    for ep in buffer:
        values = policy.values(ep.states)
        final_value = 0.0 if ep.dones[-1] else float(policy.values(ep.next_states[-1:])[0])
        scaled_r = ep.rewards * cfg.value_scale
        adv = _gae(scaled_r, values, final_value, ep.dones, cfg.gamma, cfg.gae_lambda)
        all_s.append(ep.states)
        all_a.append(ep.raw_actions)
        all_lp.append(ep.logps)
        all_adv.append(adv)
        all_ret.append(adv + values)
    states = np.concatenate(all_s)
    actions = np.concatenate(all_a)
    old_logp = np.concatenate(all_lp)
    adv = np.concatenate(all_adv)
    returns = np.concatenate(all_ret)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return states, actions, old_logp, adv, returns


def ppo_loss_and_grads(policy: PolicyParameters, states, raw_actions, old_logp,
                       advantages, returns, cfg: PpoConfig):
    """Clipped-surrogate loss with value and entropy terms, plus exact grads."""
    n = states.shape[0]
    actor = policy.actor_layers()
    critic = policy.critic_layers()
    log_std = policy.params["log_std"]
    std = np.exp(log_std)

    mean, acts_a = forward(actor, states)
    z = (raw_actions - mean) / std
    logp = -0.5 * (z * z).sum(axis=1) - log_std.sum() - LN_2PI
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    take1 = surr1 <= surr2
    pi_loss = -np.where(take1, surr1, surr2).mean()

    values, acts_c = forward(critic, states)
    vdiff = values[:, 0] - returns
    v_loss = float((vdiff * vdiff).mean())

    entropy = float(log_std.sum() + 0.5 * 2 * (1.0 + LN_2PI))
    loss = float(pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy)

    # d loss / d logp: only the unclipped branch propagates.
    dlogp = np.where(take1, -advantages * ratio, 0.0) / n
    grad_mean = dlogp[:, None] * (z / std[None, :])
    actor_grads, _ = backward(actor, acts_a, grad_mean)
    grad_log_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - cfg.entropy_coef

    grad_v = (2.0 * cfg.value_coef / n) * vdiff[:, None]
    critic_grads, _ = backward(critic, acts_c, grad_v)

    grads: Dict[str, np.ndarray] = {}
    for i, (gw, gb) in enumerate(actor_grads):
        grads[f"actor_w{i}"] = gw
        grads[f"actor_b{i}"] = gb
    for i, (gw, gb) in enumerate(critic_grads):
        grads[f"critic_w{i}"] = gw
        grads[f"critic_b{i}"] = gb
    grads["log_std"] = grad_log_std
    approx_kl = float(((ratio - 1.0) - np.log(ratio)).mean())
    stats = {"pi_loss": float(pi_loss), "v_loss": v_loss, "entropy": entropy,
             "mean_ratio": float(ratio.mean()), "approx_kl": approx_kl}
    return loss, grads, stats


def ppo_update(buffer: Sequence[RolloutResult], policy: PolicyParameters,
               cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """One PPO update over collected rollouts; mutates the policy in place.

    A non-finite loss aborts the update, restores the previous parameters,
    and halves the learning rate.
    """
    states, actions, old_logp, adv, returns = prepare_batch(buffer, policy, cfg)
    n = states.shape[0]
    snap = policy.snapshot()
    last_stats: dict = {}
    stop = False
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            loss, grads, stats = ppo_loss_and_grads(
                policy, states[idx], actions[idx], old_logp[idx], adv[idx],
                returns[idx], cfg)
            if not math.isfinite(loss):
                policy.restore(snap)
                policy.learning_rate *= 0.5
                log.warning("non-finite PPO loss; update aborted, lr halved to %g",
                            policy.learning_rate)
                return {"aborted": True, "loss": loss}
            if stats["approx_kl"] > 1.5 * cfg.target_kl:
                stop = True  # policy moved far enough for this batch
                break
            policy.adam.step(policy.params, grads, policy.learning_rate)
            last_stats = stats
        if stop:
            break
    policy.step_count += 1
    last_stats["aborted"] = False
    last_stats["n_transitions"] = n
    return last_stats


def train(scenario, ppo: Optional[PpoConfig] = None, seed: Optional[int] = None,
          progress=None):
    """Algorithm-2 style training loop: fresh worlds per episode, PPO updates.

    Returns (policy, curve) where curve[i] is the mean episode reward of
    iteration i. Aborts after 3 consecutive failed updates.
    """
    from .world import SimWorld, TRAIN_EPISODE_BASE  # deferred, avoids a cycle
    from .seeding import TRAINING, stream

    cfg = ppo if ppo is not None else scenario.ppo
    master = scenario.seed if seed is None else seed
    rng_init = stream(master, TRAINING, 0)
    rng_update = stream(master, TRAINING, 1)
    policy = PolicyParameters.initialize(
        2 + 2 * scenario.n_users, cfg, scenario.v_max * scenario.slot_duration,
        rng_init)
    curve: List[float] = []
    consecutive_failures = 0
    for m in range(cfg.iterations):
        buffer = []
        for e in range(cfg.episodes_per_update):
            ep_seed = TRAIN_EPISODE_BASE + m * cfg.episodes_per_update + e
            world = SimWorld(scenario, episode_seed=ep_seed, seed=master)
            controller = TrainedController(policy, stochastic=True)
            buffer.append(rollout_episode(world, controller, scenario.n_slots))
        stats = ppo_update(buffer, policy, cfg, rng_update)
        if stats.get("aborted"):
            consecutive_failures += 1
            if consecutive_failures >= 3:
                raise RuntimeError("PPO update failed 3 times in a row")
        else:
            consecutive_failures = 0
        curve.append(float(np.mean([ep.episode_reward for ep in buffer])))
        if progress is not None:
            progress(m, curve[-1])
    return policy, curve
