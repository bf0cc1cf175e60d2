"""UAV trajectory-planning simulator with QoS-aware resource allocation."""

__version__ = "0.1.0"

from .allocation import (AllocParams, SlotAllocation, allocate_slot,
                         concave_oracle, dual_ascent_baseline, min_power,
                         priority_metric, rebalance_bandwidth,
                         waterfill_residual)
from .channel import (ChannelConfig, LinkBudget, achievable_rate,
                      large_scale_gain, link_distance, sample_fading_power)
from .geometry import (Building, LosVerdict, UrbanMap, classify_link,
                       classify_links, point_in_any_building,
                       reflect_into_bounds, segment_footprint_overlap)
from .mobility import (GroupState, MobilityConfig, UserState,
                       apply_mode_transitions, candidate_groups,
                       step_group_member, step_individual,
                       step_reference_point, step_world)
from .policy import (CheckpointError, PolicyParameters, PpoConfig,
                     RewardWeights, act_online, baseline_policy, build_state,
                     clip_action, compute_reward, kmeans_init, ppo_update,
                     rollout_episode, train)
from .scenario import (ScenarioConfig, ScenarioError, from_dict,
                       load_scenario, preset, preset_names)
from .world import SimWorld

__all__ = [name for name in dir() if not name.startswith("_")]
