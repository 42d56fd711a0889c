"""Deterministic, seedable multi-agent grid simulator for time-critical UAV
medical-supply delivery: stochastic urgency-classed tasks, hospital
inventory and patient dynamics, payload/energy/communication constraints,
shaped rewards, scripted baselines and an evaluation harness."""

from ._version import __version__
from .dynamics import Action, elapsed_mission_time_s, step
from .episode import (
    EnvCore,
    EpisodeResult,
    LEARNER_DISCOUNT,
    env_step,
    reset,
    run_episode,
)
from .observation import OBS_LAYOUT_VERSION, OBS_SIZE, build_observation
from .policies import AuctionPolicy, GreedyPolicy, RandomPolicy, make_policy
from .reward import RewardParams, compute_rewards, objective_j
from .scenario import (
    FacilityKind,
    FacilitySpec,
    ScenarioConfig,
    ScenarioError,
    build_world,
    latlon_to_cell,
    load_scenario,
)
from .trace import TraceWriter, replay_verify, summarize, write_trace
from .world import (
    GridPos,
    GridSpec,
    Task,
    TaskStatus,
    UavState,
    UrgencyClass,
    WorldState,
    manhattan,
    neighbors,
    step_duration_s,
)

__all__ = [
    "__version__",
    "Action", "elapsed_mission_time_s", "step",
    "EnvCore", "EpisodeResult", "LEARNER_DISCOUNT", "env_step", "reset",
    "run_episode",
    "OBS_LAYOUT_VERSION", "OBS_SIZE", "build_observation",
    "AuctionPolicy", "GreedyPolicy", "RandomPolicy", "make_policy",
    "RewardParams", "compute_rewards", "objective_j",
    "FacilityKind", "FacilitySpec", "ScenarioConfig", "ScenarioError",
    "build_world", "latlon_to_cell", "load_scenario",
    "TraceWriter", "replay_verify", "summarize", "write_trace",
    "GridPos", "GridSpec", "Task", "TaskStatus", "UavState", "UrgencyClass",
    "WorldState", "manhattan", "neighbors", "step_duration_s",
]
