"""Episode lifecycle: reset, the step loop, termination rules and metrics.

An episode *terminates* once the completed-task quota is met with nothing
left in flight (and, by default, nothing pending); it *truncates* at the
step horizon otherwise. The two are mutually exclusive and both end the
episode stream.

The engine is undiscounted; ``LEARNER_DISCOUNT`` is metadata for external
training stacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import dynamics
from .dynamics import Event, elapsed_mission_time_s
from .observation import build_observations
from .reward import COMPONENTS, RewardBreakdown, compute_rewards, objective_j
from .scenario import ScenarioConfig, build_world
from .world import TaskStatus, WorldState

LEARNER_DISCOUNT = 0.99


class EpisodeOverError(RuntimeError):
    """Raised when stepping an episode that already terminated or truncated."""


class PolicyError(RuntimeError):
    """A policy failed to produce actions; carries the step index."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"policy failed at step {step}: {cause!r}")
        self.step = step


@dataclass
class EpisodeCounters:
    """Cumulative event tallies; kept exactly in sync with the event log."""

    tasks_created: int = 0
    tasks_delivered: int = 0
    tasks_expired: int = 0
    patients_arrived: int = 0
    patients_treated: int = 0
    patients_deceased: int = 0
    pickups: int = 0
    moves: int = 0

    def update(self, events: list[Event]) -> None:
        for ev in events:
            if isinstance(ev, dynamics.Moved):
                self.moves += 1
            elif isinstance(ev, dynamics.PickedUp):
                self.pickups += 1
            elif isinstance(ev, dynamics.Delivered):
                self.tasks_delivered += 1
            elif isinstance(ev, dynamics.TaskArrived):
                self.tasks_created += 1
            elif isinstance(ev, dynamics.TaskExpired):
                self.tasks_expired += 1
            elif isinstance(ev, dynamics.PatientArrived):
                self.patients_arrived += 1
            elif isinstance(ev, dynamics.PatientTreated):
                self.patients_treated += 1
            elif isinstance(ev, dynamics.PatientDeceased):
                self.patients_deceased += 1

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


class EnvCore:
    """One episode stream over the dynamics engine.

    Owns the current world and accumulates per-agent returns, reward
    component totals and event counters.
    """

    def __init__(self, config: ScenarioConfig, seed: int):
        self.config = config
        self.seed = seed
        self.world: WorldState = build_world(config, seed)
        self.agent_returns: list[float] = [0.0] * config.fleet_size
        self.counters = EpisodeCounters()
        self.component_totals: dict[str, float] = {name: 0.0 for name in COMPONENTS}
        self.terminated = False
        self.truncated = False

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated

    def observations(self) -> list[np.ndarray]:
        return build_observations(self.world)

    def step(self, actions, build_obs: bool = True):
        """Advance one step.

        Returns (observations, per-agent rewards, terminated, truncated,
        info); info carries the step's events and the reward breakdown.
        ``build_obs=False`` skips observation construction for drivers that
        do not need it (privileged baselines, replay).
        """
        if self.done:
            raise EpisodeOverError("episode already finished")
        prev = self.world
        nxt, events = dynamics.step(prev, actions)
        breakdown = compute_rewards(prev, nxt, events, self.config.reward)
        self.world = nxt
        for i, r in enumerate(breakdown.totals):
            self.agent_returns[i] += r
        for comp in breakdown.components:
            for name, value in comp.items():
                self.component_totals[name] += value
        self.counters.update(events)
        self._update_done()
        obs = build_observations(nxt) if build_obs else None
        info = {"events": events, "reward_breakdown": breakdown}
        return obs, list(breakdown.totals), self.terminated, self.truncated, info

    def _update_done(self) -> None:
        cfg = self.config
        tasks = self.world.tasks.values()
        in_transit = any(t.status is TaskStatus.IN_TRANSIT for t in tasks)
        pending = any(t.status is TaskStatus.PENDING for t in tasks)
        quota_met = self.counters.tasks_delivered >= cfg.min_completed_tasks
        self.terminated = (
            quota_met and not in_transit
            and (not pending or not cfg.terminate_requires_pending_empty)
        )
        self.truncated = not self.terminated and self.world.t >= cfg.max_steps


def reset(config: ScenarioConfig, seed: int) -> tuple[EnvCore, list[np.ndarray]]:
    """Start a fresh episode; returns the core and the initial observations."""
    core = EnvCore(config, seed)
    return core, core.observations()


def env_step(core: EnvCore, actions):
    """Functional alias for :meth:`EnvCore.step`."""
    return core.step(actions)


@dataclass
class EpisodeResult:
    """Outcome metrics of one finished episode."""

    fleet_size: int
    policy: str
    seed: int
    steps: int
    mission_time_s: float
    success: bool
    terminated: bool
    truncated: bool
    agent_returns: list[float]
    fleet_return: float
    delivered: int
    delivered_on_time: int
    expired: int
    deceased: int
    objective: float
    component_totals: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> EpisodeResult:
        return cls(**data)


def run_episode(config: ScenarioConfig, seed: int, policy,
                trace_writer=None) -> EpisodeResult:
    """Run one full episode under ``policy``.

    Success means: terminated (quota met, nothing left to do) with zero task
    expirations and zero patient deaths.
    """
    core, obs = reset(config, seed)
    policy.reset(core.world)
    needs_obs = getattr(policy, "needs_observations", True)
    if not needs_obs:
        obs = None
    while not core.done:
        try:
            actions = policy.act(obs, core.world)
        except Exception as exc:
            raise PolicyError(core.world.t, exc) from exc
        obs, _, _, _, info = core.step(actions, build_obs=needs_obs)
        if trace_writer is not None:
            trace_writer.append_step(core, actions, info["events"],
                                     info["reward_breakdown"])
    return result_from_core(core, policy_name=getattr(policy, "name", "unknown"))


def result_from_core(core: EnvCore, policy_name: str) -> EpisodeResult:
    counters = core.counters
    success = (core.terminated and counters.tasks_expired == 0
               and counters.patients_deceased == 0)
    return EpisodeResult(
        fleet_size=core.config.fleet_size,
        policy=policy_name,
        seed=core.seed,
        steps=core.world.t,
        mission_time_s=elapsed_mission_time_s(core.world),
        success=success,
        terminated=core.terminated,
        truncated=core.truncated,
        agent_returns=list(core.agent_returns),
        fleet_return=sum(core.agent_returns),
        delivered=counters.tasks_delivered,
        delivered_on_time=counters.tasks_delivered,
        expired=counters.tasks_expired,
        deceased=counters.patients_deceased,
        objective=objective_j(core.component_totals),
        component_totals=dict(core.component_totals),
    )
