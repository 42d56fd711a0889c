"""Dict-per-agent parallel environment over the delivery engine.

Mirrors the de-facto multi-agent RL environment convention (PettingZoo
parallel / RLlib multi-agent): ``reset``/``step`` exchange per-agent
dictionaries keyed ``uav_0`` .. ``uav_{N-1}``; the terminated/truncated
dictionaries carry an additional ``"__all__"`` flag. Observations are the
engine's 33-float vectors in [-1, 1]; actions are integers 0..4
(up, down, left, right, stay).

One handle owns one episode stream and is not safe for concurrent calls;
run parallel handles for parallel collection — they share no state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from medfleet.dynamics import Action
from medfleet.episode import EnvCore, LEARNER_DISCOUNT, reset as core_reset
from medfleet.observation import OBS_LAYOUT_VERSION, OBS_SIZE
from medfleet.scenario import ScenarioConfig


def _resolve(config: ScenarioConfig | str | Path) -> ScenarioConfig:
    if isinstance(config, ScenarioConfig):
        return config
    from medfleet.cli import resolve_config

    return resolve_config(str(config))


class ParallelEnv:
    """One episode stream exposed through per-agent dictionaries."""

    def __init__(self, config: ScenarioConfig | str | Path, seed: int = 0):
        self.config = _resolve(config)
        self._seed = seed
        self._core: EnvCore | None = None
        self.possible_agents = [f"uav_{i}" for i in range(self.config.fleet_size)]
        self.observation_size = OBS_SIZE
        self.observation_layout_version = OBS_LAYOUT_VERSION
        self.num_actions = len(Action)
        self.discount_hint = LEARNER_DISCOUNT

    @property
    def agents(self) -> list[str]:
        """Active agents: the whole fleet until the episode ends."""
        if self._core is None or self._core.done:
            return []
        return list(self.possible_agents)

    @property
    def core(self) -> EnvCore | None:
        """The underlying episode core (read-only use)."""
        return self._core

    def reset(self, seed: int | None = None) -> dict[str, np.ndarray]:
        if seed is not None:
            self._seed = seed
        self._core, obs = core_reset(self.config, self._seed)
        return dict(zip(self.possible_agents, obs))

    def step(self, actions: Mapping[str, int]):
        """Advance one step.

        Returns (observations, rewards, terminated, truncated, infos), each
        a per-agent dict; terminated/truncated also carry ``"__all__"``.
        Infos expose the per-agent reward component breakdown.
        """
        if self._core is None:
            raise RuntimeError("reset() must be called before step()")
        if self._core.done:
            raise RuntimeError("episode is over; call reset()")
        decoded = []
        for agent_id in self.possible_agents:
            if agent_id not in actions:
                raise KeyError(f"missing action for {agent_id}")
            value = int(actions[agent_id])
            if not 0 <= value < self.num_actions:
                raise ValueError(
                    f"invalid action {value} for {agent_id}: expected 0..{self.num_actions - 1}")
            decoded.append(Action(value))
        obs, rewards, terminated, truncated, info = self._core.step(decoded)
        breakdown = info["reward_breakdown"]
        obs_d = dict(zip(self.possible_agents, obs))
        rew_d = dict(zip(self.possible_agents, rewards))
        term_d = {agent_id: terminated for agent_id in self.possible_agents}
        term_d["__all__"] = terminated
        trunc_d = {agent_id: truncated for agent_id in self.possible_agents}
        trunc_d["__all__"] = truncated
        infos = {
            agent_id: {"reward_components": dict(breakdown.components[i])}
            for i, agent_id in enumerate(self.possible_agents)
        }
        return obs_d, rew_d, term_d, trunc_d, infos


def env_reset(handle: ParallelEnv, seed: int | None = None) -> dict[str, np.ndarray]:
    """Functional alias for :meth:`ParallelEnv.reset`."""
    return handle.reset(seed)


def env_step(handle: ParallelEnv, actions: Mapping[str, int]):
    """Functional alias for :meth:`ParallelEnv.step`."""
    return handle.step(actions)
