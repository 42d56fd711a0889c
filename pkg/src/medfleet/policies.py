"""Scripted baseline policies.

These baselines receive a privileged read-only view of the full world: they
are evaluation references, not partially observable policies. Learned
policies must act on observation vectors alone — comparisons against the
scripted baselines are only fair with that caveat stated.

A policy instance serves one episode at a time; ``reset`` is called at each
episode start. Policies that set ``needs_observations = False`` let the
harness skip observation construction entirely.
"""

from __future__ import annotations

import random

from .dynamics import Action, step_toward
from .world import GridPos, WorldState, manhattan


class Policy:
    """Action source contract: one legal action per agent, every step."""

    name = "policy"
    needs_observations = True

    def reset(self, world: WorldState) -> None:
        """Called once with the initial world of a fresh episode."""

    def act(self, observations, world: WorldState) -> list[Action]:
        raise NotImplementedError


class RandomPolicy(Policy):
    """Uniform over the five actions, from a private seeded RNG."""

    name = "random"
    needs_observations = False

    def __init__(self, seed: int = 0):
        self._seed = seed
        self._rng = random.Random(seed)

    def reset(self, world: WorldState) -> None:
        self._rng = random.Random(self._seed)

    def act(self, observations, world: WorldState) -> list[Action]:
        return [Action(self._rng.randrange(len(Action))) for _ in world.uavs]


def _nearest(cells, pos: GridPos) -> GridPos:
    return min(cells, key=lambda c: manhattan(pos, c))


class GreedyPolicy(Policy):
    """Per-agent greedy rules, evaluated independently for every UAV:

    carrying -> move toward the target (x axis first on ties);
    empty payload -> head to the nearest depot;
    pending tasks exist -> head to the best task's source, ranked by urgency,
    then deadline, then distance, then id;
    otherwise -> nearest depot, staying if already there.
    """

    name = "greedy"
    needs_observations = False

    def act(self, observations, world: WorldState) -> list[Action]:
        pending = world.pending_tasks()
        return [self._act_one(uav, pending, world) for uav in world.uavs]

    @staticmethod
    def _act_one(uav, pending, world: WorldState) -> Action:
        if uav.carried is not None:
            task = world.tasks[uav.carried]
            return step_toward(uav.pos, world.hospitals[task.target_hospital].pos)
        if uav.payload == 0:
            return step_toward(uav.pos, _nearest(world.depots, uav.pos))
        if pending:
            best = min(pending, key=lambda t: (
                -t.urgency.priority, t.t_deadline, manhattan(uav.pos, t.source), t.id))
            return step_toward(uav.pos, best.source)
        return step_toward(uav.pos, _nearest(world.depots, uav.pos))


class AuctionPolicy(Policy):
    """Centralized assignment baseline: one greedy auction round per step.

    Pending tasks are sorted by urgency then deadline; each is assigned to
    the nearest not-yet-assigned free UAV (payload >= 1) whose round trip
    fits the remaining slack. Assigned UAVs path greedily to their source;
    everyone else follows the greedy depot logic.
    """

    name = "auction"
    needs_observations = False

    def act(self, observations, world: WorldState) -> list[Action]:
        assignments = self._assign(world)
        actions = []
        for uav in world.uavs:
            if uav.carried is not None:
                task = world.tasks[uav.carried]
                actions.append(step_toward(
                    uav.pos, world.hospitals[task.target_hospital].pos))
            elif uav.id in assignments:
                actions.append(step_toward(uav.pos, assignments[uav.id]))
            else:
                actions.append(step_toward(uav.pos, _nearest(world.depots, uav.pos)))
        return actions

    @staticmethod
    def _assign(world: WorldState) -> dict[int, GridPos]:
        free = [u for u in world.uavs if u.carried is None and u.payload >= 1]
        order = sorted(world.pending_tasks(),
                       key=lambda t: (-t.urgency.priority, t.t_deadline, t.id))
        out: dict[int, GridPos] = {}
        for task in order:
            slack = task.t_deadline - world.t
            leg = manhattan(task.source, world.hospitals[task.target_hospital].pos)
            best = None
            best_key = None
            for uav in free:
                if uav.id in out:
                    continue
                approach = manhattan(uav.pos, task.source)
                if approach + leg > slack:
                    continue  # infeasible for this UAV; task may stay unassigned
                key = (approach, uav.id)
                if best is None or key < best_key:
                    best, best_key = uav, key
            if best is not None:
                out[best.id] = task.source
        return out


POLICY_NAMES = ("random", "greedy", "auction", "external")


def make_policy(name: str, seed: int = 0) -> Policy:
    """Instantiate a scripted policy by CLI name."""
    if name == "random":
        return RandomPolicy(seed)
    if name == "greedy":
        return GreedyPolicy()
    if name == "auction":
        return AuctionPolicy()
    if name == "external":
        raise ValueError(
            "external policies attach through the bindings package "
            "(medfleet-bindings); they cannot run from the core engine")
    raise ValueError(f"unknown policy {name!r}")
