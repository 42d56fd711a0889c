"""Shared test utilities: synthetic scenario construction and world surgery."""

from __future__ import annotations

import random

from medfleet.dynamics import Action, step
from medfleet.scenario import (
    FacilityKind,
    FacilitySpec,
    ScenarioConfig,
    build_world,
    cell_to_latlon,
)
from medfleet.world import GridPos, GridSpec, Task, TaskStatus, UrgencyClass, WorldState


def make_config(
    *,
    width: int = 12,
    height: int = 12,
    depots=((2, 2),),
    hospitals=((9, 9),),
    fleet_size: int = 2,
    **overrides,
) -> ScenarioConfig:
    """Synthetic scenario with facilities placed on exact cells."""
    grid = GridSpec(width_cells=width, height_cells=height)
    facilities = []
    for i, cell in enumerate(depots):
        lat, lon = cell_to_latlon(grid, GridPos(*cell))
        facilities.append(FacilitySpec(f"depot_{i}", FacilityKind.DEPOT, lat, lon))
    for i, cell in enumerate(hospitals):
        lat, lon = cell_to_latlon(grid, GridPos(*cell))
        facilities.append(FacilitySpec(f"clinic_{i}", FacilityKind.HOSPITAL, lat, lon))
    return ScenarioConfig(grid=grid, facilities=facilities,
                          fleet_size=fleet_size, **overrides)


def quiet_config(**overrides) -> ScenarioConfig:
    """A config with no stochastic arrivals, for directed tests."""
    overrides.setdefault("arrival_rate", 0.0)
    overrides.setdefault("patient_arrival_rate", 0.0)
    return make_config(**overrides)


def add_pending_task(world: WorldState, source, hospital_id: int,
                     urgency: UrgencyClass, t_deadline: int,
                     t_created: int | None = None) -> Task:
    created = world.t if t_created is None else t_created
    assert t_deadline > created, "task window must be at least one step"
    task = Task(id=world.next_task_id, source=GridPos(*source),
                target_hospital=hospital_id, urgency=urgency,
                t_created=created, t_deadline=t_deadline)
    world.next_task_id += 1
    world.tasks[task.id] = task
    return task


def give_carried_task(world: WorldState, uav_id: int, hospital_id: int,
                      urgency: UrgencyClass, t_deadline: int,
                      t_created: int | None = None) -> Task:
    """Put a task directly into a UAV's hands (for directed tests)."""
    uav = world.uavs[uav_id]
    task = add_pending_task(world, uav.pos, hospital_id, urgency, t_deadline,
                            t_created=t_created)
    task.status = TaskStatus.IN_TRANSIT
    task.assigned_uav = uav_id
    task.t_pickup = task.t_created
    uav.carried = task.id
    return task


def random_actions(rng: random.Random, n: int) -> list[Action]:
    return [Action(rng.randrange(len(Action))) for _ in range(n)]


def run_random_steps(config: ScenarioConfig, seed: int, steps: int):
    """Drive the raw dynamics with random actions; yields (prev, next, events)."""
    world = build_world(config, seed)
    rng = random.Random(seed ^ 0x5EED)
    for _ in range(steps):
        if world.t >= config.max_steps:
            break
        actions = random_actions(rng, len(world.uavs))
        nxt, events = step(world, actions)
        yield world, nxt, events
        world = nxt
