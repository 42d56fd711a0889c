"""Per-step reward computation and the episode-level objective.

Every step reward decomposes into named components per agent and the total
is exactly the component sum, so traces can be audited line by line and an
independent re-derivation from (previous state, next state, events) must
reproduce the engine's numbers.

Timing conventions for the dense shaping terms (the reward table leaves
them open, so they are engine conventions):

* task proximity fires on a move (never while parked) and evaluates the
  post-step state: the agent's new position, its post-step carrying flag
  and the post-step pending set;
* distance reduction compares pre- and post-step distance to the target of
  the task carried *before* the step (so the final hop onto the target
  still earns it);
* progress fires on a move that strictly reduced distance to the pre-step
  objective: carried target if carrying, else the nearest pending source,
  else the nearest depot when payload is below maximum.

Shared penalties (a pending task expiring unclaimed, a patient death) are
split equally across the fleet so the fleet-total penalty does not scale
with fleet size; an in-transit expiry is charged in full to the carrier.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, TYPE_CHECKING

from .world import UrgencyClass, WorldState, manhattan

if TYPE_CHECKING:
    from .dynamics import Event

# Component names, in the canonical order used for totals and serialization.
DELIVERY = "delivery"
URGENCY_BONUS = "urgency_bonus"
EARLY_BONUS = "early_bonus"
EXPIRY_PENALTY = "expiry_penalty"
MORTALITY = "mortality"
PROXIMITY = "proximity"
PICKUP = "pickup"
CLAIM_BONUS = "claim_bonus"
DISTANCE_REDUCTION = "distance_reduction"
PROGRESS = "progress"
REFILL = "refill"
DEPOT_VISIT_LOW = "depot_visit_low"
MOVEMENT_COST = "movement_cost"
IDLE_PENALTY = "idle_penalty"

COMPONENTS = (
    DELIVERY, URGENCY_BONUS, EARLY_BONUS, EXPIRY_PENALTY, MORTALITY,
    PROXIMITY, PICKUP, CLAIM_BONUS, DISTANCE_REDUCTION, PROGRESS,
    REFILL, DEPOT_VISIT_LOW, MOVEMENT_COST, IDLE_PENALTY,
)

# Components that exist purely to guide learning; they are excluded from the
# episode objective, which measures outcomes only.
SHAPING_COMPONENTS = (
    PROXIMITY, PICKUP, CLAIM_BONUS, DISTANCE_REDUCTION, PROGRESS,
    REFILL, DEPOT_VISIT_LOW,
)


@dataclass
class RewardParams:
    """Reward table; all magnitudes overridable via the scenario config."""

    delivery_completion: float = 50.0
    critical_bonus: float = 20.0
    urgent_bonus: float = 10.0
    early_bonus_scale: float = 5.0
    deadline_violation: float = -15.0
    task_proximity_scale: float = 0.2
    pickup_success: float = 5.0
    urgent_claim: float = 3.0
    distance_reduction_scale: float = 0.3
    progress_step: float = 0.5
    refill_reward: float = 1.0
    depot_visit_low: float = 2.0
    movement_cost: float = -0.001
    idle_penalty: float = -0.01
    mortality_penalty: float = -20.0
    proximity_radius: int = 5


@dataclass
class RewardBreakdown:
    """Per-agent component map plus per-agent totals for one step."""

    components: list[dict[str, float]]
    totals: list[float]


def _totals(components: list[dict[str, float]]) -> list[float]:
    # Sum in canonical component order so totals are reproducible bitwise.
    return [sum(comp.get(name, 0.0) for name in COMPONENTS) for comp in components]


def compute_rewards(
    prev: WorldState,
    next_world: WorldState,
    events: list[Event],
    params: RewardParams,
) -> RewardBreakdown:
    """Compute each agent's reward for the step that mapped prev -> next."""
    from . import dynamics as dyn  # event types; deferred to avoid an import cycle

    n = len(prev.uavs)
    if len(next_world.uavs) != n or next_world.t != prev.t + 1:
        raise ValueError("events/worlds mismatch: next must be prev stepped once")

    comps: list[dict[str, float]] = [defaultdict(float) for _ in range(n)]
    expiry_mortality = prev.config.mortality_on_critical_expiry

    for ev in events:
        if isinstance(ev, dyn.Delivered):
            task = next_world.tasks[ev.task]
            comps[ev.uav][DELIVERY] += params.delivery_completion
            if task.urgency is UrgencyClass.CRITICAL:
                comps[ev.uav][URGENCY_BONUS] += params.critical_bonus
            elif task.urgency is UrgencyClass.URGENT:
                comps[ev.uav][URGENCY_BONUS] += params.urgent_bonus
            comps[ev.uav][EARLY_BONUS] += (
                params.early_bonus_scale * ev.slack_steps / task.window_steps
            )
        elif isinstance(ev, dyn.TaskExpired):
            if ev.was_in_transit:
                comps[ev.uav][EXPIRY_PENALTY] += params.deadline_violation
            else:
                share = params.deadline_violation / n
                for comp in comps:
                    comp[EXPIRY_PENALTY] += share
            if expiry_mortality and next_world.tasks[ev.task].urgency is UrgencyClass.CRITICAL:
                if ev.was_in_transit:
                    comps[ev.uav][MORTALITY] += params.mortality_penalty
                else:
                    share = params.mortality_penalty / n
                    for comp in comps:
                        comp[MORTALITY] += share
        elif isinstance(ev, dyn.PatientDeceased):
            if not expiry_mortality:
                share = params.mortality_penalty / n
                for comp in comps:
                    comp[MORTALITY] += share
        elif isinstance(ev, dyn.PickedUp):
            task = next_world.tasks[ev.task]
            comps[ev.uav][PICKUP] += params.pickup_success
            if task.urgency in (UrgencyClass.CRITICAL, UrgencyClass.URGENT):
                comps[ev.uav][CLAIM_BONUS] += params.urgent_claim
        elif isinstance(ev, dyn.Refilled):
            comps[ev.uav][REFILL] += params.refill_reward
        elif isinstance(ev, dyn.DepotVisitLow):
            comps[ev.uav][DEPOT_VISIT_LOW] += params.depot_visit_low
        elif isinstance(ev, dyn.Moved):
            comps[ev.uav][MOVEMENT_COST] += params.movement_cost
        elif isinstance(ev, dyn.Idled):
            comps[ev.uav][IDLE_PENALTY] += params.idle_penalty
        # Blocked, CommContact, TaskArrived, PatientArrived and PatientTreated
        # carry no reward.

    moved = {ev.uav for ev in events if isinstance(ev, dyn.Moved)}
    prev_pending = prev.pending_tasks()
    next_pending = next_world.pending_tasks()

    for i in range(n):
        pu, nu = prev.uavs[i], next_world.uavs[i]

        if i in moved and nu.carried is None and next_pending:
            d = min(manhattan(nu.pos, t.source) for t in next_pending)
            if d <= params.proximity_radius:
                comps[i][PROXIMITY] += (
                    params.task_proximity_scale * (1.0 - d / params.proximity_radius)
                )

        if pu.carried is not None:
            target = prev.hospitals[prev.tasks[pu.carried].target_hospital].pos
            gain = manhattan(pu.pos, target) - manhattan(nu.pos, target)
            if gain > 0:
                comps[i][DISTANCE_REDUCTION] += params.distance_reduction_scale * gain

        if i in moved:
            objective = _objective_cell(prev, pu, prev_pending)
            if objective is not None and manhattan(nu.pos, objective) < manhattan(pu.pos, objective):
                comps[i][PROGRESS] += params.progress_step

    flat = [dict(c) for c in comps]
    return RewardBreakdown(components=flat, totals=_totals(flat))


def _objective_cell(world: WorldState, uav, pending) -> tuple | None:
    """The cell the agent should currently be heading for, if any."""
    if uav.carried is not None:
        task = world.tasks[uav.carried]
        return world.hospitals[task.target_hospital].pos
    if pending:
        best = min(pending, key=lambda t: (manhattan(uav.pos, t.source), t.t_deadline, t.id))
        return best.source
    if uav.payload < world.config.payload_max:
        return min(world.depots, key=lambda c: manhattan(uav.pos, c))
    return None


def objective_j(component_totals: Mapping[str, float]) -> float:
    """Episode objective: clinical gains minus delay and inefficiency costs.

    Shaping components are excluded by construction, so the objective equals
    the accumulated total reward minus the shaping component sums.
    """
    r_deliveries = component_totals.get(DELIVERY, 0.0) + component_totals.get(EARLY_BONUS, 0.0)
    r_urgency = component_totals.get(URGENCY_BONUS, 0.0)
    c_delays = abs(component_totals.get(EXPIRY_PENALTY, 0.0)) + abs(component_totals.get(MORTALITY, 0.0))
    c_inefficiency = abs(component_totals.get(MOVEMENT_COST, 0.0)) + abs(component_totals.get(IDLE_PENALTY, 0.0))
    return r_deliveries + r_urgency - c_delays - c_inefficiency


def nonzero_components(comp: Mapping[str, float]) -> dict[str, float]:
    """Canonically ordered copy of ``comp`` without zero entries."""
    return {name: comp[name] for name in COMPONENTS if comp.get(name)}
