"""Single-step transition function of the simulator.

One call to :func:`step` advances the world by one tick through six phases
in a fixed order:

1. movement — each UAV that can afford the energy cost executes its action;
   out-of-bounds moves become stays and are flagged ``blocked``; staying off
   a depot is flagged ``idled``;
2. communication — every UAV pair within comm range (Euclidean meters
   between cell centers, so at the 400 m defaults only co-located and
   edge-adjacent UAVs are in range) exchanges peer tables, keeping the
   fresher entry per peer;
3. automatic handling — per UAV in ascending id: refill, then delivery,
   then pickup; pickup and delivery each cost one energy action and add
   handling time to the mission clock;
4. hospital update — inventory consumption, then patient arrival, treatment
   and mortality per hospital in ascending id;
5. expiration — every non-terminal task whose deadline has arrived expires;
6. arrival — with the configured probability one new task spawns, unless
   the pending cap suppresses it.

The fixed phase order and fixed iteration orders inside each phase make
contention deterministic: two UAVs racing for one task always resolve the
same way. Every state change is mirrored by an event record; the event list
of a step is the single source of truth for rewards, counters and traces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import ClassVar, Sequence, Union

from .world import (
    GridPos,
    Patient,
    PatientStatus,
    Task,
    TaskStatus,
    URGENCY_ORDER,
    UrgencyClass,
    WorldState,
    manhattan,
    step_duration_s,
)


class Action(enum.IntEnum):
    """Per-UAV discrete actions; integer values are the wire encoding."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


ACTION_DELTAS = {
    Action.UP: (0, 1),
    Action.DOWN: (0, -1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.STAY: (0, 0),
}


class StepError(RuntimeError):
    """Raised when stepping a world past its horizon or with bad actions."""


# --- event records -----------------------------------------------------------


@dataclass(frozen=True)
class Moved:
    kind: ClassVar[str] = "moved"
    uav: int
    src: GridPos
    dst: GridPos


@dataclass(frozen=True)
class Blocked:
    kind: ClassVar[str] = "blocked"
    uav: int


@dataclass(frozen=True)
class Idled:
    kind: ClassVar[str] = "idled"
    uav: int


@dataclass(frozen=True)
class CommContact:
    kind: ClassVar[str] = "comm_contact"
    uav_a: int
    uav_b: int


@dataclass(frozen=True)
class Refilled:
    kind: ClassVar[str] = "refilled"
    uav: int
    amount: int


@dataclass(frozen=True)
class DepotVisitLow:
    kind: ClassVar[str] = "depot_visit_low"
    uav: int


@dataclass(frozen=True)
class PickedUp:
    kind: ClassVar[str] = "picked_up"
    uav: int
    task: int


@dataclass(frozen=True)
class Delivered:
    kind: ClassVar[str] = "delivered"
    uav: int
    task: int
    slack_steps: int


@dataclass(frozen=True)
class TaskArrived:
    kind: ClassVar[str] = "task_arrived"
    task: int


@dataclass(frozen=True)
class TaskExpired:
    kind: ClassVar[str] = "task_expired"
    task: int
    was_in_transit: bool
    uav: int | None


@dataclass(frozen=True)
class PatientArrived:
    kind: ClassVar[str] = "patient_arrived"
    patient: int
    hospital: int


@dataclass(frozen=True)
class PatientTreated:
    kind: ClassVar[str] = "patient_treated"
    patient: int
    hospital: int


@dataclass(frozen=True)
class PatientDeceased:
    kind: ClassVar[str] = "patient_deceased"
    patient: int
    hospital: int


Event = Union[
    Moved, Blocked, Idled, CommContact, Refilled, DepotVisitLow,
    PickedUp, Delivered, TaskArrived, TaskExpired,
    PatientArrived, PatientTreated, PatientDeceased,
]

StepEvents = list


def step(world: WorldState, actions: Sequence[Action | int]) -> tuple[WorldState, list[Event]]:
    """Advance ``world`` by one tick. Pure: returns a new state, the input
    is untouched. Identical (world, actions) give identical outputs."""
    cfg = world.config
    if world.t >= cfg.max_steps:
        raise StepError(f"world already at max_steps={cfg.max_steps}")
    if len(actions) != len(world.uavs):
        raise StepError(f"expected {len(world.uavs)} actions, got {len(actions)}")
    acts = [Action(a) for a in actions]

    w = world.clone()
    t_next = w.t + 1
    events: list[Event] = []

    arrived = _phase_move(w, acts, events)
    _phase_communicate(w, t_next, events)
    _phase_automatic(w, t_next, arrived, events)
    _phase_hospitals(w, t_next, events)
    _phase_expire(w, t_next, events)
    _phase_arrival(w, t_next, events)

    w.t = t_next
    return w, events


def step_toward(src: GridPos, dst: GridPos) -> Action:
    """Greedy one-cell move toward ``dst``, x axis first on ties; STAY at dst."""
    if dst.x > src.x:
        return Action.RIGHT
    if dst.x < src.x:
        return Action.LEFT
    if dst.y > src.y:
        return Action.UP
    if dst.y < src.y:
        return Action.DOWN
    return Action.STAY


def sample_urgency(rng, mix: dict[UrgencyClass, float]) -> UrgencyClass:
    """Draw one urgency class from ``mix`` (cumulative over the fixed order)."""
    u = rng.random()
    acc = 0.0
    for cls in URGENCY_ORDER:
        acc += mix[cls]
        if u < acc:
            return cls
    return UrgencyClass.STANDARD


def elapsed_mission_time_s(world: WorldState) -> float:
    """Mission seconds so far: flight time plus handling time per pickup and
    delivery. Handling is accounted as added time, not extra steps, so the
    step clock and the mission clock stay commensurable."""
    pickups = sum(1 for t in world.tasks.values() if t.t_pickup is not None)
    deliveries = sum(1 for t in world.tasks.values() if t.status is TaskStatus.DELIVERED)
    return world.t * step_duration_s(world.config) + \
        world.config.handling_time_s * (pickups + deliveries)


# --- phases ------------------------------------------------------------------


def _pay_energy(uav, cfg) -> None:
    # The spent ledger is a single product of the counter (never a running
    # sum), so "spent == per_action x actions" holds exactly in floats.
    uav.actions_paid += 1
    uav.energy_spent_wh = cfg.energy_per_action_wh * uav.actions_paid
    uav.energy_wh = cfg.battery_capacity_wh - uav.energy_spent_wh


def _can_afford(uav, cfg) -> bool:
    return uav.energy_wh >= cfg.energy_per_action_wh


def _phase_move(w: WorldState, acts: list[Action], events: list[Event]) -> set[int]:
    cfg = w.config
    arrived: set[int] = set()
    for uav, action in zip(w.uavs, acts):
        if cfg.return_home_enforced:
            action = _override_return_home(w, uav, action)
        if action is not Action.STAY and not _can_afford(uav, cfg):
            action = Action.STAY  # flat battery: the UAV can only hold position
        if action is Action.STAY:
            if uav.pos not in w.depot_cell_set:
                events.append(Idled(uav.id))
            continue
        dx, dy = ACTION_DELTAS[action]
        dst = GridPos(uav.pos.x + dx, uav.pos.y + dy)
        if not cfg.grid.in_bounds(dst):
            events.append(Blocked(uav.id))
            continue
        src = uav.pos
        uav.pos = dst
        _pay_energy(uav, cfg)
        arrived.add(uav.id)
        events.append(Moved(uav.id, src, dst))
    return arrived


def _override_return_home(w: WorldState, uav, action: Action) -> Action:
    remaining = w.config.max_steps - w.t
    if remaining > manhattan(uav.pos, uav.home):
        return action
    return step_toward(uav.pos, uav.home)


def _phase_communicate(w: WorldState, t_next: int, events: list[Event]) -> None:
    cfg = w.config
    cell = cfg.grid.cell_size_m
    limit_sq = cfg.comm_range_m * cfg.comm_range_m
    n = len(w.uavs)
    for i in range(n):
        a = w.uavs[i]
        for j in range(i + 1, n):
            b = w.uavs[j]
            dx = (a.pos.x - b.pos.x) * cell
            dy = (a.pos.y - b.pos.y) * cell
            if dx * dx + dy * dy > limit_sq:
                continue
            events.append(CommContact(a.id, b.id))
            a.peer_table[b.id] = (b.pos, t_next)
            b.peer_table[a.id] = (a.pos, t_next)
            # Merge third-party knowledge, keeping the fresher entry. Pairs
            # are processed in ascending order with immediate effect, so
            # information can relay through intermediaries within one step.
            for src, dst in ((a, b), (b, a)):
                for peer_id, entry in src.peer_table.items():
                    if peer_id == dst.id:
                        continue
                    cur = dst.peer_table.get(peer_id)
                    if cur is None or cur[1] < entry[1]:
                        dst.peer_table[peer_id] = entry


def _phase_automatic(w: WorldState, t_next: int, arrived: set[int],
                     events: list[Event]) -> None:
    reservations = _reserve_tasks(w) if w.config.exclusive_claims else None
    for uav in w.uavs:
        _auto_refill(w, uav, arrived, events)
        _auto_deliver(w, uav, t_next, events)
        _auto_pickup(w, uav, t_next, reservations, events)


def _auto_refill(w: WorldState, uav, arrived: set[int], events: list[Event]) -> None:
    cfg = w.config
    if uav.pos not in w.depot_cell_set or uav.payload >= cfg.payload_max:
        return
    old = uav.payload
    uav.payload = cfg.payload_max
    events.append(Refilled(uav.id, cfg.payload_max - old))
    # Bonus only on the arrival step, not on repeats while parked.
    if old <= cfg.payload_max / 2 and uav.id in arrived:
        events.append(DepotVisitLow(uav.id))


def _auto_deliver(w: WorldState, uav, t_next: int, events: list[Event]) -> None:
    cfg = w.config
    if uav.carried is None:
        return
    task = w.tasks[uav.carried]
    target = w.hospitals[task.target_hospital]
    if uav.pos != target.pos or t_next > task.t_deadline:
        return  # late arrivals never deliver; the task expires in phase 5
    if not _can_afford(uav, cfg):
        return
    task.status = TaskStatus.DELIVERED
    task.t_delivered = t_next
    uav.carried = None
    target.inventory += 1.0  # one task carries exactly one inventory unit
    _pay_energy(uav, cfg)
    events.append(Delivered(uav.id, task.id, task.t_deadline - t_next))


def _auto_pickup(w: WorldState, uav, t_next: int,
                 reservations: dict[int, int] | None, events: list[Event]) -> None:
    cfg = w.config
    if uav.carried is not None or uav.payload < 1 or not _can_afford(uav, cfg):
        return
    best: Task | None = None
    best_key: tuple | None = None
    for task in w.tasks.values():
        if task.status is not TaskStatus.PENDING or task.source != uav.pos:
            continue
        if reservations is not None and reservations.get(task.id) != uav.id:
            continue
        key = (-task.urgency.priority, task.t_deadline, task.id)
        if best is None or key < best_key:
            best, best_key = task, key
    if best is None:
        return
    best.status = TaskStatus.IN_TRANSIT
    best.assigned_uav = uav.id
    best.t_pickup = t_next
    uav.carried = best.id
    uav.payload -= 1
    _pay_energy(uav, cfg)
    events.append(PickedUp(uav.id, best.id))


def _reserve_tasks(w: WorldState) -> dict[int, int]:
    """Exclusive-claim variant: each free UAV, in ascending id order, reserves
    the best unreserved pending task; pickups then honor reservations."""
    reserved: dict[int, int] = {}
    pending = w.pending_tasks()
    for uav in w.uavs:
        if uav.carried is not None or uav.payload < 1:
            continue
        best: Task | None = None
        best_key: tuple | None = None
        for task in pending:
            if task.id in reserved:
                continue
            key = (-task.urgency.priority, task.t_deadline,
                   manhattan(uav.pos, task.source), task.id)
            if best is None or key < best_key:
                best, best_key = task, key
        if best is not None:
            reserved[best.id] = uav.id
    return reserved


def consume_inventory(inventory: float, waiting_count: int, rate: float) -> float:
    """One step of clinical consumption: load scales with the waiting queue,
    and stock never goes negative."""
    return max(0.0, inventory - rate * (1.0 + waiting_count / 10.0))


def _phase_hospitals(w: WorldState, t_next: int, events: list[Event]) -> None:
    cfg = w.config
    for hosp in w.hospitals:
        # Consumption uses the waiting count before this step's arrivals and
        # treatments; same-step deliveries (phase 3) are already in stock.
        waiting = hosp.waiting_patients()
        hosp.inventory = consume_inventory(
            hosp.inventory, len(waiting), cfg.consumption_rate)
        if w.rng.random() < cfg.patient_arrival_rate:
            urgency = sample_urgency(w.rng, cfg.urgency_mix)
            patient = Patient(
                id=w.next_patient_id, hospital=hosp.id, t_arrival=t_next,
                deadline=t_next + cfg.deadline_steps[urgency], urgency=urgency,
            )
            w.next_patient_id += 1
            hosp.patients.append(patient)
            waiting.append(patient)
            events.append(PatientArrived(patient.id, hosp.id))
        for patient in waiting:
            if hosp.inventory < 1.0:
                break
            hosp.inventory -= 1.0
            patient.status = PatientStatus.TREATED
            patient.t_treated = t_next
            events.append(PatientTreated(patient.id, hosp.id))
        for patient in waiting:
            if patient.status is PatientStatus.WAITING and patient.deadline <= t_next:
                patient.status = PatientStatus.DECEASED
                patient.t_deceased = t_next
                events.append(PatientDeceased(patient.id, hosp.id))


def _phase_expire(w: WorldState, t_next: int, events: list[Event]) -> None:
    for task in w.tasks.values():
        if task.status in (TaskStatus.DELIVERED, TaskStatus.EXPIRED):
            continue
        if task.t_deadline > t_next:
            continue
        was_in_transit = task.status is TaskStatus.IN_TRANSIT
        carrier = task.assigned_uav if was_in_transit else None
        if carrier is not None:
            # The package is written off with the task; the payload unit
            # spent at pickup is not restored.
            w.uavs[carrier].carried = None
        task.status = TaskStatus.EXPIRED
        task.t_expired = t_next
        events.append(TaskExpired(task.id, was_in_transit, carrier))


def _phase_arrival(w: WorldState, t_next: int, events: list[Event]) -> None:
    cfg = w.config
    if w.rng.random() >= cfg.arrival_rate:
        return
    if len(w.pending_tasks()) >= cfg.max_active_tasks:
        return  # the cap suppresses the arrival instead of queueing it
    source = w.depots[w.rng.randrange(len(w.depots))]
    hospital = w.rng.randrange(len(w.hospitals))
    urgency = sample_urgency(w.rng, cfg.urgency_mix)
    task = Task(
        id=w.next_task_id, source=source, target_hospital=hospital,
        urgency=urgency, t_created=t_next,
        t_deadline=t_next + cfg.deadline_steps[urgency],
    )
    w.next_task_id += 1
    w.tasks[task.id] = task
    events.append(TaskArrived(task.id))
