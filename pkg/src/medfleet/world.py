"""Core state model and grid geometry shared by the whole engine.

Grid convention: integer cell coordinates with (0, 0) at the south-west
corner, x growing east and y growing north. Movement is 4-connected, so the
L1 (Manhattan) metric is the canonical notion of distance everywhere
("nearest depot", "closer to target", ...).

``WorldState`` is a value: ``clone()`` produces a fully independent copy,
including the RNG state, so a stepped world never aliases its predecessor.
All mutation happens inside the dynamics engine, which owns one state at a
time; every type here is safe to send between threads.
"""

from __future__ import annotations

import enum
import functools
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

if TYPE_CHECKING:
    from .scenario import ScenarioConfig


class GridPos(NamedTuple):
    """One cell of the grid."""

    x: int
    y: int


@dataclass(frozen=True)
class GridSpec:
    """Rectangular cell grid; the geographic origin sits at the grid center."""

    width_cells: int = 30
    height_cells: int = 30
    cell_size_m: float = 400.0
    origin_lat: float = 50.8466
    origin_lon: float = 4.3528

    def in_bounds(self, pos: GridPos) -> bool:
        return 0 <= pos.x < self.width_cells and 0 <= pos.y < self.height_cells


@functools.total_ordering
class UrgencyClass(enum.Enum):
    """Urgency of a task or patient; ordering follows clinical priority."""

    CRITICAL = "critical"
    URGENT = "urgent"
    STANDARD = "standard"

    @property
    def priority(self) -> int:
        return _PRIORITY[self]

    def __lt__(self, other: object):
        if not isinstance(other, UrgencyClass):
            return NotImplemented
        return self.priority < other.priority


_PRIORITY = {
    UrgencyClass.STANDARD: 0,
    UrgencyClass.URGENT: 1,
    UrgencyClass.CRITICAL: 2,
}

# Fixed order used for sampling, one-hot encodings and serialization.
URGENCY_ORDER = (UrgencyClass.CRITICAL, UrgencyClass.URGENT, UrgencyClass.STANDARD)


class TaskStatus(enum.Enum):
    PENDING = "pending"
    IN_TRANSIT = "in_transit"
    DELIVERED = "delivered"
    EXPIRED = "expired"


class PatientStatus(enum.Enum):
    WAITING = "waiting"
    TREATED = "treated"
    DECEASED = "deceased"


@dataclass(eq=False)
class Task:
    """One delivery request.

    The task store is append-only and terminal statuses are kept, so every
    reward and metric remains auditable after the episode.
    Legal transitions: pending -> in_transit -> delivered, pending -> expired,
    in_transit -> expired; delivered/expired are terminal.
    """

    id: int
    source: GridPos
    target_hospital: int
    urgency: UrgencyClass
    t_created: int
    t_deadline: int
    status: TaskStatus = TaskStatus.PENDING
    assigned_uav: int | None = None
    t_pickup: int | None = None
    t_delivered: int | None = None
    t_expired: int | None = None

    @property
    def window_steps(self) -> int:
        """Full delivery window granted at creation."""
        return self.t_deadline - self.t_created

    def clone(self) -> Task:
        return Task(
            self.id, self.source, self.target_hospital, self.urgency,
            self.t_created, self.t_deadline, self.status,
            self.assigned_uav, self.t_pickup, self.t_delivered, self.t_expired,
        )


@dataclass(eq=False)
class UavState:
    """State of one UAV.

    The energy ledger is ``energy_spent_wh``, recomputed as the per-action
    cost times ``actions_paid`` on every charge (a single product, never an
    accumulation), so it is exact in floating point; ``energy_wh`` is the
    remaining charge derived from it.
    ``peer_table`` maps peer id -> (last known position, step of last contact)
    and is the only peer information observations may use.
    """

    id: int
    pos: GridPos
    payload: int
    home: GridPos
    energy_wh: float
    carried: int | None = None
    actions_paid: int = 0
    energy_spent_wh: float = 0.0
    peer_table: dict[int, tuple[GridPos, int]] = field(default_factory=dict)

    def clone(self) -> UavState:
        return UavState(
            self.id, self.pos, self.payload, self.home, self.energy_wh,
            self.carried, self.actions_paid, self.energy_spent_wh,
            dict(self.peer_table),
        )


@dataclass(eq=False)
class Patient:
    """A patient waiting for supplies at a hospital."""

    id: int
    hospital: int
    t_arrival: int
    deadline: int
    urgency: UrgencyClass
    status: PatientStatus = PatientStatus.WAITING
    t_treated: int | None = None
    t_deceased: int | None = None

    def clone(self) -> Patient:
        return Patient(
            self.id, self.hospital, self.t_arrival, self.deadline,
            self.urgency, self.status, self.t_treated, self.t_deceased,
        )


@dataclass(eq=False)
class HospitalState:
    """A clinic: consumes inventory, accumulates patients, receives deliveries."""

    id: int
    pos: GridPos
    inventory: float
    patients: list[Patient] = field(default_factory=list)

    def waiting_patients(self) -> list[Patient]:
        return [p for p in self.patients if p.status is PatientStatus.WAITING]

    def clone(self) -> HospitalState:
        return HospitalState(self.id, self.pos, self.inventory,
                             [p.clone() for p in self.patients])


@dataclass(eq=False)
class WorldState:
    """Full simulator state: clock, UAVs, facilities, tasks, patients, RNG."""

    config: ScenarioConfig
    t: int
    uavs: list[UavState]
    depots: list[GridPos]
    hospitals: list[HospitalState]
    tasks: dict[int, Task]
    next_task_id: int
    next_patient_id: int
    rng: random.Random
    depot_cell_set: frozenset[GridPos]

    def clone(self) -> WorldState:
        rng = random.Random()
        rng.setstate(self.rng.getstate())
        return WorldState(
            config=self.config,
            t=self.t,
            uavs=[u.clone() for u in self.uavs],
            depots=self.depots,
            hospitals=[h.clone() for h in self.hospitals],
            tasks={tid: task.clone() for tid, task in self.tasks.items()},
            next_task_id=self.next_task_id,
            next_patient_id=self.next_patient_id,
            rng=rng,
            depot_cell_set=self.depot_cell_set,
        )

    def pending_tasks(self) -> list[Task]:
        return [t for t in self.tasks.values() if t.status is TaskStatus.PENDING]

    def in_transit_tasks(self) -> list[Task]:
        return [t for t in self.tasks.values() if t.status is TaskStatus.IN_TRANSIT]


def manhattan(a: GridPos, b: GridPos) -> int:
    """L1 distance in cells."""
    return abs(a.x - b.x) + abs(a.y - b.y)


# Neighbor offsets in the fixed up, down, left, right order.
_NEIGHBOR_OFFSETS = ((0, 1), (0, -1), (-1, 0), (1, 0))


def neighbors(pos: GridPos, grid: GridSpec) -> list[GridPos]:
    """In-bounds 4-neighborhood of ``pos``, in fixed up/down/left/right order."""
    out = []
    for dx, dy in _NEIGHBOR_OFFSETS:
        q = GridPos(pos.x + dx, pos.y + dy)
        if grid.in_bounds(q):
            out.append(q)
    return out


def step_duration_s(config: ScenarioConfig) -> float:
    """Mission seconds consumed by one simulation step (one cell hop)."""
    return config.grid.cell_size_m / config.uav_speed_mps
