"""Fixed-layout per-agent observation vectors.

Layout version 1: 33 float64 entries, every value in [-1, 1]. Relative
coordinates are (other - own) normalized by grid width/height; ratios are
clipped to [0, 1]; absent blocks stay all-zero.

====== =====================================================================
index  meaning
====== =====================================================================
0..1   own position: x / width, y / height
2..10  three nearest known peers, (dx, dy, age / max_steps) each, ranked by
       L1 distance of the last-known position (ties by peer id); peers never
       contacted are excluded and missing slots are zero
11     payload / payload_max
12     carrying flag
13..16 closest pending task: source dx, dy; target dx, dy
17..19 closest pending task urgency one-hot (critical, urgent, standard)
20     closest pending task: time to deadline / its full window
21     closest pending task exists flag
22..23 carried task: target dx, dy
24     carried task: time to deadline / its full window
25     carried task exists flag
26..27 closest depot dx, dy
28..29 closest hospital dx, dy
30     active tasks (pending + in transit) / max_active_tasks, clipped
31     pending / active (0 when nothing is active)
32     t / max_steps
====== =====================================================================

The peer block reads only the UAV's peer table (positions as of the last
communication contact), never live peer state, so the vector honors partial
observability. The closest pending task is chosen by L1 distance to its
source, ties broken by earlier deadline then lower task id.

External consumers may rely on this layout bit-exactly for a given
``OBS_LAYOUT_VERSION``; the version is recorded in trace headers.
"""

from __future__ import annotations

import numpy as np

from .world import TaskStatus, UrgencyClass, WorldState, manhattan

OBS_SIZE = 33
OBS_LAYOUT_VERSION = 1

# Block boundaries, exported for tests and consumers.
OWN_POS = slice(0, 2)
PEERS = slice(2, 11)
PAYLOAD = 11
CARRYING_FLAG = 12
PENDING_BLOCK = slice(13, 22)
PENDING_EXISTS = 21
CARRIED_BLOCK = slice(22, 26)
CARRIED_EXISTS = 25
CLOSEST_DEPOT = slice(26, 28)
CLOSEST_HOSPITAL = slice(28, 30)
GLOBAL_BLOCK = slice(30, 33)

_URGENCY_SLOT = {
    UrgencyClass.CRITICAL: 0,
    UrgencyClass.URGENT: 1,
    UrgencyClass.STANDARD: 2,
}


def _clip01(value: float) -> float:
    return 0.0 if value < 0.0 else 1.0 if value > 1.0 else value


def _deadline_ratio(task, t: int) -> float:
    # Normalized by the task's own full window so 1.0 always means "the whole
    # window remains", comparable across urgency classes.
    return _clip01((task.t_deadline - t) / task.window_steps)


def build_observation(world: WorldState, uav_id: int) -> np.ndarray:
    """Observation vector for one agent; see the module docstring for layout."""
    if not 0 <= uav_id < len(world.uavs):
        raise KeyError(f"unknown uav id {uav_id}")
    cfg = world.config
    uav = world.uavs[uav_id]
    width = float(cfg.grid.width_cells)
    height = float(cfg.grid.height_cells)
    obs = np.zeros(OBS_SIZE, dtype=np.float64)

    obs[0] = uav.pos.x / width
    obs[1] = uav.pos.y / height

    peers = sorted(
        uav.peer_table.items(),
        key=lambda kv: (manhattan(kv[1][0], uav.pos), kv[0]),
    )
    for slot, (_, (pos, contact_t)) in enumerate(peers[:3]):
        base = 2 + 3 * slot
        obs[base] = (pos.x - uav.pos.x) / width
        obs[base + 1] = (pos.y - uav.pos.y) / height
        obs[base + 2] = _clip01((world.t - contact_t) / cfg.max_steps)

    obs[PAYLOAD] = uav.payload / cfg.payload_max
    obs[CARRYING_FLAG] = 1.0 if uav.carried is not None else 0.0

    pending = world.pending_tasks()
    if pending:
        task = min(pending, key=lambda t: (manhattan(uav.pos, t.source), t.t_deadline, t.id))
        target = world.hospitals[task.target_hospital].pos
        obs[13] = (task.source.x - uav.pos.x) / width
        obs[14] = (task.source.y - uav.pos.y) / height
        obs[15] = (target.x - uav.pos.x) / width
        obs[16] = (target.y - uav.pos.y) / height
        obs[17 + _URGENCY_SLOT[task.urgency]] = 1.0
        obs[20] = _deadline_ratio(task, world.t)
        obs[PENDING_EXISTS] = 1.0

    if uav.carried is not None:
        task = world.tasks[uav.carried]
        target = world.hospitals[task.target_hospital].pos
        obs[22] = (target.x - uav.pos.x) / width
        obs[23] = (target.y - uav.pos.y) / height
        obs[24] = _deadline_ratio(task, world.t)
        obs[CARRIED_EXISTS] = 1.0

    depot = min(world.depots, key=lambda c: manhattan(uav.pos, c))
    obs[26] = (depot.x - uav.pos.x) / width
    obs[27] = (depot.y - uav.pos.y) / height
    hospital = min(world.hospitals, key=lambda h: manhattan(uav.pos, h.pos))
    obs[28] = (hospital.pos.x - uav.pos.x) / width
    obs[29] = (hospital.pos.y - uav.pos.y) / height

    n_pending = len(pending)
    n_active = n_pending + sum(
        1 for t in world.tasks.values() if t.status is TaskStatus.IN_TRANSIT)
    obs[30] = _clip01(n_active / cfg.max_active_tasks)
    obs[31] = n_pending / n_active if n_active else 0.0
    obs[32] = _clip01(world.t / cfg.max_steps)
    return obs


def build_observations(world: WorldState) -> list[np.ndarray]:
    """Observation vectors for the whole fleet, in agent-id order."""
    return [build_observation(world, uav.id) for uav in world.uavs]
