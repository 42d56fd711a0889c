"""Episode tracing, bit-exact replay verification and sweep summaries.

Trace format (schema version 1): line-delimited JSON. The first line is a
header record carrying the schema and engine versions, the observation
layout version, the config content hash and the seed. Every following line
is one step record:

    {"record": "step", "t": <step>,
     "uavs": [{"pos": [x, y], "payload": n, "carried": id|null,
               "energy_wh": f, "action": 0..4,
               "reward": {"total": f, "components": {...}}}, ...],
     "events": [{"kind": "...", ...}, ...],
     "hospitals": [{"inventory": f, "waiting": n, "treated": n,
                    "deceased": n}, ...],
     "counters": {...}}

Records are written compactly with a fixed key order, so identical runs
produce byte-identical files and traces diff cleanly.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO

from ._version import __version__
from .dynamics import Event
from .episode import EnvCore, EpisodeResult, run_episode
from .observation import OBS_LAYOUT_VERSION
from .reward import RewardBreakdown, nonzero_components
from .scenario import ScenarioConfig, config_sha256
from .world import GridPos, PatientStatus

TRACE_SCHEMA_VERSION = 1


class TraceError(Exception):
    """Base class for trace reading/verification failures."""


class TraceVersionError(TraceError):
    """The trace was written by an incompatible engine or schema version."""


class CorruptTraceError(TraceError):
    """A trace line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def event_to_dict(ev: Event) -> dict:
    out: dict[str, Any] = {"kind": ev.kind}
    for f in dataclasses.fields(ev):
        value = getattr(ev, f.name)
        out[f.name] = [value.x, value.y] if isinstance(value, GridPos) else value
    return out


def step_record(core: EnvCore, actions, events: list[Event],
                breakdown: RewardBreakdown) -> dict:
    """Serialize the post-step state of ``core`` plus the step's actions,
    events and rewards into one trace record."""
    world = core.world
    uavs = []
    for uav, action, comp, total in zip(world.uavs, actions,
                                        breakdown.components, breakdown.totals):
        uavs.append({
            "pos": [uav.pos.x, uav.pos.y],
            "payload": uav.payload,
            "carried": uav.carried,
            "energy_wh": uav.energy_wh,
            "action": int(action),
            "reward": {"total": total, "components": nonzero_components(comp)},
        })
    hospitals = []
    for hosp in world.hospitals:
        waiting = treated = deceased = 0
        for patient in hosp.patients:
            if patient.status is PatientStatus.WAITING:
                waiting += 1
            elif patient.status is PatientStatus.TREATED:
                treated += 1
            else:
                deceased += 1
        hospitals.append({"inventory": hosp.inventory, "waiting": waiting,
                          "treated": treated, "deceased": deceased})
    return {
        "record": "step",
        "t": world.t,
        "uavs": uavs,
        "events": [event_to_dict(ev) for ev in events],
        "hospitals": hospitals,
        "counters": core.counters.as_dict(),
    }


class TraceWriter:
    """Streams one episode to a sink, header first, one record per step."""

    def __init__(self, sink: TextIO, config: ScenarioConfig, seed: int,
                 policy: str | None = None):
        self._sink = sink
        header: dict[str, Any] = {
            "record": "header",
            "schema_version": TRACE_SCHEMA_VERSION,
            "engine_version": __version__,
            "obs_layout_version": OBS_LAYOUT_VERSION,
            "config_sha256": config_sha256(config),
            "seed": seed,
        }
        if policy is not None:
            header["policy"] = policy
        self._write(header)

    def _write(self, record: dict) -> None:
        self._sink.write(json.dumps(record, separators=(",", ":")) + "\n")

    def append_step(self, core: EnvCore, actions, events: list[Event],
                    breakdown: RewardBreakdown) -> None:
        self._write(step_record(core, actions, events, breakdown))


def write_trace(config: ScenarioConfig, seed: int, policy, sink: TextIO) -> EpisodeResult:
    """Run one episode under ``policy`` and stream its trace into ``sink``."""
    writer = TraceWriter(sink, config, seed, policy=getattr(policy, "name", None))
    return run_episode(config, seed, policy, trace_writer=writer)


@dataclass
class ReplayReport:
    ok: bool
    steps_verified: int
    divergence_step: int | None = None
    divergence_field: str | None = None

    def __str__(self) -> str:
        if self.ok:
            return f"ok: {self.steps_verified} steps verified"
        return (f"divergence at step {self.divergence_step}, "
                f"field {self.divergence_field}")


def _first_diff(expected, actual, path: str = "") -> str | None:
    """Path of the first differing field between two parsed JSON values."""
    if isinstance(expected, dict) and isinstance(actual, dict):
        for key in sorted(set(expected) | set(actual)):
            sub = f"{path}.{key}" if path else key
            if key not in expected or key not in actual:
                return sub
            found = _first_diff(expected[key], actual[key], sub)
            if found:
                return found
        return None
    if isinstance(expected, list) and isinstance(actual, list):
        if len(expected) != len(actual):
            return f"{path}.length"
        for i, (e, a) in enumerate(zip(expected, actual)):
            found = _first_diff(e, a, f"{path}[{i}]")
            if found:
                return found
        return None
    if expected != actual:
        return path or "<root>"
    return None


def replay_verify(trace_path: str | Path, config: ScenarioConfig) -> ReplayReport:
    """Re-simulate a trace from (config, recorded seed and actions) and
    compare every record; reports the first divergent step and field."""
    path = Path(trace_path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorruptTraceError(1, "empty trace file")

    def parse(line_no: int, text: str) -> dict:
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptTraceError(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "record" not in record:
            raise CorruptTraceError(line_no, "not a trace record")
        return record

    header = parse(1, lines[0])
    if header.get("record") != "header":
        raise CorruptTraceError(1, "first record must be the header")
    if header.get("schema_version") != TRACE_SCHEMA_VERSION:
        raise TraceVersionError(
            f"trace schema {header.get('schema_version')} != {TRACE_SCHEMA_VERSION}")
    if header.get("engine_version") != __version__:
        raise TraceVersionError(
            f"trace engine {header.get('engine_version')} != {__version__}")
    if header.get("config_sha256") != config_sha256(config):
        raise TraceError("trace was recorded with a different config (hash mismatch)")

    core = EnvCore(config, int(header["seed"]))
    verified = 0
    for line_no, text in enumerate(lines[1:], start=2):
        recorded = parse(line_no, text)
        if recorded.get("record") != "step":
            raise CorruptTraceError(line_no, f"unexpected record {recorded.get('record')!r}")
        uav_records = recorded.get("uavs")
        if not isinstance(uav_records, list) or len(uav_records) != len(core.world.uavs):
            raise CorruptTraceError(line_no, "uav list does not match the fleet")
        actions = [u["action"] for u in uav_records]
        _, _, _, _, info = core.step(actions, build_obs=False)
        expected = step_record(core, actions, info["events"], info["reward_breakdown"])
        field = _first_diff(expected, recorded)
        if field is not None:
            return ReplayReport(ok=False, steps_verified=verified,
                                divergence_step=expected["t"], divergence_field=field)
        verified += 1
    return ReplayReport(ok=True, steps_verified=verified)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class SweepSummary:
    """Aggregate metrics for one group of episodes (e.g. fleet size x policy)."""

    group: dict[str, Any]
    episodes: int
    mission_time_mean_s: float
    mission_time_std_s: float
    success_rate: float
    fleet_return_mean: float
    agent_return_mean: float
    delivered_mean: float
    expired_mean: float
    deceased_mean: float

    FIELD_ORDER = ("episodes", "mission_time_mean_s", "mission_time_std_s",
                   "success_rate", "fleet_return_mean", "agent_return_mean",
                   "delivered_mean", "expired_mean", "deceased_mean")


def _mean(values: Sequence[float]) -> float:
    return statistics.fmean(sorted(values))


def _std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return statistics.stdev(sorted(values))


def summarize(results: Sequence[EpisodeResult],
              group_keys: Sequence[str] = ("fleet_size", "policy")) -> list[SweepSummary]:
    """Group episode results and reduce to means/stddevs.

    Value lists are sorted before reduction, so the output is exactly
    permutation-invariant in the input order.
    """
    if not results:
        raise ValueError("no results to summarize")
    groups: dict[tuple, list[EpisodeResult]] = {}
    for res in results:
        key = tuple(getattr(res, k) for k in group_keys)
        groups.setdefault(key, []).append(res)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        bucket = groups[key]
        times = [r.mission_time_s for r in bucket]
        rows.append(SweepSummary(
            group=dict(zip(group_keys, key)),
            episodes=len(bucket),
            mission_time_mean_s=_mean(times),
            mission_time_std_s=_std(times),
            success_rate=_mean([1.0 if r.success else 0.0 for r in bucket]),
            fleet_return_mean=_mean([r.fleet_return for r in bucket]),
            agent_return_mean=_mean(
                [r.fleet_return / r.fleet_size for r in bucket]),
            delivered_mean=_mean([float(r.delivered) for r in bucket]),
            expired_mean=_mean([float(r.expired) for r in bucket]),
            deceased_mean=_mean([float(r.deceased) for r in bucket]),
        ))
    return rows


def write_summary_csv(rows: Iterable[SweepSummary], sink: TextIO) -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("no summary rows")
    group_keys = list(rows[0].group)
    sink.write(",".join(group_keys + list(SweepSummary.FIELD_ORDER)) + "\n")
    for row in rows:
        cells = [str(row.group[k]) for k in group_keys]
        cells += [repr(getattr(row, f)) if isinstance(getattr(row, f), float)
                  else str(getattr(row, f)) for f in SweepSummary.FIELD_ORDER]
        sink.write(",".join(cells) + "\n")


def write_plot_data(rows: Sequence[SweepSummary], out_dir: str | Path) -> list[Path]:
    """Emit plain columnar plot-data files: mission time and success rate
    against fleet size, one row per (policy, fleet size)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (str(r.group.get("policy", "")),
                                          r.group.get("fleet_size", 0)))
    time_path = out / "mission_time_vs_fleet.csv"
    with time_path.open("w", encoding="utf-8") as fh:
        fh.write("fleet_size,policy,mission_time_mean_s,mission_time_std_s,episodes\n")
        for row in ordered:
            fh.write(f"{row.group.get('fleet_size')},{row.group.get('policy')},"
                     f"{row.mission_time_mean_s!r},{row.mission_time_std_s!r},"
                     f"{row.episodes}\n")
    rate_path = out / "success_rate_vs_fleet.csv"
    with rate_path.open("w", encoding="utf-8") as fh:
        fh.write("fleet_size,policy,success_rate,episodes\n")
        for row in ordered:
            fh.write(f"{row.group.get('fleet_size')},{row.group.get('policy')},"
                     f"{row.success_rate!r},{row.episodes}\n")
    return [time_path, rate_path]
