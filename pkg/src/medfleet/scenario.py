"""Scenario loading, validation and initial world construction.

A scenario file is a TOML document: top-level engine parameters (all
optional, defaults listed in the README), a ``[grid]`` table, per-class
``[urgency_mix]`` and ``[deadline_steps]`` tables, an optional ``[reward]``
override table, and facilities given either inline as a ``[[facilities]]``
array or via ``facilities_file`` pointing at a GeoJSON FeatureCollection
(one Point feature per facility with a ``kind`` property), as exported by
OpenStreetMap tooling.

Facility coordinates are projected onto the grid with an equirectangular
projection about the grid origin; at extents of ~12 km the distortion is
well below one cell.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .reward import RewardParams
from .world import (
    GridPos,
    GridSpec,
    HospitalState,
    UavState,
    UrgencyClass,
    WorldState,
)

METERS_PER_DEG_LAT = 110_540.0
METERS_PER_DEG_LON_EQUATOR = 111_320.0

DEFAULT_URGENCY_MIX = {
    UrgencyClass.CRITICAL: 0.15,
    UrgencyClass.URGENT: 0.35,
    UrgencyClass.STANDARD: 0.50,
}
DEFAULT_DEADLINE_STEPS = {
    UrgencyClass.CRITICAL: 10,
    UrgencyClass.URGENT: 20,
    UrgencyClass.STANDARD: 50,
}


class ScenarioError(Exception):
    """Base class for scenario loading and validation failures."""


class ConfigParseError(ScenarioError):
    """The config or facility file could not be parsed."""


class ValidationError(ScenarioError):
    """A config invariant is violated; ``field_name`` names the offender."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class ProjectionError(ScenarioError):
    """A coordinate falls outside the grid's geographic extent."""


class FacilityKind(enum.Enum):
    DEPOT = "depot"
    HOSPITAL = "hospital"


@dataclass(frozen=True)
class FacilitySpec:
    name: str
    kind: FacilityKind
    lat: float
    lon: float


@dataclass
class ScenarioConfig:
    """Everything needed to materialize and run one scenario."""

    grid: GridSpec = field(default_factory=GridSpec)
    facilities: list[FacilitySpec] = field(default_factory=list)
    fleet_size: int = 10
    uav_speed_mps: float = 50.0
    payload_max: int = 5
    comm_range_m: float = 400.0
    max_steps: int = 200
    arrival_rate: float = 0.2
    max_active_tasks: int = 10
    urgency_mix: dict[UrgencyClass, float] = field(
        default_factory=lambda: dict(DEFAULT_URGENCY_MIX))
    deadline_steps: dict[UrgencyClass, int] = field(
        default_factory=lambda: dict(DEFAULT_DEADLINE_STEPS))
    initial_inventory: float = 10.0
    consumption_rate: float = 0.1
    handling_time_s: float = 5.0
    battery_capacity_wh: float = 500.0
    energy_per_action_wh: float = 0.8
    min_completed_tasks: int = 15
    patient_arrival_rate: float = 0.05
    reward: RewardParams = field(default_factory=RewardParams)
    # Engine switches (documented in the README; defaults are the reference
    # behavior, the alternatives exist for controlled experiments).
    clamp_out_of_extent: bool = False
    exclusive_claims: bool = False
    return_home_enforced: bool = False
    terminate_requires_pending_empty: bool = True
    mortality_on_critical_expiry: bool = False


def latlon_to_cell(grid: GridSpec, lat: float, lon: float, clamp: bool = False) -> GridPos:
    """Project a WGS84 coordinate onto the grid.

    Equirectangular projection about the grid origin: meter offsets east and
    north of the origin, shifted so the origin sits at the grid center, then
    floored to cell indices. Raises :class:`ProjectionError` outside the
    extent unless ``clamp`` is set, in which case the nearest edge cell is
    returned.
    """
    dx_m = (lon - grid.origin_lon) * METERS_PER_DEG_LON_EQUATOR * math.cos(
        math.radians(grid.origin_lat))
    dy_m = (lat - grid.origin_lat) * METERS_PER_DEG_LAT
    half_w = grid.width_cells * grid.cell_size_m / 2.0
    half_h = grid.height_cells * grid.cell_size_m / 2.0
    x = math.floor((dx_m + half_w) / grid.cell_size_m)
    y = math.floor((dy_m + half_h) / grid.cell_size_m)
    if clamp:
        x = min(max(x, 0), grid.width_cells - 1)
        y = min(max(y, 0), grid.height_cells - 1)
    pos = GridPos(x, y)
    if not grid.in_bounds(pos):
        raise ProjectionError(
            f"({lat}, {lon}) lies {dx_m:+.0f} m east / {dy_m:+.0f} m north of "
            f"the origin, outside the grid extent")
    return pos


def cell_to_latlon(grid: GridSpec, pos: GridPos) -> tuple[float, float]:
    """Inverse of :func:`latlon_to_cell` for cell centers."""
    half_w = grid.width_cells * grid.cell_size_m / 2.0
    half_h = grid.height_cells * grid.cell_size_m / 2.0
    dx_m = (pos.x + 0.5) * grid.cell_size_m - half_w
    dy_m = (pos.y + 0.5) * grid.cell_size_m - half_h
    lat = grid.origin_lat + dy_m / METERS_PER_DEG_LAT
    lon = grid.origin_lon + dx_m / (
        METERS_PER_DEG_LON_EQUATOR * math.cos(math.radians(grid.origin_lat)))
    return lat, lon


def facility_cells(config: ScenarioConfig) -> tuple[list[GridPos], list[GridPos]]:
    """Projected (depot cells, hospital cells) in facility-list order."""
    depots: list[GridPos] = []
    hospitals: list[GridPos] = []
    for fac in config.facilities:
        try:
            pos = latlon_to_cell(config.grid, fac.lat, fac.lon,
                                 clamp=config.clamp_out_of_extent)
        except ProjectionError as exc:
            raise ProjectionError(f"facility '{fac.name}': {exc}") from exc
        if fac.kind is FacilityKind.DEPOT:
            depots.append(pos)
        else:
            hospitals.append(pos)
    return depots, hospitals


def validate_config(config: ScenarioConfig) -> None:
    """Raise :class:`ValidationError` (or :class:`ProjectionError`) on the
    first violated invariant."""
    grid = config.grid
    if grid.width_cells < 1:
        raise ValidationError("grid.width_cells", "must be >= 1")
    if grid.height_cells < 1:
        raise ValidationError("grid.height_cells", "must be >= 1")
    if grid.cell_size_m <= 0:
        raise ValidationError("grid.cell_size_m", "must be > 0")
    if not -90.0 <= grid.origin_lat <= 90.0:
        raise ValidationError("grid.origin_lat", "must be a latitude in [-90, 90]")

    positive_counts = (
        ("fleet_size", config.fleet_size),
        ("payload_max", config.payload_max),
        ("max_steps", config.max_steps),
        ("max_active_tasks", config.max_active_tasks),
        ("min_completed_tasks", config.min_completed_tasks),
    )
    for name, value in positive_counts:
        if not isinstance(value, int) or value < 1:
            raise ValidationError(name, "must be a positive integer")

    if config.uav_speed_mps <= 0:
        raise ValidationError("uav_speed_mps", "must be > 0")
    if config.comm_range_m < 0:
        raise ValidationError("comm_range_m", "must be >= 0")
    if not 0.0 <= config.arrival_rate <= 1.0:
        raise ValidationError("arrival_rate", "must be a probability in [0, 1]")
    if not 0.0 <= config.patient_arrival_rate <= 1.0:
        raise ValidationError("patient_arrival_rate", "must be a probability in [0, 1]")
    if config.initial_inventory < 0:
        raise ValidationError("initial_inventory", "must be >= 0")
    if config.consumption_rate < 0:
        raise ValidationError("consumption_rate", "must be >= 0")
    if config.handling_time_s < 0:
        raise ValidationError("handling_time_s", "must be >= 0")
    if config.battery_capacity_wh <= 0:
        raise ValidationError("battery_capacity_wh", "must be > 0")
    if config.energy_per_action_wh < 0:
        raise ValidationError("energy_per_action_wh", "must be >= 0")

    mix = config.urgency_mix
    if set(mix) != set(UrgencyClass):
        raise ValidationError("urgency_mix", "must define critical, urgent and standard")
    if any(p < 0 for p in mix.values()):
        raise ValidationError("urgency_mix", "probabilities must be >= 0")
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise ValidationError("urgency_mix", f"must sum to 1 (got {sum(mix.values())})")

    deadlines = config.deadline_steps
    if set(deadlines) != set(UrgencyClass):
        raise ValidationError("deadline_steps", "must define critical, urgent and standard")
    for cls, steps in deadlines.items():
        if not isinstance(steps, int) or steps < 1:
            raise ValidationError(f"deadline_steps.{cls.value}", "must be a positive integer")
    if not (deadlines[UrgencyClass.CRITICAL] < deadlines[UrgencyClass.URGENT]
            < deadlines[UrgencyClass.STANDARD]):
        raise ValidationError("deadline_steps", "must satisfy critical < urgent < standard")

    if not config.facilities:
        raise ValidationError("facilities", "at least one depot and one hospital required")
    depots, hospitals = facility_cells(config)
    if not depots:
        raise ValidationError("facilities", "at least one depot required")
    if not hospitals:
        raise ValidationError("facilities", "at least one hospital required")


def build_world(config: ScenarioConfig, seed: int) -> WorldState:
    """Materialize the initial world for ``config`` and ``seed``.

    UAVs are placed round-robin across depot cells (uav i at depot i mod D)
    at full payload and energy; hospitals start at the initial inventory;
    the task store is empty. A pure function of its inputs: identical calls
    produce byte-identical states.
    """
    validate_config(config)
    depot_cells, hospital_cells = facility_cells(config)
    uavs = []
    for i in range(config.fleet_size):
        home = depot_cells[i % len(depot_cells)]
        uavs.append(UavState(id=i, pos=home, payload=config.payload_max,
                             home=home, energy_wh=config.battery_capacity_wh))
    hospitals = [
        HospitalState(id=i, pos=cell, inventory=float(config.initial_inventory))
        for i, cell in enumerate(hospital_cells)
    ]
    return WorldState(
        config=config,
        t=0,
        uavs=uavs,
        depots=list(depot_cells),
        hospitals=hospitals,
        tasks={},
        next_task_id=0,
        next_patient_id=0,
        rng=random.Random(seed),
        depot_cell_set=frozenset(depot_cells),
    )


# ---------------------------------------------------------------------------
# Loading / serialization
# ---------------------------------------------------------------------------

_TOP_LEVEL_SCALARS = (
    "fleet_size", "uav_speed_mps", "payload_max", "comm_range_m", "max_steps",
    "arrival_rate", "max_active_tasks", "initial_inventory", "consumption_rate",
    "handling_time_s", "battery_capacity_wh", "energy_per_action_wh",
    "min_completed_tasks", "patient_arrival_rate",
    "clamp_out_of_extent", "exclusive_claims", "return_home_enforced",
    "terminate_requires_pending_empty", "mortality_on_critical_expiry",
)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load, default-fill and validate a scenario file."""
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {p}: {exc}") from exc
    try:
        data = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{p}: {exc}") from exc
    config = config_from_dict(data, base_dir=p.parent)
    validate_config(config)
    return config


def loads_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario from a TOML string (facilities must be inline)."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(str(exc)) from exc
    config = config_from_dict(data)
    validate_config(config)
    return config


def load_facilities_geojson(path: str | Path) -> list[FacilitySpec]:
    """Read facilities from a GeoJSON FeatureCollection of Point features."""
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"cannot read facility file {p}: {exc}") from exc
    if not isinstance(data, dict) or data.get("type") != "FeatureCollection":
        raise ConfigParseError(f"{p}: expected a GeoJSON FeatureCollection")
    out: list[FacilitySpec] = []
    for i, feat in enumerate(data.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise ConfigParseError(f"{p}: feature {i} must have Point geometry")
        coords = geom.get("coordinates") or []
        if len(coords) < 2:
            raise ConfigParseError(f"{p}: feature {i} has no coordinates")
        lon, lat = float(coords[0]), float(coords[1])
        props = feat.get("properties") or {}
        kind_raw = props.get("kind")
        try:
            kind = FacilityKind(kind_raw)
        except ValueError:
            raise ConfigParseError(
                f"{p}: feature {i} has kind={kind_raw!r}, expected 'depot' or 'hospital'")
        out.append(FacilitySpec(name=str(props.get("name", f"facility_{i}")),
                                kind=kind, lat=lat, lon=lon))
    return out


def _class_table(data: dict, key: str, caster) -> dict[UrgencyClass, Any]:
    table = data[key]
    if not isinstance(table, dict):
        raise ValidationError(key, "must be a table of urgency classes")
    out = {}
    for cls in UrgencyClass:
        if cls.value not in table:
            raise ValidationError(f"{key}.{cls.value}", "missing")
        out[cls] = caster(table[cls.value])
    extra = set(table) - {c.value for c in UrgencyClass}
    if extra:
        raise ValidationError(key, f"unknown urgency class {sorted(extra)[0]!r}")
    return out


def config_from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Build a config from parsed TOML data, filling defaults for absent keys."""
    known = set(_TOP_LEVEL_SCALARS) | {
        "grid", "urgency_mix", "deadline_steps", "reward", "facilities",
        "facilities_file",
    }
    for key in data:
        if key not in known:
            raise ValidationError(key, "unknown configuration key")

    config = ScenarioConfig()

    if "grid" in data:
        grid_data = dict(data["grid"])
        unknown = set(grid_data) - {f.name for f in fields(GridSpec)}
        if unknown:
            raise ValidationError(f"grid.{sorted(unknown)[0]}", "unknown configuration key")
        defaults = GridSpec()
        config.grid = GridSpec(
            width_cells=int(grid_data.get("width_cells", defaults.width_cells)),
            height_cells=int(grid_data.get("height_cells", defaults.height_cells)),
            cell_size_m=float(grid_data.get("cell_size_m", defaults.cell_size_m)),
            origin_lat=float(grid_data.get("origin_lat", defaults.origin_lat)),
            origin_lon=float(grid_data.get("origin_lon", defaults.origin_lon)),
        )

    int_fields = {"fleet_size", "payload_max", "max_steps", "max_active_tasks",
                  "min_completed_tasks"}
    bool_fields = {"clamp_out_of_extent", "exclusive_claims", "return_home_enforced",
                   "terminate_requires_pending_empty", "mortality_on_critical_expiry"}
    for name in _TOP_LEVEL_SCALARS:
        if name not in data:
            continue
        value = data[name]
        if name in bool_fields:
            if not isinstance(value, bool):
                raise ValidationError(name, "must be a boolean")
        elif name in int_fields:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(name, "must be an integer")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(name, "must be a number")
            value = float(value)
        setattr(config, name, value)

    if "urgency_mix" in data:
        config.urgency_mix = _class_table(data, "urgency_mix", float)
    if "deadline_steps" in data:
        config.deadline_steps = _class_table(data, "deadline_steps", int)

    if "reward" in data:
        reward_data = data["reward"]
        valid = {f.name for f in fields(RewardParams)}
        unknown = set(reward_data) - valid
        if unknown:
            raise ValidationError(f"reward.{sorted(unknown)[0]}", "unknown reward parameter")
        kwargs = {}
        for key, value in reward_data.items():
            kwargs[key] = int(value) if key == "proximity_radius" else float(value)
        config.reward = RewardParams(**kwargs)

    if "facilities" in data and "facilities_file" in data:
        raise ValidationError("facilities", "give either facilities or facilities_file, not both")
    if "facilities_file" in data:
        fpath = Path(data["facilities_file"])
        if base_dir is not None and not fpath.is_absolute():
            fpath = base_dir / fpath
        config.facilities = load_facilities_geojson(fpath)
    elif "facilities" in data:
        facs = []
        for i, entry in enumerate(data["facilities"]):
            for req in ("kind", "lat", "lon"):
                if req not in entry:
                    raise ValidationError(f"facilities[{i}].{req}", "missing")
            try:
                kind = FacilityKind(entry["kind"])
            except ValueError:
                raise ValidationError(
                    f"facilities[{i}].kind",
                    f"must be 'depot' or 'hospital', got {entry['kind']!r}")
            facs.append(FacilitySpec(
                name=str(entry.get("name", f"facility_{i}")),
                kind=kind, lat=float(entry["lat"]), lon=float(entry["lon"])))
        config.facilities = facs

    return config


def config_to_dict(config: ScenarioConfig) -> dict:
    """Plain-data form of a config; inverse of :func:`config_from_dict`."""
    out: dict[str, Any] = {}
    for name in _TOP_LEVEL_SCALARS:
        out[name] = getattr(config, name)
    out["grid"] = {f.name: getattr(config.grid, f.name) for f in fields(GridSpec)}
    out["urgency_mix"] = {cls.value: config.urgency_mix[cls] for cls in UrgencyClass}
    out["deadline_steps"] = {cls.value: config.deadline_steps[cls] for cls in UrgencyClass}
    out["reward"] = {f.name: getattr(config.reward, f.name) for f in fields(RewardParams)}
    out["facilities"] = [
        {"name": f.name, "kind": f.kind.value, "lat": f.lat, "lon": f.lon}
        for f in config.facilities
    ]
    return out


def _toml_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        # TOML floats need a dot or exponent; repr of whole floats has one.
        return text
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def config_to_toml(config: ScenarioConfig) -> str:
    """Serialize a config to TOML. ``load -> serialize -> load`` round-trips
    to an identical config."""
    data = config_to_dict(config)
    lines: list[str] = []
    for name in _TOP_LEVEL_SCALARS:
        lines.append(f"{name} = {_toml_scalar(data[name])}")
    for table in ("grid", "urgency_mix", "deadline_steps", "reward"):
        lines.append("")
        lines.append(f"[{table}]")
        for key, value in data[table].items():
            lines.append(f"{key} = {_toml_scalar(value)}")
    for fac in data["facilities"]:
        lines.append("")
        lines.append("[[facilities]]")
        for key in ("name", "kind", "lat", "lon"):
            lines.append(f"{key} = {_toml_scalar(fac[key])}")
    return "\n".join(lines) + "\n"


def config_sha256(config: ScenarioConfig) -> str:
    """Stable content hash of a config (used in trace headers)."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_fleet_size(config: ScenarioConfig, fleet_size: int) -> ScenarioConfig:
    """Copy of ``config`` with a different fleet size."""
    return replace(config, fleet_size=fleet_size)
