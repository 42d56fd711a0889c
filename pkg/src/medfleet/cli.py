"""Command-line interface: run episodes, sweep fleet sizes, validate configs
and verify traces.

Exit codes: 0 success, 1 config/validation/verification failure, 2 runtime
error. Per-episode seeds are ``base_seed + episode_index`` so any episode of
a batch can be re-run in isolation.
"""

from __future__ import annotations

import argparse
import io
import json
import multiprocessing
import sys
from importlib import resources
from pathlib import Path

from .episode import EpisodeResult, run_episode
from .policies import POLICY_NAMES, make_policy
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    config_from_dict,
    config_to_dict,
    config_to_toml,
    facility_cells,
    load_scenario,
    with_fleet_size,
)
from .trace import (
    TraceError,
    TraceWriter,
    replay_verify,
    summarize,
    write_plot_data,
    write_summary_csv,
)

BUNDLED_FIXTURES = ("brussels", "brussels_experiment", "compact")


def resolve_config(name_or_path: str) -> ScenarioConfig:
    """Load a config from a filesystem path or a bundled fixture name."""
    path = Path(name_or_path)
    if path.exists():
        return load_scenario(path)
    stem = name_or_path.removesuffix(".toml")
    if stem in BUNDLED_FIXTURES:
        fixture = resources.files("medfleet.fixtures") / f"{stem}.toml"
        with resources.as_file(fixture) as p:
            return load_scenario(p)
    raise ScenarioError(
        f"config {name_or_path!r} not found (and not a bundled fixture: "
        f"{', '.join(BUNDLED_FIXTURES)})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medfleet",
        description="Deterministic multi-agent UAV medical-delivery simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="run episodes with one policy")
    run_p.add_argument("--config", required=True,
                       help="config path or bundled fixture name")
    run_p.add_argument("--seed", type=int, default=0, help="base seed")
    run_p.add_argument("--episodes", type=int, default=1)
    run_p.add_argument("--fleet-size", type=int, default=None,
                       help="override the config fleet size")
    run_p.add_argument("--policy", choices=POLICY_NAMES, default="greedy")
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument("--trace", action="store_true",
                       help="write one trace file per episode")
    run_p.add_argument("--workers", type=int, default=1)

    sweep_p = sub.add_parser("sweep", help="grid of fleet sizes x policies")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--seed", type=int, default=0)
    sweep_p.add_argument("--episodes", type=int, default=100,
                         help="episodes per (fleet size, policy) cell")
    sweep_p.add_argument("--fleet-size", type=int, nargs="+",
                         default=[4, 8, 12, 16])
    sweep_p.add_argument("--policy", choices=POLICY_NAMES, nargs="+",
                         default=["greedy"])
    sweep_p.add_argument("--out", default="out")
    sweep_p.add_argument("--trace", action="store_true")
    sweep_p.add_argument("--workers", type=int, default=1)

    val_p = sub.add_parser("validate", help="validate a config and echo the "
                                            "resolved effective configuration")
    val_p.add_argument("--config", required=True)

    rep_p = sub.add_parser("replay", help="re-simulate a trace and verify it")
    rep_p.add_argument("trace_file", help="trace file to verify")
    rep_p.add_argument("--config", required=True)

    return parser


def _run_one(payload: tuple) -> tuple[int, dict, str | None]:
    """Worker entry: run one episode; returns (index, result dict, trace text)."""
    index, config_data, seed, policy_name, want_trace = payload
    config = config_from_dict(config_data)
    policy = make_policy(policy_name, seed=seed)
    trace_text = None
    if want_trace:
        sink = io.StringIO()
        writer = TraceWriter(sink, config, seed, policy=policy_name)
        result = run_episode(config, seed, policy, trace_writer=writer)
        trace_text = sink.getvalue()
    else:
        result = run_episode(config, seed, policy)
    return index, result.to_dict(), trace_text


def _run_batch(config: ScenarioConfig, base_seed: int, episodes: int,
               policy_name: str, workers: int, want_trace: bool,
               trace_dir: Path | None, trace_prefix: str) -> list[EpisodeResult]:
    config_data = config_to_dict(config)
    payloads = [(i, config_data, base_seed + i, policy_name, want_trace)
                for i in range(episodes)]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            raw = pool.map(_run_one, payloads)
    else:
        raw = [_run_one(p) for p in payloads]
    # Collect by episode index so worker completion order never matters.
    raw.sort(key=lambda item: item[0])
    results = []
    for index, result_data, trace_text in raw:
        results.append(EpisodeResult.from_dict(result_data))
        if trace_text is not None and trace_dir is not None:
            trace_dir.mkdir(parents=True, exist_ok=True)
            (trace_dir / f"{trace_prefix}ep{index:04d}.jsonl").write_text(
                trace_text, encoding="utf-8")
    return results


def _write_results(results: list[EpisodeResult], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for res in results:
            fh.write(json.dumps(res.to_dict(), separators=(",", ":")) + "\n")


def _cmd_run(args) -> int:
    config = resolve_config(args.config)
    if args.fleet_size is not None:
        config = with_fleet_size(config, args.fleet_size)
    out = Path(args.out)
    results = _run_batch(
        config, args.seed, args.episodes, args.policy, args.workers,
        args.trace, out / "traces", "")
    _write_results(results, out / "results.jsonl")
    successes = sum(1 for r in results if r.success)
    mean_time = sum(r.mission_time_s for r in results) / len(results)
    print(f"{len(results)} episodes | policy={args.policy} "
          f"fleet={config.fleet_size} | success {successes}/{len(results)} | "
          f"mean mission time {mean_time:.1f} s")
    print(f"results: {out / 'results.jsonl'}")
    return 0


def _cmd_sweep(args) -> int:
    if not args.fleet_size:
        print("error: --fleet-size needs at least one value", file=sys.stderr)
        return 1
    base = resolve_config(args.config)
    out = Path(args.out)
    all_results: list[EpisodeResult] = []
    for policy_name in args.policy:
        for fleet in args.fleet_size:
            config = with_fleet_size(base, fleet)
            cell = _run_batch(
                config, args.seed, args.episodes, policy_name, args.workers,
                args.trace, out / "traces", f"fleet{fleet}_{policy_name}_")
            all_results.extend(cell)
            print(f"fleet={fleet} policy={policy_name}: "
                  f"{len(cell)} episodes done")
    _write_results(all_results, out / "results.jsonl")
    rows = summarize(all_results)
    with (out / "summary.csv").open("w", encoding="utf-8") as fh:
        write_summary_csv(rows, fh)
    paths = write_plot_data(rows, out)
    print(f"summary: {out / 'summary.csv'}")
    for p in paths:
        print(f"plot data: {p}")
    return 0


def _cmd_validate(args) -> int:
    config = resolve_config(args.config)
    depots, hospitals = facility_cells(config)
    print("# resolved effective configuration")
    print(config_to_toml(config), end="")
    print("# projected facility cells")
    depot_iter = iter(depots)
    hospital_iter = iter(hospitals)
    for fac in config.facilities:
        cell = next(depot_iter) if fac.kind.value == "depot" else next(hospital_iter)
        print(f"# {fac.kind.value} {fac.name!r} -> cell ({cell.x}, {cell.y})")
    return 0


def _cmd_replay(args) -> int:
    config = resolve_config(args.config)
    report = replay_verify(args.trace_file, config)
    print(report)
    return 0 if report.ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep,
                "validate": _cmd_validate, "replay": _cmd_replay}
    try:
        return handlers[args.cmd](args)
    except (ScenarioError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
