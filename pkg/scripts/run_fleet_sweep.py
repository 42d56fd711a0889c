#!/usr/bin/env python3
"""Fleet-size sweep experiment: mission time and success rate for the
scripted baselines across fleet sizes, with optional plots.

Example:
    python scripts/run_fleet_sweep.py --config brussels --episodes 200 \
        --policies greedy auction --out results/sweep --plot
"""

from __future__ import annotations

import argparse
from pathlib import Path

from medfleet.cli import resolve_config
from medfleet.episode import run_episode
from medfleet.policies import make_policy
from medfleet.scenario import with_fleet_size
from medfleet.trace import summarize, write_plot_data, write_summary_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="brussels")
    parser.add_argument("--fleet-sizes", type=int, nargs="+",
                        default=[4, 8, 12, 16])
    parser.add_argument("--policies", nargs="+", default=["greedy"],
                        choices=["random", "greedy", "auction"])
    parser.add_argument("--episodes", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results/sweep")
    parser.add_argument("--plot", action="store_true",
                        help="also render PNG plots (needs matplotlib)")
    args = parser.parse_args()

    base = resolve_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results = []
    for policy_name in args.policies:
        for fleet in args.fleet_sizes:
            config = with_fleet_size(base, fleet)
            for i in range(args.episodes):
                seed = args.seed + i
                results.append(run_episode(config, seed, make_policy(policy_name, seed)))
            row = [r for r in results
                   if r.fleet_size == fleet and r.policy == policy_name]
            mean_t = sum(r.mission_time_s for r in row) / len(row)
            rate = sum(r.success for r in row) / len(row)
            print(f"{policy_name:8s} fleet={fleet:2d}: "
                  f"mission {mean_t:7.1f} s, success {rate:5.1%}")

    rows = summarize(results)
    with (out / "summary.csv").open("w", encoding="utf-8") as fh:
        write_summary_csv(rows, fh)
    write_plot_data(rows, out)
    print(f"wrote {out / 'summary.csv'} and plot-data files")

    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(11, 4))
        for policy_name in args.policies:
            sub = sorted((r for r in rows if r.group["policy"] == policy_name),
                         key=lambda r: r.group["fleet_size"])
            fleets = [r.group["fleet_size"] for r in sub]
            axes[0].errorbar(fleets, [r.mission_time_mean_s for r in sub],
                             yerr=[r.mission_time_std_s for r in sub],
                             marker="o", capsize=3, label=policy_name)
            axes[1].plot(fleets, [r.success_rate for r in sub],
                         marker="s", label=policy_name)
        axes[0].set_xlabel("fleet size")
        axes[0].set_ylabel("mission time [s]")
        axes[1].set_xlabel("fleet size")
        axes[1].set_ylabel("success rate")
        axes[1].set_ylim(-0.05, 1.05)
        for ax in axes:
            ax.grid(alpha=0.3)
            ax.legend()
        fig.tight_layout()
        fig.savefig(out / "fleet_sweep.png", dpi=150)
        print(f"wrote {out / 'fleet_sweep.png'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
