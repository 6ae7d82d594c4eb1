"""Command line entry points: single runs and seed sweeps."""

from __future__ import annotations

import os

# Pin BLAS threading before numpy loads anywhere in the package: threaded
# reductions can reorder sums and break byte-identical reruns.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import sim
from .planner import PlannerConfig, PlanningError, planner_variants

FLOAT_FMT = sim.FLOAT_FMT


def parse_config(path) -> dict:
    """Read a plain key = value config file (# starts a comment)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_INT_KEYS = {"horizon", "max_iter", "inner_max_iter"}
_LIMIT_KEYS = {"v_min", "v_max", "omega_max"}
_SOLVER_KEYS = {"kkt_tol", "comp_tol", "max_iter", "inner_max_iter", "time_limit"}


def apply_config(config: PlannerConfig, values: dict) -> PlannerConfig:
    """Overlay parsed key = value pairs onto a PlannerConfig."""
    base_fields = {f.name for f in fields(PlannerConfig)}
    limits = config.limits
    solver = config.solver
    plain = {}
    for key, raw in values.items():
        value = int(raw) if key in _INT_KEYS else float(raw)
        if key in _LIMIT_KEYS:
            limits = replace(limits, **{key: value})
        elif key in _SOLVER_KEYS:
            solver = replace(solver, **{key: value})
        elif key in base_fields:
            plain[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(config, limits=limits, solver=solver, **plain)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskplan",
        description="Risk-aware local trajectory planning scenarios",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument(
            "--scenario", required=True, choices=sim.scenario_names()
        )
        p.add_argument(
            "--variant", default="raltper",
            choices=["raltper", "disk", "unaware"],
        )
        p.add_argument("--alpha", type=float, default=None,
                       help="risk bound in (0, 1); overrides the scenario value")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None,
                       help="key = value file overriding planner settings")
        p.add_argument("--max-cycles", type=int, default=None)

    run_p = sub.add_parser("run", help="run one seeded closed-loop scenario")
    add_common(run_p)
    run_p.add_argument("--seed", type=int, default=0)

    sweep_p = sub.add_parser("sweep", help="run consecutive seeds 0..N-1")
    add_common(sweep_p)
    sweep_p.add_argument("--seeds", type=int, required=True)
    return parser


def _load_config(args, scenario) -> PlannerConfig:
    # Precedence: scenario overrides < config file < --alpha flag
    # (the flag itself is applied inside run_closed_loop).
    config = sim.scenario_config(scenario)
    if args.config is not None:
        config = apply_config(config, parse_config(args.config))
    return config


# Command-line shorthands for the registered variant names.
_VARIANT_KEYS = {
    "raltper": "raltper",
    "disk": "disk_baseline",
    "unaware": "risk_unaware",
}


def _run_one(scenario, args, seed: int, out_dir: Path):
    result = sim.run_closed_loop(
        scenario,
        _VARIANT_KEYS[args.variant],
        seed,
        alpha=args.alpha,
        config=_load_config(args, scenario),
        max_cycles=args.max_cycles,
    )
    sim.export_run(result, scenario, out_dir)
    return result


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    scenario = sim.get_scenario(args.scenario)
    try:
        if args.command == "run":
            result = _run_one(scenario, args, args.seed, Path(args.out))
            print(
                f"{scenario.name} variant={args.variant} seed={args.seed}: "
                f"{'reached goal' if result.success else 'did not reach goal'} "
                f"in {len(result.records)} cycles, "
                f"min clearance {result.min_clearance:.3f} m"
            )
            return 0 if result.success else 1
        # sweep
        out_root = Path(args.out)
        out_root.mkdir(parents=True, exist_ok=True)
        summary = ["seed,success,cycles,min_clearance,wall_time"]
        all_ok = True
        for seed in range(args.seeds):
            result = _run_one(scenario, args, seed, out_root / f"seed_{seed}")
            all_ok = all_ok and result.success
            summary.append(
                ",".join(
                    [
                        str(seed),
                        "1" if result.success else "0",
                        str(len(result.records)),
                        FLOAT_FMT % result.min_clearance,
                        "%.3f" % result.wall_time,
                    ]
                )
            )
            print(
                f"seed {seed}: "
                f"{'ok' if result.success else 'FAILED'} "
                f"({len(result.records)} cycles)"
            )
        (out_root / "summary.csv").write_text("\n".join(summary) + "\n")
        return 0 if all_ok else 1
    except PlanningError as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
