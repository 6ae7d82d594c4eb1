"""Closed-loop scenarios, metrics, and run exports.

A scenario fixes the map, the vehicle, the goal, and the true motion of
any moving obstacles.  run_closed_loop drives a Planner against the
scenario with seeded measurement and process noise and records one row
per control cycle; exports write deterministic CSV files and an SVG
overview so a run is reproducible byte for byte from (scenario,
variant, seed).
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    Polytope,
    Pose2,
    RiskEllipse,
    distance_point_to_ellipse,
    distance_point_to_polytope,
    distance_polytope_to_ellipse,
    distance_polytope_to_polytope,
    rotation_matrix,
    transform_polytope,
)
from .planner import (
    CycleResult,
    Planner,
    PlannerConfig,
    PlanningError,
    TrackedObstacleInfo,
    Variant,
    kinematic_step,
    planner_variants,
)
from .prediction import NoiseSpec, ObstacleState, ctrv_step

FLOAT_FMT = "%.9g"


@dataclass(frozen=True)
class DynamicObstacleSpec:
    """Ground truth for one moving obstacle (a disk of given radius)."""

    initial: ObstacleState
    radius: float
    noise: NoiseSpec


@dataclass(frozen=True)
class Scenario:
    """A complete closed-loop problem instance."""

    name: str
    bounds: tuple
    static_polytopes: tuple
    static_ellipses: tuple
    dynamic: tuple
    vehicle_length: float
    vehicle_width: float
    start: Pose2
    goal: Pose2
    max_cycles: int = 200
    config_overrides: dict = field(default_factory=dict)

    def profile(self) -> Polytope:
        return Polytope.rectangle(self.vehicle_length, self.vehicle_width)

    def static_sets(self) -> list:
        return list(self.static_polytopes) + list(self.static_ellipses)


def _pentagon(center, circumradius: float, phase: float = math.pi / 2.0) -> Polytope:
    angles = phase + 2.0 * math.pi * np.arange(5) / 5.0
    vertices = np.stack(
        [center[0] + circumradius * np.cos(angles),
         center[1] + circumradius * np.sin(angles)], axis=1
    )
    return Polytope.from_vertices(vertices)


def _rotated_ellipse(center, semi_axes, angle: float) -> RiskEllipse:
    A = rotation_matrix(angle)
    F = np.diag([1.0 / semi_axes[0] ** 2, 1.0 / semi_axes[1] ** 2])
    return RiskEllipse(F, A, np.asarray(center, dtype=float))


def scenario_static_mixed() -> Scenario:
    """Cluttered 12x12 field with a 2.6 m pinch between two obstacles.

    The wall rectangle and the triangle leave a gap the 3x2 footprint
    can thread lengthwise but a 2.6 m disk cannot; the eastern corridor
    stays wide enough that a disk-shaped plan remains feasible via a
    detour.
    """
    wall = Polytope.from_vertices(
        np.array([[0.0, 5.25], [4.0, 5.25], [4.0, 6.75], [0.0, 6.75]])
    )
    triangle = Polytope.from_vertices(
        np.array([[6.6, 6.0], [9.0, 5.2], [9.0, 7.4]])
    )
    pentagon = _pentagon(np.array([2.0, 10.5]), 0.9)
    ellipse = _rotated_ellipse(np.array([6.0, 1.8]), (1.2, 0.8), math.radians(25.0))
    return Scenario(
        name="static_mixed",
        bounds=(0.0, 12.0, 0.0, 12.0),
        static_polytopes=(wall, triangle, pentagon),
        static_ellipses=(ellipse,),
        dynamic=(),
        vehicle_length=3.0,
        vehicle_width=2.0,
        start=Pose2(2.0, 1.8, 0.0),
        goal=Pose2(8.0, 10.5, math.pi / 2.0),
        max_cycles=400,
        config_overrides={"d_min": 0.1},
    )


def scenario_narrow_lane() -> Scenario:
    """3 m lane with a pedestrian walking ahead of the vehicle.

    The pedestrian (0.3 m disk) keeps close to the upper wall at 1 m/s;
    the faster vehicle has to squeeze past through the remaining width.
    """
    upper = Polytope.from_vertices(
        np.array([[-2.0, 1.5], [22.0, 1.5], [22.0, 2.0], [-2.0, 2.0]])
    )
    lower = Polytope.from_vertices(
        np.array([[-2.0, -2.0], [22.0, -2.0], [22.0, -1.5], [-2.0, -1.5]])
    )
    pedestrian = DynamicObstacleSpec(
        initial=ObstacleState(5.5, 1.05, 0.0, 1.0, 0.0),
        radius=0.3,
        noise=NoiseSpec(),
    )
    return Scenario(
        name="narrow_lane",
        bounds=(-1.0, 21.0, -1.5, 1.5),
        static_polytopes=(upper, lower),
        static_ellipses=(),
        dynamic=(pedestrian,),
        vehicle_length=3.0,
        vehicle_width=2.0,
        start=Pose2(0.0, 0.0, 0.0),
        goal=Pose2(14.0, 0.0, 0.0),
        max_cycles=250,
        config_overrides={"alpha": 0.05, "d_min": 0.05},
    )


_SCENARIOS = {
    "static_mixed": scenario_static_mixed,
    "narrow_lane": scenario_narrow_lane,
}


def get_scenario(name: str) -> Scenario:
    try:
        return _SCENARIOS[name]()
    except KeyError:
        raise KeyError(
            f"unknown scenario {name!r}; available: {sorted(_SCENARIOS)}"
        ) from None


def scenario_names() -> list:
    return sorted(_SCENARIOS)


# ---------------------------------------------------------------------------
# Closed loop


@dataclass(frozen=True)
class CycleRecord:
    """One logged control cycle (states at the start of the cycle)."""

    cycle: int
    t: float
    x: float
    y: float
    theta: float
    v: float
    omega: float
    solver_status: str
    kkt: float
    min_clearance: float
    pedestrian_clearance: float
    center_distance: float
    obstacle_positions: tuple


@dataclass
class RunResult:
    scenario: str
    variant: str
    seed: int
    alpha: float
    success: bool
    records: list
    executed: np.ndarray  # visited states, one row per cycle plus final
    initial_path: Optional[object]
    forecast_snapshots: list  # (cycle, [RiskEllipse, ...]) for the overview
    min_clearance: float
    wall_time: float

    def clearance_series(self) -> np.ndarray:
        return np.array([r.pedestrian_clearance for r in self.records])


def _true_obstacle_sets(scenario: Scenario, states: Sequence[ObstacleState]):
    sets = scenario.static_sets()
    for spec, state in zip(scenario.dynamic, states):
        sets.append(RiskEllipse.disk(np.array([state.x, state.y]), spec.radius))
    return sets


def _footprint_clearance(profile, pose, obstacle) -> float:
    world = transform_polytope(profile, Pose2(pose[0], pose[1], pose[2]))
    if isinstance(obstacle, RiskEllipse):
        return distance_polytope_to_ellipse(world, obstacle)
    return distance_polytope_to_polytope(world, obstacle)


def _pedestrian_clearance(profile, pose, center, radius) -> float:
    """Signed vehicle-to-disk clearance (negative means penetration)."""
    world = transform_polytope(profile, Pose2(pose[0], pose[1], pose[2]))
    return distance_point_to_polytope(center, world) - radius


def scenario_config(scenario: Scenario) -> PlannerConfig:
    """Planner defaults with the scenario's overrides applied."""
    cfg = PlannerConfig()
    for key, value in scenario.config_overrides.items():
        if hasattr(cfg, key):
            cfg = replace(cfg, **{key: value})
    return cfg


def build_planner(
    scenario: Scenario,
    variant: Variant,
    config: Optional[PlannerConfig] = None,
) -> Planner:
    # An explicit config is taken as fully resolved; scenario overrides
    # only fill in when the caller left the configuration to us.
    cfg = config if config is not None else scenario_config(scenario)
    tracked = tuple(
        TrackedObstacleInfo(
            radius=spec.radius,
            noise=spec.noise,
            prior_heading=spec.initial.theta,
            prior_speed=spec.initial.v,
            prior_turn_rate=spec.initial.omega,
        )
        for spec in scenario.dynamic
    )
    return Planner(
        profile=scenario.profile(),
        static_obstacles=scenario.static_sets(),
        bounds=scenario.bounds,
        config=cfg,
        variant=variant,
        tracked=tracked,
    )


def run_closed_loop(
    scenario: Scenario,
    variant_name: str,
    seed: int,
    alpha: Optional[float] = None,
    config: Optional[PlannerConfig] = None,
    max_cycles: Optional[int] = None,
) -> RunResult:
    """Drive a planner variant through a scenario under seeded noise.

    Measurement and process noise streams depend only on (seed, cycle,
    obstacle index), never on planner decisions, so runs with different
    variants but equal seeds see identical obstacle motion.
    """
    variants = planner_variants()
    if variant_name not in variants:
        raise KeyError(
            f"unknown variant {variant_name!r}; available: {sorted(variants)}"
        )
    variant = variants[variant_name]
    cfg = config if config is not None else scenario_config(scenario)
    if alpha is not None:
        cfg = replace(cfg, alpha=alpha)
    planner = build_planner(scenario, variant, cfg)
    cfg = planner.config

    rng = np.random.default_rng(seed)
    true_states = [spec.initial for spec in scenario.dynamic]
    x = scenario.start.as_array()
    goal = scenario.goal
    limit = max_cycles if max_cycles is not None else scenario.max_cycles

    records = []
    executed = [x.copy()]
    snapshots = []
    success = False
    start_time = time.perf_counter()

    for cycle in range(limit):
        if np.linalg.norm(x[:2] - goal.position) < cfg.goal_tolerance:
            success = True
            break
        t = cycle * cfg.dt
        measurements = [
            np.array([s.x, s.y]) + rng.normal(0.0, 1.0, 2) * spec.noise.measurement_std
            for spec, s in zip(scenario.dynamic, true_states)
        ]
        cycle_result = planner.plan_cycle(x, goal, measurements)

        true_sets = _true_obstacle_sets(scenario, true_states)
        min_clear = min(
            (_footprint_clearance(planner.profile, x, obs) for obs in true_sets),
            default=np.inf,
        )
        if scenario.dynamic:
            ped_clear = min(
                _pedestrian_clearance(
                    planner.profile, x, np.array([s.x, s.y]), spec.radius
                )
                for spec, s in zip(scenario.dynamic, true_states)
            )
            center_dist = min(
                float(np.linalg.norm(x[:2] - np.array([s.x, s.y])))
                for s in true_states
            )
        else:
            ped_clear = min_clear
            center_dist = min(
                (
                    distance_point_to_ellipse(x[:2], obs)
                    if isinstance(obs, RiskEllipse)
                    else distance_point_to_polytope(x[:2], obs)
                    for obs in true_sets
                ),
                default=np.inf,
            )

        records.append(
            CycleRecord(
                cycle=cycle,
                t=t,
                x=float(x[0]),
                y=float(x[1]),
                theta=float(x[2]),
                v=float(cycle_result.control[0]),
                omega=float(cycle_result.control[1]),
                solver_status=cycle_result.solve_result.status.value,
                kkt=float(cycle_result.solve_result.kkt_residual),
                min_clearance=float(min_clear),
                pedestrian_clearance=float(ped_clear),
                center_distance=float(center_dist),
                obstacle_positions=tuple(
                    (float(s.x), float(s.y)) for s in true_states
                ),
            )
        )
        if cycle % 10 == 0 and cycle_result.forecasts:
            snapshots.append(
                (cycle, [e for tube in cycle_result.forecasts for e in tube.ellipses])
            )

        x = kinematic_step(x, cycle_result.control, cfg.dt)
        executed.append(x.copy())
        true_states = [
            ObstacleState.from_array(
                ctrv_step(s, cfg.dt).as_array()
                + rng.normal(0.0, 1.0, 5) * spec.noise.process_std
            )
            for spec, s in zip(scenario.dynamic, true_states)
        ]
    else:
        success = bool(np.linalg.norm(x[:2] - goal.position) < cfg.goal_tolerance)

    return RunResult(
        scenario=scenario.name,
        variant=variant_name,
        seed=seed,
        alpha=cfg.alpha,
        success=success,
        records=records,
        executed=np.array(executed),
        initial_path=planner.initial_path,
        forecast_snapshots=snapshots,
        min_clearance=min((r.min_clearance for r in records), default=np.inf),
        wall_time=time.perf_counter() - start_time,
    )


# ---------------------------------------------------------------------------
# Exports


def _fmt(value: float) -> str:
    return FLOAT_FMT % value


def export_trajectory_csv(result: RunResult, path: Path):
    lines = [
        "cycle,t,x,y,theta,v,omega,solver_status,kkt,min_clearance"
    ]
    for r in result.records:
        lines.append(
            ",".join(
                [
                    str(r.cycle),
                    _fmt(r.t),
                    _fmt(r.x),
                    _fmt(r.y),
                    _fmt(r.theta),
                    _fmt(r.v),
                    _fmt(r.omega),
                    r.solver_status,
                    _fmt(r.kkt),
                    _fmt(r.min_clearance),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def export_clearance_csv(result: RunResult, path: Path):
    lines = ["cycle,t,min_clearance,center_distance"]
    for r in result.records:
        lines.append(
            ",".join(
                [
                    str(r.cycle),
                    _fmt(r.t),
                    _fmt(r.pedestrian_clearance),
                    _fmt(r.center_distance),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _svg_polygon(vertices: np.ndarray, to_px, style: str) -> str:
    pts = " ".join("%.2f,%.2f" % to_px(v) for v in vertices)
    return f'<polygon points="{pts}" {style}/>'


def _svg_ellipse(ellipse: RiskEllipse, to_px, scale: float, style: str) -> str:
    w, V = np.linalg.eigh(ellipse.F)
    axes = 1.0 / np.sqrt(w)
    basis = ellipse.A @ V
    angle = math.degrees(math.atan2(basis[1, 0], basis[0, 0]))
    cx, cy = to_px(ellipse.b)
    return (
        f'<ellipse cx="0" cy="0" rx="{axes[0] * scale:.2f}" '
        f'ry="{axes[1] * scale:.2f}" '
        f'transform="translate({cx:.2f},{cy:.2f}) rotate({-angle:.2f})" '
        f"{style}/>"
    )


def export_overview_svg(result: RunResult, scenario: Scenario, path: Path):
    """Map, obstacles, initial path, executed trajectory, forecast tubes."""
    xmin, xmax, ymin, ymax = scenario.bounds
    margin = 1.0
    scale = 40.0
    width = (xmax - xmin + 2 * margin) * scale
    height = (ymax - ymin + 2 * margin) * scale

    def to_px(p):
        return (
            (p[0] - xmin + margin) * scale,
            height - (p[1] - ymin + margin) * scale,
        )

    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">\n'
    )
    bx, by = to_px((xmin, ymax))
    out.write(
        f'<rect x="{bx:.2f}" y="{by:.2f}" width="{(xmax - xmin) * scale:.2f}" '
        f'height="{(ymax - ymin) * scale:.2f}" fill="white" stroke="black"/>\n'
    )
    for poly in scenario.static_polytopes:
        out.write(
            _svg_polygon(
                poly.vertices, to_px, 'fill="#b0b0b0" stroke="#404040"'
            )
            + "\n"
        )
    for ell in scenario.static_ellipses:
        out.write(
            _svg_ellipse(ell, to_px, scale, 'fill="#b0b0b0" stroke="#404040"')
            + "\n"
        )
    for cycle, ellipses in result.forecast_snapshots:
        for e in ellipses:
            out.write(
                _svg_ellipse(
                    e, to_px, scale,
                    'fill="none" stroke="#d08080" stroke-width="0.7"',
                )
                + "\n"
            )
    if result.initial_path is not None:
        pts = " ".join(
            "%.2f,%.2f" % to_px((p.x, p.y)) for p in result.initial_path.poses
        )
        out.write(
            f'<polyline points="{pts}" fill="none" stroke="#c040c0" '
            'stroke-dasharray="6,4" stroke-width="1.5"/>\n'
        )
    if result.executed.shape[0] > 1:
        pts = " ".join(
            "%.2f,%.2f" % to_px(p) for p in result.executed[:, :2]
        )
        out.write(
            f'<polyline points="{pts}" fill="none" stroke="#2060c0" '
            'stroke-width="2"/>\n'
        )
    for r in result.records:
        for ox, oy in r.obstacle_positions:
            cx, cy = to_px((ox, oy))
            out.write(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.5" fill="#208020"/>\n'
            )
    sx, sy = to_px((scenario.start.x, scenario.start.y))
    gx, gy = to_px((scenario.goal.x, scenario.goal.y))
    out.write(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="5" fill="#2060c0"/>\n')
    out.write(
        f'<circle cx="{gx:.2f}" cy="{gy:.2f}" r="5" fill="none" '
        'stroke="#c02020" stroke-width="2"/>\n'
    )
    out.write("</svg>\n")
    path.write_text(out.getvalue())


def export_run(result: RunResult, scenario: Scenario, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_trajectory_csv(result, out / "trajectory.csv")
    export_clearance_csv(result, out / "clearance.csv")
    export_overview_svg(result, scenario, out / "overview.svg")
