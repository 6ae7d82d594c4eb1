"""Kinematically feasible initial paths via hybrid A* search.

The search expands constant-control motion primitives of the unicycle
model on a grid over (x, y, heading) bins.  Its result seeds the
trajectory optimizer, so path quality only needs to be "good enough to
warm-start": by default collision checking is a loose point check with
a fixed inflation radius against a clearance field pre-rasterized on a
fine lattice, which is fast but lets the path graze obstacles the
optimizer must later clear properly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    Polytope,
    Pose2,
    RiskEllipse,
    normalize_angle,
    polytope_overlaps_ellipse,
    polytopes_overlap,
    transform_polytope,
)

# Primitive controls: every combination of these speeds and turn rates,
# applied for PRIMITIVE_TIME seconds in SUBSTEPS Euler substeps.
SPEED_OPTIONS = (-2.0, 1.0, 2.0)
TURN_OPTIONS = (-math.pi / 6.0, 0.0, math.pi / 6.0)
PRIMITIVE_TIME = 0.3
SUBSTEPS = 3

GRID_RESOLUTION = 0.25
HEADING_BINS = 16

GOAL_POSITION_TOL = 0.5
GOAL_HEADING_TOL = 0.35

LOOSE_INFLATION = 0.5
MAX_EXPANSIONS = 200000

RASTER_RESOLUTION = 0.05


class NoPathError(RuntimeError):
    """Search exhausted the grid without reaching the goal region."""


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray):
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        diff = points - a
    else:
        s = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
        diff = points - a - s[:, None] * ab
    return np.einsum("ij,ij->i", diff, diff)


def _distance_field_polytope(points: np.ndarray, poly: Polytope) -> np.ndarray:
    inside = np.all(points @ poly.G.T - poly.g <= 1e-12, axis=1)
    V = poly.vertices
    d2 = np.full(points.shape[0], np.inf)
    for i in range(V.shape[0]):
        d2 = np.minimum(d2, _segment_distances(points, V[i], V[(i + 1) % V.shape[0]]))
    dist = np.sqrt(d2)
    dist[inside] = 0.0
    return dist


def _distance_field_ellipse(points: np.ndarray, ell: RiskEllipse) -> np.ndarray:
    """Exact distances via the principal-frame root, bisected in batch."""
    w, V = np.linalg.eigh(ell.F)
    axes = 1.0 / np.sqrt(w)
    U = (points - ell.b) @ (ell.A @ V)
    a2 = axes**2
    inside = np.sum((U / axes) ** 2, axis=1) <= 1.0

    def f(t):
        return np.sum((axes * U / (t[:, None] + a2)) ** 2, axis=1) - 1.0

    t_lo = np.zeros(points.shape[0])
    t_hi = np.maximum(np.linalg.norm(U * axes, axis=1), 1.0)
    for _ in range(60):
        grow = f(t_hi) > 0.0
        if not grow.any():
            break
        t_hi[grow] *= 2.0
    for _ in range(100):
        t_mid = 0.5 * (t_lo + t_hi)
        above = f(t_mid) > 0.0
        t_lo = np.where(above, t_mid, t_lo)
        t_hi = np.where(above, t_hi, t_mid)
    t = 0.5 * (t_lo + t_hi)
    dist = np.linalg.norm(U * (t[:, None] / (t[:, None] + a2)), axis=1)
    dist[inside] = 0.0
    return dist


@dataclass(frozen=True)
class GridEnvironment:
    """Search world: rectangular bounds plus world-frame obstacle sets."""

    bounds: tuple  # (xmin, xmax, ymin, ymax)
    obstacles: tuple

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.bounds
        if xmin >= xmax or ymin >= ymax:
            raise ValueError("degenerate bounds")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def in_bounds(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    @cached_property
    def _clearance_field(self) -> np.ndarray:
        xmin, xmax, ymin, ymax = self.bounds
        nx = int(math.floor((xmax - xmin) / RASTER_RESOLUTION)) + 1
        ny = int(math.floor((ymax - ymin) / RASTER_RESOLUTION)) + 1
        xs = xmin + RASTER_RESOLUTION * np.arange(nx)
        ys = ymin + RASTER_RESOLUTION * np.arange(ny)
        XX, YY = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([XX.ravel(), YY.ravel()], axis=1)
        dist = np.full(pts.shape[0], np.inf)
        for obs in self.obstacles:
            if isinstance(obs, RiskEllipse):
                dist = np.minimum(dist, _distance_field_ellipse(pts, obs))
            else:
                dist = np.minimum(dist, _distance_field_polytope(pts, obs))
        return dist.reshape(nx, ny)

    def clearance_at(self, x: float, y: float) -> float:
        """Distance to the nearest obstacle at the nearest lattice node."""
        xmin, _, ymin, _ = self.bounds
        field = self._clearance_field
        i = int(round((x - xmin) / RASTER_RESOLUTION))
        j = int(round((y - ymin) / RASTER_RESOLUTION))
        i = min(max(i, 0), field.shape[0] - 1)
        j = min(max(j, 0), field.shape[1] - 1)
        return float(field[i, j])


@dataclass(frozen=True)
class InitialPath:
    """Search output: poses visited and the primitive speed per segment."""

    poses: tuple
    speeds: tuple  # signed primitive speed for segment i -> i+1
    cost: float

    def __post_init__(self):
        if len(self.poses) != len(self.speeds) + 1:
            raise ValueError("need one speed per segment")

    def positions(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses])


def _point_free(env: GridEnvironment, x: float, y: float, inflation: float) -> bool:
    if not env.in_bounds(x, y):
        return False
    return env.clearance_at(x, y) >= inflation


def _footprint_free(env: GridEnvironment, pose: Pose2, profile: Polytope) -> bool:
    if not env.in_bounds(pose.x, pose.y):
        return False
    world = transform_polytope(profile, pose)
    for obs in env.obstacles:
        if isinstance(obs, RiskEllipse):
            if polytope_overlaps_ellipse(world, obs):
                return False
        elif polytopes_overlap(world, obs):
            return False
    return True


def hybrid_a_star(
    env: GridEnvironment,
    start: Pose2,
    goal: Pose2,
    profile: Optional[Polytope] = None,
    check_mode: str = "loose",
    inflation: float = LOOSE_INFLATION,
    speed_options: Sequence[float] = SPEED_OPTIONS,
    turn_options: Sequence[float] = TURN_OPTIONS,
) -> InitialPath:
    """Search a primitive path from start into the goal region.

    check_mode "loose" treats the vehicle as a point and requires
    clearance of at least `inflation` from every obstacle at every
    substep, with clearances sampled from the environment's rasterized
    field; "strict" requires the transformed footprint polytope to be
    overlap-free instead (profile required, checked exactly).  Cost is
    summed primitive arc length; ties in total cost break toward the
    lower heuristic, then in expansion order.

    Raises:
        NoPathError: start or goal fails the collision check, or the
            search space is exhausted.
        ValueError: unknown check_mode or missing profile.
    """
    if check_mode not in ("loose", "strict"):
        raise ValueError(f"unknown check_mode {check_mode!r}")
    if check_mode == "strict" and profile is None:
        raise ValueError("strict checking needs a vehicle profile")

    def pose_free(pose: Pose2) -> bool:
        if check_mode == "loose":
            return _point_free(env, pose.x, pose.y, inflation)
        return _footprint_free(env, pose, profile)

    if not pose_free(start):
        raise NoPathError("start pose fails the collision check")
    if not pose_free(goal):
        raise NoPathError("goal pose fails the collision check")

    goal_pos = goal.position
    dt = PRIMITIVE_TIME / SUBSTEPS

    def heuristic(pose: Pose2) -> float:
        return math.hypot(pose.x - goal_pos[0], pose.y - goal_pos[1])

    def bin_of(pose: Pose2) -> tuple:
        return (
            int(math.floor(pose.x / GRID_RESOLUTION)),
            int(math.floor(pose.y / GRID_RESOLUTION)),
            int((pose.theta + math.pi) // (2.0 * math.pi / HEADING_BINS))
            % HEADING_BINS,
        )

    # parent map: bin -> (parent_bin, primitive poses, speed); best g per bin
    best_g = {bin_of(start): 0.0}
    parents = {}
    counter = 0
    h0 = heuristic(start)
    heap = [(h0, h0, counter, start, 0.0)]
    expansions = 0

    while heap:
        f, h, _, pose, g = heapq.heappop(heap)
        key = bin_of(pose)
        if g > best_g.get(key, np.inf):
            continue
        if (
            heuristic(pose) <= GOAL_POSITION_TOL
            and abs(normalize_angle(pose.theta - goal.theta)) <= GOAL_HEADING_TOL
        ):
            return _reconstruct(parents, key, start)
        expansions += 1
        if expansions > MAX_EXPANSIONS:
            break
        for v in speed_options:
            for omega in turn_options:
                sub_poses = []
                current = pose
                ok = True
                for _ in range(SUBSTEPS):
                    current = Pose2(
                        current.x + v * math.cos(current.theta) * dt,
                        current.y + v * math.sin(current.theta) * dt,
                        current.theta + omega * dt,
                    )
                    if not pose_free(current):
                        ok = False
                        break
                    sub_poses.append(current)
                if not ok:
                    continue
                g_new = g + abs(v) * PRIMITIVE_TIME
                new_key = bin_of(current)
                if g_new < best_g.get(new_key, np.inf) - 1e-12:
                    best_g[new_key] = g_new
                    parents[new_key] = (key, tuple(sub_poses), v)
                    h_new = heuristic(current)
                    counter += 1
                    heapq.heappush(
                        heap, (g_new + h_new, h_new, counter, current, g_new)
                    )
    raise NoPathError("search space exhausted without reaching the goal")


def _reconstruct(parents: dict, key: tuple, start: Pose2) -> InitialPath:
    segments = []
    while key in parents:
        key, sub_poses, v = parents[key]
        segments.append((sub_poses, v))
    segments.reverse()
    poses = [start]
    speeds = []
    cost = 0.0
    for sub_poses, v in segments:
        for p in sub_poses:
            poses.append(p)
            speeds.append(v)
        cost += abs(v) * PRIMITIVE_TIME
    return InitialPath(tuple(poses), tuple(speeds), cost)


def resample_path(
    path: InitialPath,
    n_steps: int,
    dt: float,
    v_min: float = -2.0,
    v_max: float = 2.0,
    omega_max: float = math.pi / 6.0,
):
    """Convert a search path into a dynamically consistent seed trajectory.

    An arc-length cursor advances along the path polyline at the
    recorded per-segment speed magnitude; each control period's target
    is the interpolated pose at the cursor, pinned at the path end once
    reached.  Controls are back-solved from consecutive states through
    the unicycle model (heading-projected displacement and wrapped
    heading difference over dt), clamped to the control box, and rolled
    out so the returned trajectory satisfies the model exactly: where
    clamping bites, the states deviate from the path rather than break
    the dynamics.
    """
    from .planner import Trajectory, kinematic_step

    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    positions = path.positions()
    seg_vec = np.diff(positions, axis=0)
    seg_len = np.linalg.norm(seg_vec, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])

    def pose_at(s: float) -> np.ndarray:
        if total <= 1e-12 or s >= total:
            p = path.poses[-1]
            return np.array([p.x, p.y, p.theta])
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(max(i, 0), len(seg_len) - 1)
        frac = (s - cum[i]) / max(seg_len[i], 1e-12)
        pos = positions[i] + frac * seg_vec[i]
        th0 = path.poses[i].theta
        th1 = path.poses[i + 1].theta
        theta = th0 + frac * normalize_angle(th1 - th0)
        return np.array([pos[0], pos[1], theta])

    def speed_at(s: float) -> float:
        if not path.speeds:
            return 0.0
        if s >= total:
            return 0.0
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(max(i, 0), len(path.speeds) - 1)
        return abs(path.speeds[i])

    start = path.poses[0]
    states = np.zeros((n_steps + 1, 3))
    states[0] = np.array([start.x, start.y, start.theta])
    controls = np.zeros((n_steps, 2))
    s = 0.0
    current = states[0]
    for k in range(n_steps):
        s = min(s + speed_at(s) * dt, total)
        target = pose_at(s)
        c, sn = math.cos(current[2]), math.sin(current[2])
        v = ((target[0] - current[0]) * c + (target[1] - current[1]) * sn) / dt
        omega = normalize_angle(target[2] - current[2]) / dt
        v = min(max(v, v_min), v_max)
        omega = min(max(omega, -omega_max), omega_max)
        controls[k] = (v, omega)
        current = kinematic_step(current, controls[k], dt)
        states[k + 1] = current
    return Trajectory(states, controls, dt)
