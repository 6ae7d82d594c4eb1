"""Receding-horizon trajectory optimization with dual collision certificates.

Each control cycle assembles a nonlinear program over N states, N
controls and per-obstacle dual variables.  Collision avoidance enters
through residuals of the Lagrangian dual of the set-distance problem:
any dual-feasible point certifies a lower bound on the true Euclidean
distance between the vehicle footprint and an obstacle set, so a
converged solution is collision-free by construction, not by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import nlp, prediction
from .uncertainty import risk_ellipse
from .geometry import (
    Polytope,
    Pose2,
    RiskEllipse,
    distance_point_to_ellipse,
    distance_point_to_polytope,
    distance_polytope_to_ellipse,
    distance_polytope_to_polytope,
    normalize_angle,
    transform_polytope,
)

# Smoothing constant for the norm terms in the objective: every norm is
# replaced by sqrt(|.|^2 + eps^2) - eps, which is exact at 0 and C^2.
SMOOTH_EPS = 1e-6


class PlanningError(RuntimeError):
    """Planning cannot proceed (no warm start, first solve failed, ...)."""


@dataclass(frozen=True)
class ControlLimits:
    """Speed and turn-rate box for the differential-drive vehicle."""

    v_min: float = -2.0
    v_max: float = 2.0
    omega_max: float = math.pi / 6.0


@dataclass
class PlannerConfig:
    """Horizon, weights and tolerances of the per-cycle trajectory NLP."""

    horizon: int = 20
    dt: float = 0.1
    # The goal weight must strictly dominate the tracking weight: both
    # terms pull with near-unit gradients (norms of position errors),
    # so at weight_track >= weight_goal keeping the previous plan is
    # always optimal and the receding horizon never advances.
    weight_track: float = 0.1
    weight_goal: float = 1.0
    weight_effort: float = 0.1
    d_min: float = 0.0
    alpha: float = 0.1
    gamma_min: float = 1e-4
    goal_tolerance: float = 0.3
    limits: ControlLimits = field(default_factory=ControlLimits)
    state_bounds: Optional[tuple] = None  # (xmin, xmax, ymin, ymax)
    solver: nlp.SolveOptions = field(default_factory=nlp.SolveOptions)


def kinematic_step(state: np.ndarray, control: np.ndarray, dt: float) -> np.ndarray:
    """Forward Euler step of the unicycle model, heading normalized."""
    x, y, theta = (float(s) for s in state)
    v, omega = (float(c) for c in control)
    return np.array(
        [
            x + v * math.cos(theta) * dt,
            y + v * math.sin(theta) * dt,
            normalize_angle(theta + omega * dt),
        ]
    )


@dataclass(frozen=True)
class Trajectory:
    """States (N+1, 3) and controls (N, 2) consistent with the model.

    states[k+1] must equal the kinematic step of states[k] under
    controls[k] to within 1e-9 (headings compared modulo 2 pi).
    """

    states: np.ndarray
    controls: np.ndarray
    dt: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float).reshape(-1, 2)
        if states.ndim != 2 or states.shape[1] != 3:
            raise ValueError("states must be (N+1, 3)")
        if states.shape[0] != controls.shape[0] + 1:
            raise ValueError("need exactly one more state than controls")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        for k in range(controls.shape[0]):
            pred = kinematic_step(states[k], controls[k], self.dt)
            err = max(
                abs(pred[0] - states[k + 1, 0]),
                abs(pred[1] - states[k + 1, 1]),
                abs(normalize_angle(states[k + 1, 2] - pred[2])),
            )
            if err > 1e-9:
                raise ValueError(f"inconsistent dynamics at step {k}: {err:.3e}")

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]

    def positions(self) -> np.ndarray:
        return self.states[:, :2]


def rollout(x0: np.ndarray, controls: np.ndarray, dt: float) -> Trajectory:
    """Integrate controls from x0 into a dynamically consistent trajectory."""
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    states = np.zeros((controls.shape[0] + 1, 3))
    states[0] = np.asarray(x0, dtype=float)
    states[0, 2] = normalize_angle(states[0, 2])
    for k in range(controls.shape[0]):
        states[k + 1] = kinematic_step(states[k], controls[k], dt)
    return Trajectory(states, controls, dt)


# ---------------------------------------------------------------------------
# Obstacle descriptions consumed by the NLP assembly


@dataclass(frozen=True)
class EllipseTube:
    """One ellipse per horizon step (risk forecast of a moving obstacle)."""

    ellipses: tuple

    @classmethod
    def constant(cls, ellipse: RiskEllipse, n_steps: int) -> "EllipseTube":
        return cls(tuple([ellipse] * n_steps))

    def __len__(self):
        return len(self.ellipses)


@dataclass(frozen=True)
class StaticPolytope:
    """A fixed world-frame polygonal obstacle."""

    poly: Polytope


# ---------------------------------------------------------------------------
# Dual residual reference implementations (single step, single obstacle)


def ellipse_dual_residuals(
    position: np.ndarray,
    heading: float,
    lam: np.ndarray,
    mu: np.ndarray,
    gamma: float,
    profile: Polytope,
    ellipse: RiskEllipse,
    d_min: float = 0.0,
) -> np.ndarray:
    """Residuals [margin, norm_slack, align_x, align_y] for one pose.

    margin >= 0 and norm_slack >= 0 together with align = 0, mu >= 0 and
    gamma > 0 certify that the vehicle polytope at (position, heading)
    keeps Euclidean distance at least d_min from the ellipse: for any
    such dual point, -(1/(4 gamma)) lam^T M lam + lam^T (t - b)
    - mu^T g - gamma is a lower bound on the set distance
    (M = A F^-1 A^T).
    """
    t = np.asarray(position, dtype=float).reshape(2)
    lam = np.asarray(lam, dtype=float).reshape(2)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    M = ellipse.A @ np.linalg.inv(ellipse.F) @ ellipse.A.T
    c, s = math.cos(heading), math.sin(heading)
    Rt_lam = np.array([c * lam[0] + s * lam[1], -s * lam[0] + c * lam[1]])
    margin = (
        -float(lam @ M @ lam) / (4.0 * gamma)
        + float(lam @ (t - ellipse.b))
        - float(mu @ profile.g)
        - gamma
        - d_min
    )
    norm_slack = 1.0 - float(lam @ lam)
    align = Rt_lam + profile.G.T @ mu
    return np.array([margin, norm_slack, align[0], align[1]])


def polytope_dual_residuals(
    position: np.ndarray,
    heading: float,
    lam: np.ndarray,
    mu: np.ndarray,
    profile: Polytope,
    obstacle: Polytope,
    d_min: float = 0.0,
) -> np.ndarray:
    """Residuals [margin, norm_slack, align_x, align_y] for one pose.

    With lam >= 0 (per obstacle face) and mu >= 0 (per vehicle face),
    margin >= 0, norm_slack >= 0 and align = 0 certify set distance of at
    least d_min: lam^T (Go t - go) - mu^T g lower-bounds the distance
    whenever ||Go^T lam|| <= 1 and G^T mu + R^T Go^T lam = 0.
    """
    t = np.asarray(position, dtype=float).reshape(2)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Go, go = obstacle.G, obstacle.g
    c, s = math.cos(heading), math.sin(heading)
    p = Go.T @ lam
    Rt_p = np.array([c * p[0] + s * p[1], -s * p[0] + c * p[1]])
    margin = float(lam @ (Go @ t - go)) - float(mu @ profile.g) - d_min
    norm_slack = 1.0 - float(p @ p)
    align = Rt_p + profile.G.T @ mu
    return np.array([margin, norm_slack, align[0], align[1]])


# ---------------------------------------------------------------------------
# Constraint blocks (vectorized over the horizon)


class _Block:
    """Per-obstacle constraint block; subclasses fill values/Jacobians.

    add_hessian accumulates the weighted sum of the block's constraint
    Hessians into H (one weight per constraint row); compute must have
    run at the same point first so the cached intermediates match.
    """

    n_duals = 0
    n_eq = 0
    n_ineq = 0

    def set_offsets(self, var_off: int, eq_off: int, in_off: int):
        self.var_off = var_off
        self.eq_off = eq_off
        self.in_off = in_off

    def add_hessian(self, cs, sn, x_cols, y_cols, th_cols, w_eq, w_in, H):
        raise NotImplementedError


class _EllipseBlock(_Block):
    """Polytope vehicle against an ellipse tube.

    Duals per step: lam (2, free), mu (m, >= 0), gamma (>= gamma_min).
    Rows per step: margin >= 0, norm slack >= 0, alignment = 0 (2 rows).
    """

    def __init__(self, tube: EllipseTube, profile: Polytope, d_min: float,
                 gamma_min: float):
        N = len(tube)
        self.N = N
        self.profile = profile
        self.m = profile.G.shape[0]
        self.d_eff = d_min
        self.gamma_min = gamma_min
        self.M = np.stack(
            [e.A @ np.linalg.inv(e.F) @ e.A.T for e in tube.ellipses]
        )
        self.B = np.stack([e.b for e in tube.ellipses])
        self.n_duals = N * (2 + self.m + 1)
        self.n_eq = 2 * N
        self.n_ineq = 2 * N

    def set_offsets(self, var_off, eq_off, in_off):
        super().set_offsets(var_off, eq_off, in_off)
        N, m = self.N, self.m
        self.lam_sl = slice(var_off, var_off + 2 * N)
        self.mu_sl = slice(var_off + 2 * N, var_off + 2 * N + m * N)
        self.gam_sl = slice(var_off + 2 * N + m * N, var_off + self.n_duals)
        self.lam_cols = np.arange(var_off, var_off + 2 * N).reshape(N, 2)
        self.mu_cols = np.arange(
            var_off + 2 * N, var_off + 2 * N + m * N
        ).reshape(N, m)
        self.gam_cols = np.arange(var_off + 2 * N + m * N, var_off + self.n_duals)
        self.r1_rows = np.arange(in_off, in_off + N)
        self.r2_rows = np.arange(in_off + N, in_off + 2 * N)
        self.r3_rows = np.arange(eq_off, eq_off + 2 * N).reshape(N, 2)

    def dual_bounds(self):
        lower = np.full(self.n_duals, -np.inf)
        upper = np.full(self.n_duals, np.inf)
        lower[2 * self.N : 2 * self.N + self.m * self.N] = 0.0
        lower[2 * self.N + self.m * self.N :] = self.gamma_min
        return lower, upper

    def warm_duals(self, positions: np.ndarray) -> np.ndarray:
        d = positions - self.B
        norms = np.linalg.norm(d, axis=1)
        unit = np.where(norms[:, None] > 1e-9, d / np.maximum(norms, 1e-9)[:, None],
                        np.array([1.0, 0.0]))
        out = np.empty(self.n_duals)
        out[: 2 * self.N] = (0.1 * unit).reshape(-1)
        out[2 * self.N : 2 * self.N + self.m * self.N] = 0.01
        out[2 * self.N + self.m * self.N :] = 0.1
        return out

    def compute(self, X, cs, sn, z, ce, ci):
        N, m = self.N, self.m
        lam = z[self.lam_sl].reshape(N, 2)
        mu = z[self.mu_sl].reshape(N, m)
        gam = z[self.gam_sl]
        t = X[:, :2]
        Mlam = np.einsum("nij,nj->ni", self.M, lam)
        quad = np.einsum("ni,ni->n", lam, Mlam)
        ci[self.r1_rows] = (
            -quad / (4.0 * gam)
            + np.einsum("ni,ni->n", lam, t - self.B)
            - mu @ self.profile.g
            - gam
            - self.d_eff
        )
        ci[self.r2_rows] = 1.0 - np.einsum("ni,ni->n", lam, lam)
        muG = mu @ self.profile.G  # rows are G^T mu
        ce[self.r3_rows[:, 0]] = cs * lam[:, 0] + sn * lam[:, 1] + muG[:, 0]
        ce[self.r3_rows[:, 1]] = -sn * lam[:, 0] + cs * lam[:, 1] + muG[:, 1]
        self._cache = (lam, mu, gam, t, Mlam, quad)

    def fill_jacobians(self, X, cs, sn, x_cols, y_cols, th_cols, Je, Ji):
        N, m = self.N, self.m
        lam, mu, gam, t, Mlam, quad = self._cache
        G = self.profile.G
        # margin row: d/dt = lam, d/dlam, d/dmu = -g, d/dgamma
        Ji[self.r1_rows, x_cols] = lam[:, 0]
        Ji[self.r1_rows, y_cols] = lam[:, 1]
        Ji[self.r1_rows[:, None], self.lam_cols] = (
            -Mlam / (2.0 * gam)[:, None] + (t - self.B)
        )
        Ji[self.r1_rows[:, None], self.mu_cols] = -self.profile.g
        Ji[self.r1_rows, self.gam_cols] = quad / (4.0 * gam**2) - 1.0
        # norm slack row
        Ji[self.r2_rows[:, None], self.lam_cols] = -2.0 * lam
        # alignment rows: R^T lam + G^T mu
        r30, r31 = self.r3_rows[:, 0], self.r3_rows[:, 1]
        Je[r30, self.lam_cols[:, 0]] = cs
        Je[r30, self.lam_cols[:, 1]] = sn
        Je[r31, self.lam_cols[:, 0]] = -sn
        Je[r31, self.lam_cols[:, 1]] = cs
        Je[r30[:, None], self.mu_cols] = G[:, 0]
        Je[r31[:, None], self.mu_cols] = G[:, 1]
        Je[r30, th_cols] = -sn * lam[:, 0] + cs * lam[:, 1]
        Je[r31, th_cols] = -cs * lam[:, 0] - sn * lam[:, 1]

    def add_hessian(self, cs, sn, x_cols, y_cols, th_cols, w_eq, w_in, H):
        lam, mu, gam, t, Mlam, quad = self._cache
        L = self.lam_cols
        w1 = w_in[self.r1_rows]
        w2 = w_in[self.r2_rows]
        # margin: lam-lam -M/(2 gam), lam-gam M lam/(2 gam^2),
        # gam-gam -quad/(2 gam^3), lam-position identity
        H[L[:, :, None], L[:, None, :]] += (-0.5 * w1 / gam)[:, None, None] * self.M
        cross = (0.5 * w1 / gam**2)[:, None] * Mlam
        H[L, self.gam_cols[:, None]] += cross
        H[self.gam_cols[:, None], L] += cross
        H[self.gam_cols, self.gam_cols] += -0.5 * w1 * quad / gam**3
        H[L[:, 0], x_cols] += w1
        H[x_cols, L[:, 0]] += w1
        H[L[:, 1], y_cols] += w1
        H[y_cols, L[:, 1]] += w1
        # norm slack: -2 I over lam
        H[L[:, 0], L[:, 0]] += -2.0 * w2
        H[L[:, 1], L[:, 1]] += -2.0 * w2
        # alignment rows couple heading with lam through the rotation
        w30 = w_eq[self.r3_rows[:, 0]]
        w31 = w_eq[self.r3_rows[:, 1]]
        H[th_cols, th_cols] += w30 * (-cs * lam[:, 0] - sn * lam[:, 1])
        H[th_cols, th_cols] += w31 * (sn * lam[:, 0] - cs * lam[:, 1])
        c0 = -w30 * sn - w31 * cs
        c1 = w30 * cs - w31 * sn
        H[th_cols, L[:, 0]] += c0
        H[L[:, 0], th_cols] += c0
        H[th_cols, L[:, 1]] += c1
        H[L[:, 1], th_cols] += c1


class _PolytopeBlock(_Block):
    """Polytope vehicle against a fixed polygonal obstacle.

    Duals per step: lam (one per obstacle face, >= 0), mu (per vehicle
    face, >= 0).  Rows per step mirror the ellipse block.
    """

    def __init__(self, obstacle: Polytope, profile: Polytope, d_min: float,
                 n_steps: int):
        self.N = n_steps
        self.profile = profile
        self.obstacle = obstacle
        self.m = profile.G.shape[0]
        self.mo = obstacle.G.shape[0]
        self.d_eff = d_min
        self.Go2 = obstacle.G @ obstacle.G.T
        self.n_duals = n_steps * (self.mo + self.m)
        self.n_eq = 2 * n_steps
        self.n_ineq = 2 * n_steps

    def set_offsets(self, var_off, eq_off, in_off):
        super().set_offsets(var_off, eq_off, in_off)
        N, m, mo = self.N, self.m, self.mo
        self.lam_sl = slice(var_off, var_off + mo * N)
        self.mu_sl = slice(var_off + mo * N, var_off + self.n_duals)
        self.lam_cols = np.arange(var_off, var_off + mo * N).reshape(N, mo)
        self.mu_cols = np.arange(var_off + mo * N, var_off + self.n_duals).reshape(N, m)
        self.r1_rows = np.arange(in_off, in_off + N)
        self.r2_rows = np.arange(in_off + N, in_off + 2 * N)
        self.r3_rows = np.arange(eq_off, eq_off + 2 * N).reshape(N, 2)

    def dual_bounds(self):
        return np.zeros(self.n_duals), np.full(self.n_duals, np.inf)

    def warm_duals(self, positions: np.ndarray) -> np.ndarray:
        return np.full(self.n_duals, 0.01)

    def compute(self, X, cs, sn, z, ce, ci):
        N = self.N
        lam = z[self.lam_sl].reshape(N, self.mo)
        mu = z[self.mu_sl].reshape(N, self.m)
        t = X[:, :2]
        W = t @ self.obstacle.G.T - self.obstacle.g  # Go t - go per step
        P = lam @ self.obstacle.G  # Go^T lam per step
        ci[self.r1_rows] = (
            np.einsum("ni,ni->n", lam, W) - mu @ self.profile.g - self.d_eff
        )
        ci[self.r2_rows] = 1.0 - np.einsum("ni,ni->n", P, P)
        muG = mu @ self.profile.G
        ce[self.r3_rows[:, 0]] = cs * P[:, 0] + sn * P[:, 1] + muG[:, 0]
        ce[self.r3_rows[:, 1]] = -sn * P[:, 0] + cs * P[:, 1] + muG[:, 1]
        self._cache = (lam, mu, W, P)

    def fill_jacobians(self, X, cs, sn, x_cols, y_cols, th_cols, Je, Ji):
        lam, mu, W, P = self._cache
        G = self.profile.G
        Go = self.obstacle.G
        Ji[self.r1_rows, x_cols] = P[:, 0]
        Ji[self.r1_rows, y_cols] = P[:, 1]
        Ji[self.r1_rows[:, None], self.lam_cols] = W
        Ji[self.r1_rows[:, None], self.mu_cols] = -self.profile.g
        Ji[self.r2_rows[:, None], self.lam_cols] = -2.0 * (P @ Go.T)
        r30, r31 = self.r3_rows[:, 0], self.r3_rows[:, 1]
        Je[r30[:, None], self.lam_cols] = (
            cs[:, None] * Go[None, :, 0] + sn[:, None] * Go[None, :, 1]
        )
        Je[r31[:, None], self.lam_cols] = (
            -sn[:, None] * Go[None, :, 0] + cs[:, None] * Go[None, :, 1]
        )
        Je[r30[:, None], self.mu_cols] = G[:, 0]
        Je[r31[:, None], self.mu_cols] = G[:, 1]
        Je[r30, th_cols] = -sn * P[:, 0] + cs * P[:, 1]
        Je[r31, th_cols] = -cs * P[:, 0] - sn * P[:, 1]

    def add_hessian(self, cs, sn, x_cols, y_cols, th_cols, w_eq, w_in, H):
        lam, mu, W, P = self._cache
        Go = self.obstacle.G
        L = self.lam_cols
        w1 = w_in[self.r1_rows]
        w2 = w_in[self.r2_rows]
        # margin: lam-position cross through the obstacle faces
        cx = w1[:, None] * Go[None, :, 0]
        cy = w1[:, None] * Go[None, :, 1]
        H[L, x_cols[:, None]] += cx
        H[x_cols[:, None], L] += cx
        H[L, y_cols[:, None]] += cy
        H[y_cols[:, None], L] += cy
        # norm slack: -2 Go Go^T over lam
        H[L[:, :, None], L[:, None, :]] += (-2.0 * w2)[:, None, None] * self.Go2
        # alignment rows couple heading with lam through the rotation
        w30 = w_eq[self.r3_rows[:, 0]]
        w31 = w_eq[self.r3_rows[:, 1]]
        H[th_cols, th_cols] += w30 * (-cs * P[:, 0] - sn * P[:, 1])
        H[th_cols, th_cols] += w31 * (sn * P[:, 0] - cs * P[:, 1])
        crs = (-w30 * sn - w31 * cs)[:, None] * Go[None, :, 0] + (
            w30 * cs - w31 * sn
        )[:, None] * Go[None, :, 1]
        H[th_cols[:, None], L] += crs
        H[L, th_cols[:, None]] += crs


class _DiskEllipseBlock(_Block):
    """Disk vehicle against an ellipse tube: point dual plus radius offset."""

    def __init__(self, tube: EllipseTube, radius: float, d_min: float,
                 gamma_min: float):
        N = len(tube)
        self.N = N
        self.d_eff = d_min + radius
        self.gamma_min = gamma_min
        self.M = np.stack(
            [e.A @ np.linalg.inv(e.F) @ e.A.T for e in tube.ellipses]
        )
        self.B = np.stack([e.b for e in tube.ellipses])
        self.n_duals = N * 3  # lam (2), gamma (1)
        self.n_eq = 0
        self.n_ineq = 2 * N

    def set_offsets(self, var_off, eq_off, in_off):
        super().set_offsets(var_off, eq_off, in_off)
        N = self.N
        self.lam_sl = slice(var_off, var_off + 2 * N)
        self.gam_sl = slice(var_off + 2 * N, var_off + 3 * N)
        self.lam_cols = np.arange(var_off, var_off + 2 * N).reshape(N, 2)
        self.gam_cols = np.arange(var_off + 2 * N, var_off + 3 * N)
        self.r1_rows = np.arange(in_off, in_off + N)
        self.r2_rows = np.arange(in_off + N, in_off + 2 * N)

    def dual_bounds(self):
        lower = np.full(self.n_duals, -np.inf)
        lower[2 * self.N :] = self.gamma_min
        return lower, np.full(self.n_duals, np.inf)

    def warm_duals(self, positions: np.ndarray) -> np.ndarray:
        d = positions - self.B
        norms = np.linalg.norm(d, axis=1)
        unit = np.where(norms[:, None] > 1e-9, d / np.maximum(norms, 1e-9)[:, None],
                        np.array([1.0, 0.0]))
        out = np.empty(self.n_duals)
        out[: 2 * self.N] = (0.1 * unit).reshape(-1)
        out[2 * self.N :] = 0.1
        return out

    def compute(self, X, cs, sn, z, ce, ci):
        N = self.N
        lam = z[self.lam_sl].reshape(N, 2)
        gam = z[self.gam_sl]
        t = X[:, :2]
        Mlam = np.einsum("nij,nj->ni", self.M, lam)
        quad = np.einsum("ni,ni->n", lam, Mlam)
        ci[self.r1_rows] = (
            -quad / (4.0 * gam)
            + np.einsum("ni,ni->n", lam, t - self.B)
            - gam
            - self.d_eff
        )
        ci[self.r2_rows] = 1.0 - np.einsum("ni,ni->n", lam, lam)
        self._cache = (lam, gam, t, Mlam, quad)

    def fill_jacobians(self, X, cs, sn, x_cols, y_cols, th_cols, Je, Ji):
        lam, gam, t, Mlam, quad = self._cache
        Ji[self.r1_rows, x_cols] = lam[:, 0]
        Ji[self.r1_rows, y_cols] = lam[:, 1]
        Ji[self.r1_rows[:, None], self.lam_cols] = (
            -Mlam / (2.0 * gam)[:, None] + (t - self.B)
        )
        Ji[self.r1_rows, self.gam_cols] = quad / (4.0 * gam**2) - 1.0
        Ji[self.r2_rows[:, None], self.lam_cols] = -2.0 * lam

    def add_hessian(self, cs, sn, x_cols, y_cols, th_cols, w_eq, w_in, H):
        lam, gam, t, Mlam, quad = self._cache
        L = self.lam_cols
        w1 = w_in[self.r1_rows]
        w2 = w_in[self.r2_rows]
        H[L[:, :, None], L[:, None, :]] += (-0.5 * w1 / gam)[:, None, None] * self.M
        cross = (0.5 * w1 / gam**2)[:, None] * Mlam
        H[L, self.gam_cols[:, None]] += cross
        H[self.gam_cols[:, None], L] += cross
        H[self.gam_cols, self.gam_cols] += -0.5 * w1 * quad / gam**3
        H[L[:, 0], x_cols] += w1
        H[x_cols, L[:, 0]] += w1
        H[L[:, 1], y_cols] += w1
        H[y_cols, L[:, 1]] += w1
        H[L[:, 0], L[:, 0]] += -2.0 * w2
        H[L[:, 1], L[:, 1]] += -2.0 * w2


class _DiskPolytopeBlock(_Block):
    """Disk vehicle against a fixed polygonal obstacle."""

    def __init__(self, obstacle: Polytope, radius: float, d_min: float,
                 n_steps: int):
        self.N = n_steps
        self.obstacle = obstacle
        self.mo = obstacle.G.shape[0]
        self.d_eff = d_min + radius
        self.Go2 = obstacle.G @ obstacle.G.T
        self.n_duals = n_steps * self.mo
        self.n_eq = 0
        self.n_ineq = 2 * n_steps

    def set_offsets(self, var_off, eq_off, in_off):
        super().set_offsets(var_off, eq_off, in_off)
        N = self.N
        self.lam_sl = slice(var_off, var_off + self.n_duals)
        self.lam_cols = np.arange(var_off, var_off + self.n_duals).reshape(
            N, self.mo
        )
        self.r1_rows = np.arange(in_off, in_off + N)
        self.r2_rows = np.arange(in_off + N, in_off + 2 * N)

    def dual_bounds(self):
        return np.zeros(self.n_duals), np.full(self.n_duals, np.inf)

    def warm_duals(self, positions: np.ndarray) -> np.ndarray:
        return np.full(self.n_duals, 0.01)

    def compute(self, X, cs, sn, z, ce, ci):
        lam = z[self.lam_sl].reshape(self.N, self.mo)
        t = X[:, :2]
        W = t @ self.obstacle.G.T - self.obstacle.g
        P = lam @ self.obstacle.G
        ci[self.r1_rows] = np.einsum("ni,ni->n", lam, W) - self.d_eff
        ci[self.r2_rows] = 1.0 - np.einsum("ni,ni->n", P, P)
        self._cache = (lam, W, P)

    def fill_jacobians(self, X, cs, sn, x_cols, y_cols, th_cols, Je, Ji):
        lam, W, P = self._cache
        Go = self.obstacle.G
        Ji[self.r1_rows, x_cols] = P[:, 0]
        Ji[self.r1_rows, y_cols] = P[:, 1]
        Ji[self.r1_rows[:, None], self.lam_cols] = W
        Ji[self.r2_rows[:, None], self.lam_cols] = -2.0 * (P @ Go.T)

    def add_hessian(self, cs, sn, x_cols, y_cols, th_cols, w_eq, w_in, H):
        lam, W, P = self._cache
        Go = self.obstacle.G
        L = self.lam_cols
        w1 = w_in[self.r1_rows]
        w2 = w_in[self.r2_rows]
        cx = w1[:, None] * Go[None, :, 0]
        cy = w1[:, None] * Go[None, :, 1]
        H[L, x_cols[:, None]] += cx
        H[x_cols[:, None], L] += cx
        H[L, y_cols[:, None]] += cy
        H[y_cols[:, None], L] += cy
        H[L[:, :, None], L[:, None, :]] += (-2.0 * w2)[:, None, None] * self.Go2


# ---------------------------------------------------------------------------
# Problem assembly


class PlannerProblem:
    """One control cycle's NLP: variables, callbacks, warm starts.

    Variable layout: states x(1..N) row-major (3N), then controls
    u(1..N) (2N), then one dual block per obstacle.  x(0) is a fixed
    parameter.  Obstacles are given as EllipseTube or StaticPolytope;
    vehicle geometry is either a polytope profile or a disk of given
    radius (disk_radius not None selects the disk constraint family).
    """

    def __init__(
        self,
        x0: np.ndarray,
        goal: np.ndarray,
        profile: Polytope,
        obstacles: Sequence,
        config: PlannerConfig,
        anchor: "Trajectory",
        disk_radius: Optional[float] = None,
    ):
        N = config.horizon
        if anchor.n_steps != N:
            raise ValueError("anchor horizon does not match config")
        self.N = N
        self.x0 = np.asarray(x0, dtype=float).reshape(3)
        self.goal = np.asarray(goal, dtype=float).reshape(2)
        self.profile = profile
        self.config = config
        self.anchor = anchor.states[1:, :2].copy()  # rows k = 1..N
        self.disk_radius = disk_radius

        self.blocks = []
        for obs in obstacles:
            if isinstance(obs, EllipseTube):
                if len(obs) != N:
                    raise ValueError("ellipse tube length does not match horizon")
                if disk_radius is None:
                    self.blocks.append(
                        _EllipseBlock(obs, profile, config.d_min, config.gamma_min)
                    )
                else:
                    self.blocks.append(
                        _DiskEllipseBlock(
                            obs, disk_radius, config.d_min, config.gamma_min
                        )
                    )
            elif isinstance(obs, StaticPolytope):
                if disk_radius is None:
                    self.blocks.append(
                        _PolytopeBlock(obs.poly, profile, config.d_min, N)
                    )
                else:
                    self.blocks.append(
                        _DiskPolytopeBlock(obs.poly, disk_radius, config.d_min, N)
                    )
            else:
                raise TypeError(f"unsupported obstacle type {type(obs)!r}")

        var_off = 5 * N
        eq_off = 3 * N
        in_off = 0
        for blk in self.blocks:
            blk.set_offsets(var_off, eq_off, in_off)
            var_off += blk.n_duals
            eq_off += blk.n_eq
            in_off += blk.n_ineq
        self.n_vars = var_off
        self.n_eq = eq_off
        self.n_ineq = in_off

        self.x_cols = 3 * np.arange(N)
        self.y_cols = self.x_cols + 1
        self.th_cols = self.x_cols + 2
        self.u_cols = 3 * N + 2 * np.arange(N)

        lower = np.full(self.n_vars, -np.inf)
        upper = np.full(self.n_vars, np.inf)
        if config.state_bounds is not None:
            xmin, xmax, ymin, ymax = config.state_bounds
            lower[self.x_cols] = xmin
            upper[self.x_cols] = xmax
            lower[self.y_cols] = ymin
            upper[self.y_cols] = ymax
        lower[self.u_cols] = config.limits.v_min
        upper[self.u_cols] = config.limits.v_max
        lower[self.u_cols + 1] = -config.limits.omega_max
        upper[self.u_cols + 1] = config.limits.omega_max
        for blk in self.blocks:
            lo, up = blk.dual_bounds()
            lower[blk.var_off : blk.var_off + blk.n_duals] = lo
            upper[blk.var_off : blk.var_off + blk.n_duals] = up
        self.lower = lower
        self.upper = upper

        self._key = None

    # -- fused evaluation -------------------------------------------------

    def _ensure(self, z: np.ndarray):
        key = z.tobytes()
        if key == self._key:
            return
        self._key = key
        N = self.N
        cfg = self.config
        X = z[: 3 * N].reshape(N, 3)
        U = z[3 * N : 5 * N].reshape(N, 2)
        cs = np.cos(X[:, 2])
        sn = np.sin(X[:, 2])

        # objective and gradient
        grad = np.zeros(self.n_vars)
        gX = grad[: 3 * N].reshape(N, 3)
        gU = grad[3 * N : 5 * N].reshape(N, 2)
        f = 0.0

        if N > 1 and cfg.weight_track > 0.0:
            diff = X[: N - 1, :2] - self.anchor[: N - 1]
            norms = np.sqrt(np.einsum("ni,ni->n", diff, diff) + SMOOTH_EPS**2)
            f += cfg.weight_track * float(np.sum(norms - SMOOTH_EPS))
            gX[: N - 1, :2] += cfg.weight_track * diff / norms[:, None]

        diff_g = X[:, :2] - self.goal
        norms_g = np.sqrt(np.einsum("ni,ni->n", diff_g, diff_g) + SMOOTH_EPS**2)
        f += cfg.weight_goal * float(np.sum(norms_g - SMOOTH_EPS))
        gX[:, :2] += cfg.weight_goal * diff_g / norms_g[:, None]

        norms_u = np.sqrt(np.einsum("ni,ni->n", U, U) + SMOOTH_EPS**2)
        f += cfg.weight_effort * float(np.sum(norms_u - SMOOTH_EPS))
        gU += cfg.weight_effort * U / norms_u[:, None]
        if N > 1:
            dU = U[1:] - U[:-1]
            norms_d = np.sqrt(np.einsum("ni,ni->n", dU, dU) + SMOOTH_EPS**2)
            f += cfg.weight_effort * float(np.sum(norms_d - SMOOTH_EPS))
            slopes = dU / norms_d[:, None]
            gU[1:] += cfg.weight_effort * slopes
            gU[:-1] -= cfg.weight_effort * slopes

        # constraint values
        ce = np.zeros(self.n_eq)
        ci = np.zeros(self.n_ineq)
        prev = np.vstack([self.x0, X[: N - 1]])
        pc = np.cos(prev[:, 2])
        ps = np.sin(prev[:, 2])
        pred = prev + cfg.dt * np.stack(
            [U[:, 0] * pc, U[:, 0] * ps, U[:, 1]], axis=1
        )
        ce[: 3 * N] = (X - pred).reshape(-1)
        for blk in self.blocks:
            blk.compute(X, cs, sn, z, ce, ci)

        # Jacobians
        Je = np.zeros((self.n_eq, self.n_vars))
        Ji = np.zeros((self.n_ineq, self.n_vars))
        dyn = np.arange(3 * N)
        Je[dyn, dyn] = 1.0
        # dependence of step k's defect on x(k-1) exists for k >= 2
        rows_x = self.x_cols[1:] + 0  # defect-x rows for k = 2..N are 3(k-1)
        Je[rows_x, self.x_cols[:-1]] = -1.0
        Je[rows_x, self.th_cols[:-1]] = cfg.dt * U[1:, 0] * ps[1:]
        Je[rows_x + 1, self.y_cols[:-1]] = -1.0
        Je[rows_x + 1, self.th_cols[:-1]] = -cfg.dt * U[1:, 0] * pc[1:]
        Je[rows_x + 2, self.th_cols[:-1]] = -1.0
        # controls u(k) drive defect k (rows 3(k-1))
        Je[3 * np.arange(N), self.u_cols] = -cfg.dt * pc
        Je[3 * np.arange(N) + 1, self.u_cols] = -cfg.dt * ps
        Je[3 * np.arange(N) + 2, self.u_cols + 1] = -cfg.dt
        for blk in self.blocks:
            blk.fill_jacobians(
                X, cs, sn, self.x_cols, self.y_cols, self.th_cols, Je, Ji
            )

        self._f = f
        self._grad = grad
        self._ce = ce
        self._ci = ci
        self._Je = Je
        self._Ji = Ji

    def _objective_hessian(self, z: np.ndarray) -> np.ndarray:
        """Analytic objective Hessian (dual coordinates are inert).

        Every objective term is a smoothed norm s(d) = sqrt(|d|^2 +
        SMOOTH_EPS^2) - SMOOTH_EPS over a pair of coordinates, whose
        Hessian is (I - d d^T / r^2) / r with r the smoothed norm.
        Near a corner that curvature turns over within any difference
        step, so the solver gets it in closed form.
        """
        N = self.N
        cfg = self.config
        X = z[: 3 * N].reshape(N, 3)
        U = z[3 * N : 5 * N].reshape(N, 2)
        H = np.zeros((self.n_vars, self.n_vars))

        def curvature(diff):
            norms = np.sqrt(np.einsum("ni,ni->n", diff, diff) + SMOOTH_EPS**2)
            unit = diff / norms[:, None]
            eye = np.eye(2)[None, :, :]
            return (eye - unit[:, :, None] * unit[:, None, :]) / norms[:, None, None]

        if N > 1 and cfg.weight_track > 0.0:
            blocks = cfg.weight_track * curvature(
                X[: N - 1, :2] - self.anchor[: N - 1]
            )
            for k in range(N - 1):
                c = 3 * k
                H[c : c + 2, c : c + 2] += blocks[k]

        blocks = cfg.weight_goal * curvature(X[:, :2] - self.goal)
        for k in range(N):
            c = 3 * k
            H[c : c + 2, c : c + 2] += blocks[k]

        blocks = cfg.weight_effort * curvature(U)
        for k in range(N):
            c = 3 * N + 2 * k
            H[c : c + 2, c : c + 2] += blocks[k]

        if N > 1:
            blocks = cfg.weight_effort * curvature(U[1:] - U[:-1])
            for k in range(N - 1):
                a = 3 * N + 2 * k
                b = a + 2
                H[a : a + 2, a : a + 2] += blocks[k]
                H[b : b + 2, b : b + 2] += blocks[k]
                H[a : a + 2, b : b + 2] -= blocks[k]
                H[b : b + 2, a : a + 2] -= blocks[k]
        return H

    def _constraint_hessian(
        self, z: np.ndarray, w_eq: np.ndarray, w_in: np.ndarray
    ) -> np.ndarray:
        """Weighted sum of constraint Hessians, one weight per row.

        Completes the solver's Newton model of the merit: the dynamics
        defects couple each step's speed with the previous heading, and
        the certificate blocks carry the dual-primal curvature.
        """
        self._ensure(z)
        N = self.N
        X = z[: 3 * N].reshape(N, 3)
        U = z[3 * N : 5 * N].reshape(N, 2)
        H = np.zeros((self.n_vars, self.n_vars))
        if N > 1:
            dt = self.config.dt
            pc = np.cos(X[: N - 1, 2])
            ps = np.sin(X[: N - 1, 2])
            thp = self.th_cols[: N - 1]
            u0 = self.u_cols[1:]
            wx = w_eq[self.x_cols[1:]]
            wy = w_eq[self.y_cols[1:]]
            H[thp, thp] += dt * U[1:, 0] * (wx * pc + wy * ps)
            cross = dt * (wx * ps - wy * pc)
            H[thp, u0] += cross
            H[u0, thp] += cross
        cs = np.cos(X[:, 2])
        sn = np.sin(X[:, 2])
        for blk in self.blocks:
            blk.add_hessian(
                cs, sn, self.x_cols, self.y_cols, self.th_cols, w_eq, w_in, H
            )
        return H

    # -- NonlinearProgram interface ---------------------------------------

    def program(self) -> nlp.NonlinearProgram:
        def objective(z):
            self._ensure(z)
            return self._f

        def gradient(z):
            self._ensure(z)
            return self._grad

        def eq_c(z):
            self._ensure(z)
            return self._ce

        def eq_j(z):
            self._ensure(z)
            return self._Je

        def in_c(z):
            self._ensure(z)
            return self._ci

        def in_j(z):
            self._ensure(z)
            return self._Ji

        return nlp.NonlinearProgram(
            n_vars=self.n_vars,
            objective=objective,
            gradient=gradient,
            eq_constraints=eq_c,
            eq_jacobian=eq_j,
            ineq_constraints=in_c,
            ineq_jacobian=in_j,
            lower=self.lower,
            upper=self.upper,
            objective_hessian=self._objective_hessian,
            constraint_hessian=self._constraint_hessian,
        )

    # -- warm starts and extraction ----------------------------------------

    def initial_vector(self, warm: Trajectory) -> np.ndarray:
        if warm.n_steps != self.N:
            raise ValueError("warm trajectory horizon mismatch")
        z = np.zeros(self.n_vars)
        states = warm.states[1:].copy()
        # Unwrap headings so consecutive states stay within pi of each other
        # (the NLP works with unnormalized headings for smoothness).
        prev = self.x0[2]
        for k in range(states.shape[0]):
            states[k, 2] = prev + normalize_angle(states[k, 2] - prev)
            prev = states[k, 2]
        z[: 3 * self.N] = states.reshape(-1)
        z[3 * self.N : 5 * self.N] = warm.controls.reshape(-1)
        for blk in self.blocks:
            z[blk.var_off : blk.var_off + blk.n_duals] = blk.warm_duals(
                states[:, :2]
            )
        return z

    def dual_vector_from(self, z_prev: np.ndarray, shift: bool) -> np.ndarray:
        """Duals copied (optionally shifted one step) from a previous solve."""
        duals = z_prev[5 * self.N :].copy()
        if not shift:
            return duals
        out = duals.copy()
        for blk in self.blocks:
            off = blk.var_off - 5 * self.N
            for size in _dual_groups(blk):
                seg = duals[off : off + size * blk.N].reshape(blk.N, size)
                shifted = np.vstack([seg[1:], seg[-1:]])
                out[off : off + size * blk.N] = shifted.reshape(-1)
                off += size * blk.N
        return out

    def extract(self, z: np.ndarray):
        """(states (N,3), controls (N,2)) from a solution vector."""
        X = z[: 3 * self.N].reshape(self.N, 3).copy()
        U = z[3 * self.N : 5 * self.N].reshape(self.N, 2).copy()
        return X, U

    def shift_multipliers(self, y_eq: np.ndarray, y_in: np.ndarray):
        """Shift per-step multiplier groups one step forward (warm start)."""

        def shift_rows(seg, size, count):
            mat = seg.reshape(count, size)
            return np.vstack([mat[1:], mat[-1:]]).reshape(-1)

        y_eq = np.asarray(y_eq, dtype=float).copy()
        y_in = np.asarray(y_in, dtype=float).copy()
        y_eq[: 3 * self.N] = shift_rows(y_eq[: 3 * self.N], 3, self.N)
        for blk in self.blocks:
            if blk.n_eq:
                sl = slice(blk.eq_off, blk.eq_off + blk.n_eq)
                y_eq[sl] = shift_rows(y_eq[sl], 2, blk.N)
            r1 = slice(blk.in_off, blk.in_off + blk.N)
            r2 = slice(blk.in_off + blk.N, blk.in_off + 2 * blk.N)
            y_in[r1] = shift_rows(y_in[r1], 1, blk.N)
            y_in[r2] = shift_rows(y_in[r2], 1, blk.N)
        return y_eq, y_in


def _dual_groups(blk) -> list:
    """Sizes of the per-step dual groups inside a block's flat layout."""
    if isinstance(blk, _EllipseBlock):
        return [2, blk.m, 1]
    if isinstance(blk, _PolytopeBlock):
        return [blk.mo, blk.m]
    if isinstance(blk, _DiskEllipseBlock):
        return [2, 1]
    if isinstance(blk, _DiskPolytopeBlock):
        return [blk.mo]
    raise TypeError(type(blk))


# ---------------------------------------------------------------------------
# Distance certificates for a single fixed pose (validation workhorse)


def solve_dual_certificate(
    pose: Pose2,
    profile: Polytope,
    obstacle,
    gamma_min: float = 1e-4,
    options: Optional[nlp.SolveOptions] = None,
) -> tuple:
    """Maximize the dual lower bound on the vehicle-obstacle distance.

    Returns (certified_value, SolveResult).  The certificate is valid
    whenever the returned dual point satisfies the residual bounds; by
    weak duality certified_value <= true set distance, with equality at
    the dual optimum for disjoint sets.
    """
    t = pose.position
    theta = pose.theta
    c, s = math.cos(theta), math.sin(theta)
    G, g = profile.G, profile.g
    m = G.shape[0]

    if isinstance(obstacle, RiskEllipse):
        M = obstacle.A @ np.linalg.inv(obstacle.F) @ obstacle.A.T
        b = obstacle.b
        n = 2 + m + 1

        def objective(z):
            lam, mu, gam = z[:2], z[2 : 2 + m], z[2 + m]
            return float(
                lam @ M @ lam / (4.0 * gam) - lam @ (t - b) + mu @ g + gam
            )

        def gradient(z):
            lam, mu, gam = z[:2], z[2 : 2 + m], z[2 + m]
            out = np.empty(n)
            out[:2] = M @ lam / (2.0 * gam) - (t - b)
            out[2 : 2 + m] = g
            out[2 + m] = 1.0 - lam @ M @ lam / (4.0 * gam**2)
            return out

        def eq_c(z):
            lam, mu = z[:2], z[2 : 2 + m]
            return np.array(
                [
                    c * lam[0] + s * lam[1] + G[:, 0] @ mu,
                    -s * lam[0] + c * lam[1] + G[:, 1] @ mu,
                ]
            )

        def eq_j(z):
            J = np.zeros((2, n))
            J[0, 0], J[0, 1] = c, s
            J[1, 0], J[1, 1] = -s, c
            J[0, 2 : 2 + m] = G[:, 0]
            J[1, 2 : 2 + m] = G[:, 1]
            return J

        def in_c(z):
            lam = z[:2]
            return np.array([1.0 - lam @ lam])

        def in_j(z):
            J = np.zeros((1, n))
            J[0, :2] = -2.0 * z[:2]
            return J

        lower = np.concatenate([[-np.inf, -np.inf], np.zeros(m), [gamma_min]])
        d = t - b
        dn = np.linalg.norm(d)
        unit = d / dn if dn > 1e-9 else np.array([1.0, 0.0])
        z0 = np.concatenate([0.1 * unit, np.full(m, 0.01), [0.1]])
    elif isinstance(obstacle, Polytope):
        Go, go = obstacle.G, obstacle.g
        mo = Go.shape[0]
        n = mo + m
        w = Go @ t - go

        def objective(z):
            lam, mu = z[:mo], z[mo:]
            return float(-lam @ w + mu @ g)

        def gradient(z):
            out = np.empty(n)
            out[:mo] = -w
            out[mo:] = g
            return out

        def eq_c(z):
            lam, mu = z[:mo], z[mo:]
            p = Go.T @ lam
            return np.array(
                [
                    c * p[0] + s * p[1] + G[:, 0] @ mu,
                    -s * p[0] + c * p[1] + G[:, 1] @ mu,
                ]
            )

        def eq_j(z):
            J = np.zeros((2, n))
            J[0, :mo] = c * Go[:, 0] + s * Go[:, 1]
            J[1, :mo] = -s * Go[:, 0] + c * Go[:, 1]
            J[0, mo:] = G[:, 0]
            J[1, mo:] = G[:, 1]
            return J

        def in_c(z):
            p = Go.T @ z[:mo]
            return np.array([1.0 - p @ p])

        def in_j(z):
            J = np.zeros((1, n))
            J[0, :mo] = -2.0 * Go @ (Go.T @ z[:mo])
            return J

        lower = np.zeros(n)
        z0 = np.full(n, 0.01)
    else:
        raise TypeError(f"unsupported obstacle type {type(obstacle)!r}")

    program = nlp.NonlinearProgram(
        n_vars=n,
        objective=objective,
        gradient=gradient,
        eq_constraints=eq_c,
        eq_jacobian=eq_j,
        ineq_constraints=in_c,
        ineq_jacobian=in_j,
        lower=lower,
        upper=None,
    )
    result = nlp.solve(program, z0, options or nlp.SolveOptions())
    return -result.objective_value, result


# ---------------------------------------------------------------------------
# Oracle-side plan validation


def oracle_clearance(
    position: np.ndarray,
    heading: float,
    profile: Polytope,
    obstacle,
    disk_radius: Optional[float] = None,
) -> float:
    """Exact distance between the vehicle set at a pose and one obstacle."""
    if disk_radius is not None:
        p = np.asarray(position, dtype=float)
        if isinstance(obstacle, RiskEllipse):
            return max(0.0, distance_point_to_ellipse(p, obstacle) - disk_radius)
        return max(0.0, distance_point_to_polytope(p, obstacle) - disk_radius)
    world = transform_polytope(profile, Pose2(position[0], position[1], heading))
    if isinstance(obstacle, RiskEllipse):
        return distance_polytope_to_ellipse(world, obstacle)
    return distance_polytope_to_polytope(world, obstacle)


def verify_plan_clearance(
    states: np.ndarray,
    obstacles: Sequence,
    profile: Polytope,
    disk_radius: Optional[float] = None,
) -> float:
    """Minimum oracle distance over all plan steps and obstacle sets.

    obstacles holds EllipseTube / StaticPolytope entries exactly as the
    NLP consumed them, so this re-checks the solver's certificates with
    independent geometry.
    """
    states = np.asarray(states, dtype=float)
    worst = np.inf
    for k in range(states.shape[0]):
        for obs in obstacles:
            if isinstance(obs, EllipseTube):
                target = obs.ellipses[k]
            else:
                target = obs.poly
            worst = min(
                worst,
                oracle_clearance(
                    states[k, :2], states[k, 2], profile, target, disk_radius
                ),
            )
    return worst


# ---------------------------------------------------------------------------
# Receding-horizon planner


@dataclass(frozen=True)
class Variant:
    """How a planner flavor models the vehicle and the obstacle forecast."""

    name: str
    vehicle_model: str  # "polytope" or "disk"
    disk_radius: Optional[float]
    risk_aware: bool
    search_inflation: float


def planner_variants() -> dict:
    """Selectable planner flavors.

    raltper: full footprint polytope against risk-ellipse forecasts.
    disk_baseline: the vehicle is replaced by a 2.6 m diameter disk
        (same risk forecasts), trading tightness for simpler
        constraints.
    risk_unaware: full footprint, but moving obstacles enter only as
        their physical disk at the predicted mean, ignoring uncertainty.
    """
    return {
        "raltper": Variant("raltper", "polytope", None, True, 0.5),
        "disk_baseline": Variant("disk_baseline", "disk", 1.3, True, 1.3),
        "risk_unaware": Variant("risk_unaware", "polytope", None, False, 0.5),
    }


@dataclass(frozen=True)
class TrackedObstacleInfo:
    """Planner-side knowledge about one moving obstacle."""

    radius: float
    noise: prediction.NoiseSpec
    prior_heading: float = 0.0
    prior_speed: float = 0.0
    prior_turn_rate: float = 0.0


@dataclass
class CycleResult:
    """Outcome of one control cycle."""

    control: np.ndarray
    trajectory: "Trajectory"
    solve_result: Optional[nlp.SolveResult]
    forecasts: list
    nlp_obstacles: list
    status: str  # "ok", "degraded", "stopped"
    warm: "Trajectory"


class Planner:
    """Receding-horizon planner: track, forecast, optimize, repeat.

    The first cycle seeds the optimizer from a grid search path; later
    cycles shift the previous solution (and its multipliers) one step.
    Only converged solves are accepted as plans; on failure the planner
    falls back to the remainder of the last accepted plan, or commands a
    stop when the solver reports infeasibility.
    """

    def __init__(
        self,
        profile: Polytope,
        static_obstacles: Sequence,
        bounds: tuple,
        config: PlannerConfig,
        variant: Variant,
        tracked: Sequence[TrackedObstacleInfo] = (),
    ):
        self.profile = profile
        self.static_obstacles = list(static_obstacles)
        self.bounds = bounds
        if config.state_bounds is None:
            config = replace(config, state_bounds=bounds)
        self.config = config
        self.variant = variant
        self.tracked = list(tracked)
        self.beliefs = [None] * len(self.tracked)
        self.cycle = 0
        self.initial_path = None
        self._prev_z = None
        self._prev_mults = None
        self._prev_problem = None
        self._warm_controls = None  # time-aligned fallback control tail
        self._warm_penalty = None  # settled penalty from the last solve

    # -- obstacle bookkeeping ---------------------------------------------

    def _update_tracks(self, measurements):
        if len(measurements) != len(self.tracked):
            raise ValueError("one measurement per tracked obstacle required")
        for j, z in enumerate(measurements):
            if self.beliefs[j] is None:
                info = self.tracked[j]
                self.beliefs[j] = prediction.initial_belief(
                    z, info.prior_heading, info.prior_speed,
                    info.prior_turn_rate, info.noise,
                )
            else:
                predicted = prediction.ekf_predict(
                    self.beliefs[j], self.config.dt, self.tracked[j].noise
                )
                self.beliefs[j] = prediction.ekf_update(
                    predicted, z, self.tracked[j].noise
                )

    def _forecast_tubes(self):
        """One EllipseTube per tracked obstacle, per the variant's model."""
        cfg = self.config
        tubes = []
        for j, belief in enumerate(self.beliefs):
            info = self.tracked[j]
            beliefs = prediction.forecast_beliefs(
                belief, cfg.horizon, cfg.dt, info.noise
            )
            if self.variant.risk_aware:
                ellipses = tuple(
                    risk_ellipse(b.position_belief(), cfg.alpha).inflate(
                        info.radius
                    )
                    for b in beliefs
                )
            else:
                ellipses = tuple(
                    RiskEllipse.disk(
                        np.array([b.mean.x, b.mean.y]), info.radius
                    )
                    for b in beliefs
                )
            tubes.append(EllipseTube(ellipses))
        return tubes

    def _nlp_obstacles(self, tubes):
        obstacles = []
        for obs in self.static_obstacles:
            if isinstance(obs, Polytope):
                obstacles.append(StaticPolytope(obs))
            elif isinstance(obs, RiskEllipse):
                obstacles.append(EllipseTube.constant(obs, self.config.horizon))
            else:
                raise TypeError(f"unsupported static obstacle {type(obs)!r}")
        obstacles.extend(tubes)
        return obstacles

    # -- warm start ---------------------------------------------------------

    def _search_warm_start(self, x0: np.ndarray, goal: Pose2) -> "Trajectory":
        from . import search

        sets = list(self.static_obstacles)
        for belief, info in zip(self.beliefs, self.tracked):
            sets.append(
                RiskEllipse.disk(
                    np.array([belief.mean.x, belief.mean.y]), info.radius
                )
            )
        env = search.GridEnvironment(self.bounds, tuple(sets))
        path = search.hybrid_a_star(
            env,
            Pose2(x0[0], x0[1], x0[2]),
            goal,
            profile=self.profile,
            check_mode="loose",
            inflation=self.variant.search_inflation,
        )
        self.initial_path = path
        lim = self.config.limits
        return search.resample_path(
            path, self.config.horizon, self.config.dt,
            v_min=lim.v_min, v_max=lim.v_max, omega_max=lim.omega_max,
        )

    @staticmethod
    def _shift_controls(controls: np.ndarray) -> np.ndarray:
        return np.vstack([controls[1:], controls[-1:]])

    # -- the cycle -----------------------------------------------------------

    def plan_cycle(self, x0, goal: Pose2, measurements=()) -> CycleResult:
        """Run one control cycle from the measured vehicle state x0.

        Returns the control to apply now plus the full plan; raises
        PlanningError if no plan can be produced at all (first cycle
        fails or no fallback remains).
        """
        cfg = self.config
        x0 = np.asarray(x0, dtype=float).reshape(3)
        self.cycle += 1
        self._update_tracks(measurements)
        tubes = self._forecast_tubes()
        obstacles = self._nlp_obstacles(tubes)

        warm_mults = None
        if self._warm_controls is None:
            warm = self._search_warm_start(x0, goal)
        else:
            warm = rollout(x0, self._shift_controls(self._warm_controls), cfg.dt)

        problem = PlannerProblem(
            x0,
            goal.position,
            self.profile,
            obstacles,
            cfg,
            warm,
            disk_radius=self.variant.disk_radius,
        )
        z0 = problem.initial_vector(warm)
        if self._prev_z is not None:
            z0[5 * cfg.horizon :] = self._prev_problem.dual_vector_from(
                self._prev_z, shift=True
            )
            warm_mults = self._prev_problem.shift_multipliers(*self._prev_mults)

        # Re-solving from a shifted optimum only needs the penalty at
        # which the previous cycle first became feasible; restarting at
        # the default re-climbs the growth schedule from scratch, while
        # carrying the final value ratchets the penalty upward across
        # cycles whenever a solve grows it once.
        opts = cfg.solver
        if self._warm_penalty is not None:
            opts = replace(opts, initial_penalty=self._warm_penalty)
        result = nlp.solve(
            problem.program(), z0, opts, warm_multipliers=warm_mults
        )

        if result.status == nlp.SolveStatus.CONVERGED:
            _, U = problem.extract(result.variables)
            trajectory = rollout(x0, U, cfg.dt)
            self._warm_controls = U
            self._prev_z = result.variables
            self._prev_mults = (result.eq_multipliers, result.ineq_multipliers)
            self._prev_problem = problem
            status = "ok"
            control = U[0].copy()
            if result.history:
                # Carry the penalty of the first feasible outer into the
                # next cycle.  Restarting lower forces the next solve to
                # re-grow through the same schedule, and every growth
                # outer costs a full inner pass at a fresh stiffness.
                tol = opts.kkt_tol
                settled = next(
                    (r.penalty for r in result.history if r.violation <= tol),
                    result.history[-1].penalty,
                )
                self._warm_penalty = max(
                    cfg.solver.initial_penalty, min(settled, 1e5)
                )
        elif self._warm_controls is not None:
            if result.status == nlp.SolveStatus.INFEASIBLE_DETECTED:
                # No certified plan and the constraints look inconsistent:
                # commanding zero keeps the vehicle at its last safe state.
                control = np.zeros(2)
                trajectory = rollout(x0, np.zeros((cfg.horizon, 2)), cfg.dt)
                status = "stopped"
                self._warm_controls = self._shift_controls(self._warm_controls)
            else:
                shifted = self._shift_controls(self._warm_controls)
                control = shifted[0].copy()
                trajectory = rollout(x0, shifted, cfg.dt)
                status = "degraded"
                self._warm_controls = shifted
        else:
            raise PlanningError(
                f"first cycle solve failed with status {result.status.value}"
            )

        return CycleResult(
            control=control,
            trajectory=trajectory,
            solve_result=result,
            forecasts=tubes,
            nlp_obstacles=obstacles,
            status=status,
            warm=warm,
        )
