"""Dynamic obstacle tracking and forecasting.

Obstacles follow a constant-turn-rate-and-velocity model with state
(x, y, theta, v, omega).  An extended Kalman filter tracks each obstacle
from noisy position measurements; forecasting propagates the belief
without measurements and converts the positional covariance of each
future step into a risk ellipse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import RiskEllipse
from .uncertainty import GaussianPosition, risk_ellipse

STATE_DIM = 5


@dataclass(frozen=True)
class ObstacleState:
    """CTRV state: position, heading, speed, turn rate."""

    x: float
    y: float
    theta: float
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v, self.omega])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ObstacleState":
        x, y, theta, v, omega = (float(a) for a in arr)
        return cls(x, y, theta, v, omega)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-axis standard deviations of process and measurement noise."""

    process_std: np.ndarray = field(
        default_factory=lambda: np.full(STATE_DIM, 0.05)
    )
    measurement_std: np.ndarray = field(default_factory=lambda: np.full(2, 0.1))

    def __post_init__(self):
        p = np.asarray(self.process_std, dtype=float).reshape(-1)
        if p.size == 1:
            p = np.full(STATE_DIM, float(p[0]))
        m = np.asarray(self.measurement_std, dtype=float).reshape(-1)
        if m.size == 1:
            m = np.full(2, float(m[0]))
        if p.size != STATE_DIM or m.size != 2:
            raise ValueError("noise spec dimensions mismatch")
        if np.any(p < 0) or np.any(m < 0):
            raise ValueError("noise standard deviations must be nonnegative")
        object.__setattr__(self, "process_std", p)
        object.__setattr__(self, "measurement_std", m)

    def process_cov(self) -> np.ndarray:
        return np.diag(self.process_std**2)

    def measurement_cov(self) -> np.ndarray:
        return np.diag(self.measurement_std**2)


@dataclass(frozen=True)
class ObstacleBelief:
    """Gaussian belief over a CTRV state."""

    mean: ObstacleState
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    def position_belief(self) -> GaussianPosition:
        return GaussianPosition(
            np.array([self.mean.x, self.mean.y]), self.cov[:2, :2]
        )


def ctrv_step(state: ObstacleState, dt: float) -> ObstacleState:
    """One Euler step of the constant-turn-rate-and-velocity model."""
    return ObstacleState(
        state.x + state.v * math.cos(state.theta) * dt,
        state.y + state.v * math.sin(state.theta) * dt,
        state.theta + state.omega * dt,
        state.v,
        state.omega,
    )


def ctrv_jacobian(state: ObstacleState, dt: float) -> np.ndarray:
    """State Jacobian of ctrv_step at the given linearization point."""
    J = np.eye(STATE_DIM)
    c, s = math.cos(state.theta), math.sin(state.theta)
    J[0, 2] = -state.v * s * dt
    J[0, 3] = c * dt
    J[1, 2] = state.v * c * dt
    J[1, 3] = s * dt
    J[2, 4] = dt
    return J


def ekf_predict(belief: ObstacleBelief, dt: float, noise: NoiseSpec) -> ObstacleBelief:
    """Propagate mean through the motion model and covariance through its
    linearization, adding one step of process noise."""
    mean = ctrv_step(belief.mean, dt)
    J = ctrv_jacobian(belief.mean, dt)
    cov = J @ belief.cov @ J.T + noise.process_cov()
    return ObstacleBelief(mean, cov)


def ekf_update(
    belief: ObstacleBelief, measurement: np.ndarray, noise: NoiseSpec
) -> ObstacleBelief:
    """Condition the belief on a position measurement (Joseph form)."""
    z = np.asarray(measurement, dtype=float).reshape(2)
    H = np.zeros((2, STATE_DIM))
    H[0, 0] = 1.0
    H[1, 1] = 1.0
    P = belief.cov
    S = H @ P @ H.T + noise.measurement_cov()
    if np.linalg.cond(S) > 1e12:
        raise np.linalg.LinAlgError("singular innovation covariance")
    K = P @ H.T @ np.linalg.inv(S)
    mean = belief.mean.as_array() + K @ (z - H @ belief.mean.as_array())
    I_KH = np.eye(STATE_DIM) - K @ H
    cov = I_KH @ P @ I_KH.T + K @ noise.measurement_cov() @ K.T
    return ObstacleBelief(ObstacleState.from_array(mean), cov)


def forecast_beliefs(
    belief: ObstacleBelief, n_steps: int, dt: float, noise: NoiseSpec
) -> list[ObstacleBelief]:
    """Open-loop belief forecast: n_steps consecutive EKF predictions."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    out = []
    current = belief
    for _ in range(n_steps):
        current = ekf_predict(current, dt, noise)
        out.append(current)
    return out


def forecast_risk_regions(
    belief: ObstacleBelief,
    alpha: float,
    n_steps: int,
    dt: float,
    noise: NoiseSpec,
) -> list[RiskEllipse]:
    """Risk ellipses of the next n_steps positional beliefs.

    One ellipse per step, aligned with the planner's control grid.
    Covariances grow monotonically without measurements, so do the
    ellipse areas.
    """
    return [
        risk_ellipse(b.position_belief(), alpha)
        for b in forecast_beliefs(belief, n_steps, dt, noise)
    ]


def initial_belief(
    position: np.ndarray,
    heading: float,
    speed: float,
    turn_rate: float,
    noise: NoiseSpec,
) -> ObstacleBelief:
    """Belief at track start: measured position plus nominal motion guesses.

    Position covariance comes from the measurement noise; heading, speed
    and turn rate get standard deviations of 0.1 of their scale floor.
    """
    mean = ObstacleState(
        float(position[0]), float(position[1]), heading, speed, turn_rate
    )
    std = np.array(
        [noise.measurement_std[0], noise.measurement_std[1], 0.1, 0.1, 0.1]
    )
    return ObstacleBelief(mean, np.diag(std**2))
