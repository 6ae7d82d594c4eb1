"""Risk regions from Gaussian position beliefs.

A position belief N(mean, cov) and a risk bound alpha in (0, 1) define
the confidence ellipse that contains the true position with probability
1 - alpha: the sublevel set (p - mean)^T (c Sigma)^-1 (p - mean) <= 1
with c = -2 ln(alpha).  The boundary counts as inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RiskEllipse

# Covariances with eigenvalue spread beyond this are treated as degenerate.
CONDITION_LIMIT = 1e12


class DegenerateCovarianceError(ValueError):
    """Covariance is not (numerically) positive definite."""


@dataclass(frozen=True)
class GaussianPosition:
    """2-D Gaussian belief over a position."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise DegenerateCovarianceError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))


def confidence_scale(alpha: float) -> float:
    """Squared Mahalanobis radius c = -2 ln(alpha) of the 1-alpha ellipse."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return -2.0 * math.log(alpha)


def risk_ellipse(belief: GaussianPosition, alpha: float) -> RiskEllipse:
    """Confidence ellipse of a Gaussian position belief.

    For a diagonal covariance the shape matrix is F = diag(1/(c sx^2),
    1/(c sy^2)) with A = I.  A general covariance is eigendecomposed with
    eigenvalues in descending order; the rotation A is canonicalized
    (det +1, first column in the closed right half plane) so repeated
    calls return identical matrices.  Near-equal eigenvalues also reduce
    to A = I.

    Raises:
        DegenerateCovarianceError: condition number above CONDITION_LIMIT
            or a non-positive eigenvalue.
        ValueError: alpha outside (0, 1).
    """
    c = confidence_scale(alpha)
    cov = belief.cov
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals[0] <= 0.0:
        raise DegenerateCovarianceError("covariance is not positive definite")
    if eigvals[1] / eigvals[0] > CONDITION_LIMIT:
        raise DegenerateCovarianceError(
            f"covariance condition number {eigvals[1] / eigvals[0]:.3e} too large"
        )
    scale = max(abs(cov[0, 0]), abs(cov[1, 1]))
    if abs(cov[0, 1]) <= 1e-12 * scale or eigvals[1] - eigvals[0] <= 1e-12 * scale:
        # Diagonal or isotropic: axes already aligned with the world frame.
        F = np.diag([1.0 / (c * cov[0, 0]), 1.0 / (c * cov[1, 1])])
        return RiskEllipse(F, np.eye(2), belief.mean)

    w, V = np.linalg.eigh(cov)  # ascending
    lam = w[::-1]
    q1 = V[:, 1]  # eigenvector of the larger eigenvalue
    # Canonical sign: largest-magnitude component of the first axis positive.
    if (q1[0] if abs(q1[0]) >= abs(q1[1]) else q1[1]) < 0:
        q1 = -q1
    A = np.array([[q1[0], -q1[1]], [q1[1], q1[0]]])  # rotation, det +1
    F = np.diag([1.0 / (c * lam[0]), 1.0 / (c * lam[1])])
    return RiskEllipse(F, A, belief.mean)


def coverage_estimate(
    ellipse: RiskEllipse, belief: GaussianPosition, n_samples: int, seed: int
) -> float:
    """Monte Carlo fraction of belief samples falling outside the ellipse.

    Sampling is seeded and vectorized; boundary points count as covered.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(belief.cov)
    samples = belief.mean + rng.standard_normal((n_samples, 2)) @ L.T
    local = (samples - ellipse.b) @ ellipse.A  # rows are A^T (p - b)
    quad = np.einsum("ni,ij,nj->n", local, ellipse.F, local)
    return float(np.mean(quad > 1.0))
