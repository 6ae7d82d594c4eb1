"""Convex set primitives for planar collision reasoning.

Vehicles and polygonal obstacles are convex polytopes in halfspace form
{y : G y <= g} with unit-norm rows; uncertain obstacles are ellipses
{A o + b : o^T F o <= 1} with F symmetric positive definite and A a
rotation.  The module also provides exact distance and overlap oracles
used to validate optimizer output independently of the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    wrapped = theta % TWO_PI
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def rotation_matrix(theta: float) -> np.ndarray:
    """2x2 rotation matrix for a counterclockwise angle theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, heading); heading is normalized on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


class GeometryError(ValueError):
    """Raised for invalid set definitions (empty, unbounded, degenerate)."""


@dataclass(frozen=True)
class Polytope:
    """Bounded convex polygon {y : G y <= g} with unit-norm rows.

    Args:
        G: (m, 2) outward face normals, one row per face.
        g: (m,) offsets; face i is {y : G[i] . y = g[i]}.

    Rows are renormalized on construction.  The represented set must be
    nonempty and bounded; construction raises GeometryError otherwise.
    """

    G: np.ndarray
    g: np.ndarray
    _vertices: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if G.shape[0] != g.shape[0] or G.shape[1] != 2:
            raise GeometryError("halfspace dimensions mismatch")
        norms = np.linalg.norm(G, axis=1)
        if np.any(norms < 1e-12):
            raise GeometryError("zero-norm face normal")
        G = G / norms[:, None]
        g = g / norms
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        # Bounded iff the sorted normal directions leave no angular gap >= pi.
        angles = np.sort(np.arctan2(G[:, 1], G[:, 0]))
        gaps = np.diff(np.concatenate([angles, [angles[0] + TWO_PI]]))
        if G.shape[0] < 3 or np.max(gaps) >= math.pi - 1e-12:
            raise GeometryError("polytope is unbounded")
        object.__setattr__(self, "_vertices", _enumerate_vertices(G, g))
        if self._vertices.shape[0] < 3:
            raise GeometryError("polytope is empty or degenerate")

    @classmethod
    def rectangle(cls, length: float, width: float) -> "Polytope":
        """Axis-aligned rectangle centered at the origin (body frame)."""
        G = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        g = np.array([length / 2.0, width / 2.0, length / 2.0, width / 2.0])
        return cls(G, g)

    @classmethod
    def from_vertices(cls, vertices: np.ndarray) -> "Polytope":
        """Convex polygon from counterclockwise-ordered vertices."""
        V = np.asarray(vertices, dtype=float)
        n = V.shape[0]
        if n < 3:
            raise GeometryError("need at least three vertices")
        if _signed_area(V) < 0:
            V = V[::-1]
        G = np.zeros((n, 2))
        g = np.zeros(n)
        for i in range(n):
            edge = V[(i + 1) % n] - V[i]
            normal = np.array([edge[1], -edge[0]])  # outward for CCW order
            nn = np.linalg.norm(normal)
            if nn < 1e-12:
                raise GeometryError("repeated vertex")
            G[i] = normal / nn
            g[i] = G[i] @ V[i]
        return cls(G, g)

    @property
    def vertices(self) -> np.ndarray:
        """(k, 2) vertices in counterclockwise order."""
        return self._vertices

    def centroid(self) -> np.ndarray:
        return self._vertices.mean(axis=0)

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.G @ np.asarray(point, dtype=float) <= self.g + tol))


def _signed_area(V: np.ndarray) -> float:
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _enumerate_vertices(G: np.ndarray, g: np.ndarray) -> np.ndarray:
    """All pairwise face intersections that satisfy every halfspace."""
    m = G.shape[0]
    points = []
    for i in range(m):
        for j in range(i + 1, m):
            A = np.array([G[i], G[j]])
            det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            if abs(det) < 1e-12:
                continue
            v = np.linalg.solve(A, np.array([g[i], g[j]]))
            if np.all(G @ v <= g + 1e-9):
                points.append(v)
    if not points:
        return np.zeros((0, 2))
    P = np.array(points)
    # Deduplicate and order counterclockwise around the mean.
    keep = []
    for i in range(P.shape[0]):
        if all(np.linalg.norm(P[i] - P[k]) > 1e-9 for k in keep):
            keep.append(i)
    P = P[keep]
    center = P.mean(axis=0)
    order = np.argsort(np.arctan2(P[:, 1] - center[1], P[:, 0] - center[0]))
    return P[order]


def transform_polytope(poly: Polytope, pose: Pose2) -> Polytope:
    """Map a body-frame polytope through y -> R(theta) y + t.

    The world-frame set {x : G R^T x <= g + G R^T t} keeps one row per
    face with unit normals (rotation preserves row norms).
    """
    R = pose.rotation()
    G_world = poly.G @ R.T
    g_world = poly.g + G_world @ pose.position
    return Polytope(G_world, g_world)


@dataclass(frozen=True)
class RiskEllipse:
    """Ellipse {A o + b : o^T F o <= 1} in world coordinates.

    F is symmetric positive definite, A is a rotation (det +1), b is the
    center.  The boundary belongs to the set.
    """

    F: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float).reshape(2, 2)
        A = np.asarray(self.A, dtype=float).reshape(2, 2)
        b = np.asarray(self.b, dtype=float).reshape(2)
        if not np.allclose(F, F.T, atol=1e-9):
            raise GeometryError("F must be symmetric")
        if np.any(np.linalg.eigvalsh(F) <= 0):
            raise GeometryError("F must be positive definite")
        if not np.allclose(A @ A.T, np.eye(2), atol=1e-9) or np.linalg.det(A) < 0:
            raise GeometryError("A must be a rotation")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def disk(cls, center: np.ndarray, radius: float) -> "RiskEllipse":
        if radius <= 0:
            raise GeometryError("radius must be positive")
        return cls(np.eye(2) / radius**2, np.eye(2), np.asarray(center, dtype=float))

    def semi_axes(self) -> np.ndarray:
        """Semi-axis lengths (1/sqrt of F's eigenvalues), descending."""
        w = np.linalg.eigvalsh(self.F)  # ascending eigenvalues
        return 1.0 / np.sqrt(w)

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        o = self.A.T @ (np.asarray(point, dtype=float) - self.b)
        return bool(o @ self.F @ o <= 1.0 + tol)

    def inflate(self, radius: float) -> "RiskEllipse":
        """Grow both semi-axes by radius, keeping center and orientation."""
        if radius < 0:
            raise GeometryError("inflation radius must be nonnegative")
        w, V = np.linalg.eigh(self.F)
        axes = 1.0 / np.sqrt(w) + radius
        F_new = V @ np.diag(1.0 / axes**2) @ V.T
        return RiskEllipse(0.5 * (F_new + F_new.T), self.A, self.b)

    def boundary_points(self, n: int = 64) -> np.ndarray:
        """n points on the boundary, for plotting and sampling oracles."""
        w, V = np.linalg.eigh(self.F)
        axes = 1.0 / np.sqrt(w)
        phi = np.linspace(0.0, TWO_PI, n, endpoint=False)
        circle = np.stack([axes[0] * np.cos(phi), axes[1] * np.sin(phi)], axis=1)
        return (self.A @ V @ circle.T).T + self.b


# ---------------------------------------------------------------------------
# Point projections


def project_point_to_polytope(point: np.ndarray, poly: Polytope) -> np.ndarray:
    """Closest point of the polytope to an arbitrary point (exact)."""
    p = np.asarray(point, dtype=float)
    if poly.contains(p):
        return p.copy()
    V = poly.vertices
    best = None
    best_d2 = np.inf
    n = V.shape[0]
    for i in range(n):
        a, b = V[i], V[(i + 1) % n]
        cand = _project_point_to_segment(p, a, b)
        d2 = float(np.dot(p - cand, p - cand))
        if d2 < best_d2:
            best_d2 = d2
            best = cand
    return best


def _project_point_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < 1e-18:
        return a.copy()
    s = float(np.dot(p - a, ab)) / denom
    s = min(1.0, max(0.0, s))
    return a + s * ab


def project_point_to_ellipse(point: np.ndarray, ell: RiskEllipse) -> np.ndarray:
    """Closest point of the ellipse region to an arbitrary point (exact).

    Works in the ellipse's principal frame, where the boundary projection
    of an outside point (u, v) is x_i = a_i^2 u_i / (t + a_i^2) for the
    unique root t > 0 of sum_i (a_i u_i / (t + a_i^2))^2 = 1.
    """
    p = np.asarray(point, dtype=float)
    if ell.contains(p, tol=0.0):
        return p.copy()
    w, V = np.linalg.eigh(ell.F)
    axes = 1.0 / np.sqrt(w)
    basis = ell.A @ V
    u = basis.T @ (p - ell.b)

    a2 = axes**2

    def f(t):
        return float(np.sum((axes * u / (t + a2)) ** 2)) - 1.0

    t_lo = 0.0
    t_hi = max(float(np.linalg.norm(axes * u)), 1.0)
    while f(t_hi) > 0.0:
        t_hi *= 2.0
    for _ in range(200):
        t_mid = 0.5 * (t_lo + t_hi)
        if f(t_mid) > 0.0:
            t_lo = t_mid
        else:
            t_hi = t_mid
        if t_hi - t_lo < 1e-15 * max(1.0, t_hi):
            break
    t = 0.5 * (t_lo + t_hi)
    x = a2 * u / (t + a2)
    return basis @ x + ell.b


# ---------------------------------------------------------------------------
# Overlap tests (exact)


def polytopes_overlap(p1: Polytope, p2: Polytope) -> bool:
    """Separating-axis test on the face normals of both polygons."""
    for poly_a, poly_b in ((p1, p2), (p2, p1)):
        proj = poly_b.vertices @ poly_a.G.T  # (k, m) support values per axis
        if np.any(proj.min(axis=0) > poly_a.g + 1e-12):
            return False
    return True


def polytope_overlaps_ellipse(poly: Polytope, ell: RiskEllipse) -> bool:
    """Exact polygon/ellipse intersection test.

    The sets intersect iff the ellipse center lies in the polygon or some
    boundary edge of the polygon meets the ellipse; the latter reduces to
    minimizing the ellipse quadratic along each edge segment.
    """
    if poly.contains(ell.b):
        return True
    V = poly.vertices
    n = V.shape[0]
    Q = ell.A @ ell.F @ ell.A.T  # world-frame quadratic: (p-b)^T Q (p-b) <= 1
    for i in range(n):
        a, b = V[i], V[(i + 1) % n]
        if _min_quadratic_on_segment(a - ell.b, b - ell.b, Q) <= 1.0 + 1e-12:
            return True
    return False


def _min_quadratic_on_segment(a: np.ndarray, b: np.ndarray, Q: np.ndarray) -> float:
    """min_{s in [0,1]} (a + s d)^T Q (a + s d) with d = b - a."""
    d = b - a
    qa = float(d @ Q @ d)
    qb = float(a @ Q @ d)
    if qa < 1e-18:
        return float(a @ Q @ a)
    s = min(1.0, max(0.0, -qb / qa))
    x = a + s * d
    return float(x @ Q @ x)


# ---------------------------------------------------------------------------
# Distance oracles (exact up to stated tolerances)


def distance_point_to_polytope(point: np.ndarray, poly: Polytope) -> float:
    p = np.asarray(point, dtype=float)
    return float(np.linalg.norm(p - project_point_to_polytope(p, poly)))


def distance_point_to_ellipse(point: np.ndarray, ell: RiskEllipse) -> float:
    p = np.asarray(point, dtype=float)
    return float(np.linalg.norm(p - project_point_to_ellipse(p, ell)))


def distance_polytope_to_polytope(p1: Polytope, p2: Polytope) -> float:
    """Euclidean set distance; exactly zero when the sets overlap.

    For disjoint convex polygons the minimum is attained at a vertex of
    one polygon against an edge of the other, so enumerating both
    directions is exact.
    """
    if polytopes_overlap(p1, p2):
        return 0.0
    best = np.inf
    for poly_a, poly_b in ((p1, p2), (p2, p1)):
        V = poly_b.vertices
        for v in poly_a.vertices:
            n = V.shape[0]
            for i in range(n):
                cand = _project_point_to_segment(v, V[i], V[(i + 1) % n])
                best = min(best, float(np.linalg.norm(v - cand)))
    return best


def distance_polytope_to_ellipse(
    poly: Polytope,
    ell: RiskEllipse,
    step_tol: float = 1e-9,
    max_iter: int = 10000,
) -> float:
    """Euclidean distance between a polygon and an ellipse region.

    Overlap is decided exactly first; disjoint sets are handled by
    alternating exact projections, which converge to the closest pair for
    disjoint convex sets.  Accuracy is limited by step_tol, well below
    the 1e-6 the validation suite relies on.
    """
    if polytope_overlaps_ellipse(poly, ell):
        return 0.0
    e = project_point_to_polytope(ell.b, poly)
    o = project_point_to_ellipse(e, ell)
    dist = float(np.linalg.norm(e - o))
    for _ in range(max_iter):
        e_new = project_point_to_polytope(o, poly)
        o_new = project_point_to_ellipse(e_new, ell)
        step = max(
            float(np.linalg.norm(e_new - e)), float(np.linalg.norm(o_new - o))
        )
        e, o = e_new, o_new
        new_dist = float(np.linalg.norm(e - o))
        if step < step_tol and abs(new_dist - dist) < 1e-12:
            dist = new_dist
            break
        dist = new_dist
    return dist
