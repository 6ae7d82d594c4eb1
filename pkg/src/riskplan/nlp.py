"""Smooth nonlinear programs with an augmented-Lagrangian solver.

Problems carry callbacks for a smooth objective, equality constraints
c_e(z) = 0, inequality constraints c_i(z) >= 0, and box bounds.  The
solver runs an outer multiplier loop around an inner bound-constrained
minimization of the merit: a projected Newton descent when the program
supplies its objective Hessian, scipy L-BFGS-B otherwise.  First-order
KKT residuals are reported either way.  Everything is deterministic:
identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, IO, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE_DETECTED = "infeasible_detected"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class NonlinearProgram:
    """Callback bundle describing min f(z) s.t. c_e(z)=0, c_i(z)>=0, lb<=z<=ub.

    Constraint callbacks may be None when a family is absent.  Jacobians
    are dense arrays with one row per constraint.
    """

    n_vars: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq_constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    # Optional dense Hessian of the objective alone.  When present the
    # inner minimization switches from quasi-Newton to a projected
    # Newton descent built on this curvature plus the constraint terms,
    # which matters both for speed on stiff merits and for smoothed-norm
    # objectives whose curvature turns over faster than any safe
    # difference step could track.
    objective_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # Optional weighted sum of constraint Hessians: (z, w_eq, w_in) ->
    # sum_i w_eq[i] hess(c_e_i) + sum_j w_in[j] hess(c_i_j).  Completes
    # the Newton model of the merit; without it the descent falls back
    # to the Gauss-Newton approximation, which degrades near-singular
    # J^T J directions into line-search crawl.
    constraint_hessian: Optional[
        Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    ] = None

    def __post_init__(self):
        if self.n_vars <= 0:
            raise ValueError("n_vars must be positive")
        if (self.eq_constraints is None) != (self.eq_jacobian is None):
            raise ValueError("equality constraints need value and jacobian")
        if (self.ineq_constraints is None) != (self.ineq_jacobian is None):
            raise ValueError("inequality constraints need value and jacobian")
        self.lower = self._expand_bound(self.lower, -np.inf)
        self.upper = self._expand_bound(self.upper, np.inf)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def _expand_bound(self, bound, fill) -> np.ndarray:
        if bound is None:
            return np.full(self.n_vars, fill)
        arr = np.asarray(bound, dtype=float).reshape(-1)
        if arr.size != self.n_vars:
            raise ValueError("bound length does not match n_vars")
        return arr

    def eq_values(self, z: np.ndarray) -> np.ndarray:
        if self.eq_constraints is None:
            return np.zeros(0)
        return np.asarray(self.eq_constraints(z), dtype=float).reshape(-1)

    def ineq_values(self, z: np.ndarray) -> np.ndarray:
        if self.ineq_constraints is None:
            return np.zeros(0)
        return np.asarray(self.ineq_constraints(z), dtype=float).reshape(-1)


@dataclass
class SolveOptions:
    kkt_tol: float = 1e-6
    comp_tol: float = 1e-4
    max_iter: int = 200
    inner_max_iter: int = 2000
    time_limit: Optional[float] = None
    initial_penalty: float = 10.0
    penalty_growth: float = 5.0
    penalty_cap: float = 1e8
    infeasibility_tol: float = 1e-3
    infeasibility_patience: int = 5
    multiplier_cap: float = 1e8
    log_stream: Optional[IO] = None


@dataclass(frozen=True)
class OuterRecord:
    """One outer iteration: merit before/after the inner solve and progress."""

    iteration: int
    merit_start: float
    merit_end: float
    violation: float
    step_norm: float
    penalty: float
    inner_iterations: int = 0


@dataclass
class SolveResult:
    variables: np.ndarray
    objective_value: float
    status: SolveStatus
    kkt_residual: float
    stationarity: float
    eq_violation: float
    ineq_violation: float
    complementarity: float
    iterations: int
    wall_time: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    history: list = field(default_factory=list)


class _NonFiniteError(RuntimeError):
    pass


def _check_finite(arr, label: str):
    if not np.all(np.isfinite(arr)):
        raise _NonFiniteError(f"non-finite {label}")


def _projected_gradient_norm(z, grad, lower, upper) -> float:
    projected = np.clip(z - grad, lower, upper) - z
    return float(np.max(np.abs(projected), initial=0.0))


def _newton_descent(program, merit_fn, y_eq, y_in, rho, z, pg_tol, max_iter, mu=0.0):
    """Damped Newton descent on the augmented-Lagrangian merit.

    The model Hessian is the analytic objective Hessian plus rho J^T J
    over the equality rows and the active inequality rows plus, when
    the program supplies it, the constraint curvature weighted by the
    shifted multipliers: the exact merit Hessian away from activation
    kinks.  Steps solve (H + mu I) d = -g on the free coordinates with
    the Levenberg shift mu adapted by a ratio test of actual to model
    decrease; rejected steps raise mu, which shortens the step and
    rotates it toward the gradient, and smooth progress lowers it back
    toward pure Newton.  That adaptation is what handles smoothed-norm
    cone apexes, where 1/eps curvature sits next to O(1) curvature and
    scaling a single mis-modelled direction by any line search crawls.

    Inequality rows within a step-sized band of their activation
    boundary count as active for the rho J^T J term even when their
    merit contribution is currently zero: a step that flips such a row
    picks up rho (J_j s)^2 / 2 of penalty the strict active-set model
    cannot see, and near a converged complementarity point (many rows
    with both c and y near zero) those invisible jumps reject every
    trial step.  Overcounting is safe, it only makes the model stiffer
    than the function, which the ratio test rewards.

    Trial points are clipped into the box; bound-active coordinates
    with outward gradient are frozen out of each solve.  Returns the
    final point, gradient, merit value, iteration count and damping
    (callers pass it back in so the adaptation survives outer updates).
    """
    lower, upper = program.lower, program.upper
    merit, g = merit_fn(z)
    nit = 0
    mu = min(mu, 1e6)
    step_scale = 1e-3
    while nit < max_iter:
        if _projected_gradient_norm(z, g, lower, upper) <= pg_tol:
            break
        nit += 1
        free = np.flatnonzero(
            ~(((z <= lower + 1e-12) & (g > 0)) | ((z >= upper - 1e-12) & (g < 0)))
        )
        if free.size == 0:
            break

        H_full = np.asarray(program.objective_hessian(z), dtype=float)
        w_eq = w_in = None
        if program.eq_constraints is not None:
            w_eq = rho * program.eq_values(z) - y_eq
        if program.ineq_constraints is not None:
            shifted = y_in - rho * program.ineq_values(z)
            w_in = np.where(shifted > 0.0, -shifted, 0.0)
        if program.constraint_hessian is not None:
            H_full = H_full + program.constraint_hessian(
                z,
                w_eq if w_eq is not None else np.zeros(0),
                w_in if w_in is not None else np.zeros(0),
            )
        H = H_full[np.ix_(free, free)]
        if w_eq is not None:
            Je = np.asarray(program.eq_jacobian(z), dtype=float)[:, free]
            H += rho * (Je.T @ Je)
        if w_in is not None:
            Ji = np.asarray(program.ineq_jacobian(z), dtype=float)
            swing = rho * np.linalg.norm(Ji, axis=1) * (3.0 * step_scale)
            mask = shifted > -swing
            if mask.any():
                Ja = Ji[mask][:, free]
                H += rho * (Ja.T @ Ja)

        mu_floor = 1e-11 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        mu_giveup = 1e12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        mu = max(mu, mu_floor)
        eye = np.eye(free.size)
        d = np.zeros_like(z)
        accepted = False
        resolution = 4.0 * np.finfo(float).eps * (1.0 + abs(merit))
        while mu <= mu_giveup:
            try:
                factor = cho_factor(H + mu * eye, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            d[free] = cho_solve(factor, -g[free], check_finite=False)
            z_try = np.clip(z + d, lower, upper)
            s = (z_try - z)[free]
            pred = -(float(g[free] @ s) + 0.5 * float(s @ (H @ s)))
            if pred > 0.0:
                m_try, g_try = merit_fn(z_try)
                ratio = (merit - m_try) / pred
                if ratio >= 0.01:
                    z, merit, g = z_try, m_try, g_try
                    if ratio > 0.7:
                        mu = max(mu_floor, mu / 3.0)
                    elif ratio < 0.25:
                        mu *= 3.0
                    step_scale = max(
                        float(np.linalg.norm(s)), 0.3 * step_scale
                    )
                    accepted = True
                    break
                if merit - m_try >= -resolution and pred <= resolution:
                    # The model still predicts progress but the merit
                    # cannot resolve it; this point is converged at
                    # working precision, not a failed step.
                    return z, g, merit, nit, mu
            mu *= 10.0
        if not accepted:
            break
    return z, g, merit, nit, mu


def _polish(
    fg, model_grad_factory, z, lower, upper, pg_target,
    objective_hessian=None, max_newton=8,
):
    """Drive the projected merit gradient below pg_target.

    The quasi-Newton inner solver stops once merit decrements fall below
    floating-point resolution, which can leave the projected gradient
    well above the KKT tolerance.  This Newton loop accepts steps on
    gradient-norm decrease instead of merit decrease (gradients stay
    accurately computable at that floor).  The Hessian comes from
    forward differences of a smooth model gradient (the merit gradient
    with the inequality active set frozen at the current point, so the
    probes never straddle a max(0, .) kink) and is factored densely.
    When an analytic objective Hessian is available the probes cover
    only the constraint part; differencing cannot track a smoothed
    norm near its corner, where the curvature turns over within a step.
    Bound-active coordinates with outward gradient are frozen and trial
    points are projected into the box.
    """
    z = z.copy()
    _, g = fg(z)
    best_pg = _projected_gradient_norm(z, g, lower, upper)
    h = math.sqrt(np.finfo(float).eps)
    for _ in range(max_newton):
        if best_pg <= pg_target:
            break
        free = np.flatnonzero(
            ~(((z <= lower + 1e-12) & (g > 0)) | ((z >= upper - 1e-12) & (g < 0)))
        )
        if free.size == 0:
            break

        model_grad = model_grad_factory(z)
        g_model = model_grad(z)
        H = np.empty((free.size, free.size))
        for row, i in enumerate(free):
            step = h * max(1.0, abs(z[i]))
            z_probe = z.copy()
            z_probe[i] += step
            H[row] = (model_grad(z_probe)[free] - g_model[free]) / step
        H = 0.5 * (H + H.T)
        if objective_hessian is not None:
            H_f = np.asarray(objective_hessian(z), dtype=float)
            H += H_f[np.ix_(free, free)]

        d = np.zeros_like(z)
        reg = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        for _ in range(12):
            try:
                c_factor = np.linalg.cholesky(H + reg * np.eye(free.size))
                break
            except np.linalg.LinAlgError:
                reg *= 100.0
        else:
            break
        rhs = -g[free]
        d[free] = np.linalg.solve(
            c_factor.T, np.linalg.solve(c_factor, rhs)
        )

        alpha = 1.0
        improved = False
        for _ in range(25):
            z_try = np.clip(z + alpha * d, lower, upper)
            _, g_try = fg(z_try)
            pg_try = _projected_gradient_norm(z_try, g_try, lower, upper)
            if pg_try < best_pg:
                z, g, best_pg = z_try, g_try, pg_try
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return z


def kkt_residuals(
    program: NonlinearProgram,
    z: np.ndarray,
    eq_multipliers: np.ndarray,
    ineq_multipliers: np.ndarray,
) -> dict:
    """First-order residuals at (z, multipliers).

    stationarity is the infinity norm of the projected Lagrangian
    gradient (projection onto the box handles bound multipliers),
    eq_violation/ineq_violation measure primal feasibility, and
    complementarity is max_i |y_i * c_i| over inequality rows.
    """
    grad = np.asarray(program.gradient(z), dtype=float).copy()
    ce = program.eq_values(z)
    ci = program.ineq_values(z)
    if ce.size:
        grad -= np.asarray(program.eq_jacobian(z), dtype=float).T @ eq_multipliers
    if ci.size:
        grad -= np.asarray(program.ineq_jacobian(z), dtype=float).T @ ineq_multipliers
    projected = np.clip(z - grad, program.lower, program.upper) - z
    return {
        "stationarity": float(np.max(np.abs(projected), initial=0.0)),
        "eq_violation": float(np.max(np.abs(ce), initial=0.0)),
        "ineq_violation": float(np.max(np.maximum(-ci, 0.0), initial=0.0)),
        "complementarity": float(np.max(np.abs(ineq_multipliers * ci), initial=0.0)),
    }


def solve(
    program: NonlinearProgram,
    z0: np.ndarray,
    options: Optional[SolveOptions] = None,
    warm_multipliers: Optional[tuple] = None,
) -> SolveResult:
    """Augmented-Lagrangian solve from z0 (projected into the box).

    The outer loop minimizes the augmented Lagrangian over the box,
    updates the multipliers from the first-order estimates, and raises
    the penalty (initial 10, factor 5, cap 1e8) only while the
    constraint violation is above tolerance and failed to drop at least
    fourfold, so the penalty stays as small as the problem allows.  The
    inner minimization works on a merit shifted by its starting value;
    the shift keeps line-search decrements representable when the
    objective magnitude dwarfs the remaining improvement.  Convergence
    requires stationarity, equality violation and inequality violation
    at or below kkt_tol and complementarity at or below comp_tol.  A
    violation stalled above infeasibility_tol for infeasibility_patience
    outer iterations at the penalty cap reports infeasible_detected.
    """
    opts = options or SolveOptions()
    z = np.clip(np.asarray(z0, dtype=float).reshape(-1), program.lower, program.upper)
    if z.size != program.n_vars:
        raise ValueError("z0 length does not match n_vars")

    n_eq = program.eq_values(z).size
    n_ineq = program.ineq_values(z).size
    if warm_multipliers is not None:
        y_eq = np.asarray(warm_multipliers[0], dtype=float).reshape(-1).copy()
        y_in = np.asarray(warm_multipliers[1], dtype=float).reshape(-1).copy()
        if y_eq.size != n_eq or y_in.size != n_ineq:
            raise ValueError("warm multiplier dimensions mismatch")
        y_in = np.maximum(y_in, 0.0)
    else:
        y_eq = np.zeros(n_eq)
        y_in = np.zeros(n_ineq)

    rho = opts.initial_penalty
    start = time.perf_counter()
    history: list[OuterRecord] = []
    status = SolveStatus.MAX_ITERATIONS
    best = {"y_eq": y_eq, "y_in": y_in}
    prev_violation = np.inf
    stalled = 0
    shift = 0.0
    polish_attempts = 0

    def merit_and_grad(zz: np.ndarray):
        f = float(program.objective(zz))
        grad = np.asarray(program.gradient(zz), dtype=float).copy()
        _check_finite(grad, "objective gradient")
        ce = program.eq_values(zz)
        ci = program.ineq_values(zz)
        _check_finite(ce, "equality values")
        _check_finite(ci, "inequality values")
        merit = f
        if ce.size:
            Je = np.asarray(program.eq_jacobian(zz), dtype=float)
            merit += float(-y_eq @ ce + 0.5 * rho * ce @ ce)
            grad += Je.T @ (rho * ce - y_eq)
        if ci.size:
            Ji = np.asarray(program.ineq_jacobian(zz), dtype=float)
            active = np.maximum(y_in - rho * ci, 0.0)
            merit += float((active @ active - y_in @ y_in) / (2.0 * rho))
            grad -= Ji.T @ active
        if not np.isfinite(merit):
            raise _NonFiniteError("non-finite merit")
        return merit - shift, grad

    def frozen_grad_factory(z_ref):
        # Merit gradient with the inequality active set pinned at z_ref;
        # smooth in a neighborhood, so suited to difference Hessians.
        # With an analytic objective Hessian on the program the probes
        # cover the constraint terms only.
        mask = None
        if program.ineq_constraints is not None:
            mask = (y_in - rho * program.ineq_values(z_ref)) > 0.0

        def model_grad(zz):
            if program.objective_hessian is None:
                grad = np.asarray(program.gradient(zz), dtype=float).copy()
            else:
                grad = np.zeros(program.n_vars)
            ce = program.eq_values(zz)
            if ce.size:
                Je = np.asarray(program.eq_jacobian(zz), dtype=float)
                grad += Je.T @ (rho * ce - y_eq)
            if mask is not None and mask.any():
                ci = program.ineq_values(zz)
                Ji = np.asarray(program.ineq_jacobian(zz), dtype=float)
                grad -= Ji.T @ np.where(mask, y_in - rho * ci, 0.0)
            return grad

        return model_grad

    # The Newton descent drops the constraint-curvature term, which is
    # proportional to the violation; far from the constraint manifold
    # that model misleads, so the quasi-Newton inner handles the cold
    # phase and the Newton inner takes over through this gate.
    newton_gate = 1e-2
    has_hessian = program.objective_hessian is not None
    violation = max(
        float(np.max(np.abs(program.eq_values(z)), initial=0.0)),
        float(np.max(np.maximum(-program.ineq_values(z), 0.0), initial=0.0)),
    )
    # Inner tolerance ramp: early outers get a sloppy solve while the
    # multipliers are still settling, then the tolerance tightens
    # fivefold per outer down to a method-specific floor.  A pass that
    # was already at tolerance on entry collapses the ramp, so a good
    # warm start is not made to idle through the loose stages.
    ramp = 1e-2
    no_move = 0
    outer = 0
    mu_carry = 0.0
    exhausted_stall = 0
    stall_run = 0
    try:
        for outer in range(1, opts.max_iter + 1):
            use_newton = has_hessian and violation <= newton_gate
            shift = 0.0
            merit_start, _ = merit_and_grad(z)
            shift = merit_start
            if use_newton:
                # Tolerance forcing: the inner need not be solved much
                # tighter than the violation it is reducing, and the
                # floor sits below the KKT target because the merit
                # gradient at the refreshed multipliers equals the
                # Lagrangian gradient reported as stationarity, so the
                # last inner delivers convergence directly.
                pg_tol = max(0.3 * opts.kkt_tol, min(ramp, 0.1 * violation))
                inner_budget = min(opts.inner_max_iter, 100)
                z_new, _, merit_end, nit, mu_carry = _newton_descent(
                    program, merit_and_grad, y_eq, y_in, rho, z, pg_tol,
                    inner_budget, mu=mu_carry,
                )
                merit_end += shift
                inner_finished = nit < inner_budget
            else:
                # The floor is the polish handoff point, not the KKT
                # target: grinding the quasi-Newton solver further buys
                # sub-resolution merit decrements at thousands of
                # iterations, while the Newton polish closes the last
                # decades in a handful of steps.  The iteration budget
                # ramps up so early outers stay cheap.
                pg_tol = max(1e-4, min(ramp, 0.1 * violation))
                res = minimize(
                    merit_and_grad,
                    z,
                    jac=True,
                    method="L-BFGS-B",
                    bounds=list(zip(program.lower, program.upper)),
                    options={
                        "maxiter": min(opts.inner_max_iter, 150 * outer),
                        "gtol": pg_tol,
                        "ftol": 1e-16,
                        "maxcor": 30,
                    },
                )
                z_new = res.x
                merit_end = float(res.fun) + shift
                nit = int(res.nit)
                inner_finished = True
            ramp = 0.0 if nit == 0 else ramp * 0.2
            z_new = np.clip(z_new, program.lower, program.upper)
            _check_finite(z_new, "iterate")
            step_norm = float(np.max(np.abs(z_new - z), initial=0.0))
            z = z_new

            def measure(zz):
                ce = program.eq_values(zz)
                ci = program.ineq_values(zz)
                violation = max(
                    float(np.max(np.abs(ce), initial=0.0)),
                    float(np.max(np.maximum(-ci, 0.0), initial=0.0)),
                )
                # First-order multiplier estimates at the inner solution.
                y_eq_hat = np.clip(
                    y_eq - rho * ce, -opts.multiplier_cap, opts.multiplier_cap
                )
                y_in_hat = np.minimum(
                    np.maximum(y_in - rho * ci, 0.0), opts.multiplier_cap
                )
                return violation, y_eq_hat, y_in_hat

            violation, y_eq_hat, y_in_hat = measure(z)
            residuals = kkt_residuals(program, z, y_eq_hat, y_in_hat)
            feasible_enough = (
                residuals["eq_violation"] <= opts.kkt_tol
                and residuals["ineq_violation"] <= opts.kkt_tol
                and residuals["complementarity"] <= opts.comp_tol
            )
            # Polish once the point is feasible and stationarity is
            # within the Newton basin (an inner exit at much larger
            # stationarity is mid-descent, where the merit Hessian may
            # not even be convex).  The multiplier update is applied
            # first: with stale multipliers the merit minimizer sits
            # across max(0, .) activation kinks spaced y / (rho |J|)
            # apart, which no line search can cross; with refreshed ones
            # the current point is inside the smooth basin.  The merit
            # gradient at the polished point then equals the Lagrangian
            # gradient at the next multiplier estimates, so the polished
            # norm is the reported residual.
            if (
                not use_newton
                and feasible_enough
                and opts.kkt_tol
                < residuals["stationarity"]
                <= 1e3 * opts.kkt_tol
                and polish_attempts < 4
            ):
                polish_attempts += 1
                y_eq, y_in = y_eq_hat, y_in_hat
                z = _polish(
                    merit_and_grad, frozen_grad_factory, z,
                    program.lower, program.upper, 0.5 * opts.kkt_tol,
                    objective_hessian=program.objective_hessian,
                )
                merit_end = merit_and_grad(z)[0] + shift
                violation, y_eq_hat, y_in_hat = measure(z)
                residuals = kkt_residuals(program, z, y_eq_hat, y_in_hat)
                feasible_enough = (
                    residuals["eq_violation"] <= opts.kkt_tol
                    and residuals["ineq_violation"] <= opts.kkt_tol
                    and residuals["complementarity"] <= opts.comp_tol
                )

            history.append(
                OuterRecord(
                    outer, merit_start, merit_end, violation, step_norm, rho,
                    nit,
                )
            )
            if opts.log_stream is not None:
                opts.log_stream.write(
                    f"{outer},{merit_end:.9g},{violation:.9g},{step_norm:.9g}\n"
                )

            best = {"y_eq": y_eq_hat, "y_in": y_in_hat, **residuals}
            y_eq, y_in = y_eq_hat, y_in_hat
            if feasible_enough and residuals["stationarity"] <= opts.kkt_tol:
                status = SolveStatus.CONVERGED
                break
            if feasible_enough and polish_attempts >= 4:
                # Feasibility and complementarity hold; further outer
                # iterations cannot add stationarity the polish missed.
                break
            # Three outers in a row without movement means the line
            # search cannot improve the merit any further at this
            # arithmetic; repeating the loop only burns the budget.
            no_move = no_move + 1 if step_norm == 0.0 else 0
            if no_move >= 3:
                break

            # Growth needs a stalled contraction and an inner pass that
            # actually finished: a pass cut off by its iteration budget
            # says nothing about the penalty being too small (growing on
            # it stiffens the very solve that ran out of time), though an
            # exhausted pass is forgiven only a few times so genuinely
            # inconsistent constraints still escalate.  Within a decade
            # of the feasibility target one stalled outer is usually
            # multiplier settling rather than a too-small penalty, so
            # growth there waits for a repeat.  Past ~1e6 the penalty
            # curvature leaves the inner solver no representable merit
            # progress, so growth beyond it is reserved for the
            # infeasibility escalation path.
            if violation > max(opts.kkt_tol, 0.25 * prev_violation):
                stall_run += 1
            else:
                stall_run = 0
            if inner_finished:
                exhausted_stall = 0
            else:
                exhausted_stall += 1
            needed = 2 if violation <= 10.0 * opts.kkt_tol else 1
            if stall_run >= needed and (inner_finished or exhausted_stall >= 3):
                if rho < 1e6 or violation > opts.infeasibility_tol:
                    rho = min(rho * opts.penalty_growth, opts.penalty_cap)
                    stall_run = 0

            if rho >= opts.penalty_cap and violation > opts.infeasibility_tol:
                stalled += 1
                if stalled >= opts.infeasibility_patience:
                    status = SolveStatus.INFEASIBLE_DETECTED
                    break
            else:
                stalled = 0
            prev_violation = violation

            if (
                opts.time_limit is not None
                and time.perf_counter() - start > opts.time_limit
            ):
                status = SolveStatus.MAX_ITERATIONS
                break
    except _NonFiniteError:
        status = SolveStatus.NUMERICAL_FAILURE

    y_eq_final = best.get("y_eq", y_eq)
    y_in_final = best.get("y_in", y_in)
    if status == SolveStatus.NUMERICAL_FAILURE:
        residuals = {
            "stationarity": np.inf,
            "eq_violation": np.inf,
            "ineq_violation": np.inf,
            "complementarity": np.inf,
        }
        objective_value = np.nan
    else:
        residuals = kkt_residuals(program, z, y_eq_final, y_in_final)
        objective_value = float(program.objective(z))
    kkt = max(
        residuals["stationarity"],
        residuals["eq_violation"],
        residuals["ineq_violation"],
    )
    return SolveResult(
        variables=z,
        objective_value=objective_value,
        status=status,
        kkt_residual=float(kkt),
        stationarity=float(residuals["stationarity"]),
        eq_violation=float(residuals["eq_violation"]),
        ineq_violation=float(residuals["ineq_violation"]),
        complementarity=float(residuals["complementarity"]),
        iterations=outer,
        wall_time=time.perf_counter() - start,
        eq_multipliers=np.asarray(y_eq_final, dtype=float),
        ineq_multipliers=np.asarray(y_in_final, dtype=float),
        history=history,
    )


def check_gradients(
    program: NonlinearProgram, z: np.ndarray, step: float = 1e-6
) -> float:
    """Worst relative error between callbacks and central differences.

    Per coordinate i the probe step is step * max(1, |z_i|); errors are
    |analytic - numeric| / max(1, |analytic|, |numeric|) over the
    objective gradient and every constraint Jacobian entry.  Non-finite
    callback output raises ValueError naming the offending coordinate.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != program.n_vars:
        raise ValueError("z length does not match n_vars")

    analytic_blocks = [np.asarray(program.gradient(z), dtype=float).reshape(1, -1)]
    if program.eq_jacobian is not None:
        analytic_blocks.append(np.asarray(program.eq_jacobian(z), dtype=float))
    if program.ineq_jacobian is not None:
        analytic_blocks.append(np.asarray(program.ineq_jacobian(z), dtype=float))
    analytic = np.vstack(analytic_blocks)

    def stacked_values(zz: np.ndarray) -> np.ndarray:
        parts = [np.array([float(program.objective(zz))])]
        parts.append(program.eq_values(zz))
        parts.append(program.ineq_values(zz))
        return np.concatenate(parts)

    numeric = np.zeros_like(analytic)
    for i in range(z.size):
        h = step * max(1.0, abs(z[i]))
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        fp = stacked_values(zp)
        fm = stacked_values(zm)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"non-finite callback value near coordinate {i}")
        numeric[:, i] = (fp - fm) / (2.0 * h)

    if not np.all(np.isfinite(analytic)):
        raise ValueError("non-finite analytic derivative")
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))
