"""Sequential quadratic programming on transcribed planning problems.

Each iteration linearizes the (bilinear) equality rows, keeps the exact
constant Hessian of the quadratic cost plus a diagonal regularization floor,
and solves one boxed QP with the operator-splitting subsolver.  Steps are
globalized by an L1 merit function with Armijo backtracking; the penalty
parameter tracks the multiplier estimates.  QP duals are warm-started across
iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .qp import QpOptions, solve_qp


class LayoutError(ValueError):
    """Structurally incompatible layouts for warm-start transfer."""


@dataclass
class SolverOptions:
    max_iterations: int = 300
    kkt_tolerance: float = 1e-6
    feasibility_tolerance: float = 1e-6
    # subproblems start at qp_tolerance and are re-solved 100x tighter
    # (warm-started) until the step quality reaches qp_accept; the polish
    # step usually delivers that on the first tier
    qp_tolerance: float = 1e-4
    qp_accept: float = 1e-9
    qp_tiers: int = 3
    qp_max_iter: int = 20000
    regularization: float = 1e-8
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    penalty_init: float = 1.0
    penalty_growth: float = 1.05
    step_tolerance: float = 1e-12
    warm_start: bool = True

    def __post_init__(self):
        for name in ("kkt_tolerance", "feasibility_tolerance", "qp_tolerance"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Multipliers:
    eq: np.ndarray
    ineq: np.ndarray


@dataclass
class SolveStats:
    status: str  # optimal | max_iter | infeasible | numerical
    iterations: int
    wall_time: float
    kkt_residual: float
    feasibility: float
    cost: float
    qp_iterations: int = 0
    merit_evals: int = 0
    message: str = ""


def _violation_l1(problem, c_eq, c_in) -> float:
    v = float(np.sum(np.abs(c_eq)))
    v += float(np.sum(np.maximum(problem.lb_in - c_in, 0.0)))
    v += float(np.sum(np.maximum(c_in - problem.ub_in, 0.0)))
    return v


def _feasibility_inf(problem, c_eq, c_in) -> float:
    viol = np.maximum(np.maximum(problem.lb_in - c_in,
                                 c_in - problem.ub_in), 0.0)
    return max(float(np.max(np.abs(c_eq), initial=0.0)),
               float(np.max(viol, initial=0.0)))


def _kkt_residual(problem, x, grad, J_eq, lam, mu, c_in) -> float:
    stat = grad + J_eq.T @ lam + problem.A_in.T @ mu
    res = float(np.max(np.abs(stat), initial=0.0))
    # complementarity: multipliers must pair with their active bound
    dist_up = np.where(np.isfinite(problem.ub_in), problem.ub_in - c_in, 0.0)
    dist_lo = np.where(np.isfinite(problem.lb_in), c_in - problem.lb_in, 0.0)
    comp = np.where(mu > 0.0, mu * np.abs(dist_up), -mu * np.abs(dist_lo))
    if len(comp):
        res = max(res, float(np.max(comp)))
    return res


def _solve_subproblem(H, grad, A, l, u, y0, opts: SolverOptions):
    """Tiered QP solve; returns (best result, iterations used).

    A stale dual warm start can stall the operator splitting long after
    the subproblem itself became easy, so the first tier that runs out of
    iterations triggers one clean cold restart before tolerances escalate.
    """
    eps = opts.qp_tolerance
    x_warm = None
    y_warm = y0
    best = None
    used = 0
    tried_cold = y0 is None
    tiers_left = max(1, opts.qp_tiers)
    while tiers_left > 0:
        qp = solve_qp(H, grad, A, l, u, x0=x_warm, y0=y_warm,
                      options=QpOptions(eps_abs=eps, eps_rel=eps,
                                        max_iter=opts.qp_max_iter))
        used += qp.iterations
        if best is None or (max(qp.pri_res, qp.dua_res)
                            < max(best.pri_res, best.dua_res)):
            best = qp
        if qp.status in ("primal_infeasible", "dual_infeasible"):
            return qp, used
        scale = max(1.0, float(np.max(np.abs(qp.x), initial=0.0)))
        if max(qp.pri_res, qp.dua_res) <= opts.qp_accept * scale:
            return qp, used
        if qp.status == "max_iter" and not tried_cold:
            # one clean restart at the same tolerance, free of charge
            tried_cold = True
            x_warm, y_warm = None, None
            continue
        x_warm, y_warm = qp.x, qp.y
        eps *= 1e-2
        tiers_left -= 1
    return best, used


def _elastic_data(H_reg, grad, A_qp, l_qp, u_qp, m_lin, m_eq, sigma, opts):
    """Subproblem with L1-penalized slacks on the bilinear (angular) rows.

    An infeasible linearization of the bilinear rows does not prove the
    problem infeasible, so those rows get elastic slacks s+ - s- priced at
    the merit penalty; every other row stays hard.
    """
    n = H_reg.shape[0]
    ns = m_eq - m_lin
    E = sp.lil_matrix((A_qp.shape[0], 2 * ns))
    for i in range(ns):
        E[m_lin + i, i] = -1.0
        E[m_lin + i, ns + i] = 1.0
    A_el = sp.bmat([[A_qp, E.tocsc()],
                    [None, sp.eye(2 * ns, format="csc")]], format="csc")
    l_el = np.concatenate([l_qp, np.zeros(2 * ns)])
    u_el = np.concatenate([u_qp, np.full(2 * ns, np.inf)])
    H_el = sp.block_diag(
        [H_reg, max(opts.regularization, 1e-10) * sp.eye(2 * ns)],
        format="csc")
    q_el = np.concatenate([grad, np.full(2 * ns, sigma)])
    return H_el, q_el, A_el, l_el, u_el


def solve(problem, x0=None, opts: SolverOptions | None = None,
          callback=None):
    """Minimize the problem cost subject to its constraints from x0.

    Returns (x, Multipliers, SolveStats); SolveStats residuals are recomputed
    from the returned x in a final evaluation pass.  `callback`, when given,
    receives a diagnostics dict once per iteration (before the QP solve).
    """
    opts = opts or SolverOptions()
    n = problem.n
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")

    t_start = time.perf_counter()
    H_reg = (problem.H + opts.regularization * sp.eye(n)).tocsc()
    m_eq_lin = problem.A_eq.shape[0]
    m_eq = problem.m_eq
    m_in = problem.A_in.shape[0]

    lam = np.zeros(m_eq)
    mu = np.zeros(m_in)
    sigma = opts.penalty_init
    y_warm = None
    qp_total = 0
    merit_evals = 0
    status = "max_iter"
    message = ""
    it = 0

    for it in range(1, opts.max_iterations + 1):
        c_eq = problem.eval_eq(x)
        c_in = problem.eval_ineq(x)
        cost, grad = problem.eval_cost_and_gradient(x)
        J_eq = problem.eval_eq_jacobian(x)

        feas = _feasibility_inf(problem, c_eq, c_in)
        kkt = _kkt_residual(problem, x, grad, J_eq, lam, mu, c_in)
        if callback is not None:
            callback({"iteration": it, "cost": cost, "kkt": kkt,
                      "feasibility": feas, "sigma": sigma,
                      "qp_iterations": qp_total})
        if feas <= opts.feasibility_tolerance and kkt <= opts.kkt_tolerance:
            status = "optimal"
            break

        A_qp = sp.vstack([J_eq, problem.A_in], format="csc")
        l_qp = np.concatenate([-c_eq, problem.lb_in - c_in])
        u_qp = np.concatenate([-c_eq, problem.ub_in - c_in])
        qp, used = _solve_subproblem(H_reg, grad, A_qp, l_qp, u_qp,
                                     y_warm if opts.warm_start else None, opts)
        qp_total += used
        elastic = False
        if qp.status == "primal_infeasible" and m_eq > m_eq_lin:
            # certificate supported by linear rows alone proves the problem
            # infeasible; one leaning on linearized bilinear rows does not
            dy = qp.certificate
            ang_mass = float(np.max(np.abs(dy[m_eq_lin:m_eq]), initial=0.0))
            if ang_mass > 1e-6 * float(np.max(np.abs(dy), initial=0.0)):
                H_el, q_el, A_el, l_el, u_el = _elastic_data(
                    H_reg, grad, A_qp, l_qp, u_qp, m_eq_lin, m_eq, sigma, opts)
                y_el = None
                if opts.warm_start and y_warm is not None:
                    y_el = np.concatenate(
                        [y_warm, np.zeros(2 * (m_eq - m_eq_lin))])
                qp, used = _solve_subproblem(H_el, q_el, A_el, l_el, u_el,
                                             y_el, opts)
                qp_total += used
                elastic = True
        if qp.status == "primal_infeasible":
            status = "infeasible"
            message = "QP subproblem returned a primal infeasibility certificate"
            break
        if qp.status == "dual_infeasible":
            status = "numerical"
            message = "QP subproblem unbounded (dual infeasibility certificate)"
            break
        step_scale = max(1.0, float(np.max(np.abs(qp.x), initial=0.0)))
        if (qp.status == "max_iter"
                and max(qp.pri_res, qp.dua_res) > 1e-4 * step_scale):
            status = "numerical"
            message = (f"QP subproblem stalled (pri {qp.pri_res:.1e}, "
                       f"dua {qp.dua_res:.1e})")
            break

        if elastic:
            d = qp.x[:n]
            y_warm = qp.y[:m_eq + m_in]
        else:
            d = qp.x
            y_warm = qp.y
        lam = y_warm[:m_eq]
        mu = y_warm[m_eq:]

        sigma = max(sigma, opts.penalty_growth * float(
            np.max(np.abs(qp.y), initial=0.0)) + 1e-3)

        v0 = _violation_l1(problem, c_eq, c_in)
        merit0 = cost + sigma * v0
        slope = float(grad @ d) - sigma * v0
        if slope > 0.0 and v0 <= opts.feasibility_tolerance:
            # feasible non-descent direction: the step is effectively zero
            if float(np.max(np.abs(d), initial=0.0)) < opts.step_tolerance:
                status = "optimal" if kkt <= opts.kkt_tolerance else "numerical"
                message = "" if status == "optimal" else "stalled at feasible point"
                break

        alpha = 1.0
        accepted = False
        for _ in range(opts.max_backtracks):
            x_trial = x + alpha * d
            ce_t = problem.eval_eq(x_trial)
            ci_t = problem.eval_ineq(x_trial)
            cost_t, _ = problem.eval_cost_and_gradient(x_trial)
            merit_t = cost_t + sigma * _violation_l1(problem, ce_t, ci_t)
            merit_evals += 1
            if merit_t <= merit0 + opts.armijo_c1 * alpha * min(slope, 0.0):
                accepted = True
                break
            alpha *= opts.backtrack_factor
        if not accepted:
            status = "numerical"
            message = "line search failed to reduce the merit function"
            break
        x = x + alpha * d
        if alpha * float(np.max(np.abs(d), initial=0.0)) < opts.step_tolerance:
            c_eq = problem.eval_eq(x)
            c_in = problem.eval_ineq(x)
            feas = _feasibility_inf(problem, c_eq, c_in)
            if feas <= opts.feasibility_tolerance:
                status = "optimal"
            else:
                status = "numerical"
                message = "step size collapsed before reaching feasibility"
            break

    # final evaluation pass: never trust loop-internal numbers
    c_eq = problem.eval_eq(x)
    c_in = problem.eval_ineq(x)
    cost, grad = problem.eval_cost_and_gradient(x)
    J_eq = problem.eval_eq_jacobian(x)
    feas = _feasibility_inf(problem, c_eq, c_in)
    kkt = _kkt_residual(problem, x, grad, J_eq, lam, mu, c_in)
    if status == "optimal" and (feas > opts.feasibility_tolerance
                                or kkt > opts.kkt_tolerance):
        status = "numerical"
        message = "post-check found residuals above tolerance"

    stats = SolveStats(status=status, iterations=it,
                       wall_time=time.perf_counter() - t_start,
                       kkt_residual=kkt, feasibility=feas, cost=cost,
                       qp_iterations=qp_total, merit_evals=merit_evals,
                       message=message)
    return x, Multipliers(eq=lam, ineq=mu), stats


def warm_start_shift(prev_x, prev_layout, new_layout, shift_knots: int):
    """Initial guess for a shifted window from the previous solution.

    Knot j of the new window copies knot min(j + shift, last) of the old
    one; trailing knots repeat the final knot.  Foot forces missing at the
    source knot (foot then in swing) copy the nearest stance knot of that
    foot, searching backward first; feet never in stance contribute zeros.
    """
    prev_x = np.asarray(prev_x, dtype=float)
    if prev_x.shape != (prev_layout.n,):
        raise LayoutError("prev_x does not match prev_layout")
    if shift_knots < 0:
        raise LayoutError("shift_knots must be >= 0")
    if abs(prev_layout.dt - new_layout.dt) > 1e-12:
        raise LayoutError("layouts use different knot spacing")
    if prev_layout.n_arms != new_layout.n_arms:
        raise LayoutError("layouts disagree on arm variables")

    pN = prev_layout.n_knots
    pS = prev_layout.n_segments
    x0 = np.zeros(new_layout.n)

    def foot_source(foot: int, k_src: int) -> np.ndarray:
        if prev_layout.in_stance(foot, k_src):
            return prev_x[prev_layout.foot_force(foot, k_src)]
        stance_knots = np.flatnonzero(prev_layout.stance[foot])
        if len(stance_knots) == 0:
            return np.zeros(3)
        before = stance_knots[stance_knots <= k_src]
        src = int(before[-1]) if len(before) else int(stance_knots[0])
        return prev_x[prev_layout.foot_force(foot, src)]

    for k in range(new_layout.n_knots):
        src = min(k + shift_knots, pN - 1)
        x0[new_layout.com_pos(k)] = prev_x[prev_layout.com_pos(src)]
        x0[new_layout.com_vel(k)] = prev_x[prev_layout.com_vel(src)]
        x0[new_layout.com_acc(k)] = prev_x[prev_layout.com_acc(src)]
        for i in range(4):
            dst = new_layout.foot_force(i, k)
            if dst is not None:
                x0[dst] = foot_source(i, src)
        for a in range(new_layout.n_arms):
            x0[new_layout.arm_pos(a, k)] = prev_x[prev_layout.arm_pos(a, src)]
            x0[new_layout.arm_vel(a, k)] = prev_x[prev_layout.arm_vel(a, src)]
            x0[new_layout.arm_force(a, k)] = prev_x[prev_layout.arm_force(a, src)]
    for s in range(new_layout.n_segments):
        src = min(s + shift_knots, pS - 1)
        x0[new_layout.jerk(s)] = prev_x[prev_layout.jerk(src)]
    return x0
