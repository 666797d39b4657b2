"""Operator-splitting solver for sparse convex quadratic programs.

Solves   minimize   1/2 x' P x + q' x
         subject to l <= A x <= u          (equalities have l == u)

by ADMM on the splitting (x, z = Ax), with a quasi-definite KKT system

    [ P + sigma I   A'          ] [x]   [rhs_x]
    [ A             -diag(1/rho)] [nu] = [rhs_z]

factored once per step-size choice (scipy sparse LU).  Per-row step sizes
give equality rows a much stiffer rho.  The problem data is Ruiz-equilibrated
before iterating; residuals, certificates and the returned solution are in
the original (unscaled) units.  An active-set polish step refines the final
iterate to near machine precision when the active set is identified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INF = 1e30  # treated as "no bound"; np.inf also accepted


@dataclass
class QpOptions:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-9
    eps_rel: float = 1e-9
    eps_prim_inf: float = 1e-6
    eps_dual_inf: float = 1e-6
    max_iter: int = 50000
    check_interval: int = 25
    scaling_iters: int = 10
    rho_eq_scale: float = 1e3
    rho_min: float = 1e-6
    rho_max: float = 1e6
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 50
    adaptive_rho_tolerance: float = 5.0
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine_iters: int = 4


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray  # row multipliers: positive at upper bounds, negative at lower
    z: np.ndarray  # constraint values A x at the solution estimate
    status: str  # optimal | max_iter | primal_infeasible | dual_infeasible
    iterations: int
    pri_res: float
    dua_res: float
    objective: float
    polished: bool = False
    certificate: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _col_inf_norms(M: sp.spmatrix) -> np.ndarray:
    M = abs(M.tocsc())
    out = np.zeros(M.shape[1])
    if M.nnz:
        mx = M.max(axis=0).toarray().ravel()
        out[: len(mx)] = mx
    return out


def _limit(v: np.ndarray, lo: float = 1e-4, hi: float = 1e4) -> np.ndarray:
    return np.clip(v, lo, hi)


class _Scaling:
    """Ruiz equilibration of [[P, A'], [A, 0]] plus cost normalization."""

    def __init__(self, P, q, A, l, u, iters: int):
        n, m = len(q), A.shape[0]
        d = np.ones(n)
        e = np.ones(m)
        c = 1.0
        Ps, qs, As = P.copy(), q.copy(), A.copy()
        ls, us = l.copy(), u.copy()
        for _ in range(iters):
            norm_x = np.maximum(_col_inf_norms(Ps), _col_inf_norms(As))
            norm_y = _col_inf_norms(As.T)
            dx = 1.0 / np.sqrt(_limit(np.where(norm_x == 0.0, 1.0, norm_x)))
            dy = 1.0 / np.sqrt(_limit(np.where(norm_y == 0.0, 1.0, norm_y)))
            Dx = sp.diags(dx)
            Dy = sp.diags(dy)
            Ps = (Dx @ Ps @ Dx).tocsc()
            As = (Dy @ As @ Dx).tocsc()
            qs = dx * qs
            ls = dy * ls
            us = dy * us
            d *= dx
            e *= dy
            # normalize the cost so P and q have comparable magnitude
            cost_norm = max(np.mean(_col_inf_norms(Ps)),
                            float(np.max(np.abs(qs), initial=0.0)))
            if cost_norm > 0.0:
                gamma = 1.0 / _limit(np.array([cost_norm]))[0]
                Ps = Ps * gamma
                qs = qs * gamma
                c *= gamma
        self.d, self.e, self.c = d, e, c
        self.P, self.q, self.A = Ps.tocsc(), qs, As.tocsc()
        self.l, self.u = ls, us

    def unscale_x(self, xs):
        return self.d * xs

    def unscale_y(self, ys):
        return self.e * ys / self.c

    def unscale_z(self, zs):
        return zs / self.e


def _row_rho(rho: float, l: np.ndarray, u: np.ndarray, opts: QpOptions) -> np.ndarray:
    rho = float(np.clip(rho, opts.rho_min, opts.rho_max))
    rho_vec = np.full(len(l), rho)
    loose = (l <= -INF) & (u >= INF)
    eq = np.isfinite(l) & np.isfinite(u) & (u - l < 1e-12)
    rho_vec[loose] = opts.rho_min
    rho_vec[eq] = min(rho * opts.rho_eq_scale, opts.rho_max)
    return rho_vec


def _factor(P, A, sigma, rho_vec):
    n, m = P.shape[0], A.shape[0]
    K = sp.bmat([[P + sigma * sp.eye(n), A.T],
                 [A, -sp.diags(1.0 / rho_vec)]], format="csc")
    return spla.splu(K)


def solve_qp(P, q, A, l, u, *, x0=None, y0=None,
             options: QpOptions | None = None) -> QpResult:
    """ADMM solve of the boxed QP; returns unscaled primal/dual solution."""
    opts = options or QpOptions()
    P0 = sp.csc_matrix(P)
    A0 = sp.csc_matrix(A)
    q0 = np.asarray(q, dtype=float).copy()
    n, m = len(q0), A0.shape[0]
    l0 = np.where(np.isneginf(l), -INF, np.asarray(l, dtype=float))
    u0 = np.where(np.isposinf(u), INF, np.asarray(u, dtype=float))
    if np.any(l0 > u0):
        raise ValueError("lower bound exceeds upper bound")

    if m == 0:
        lu = spla.splu(sp.csc_matrix(P0 + opts.sigma * sp.eye(n)))
        x = lu.solve(-q0)
        obj = 0.5 * x @ (P0 @ x) + q0 @ x
        return QpResult(x=x, y=np.zeros(0), z=np.zeros(0), status="optimal",
                        iterations=0, pri_res=0.0,
                        dua_res=float(np.max(np.abs(P0 @ x + q0), initial=0.0)),
                        objective=float(obj))

    sc = _Scaling(P0, q0, A0, l0, u0, opts.scaling_iters)
    Ph, qh, Ah, lh, uh = sc.P, sc.q, sc.A, sc.l, sc.u

    rho_bar = opts.rho
    rho_vec = _row_rho(rho_bar, lh, uh, opts)
    lu = _factor(Ph, Ah, opts.sigma, rho_vec)

    xs = np.zeros(n) if x0 is None else np.asarray(x0, float) / sc.d
    ys = np.zeros(m) if y0 is None else np.asarray(y0, float) * sc.c / sc.e
    zs = Ah @ xs

    status = "max_iter"
    cert = None
    pri_res = dua_res = np.inf
    last_factor_iter = 0
    it = 0
    for it in range(1, opts.max_iter + 1):
        rhs = np.concatenate([opts.sigma * xs - qh, zs - ys / rho_vec])
        sol = lu.solve(rhs)
        xt, nu = sol[:n], sol[n:]
        zt = zs + (nu - ys) / rho_vec
        xs_new = opts.alpha * xt + (1.0 - opts.alpha) * xs
        z_relax = opts.alpha * zt + (1.0 - opts.alpha) * zs
        zs_new = np.clip(z_relax + ys / rho_vec, lh, uh)
        ys_new = ys + rho_vec * (z_relax - zs_new)

        dxs, dys = xs_new - xs, ys_new - ys
        xs, zs, ys = xs_new, zs_new, ys_new

        if it % opts.check_interval != 0 and it != opts.max_iter:
            continue

        x = sc.unscale_x(xs)
        y = sc.unscale_y(ys)
        z = sc.unscale_z(zs)
        Ax = A0 @ x
        Px = P0 @ x
        Aty = A0.T @ y
        pri_res = float(np.max(np.abs(Ax - z), initial=0.0))
        dua_res = float(np.max(np.abs(Px + q0 + Aty), initial=0.0))
        eps_pri = opts.eps_abs + opts.eps_rel * max(
            np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
        eps_dua = opts.eps_abs + opts.eps_rel * max(
            np.max(np.abs(Px), initial=0.0), np.max(np.abs(Aty), initial=0.0),
            np.max(np.abs(q0), initial=0.0))
        if pri_res <= eps_pri and dua_res <= eps_dua:
            status = "optimal"
            break

        dy = sc.unscale_y(dys)
        norm_dy = float(np.max(np.abs(dy), initial=0.0))
        if norm_dy > 1e-14:
            dy_pos, dy_neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
            # a push against an unbounded side cannot certify infeasibility
            unbounded = (np.any(dy_pos[u0 >= INF] > 0.0)
                         or np.any(dy_neg[l0 <= -INF] < 0.0))
            if not unbounded:
                sup_total = float(u0 @ np.where(u0 < INF, dy_pos, 0.0)
                                  + l0 @ np.where(l0 > -INF, dy_neg, 0.0))
                if (sup_total <= -opts.eps_prim_inf * norm_dy
                        and np.max(np.abs(A0.T @ dy), initial=0.0)
                        <= opts.eps_prim_inf * norm_dy):
                    status = "primal_infeasible"
                    cert = dy / norm_dy
                    break
        dx = sc.unscale_x(dxs)
        norm_dx = float(np.max(np.abs(dx), initial=0.0))
        if norm_dx > 1e-14 and q0 @ dx <= -opts.eps_dual_inf * norm_dx:
            Adx = A0 @ dx
            ok_dir = (np.max(np.abs(P0 @ dx), initial=0.0)
                      <= opts.eps_dual_inf * norm_dx)
            up_ok = np.all(Adx[u0 < INF] <= opts.eps_dual_inf * norm_dx)
            lo_ok = np.all(Adx[l0 > -INF] >= -opts.eps_dual_inf * norm_dx)
            if ok_dir and up_ok and lo_ok:
                status = "dual_infeasible"
                cert = dx / norm_dx
                break

        if (opts.adaptive_rho
                and it - last_factor_iter >= opts.adaptive_rho_interval):
            num = pri_res / max(np.max(np.abs(Ax), initial=0.0),
                                np.max(np.abs(z), initial=0.0), 1e-12)
            den = dua_res / max(np.max(np.abs(Px), initial=0.0),
                                np.max(np.abs(Aty), initial=0.0),
                                np.max(np.abs(q0), initial=0.0), 1e-12)
            rho_new = float(np.clip(rho_bar * np.sqrt(num / max(den, 1e-15)),
                                    opts.rho_min, opts.rho_max))
            if (rho_new > rho_bar * opts.adaptive_rho_tolerance
                    or rho_new < rho_bar / opts.adaptive_rho_tolerance):
                rho_bar = rho_new
                rho_vec = _row_rho(rho_bar, lh, uh, opts)
                lu = _factor(Ph, Ah, opts.sigma, rho_vec)
                last_factor_iter = it

    x = sc.unscale_x(xs)
    y = sc.unscale_y(ys)
    z = sc.unscale_z(zs)
    if status in ("primal_infeasible", "dual_infeasible"):
        obj = float("nan")
        return QpResult(x=x, y=y, z=z, status=status, iterations=it,
                        pri_res=pri_res, dua_res=dua_res, objective=obj,
                        certificate=cert)

    result = QpResult(
        x=x, y=y, z=z, status=status, iterations=it, pri_res=pri_res,
        dua_res=dua_res, objective=float(0.5 * x @ (P0 @ x) + q0 @ x))
    if opts.polish:
        # also worth attempting on a stalled run: ADMM tail convergence can
        # be slow long after the active set has settled
        _polish(result, sc, P0, q0, A0, l0, u0, xs, ys, zs, opts)
        if status == "max_iter" and result.polished:
            Ax = A0 @ result.x
            Px = P0 @ result.x
            Aty = A0.T @ result.y
            eps_pri = opts.eps_abs + opts.eps_rel * max(
                np.max(np.abs(Ax), initial=0.0),
                np.max(np.abs(result.z), initial=0.0))
            eps_dua = opts.eps_abs + opts.eps_rel * max(
                np.max(np.abs(Px), initial=0.0),
                np.max(np.abs(Aty), initial=0.0),
                np.max(np.abs(q0), initial=0.0))
            if result.pri_res <= eps_pri and result.dua_res <= eps_dua:
                result.status = "optimal"
    return result


def _polish(result: QpResult, sc: _Scaling, P0, q0, A0, l0, u0,
            xs: np.ndarray, ys: np.ndarray, zs: np.ndarray,
            opts: QpOptions) -> None:
    """Solve the equality-constrained QP on a guessed active set.

    The primary guess compares each row's slack against its multiplier
    pull.  Multipliers from a loosely converged run can be pure noise, so
    a slack-distance guess serves as fallback; whichever candidate first
    survives the multiplier sign check and improves the residuals wins.
    """
    eq = np.isfinite(sc.l) & np.isfinite(sc.u) & (sc.u - sc.l < 1e-12)
    guesses = [
        (((zs - sc.l) < -ys) & ~eq, ((sc.u - zs) < ys) & ~eq),
    ]
    tol = 1e-6 * max(1.0, float(np.max(np.abs(zs), initial=0.0)))
    guesses.append((((zs - sc.l) <= tol) & ~eq, ((sc.u - zs) <= tol) & ~eq))
    seen = set()
    for low, upp in guesses:
        key = (low.tobytes(), upp.tobytes())
        if key in seen:
            continue
        seen.add(key)
        if _try_polish(result, sc, P0, q0, A0, l0, u0, eq, low, upp, opts):
            return


def _try_polish(result: QpResult, sc: _Scaling, P0, q0, A0, l0, u0,
                eq, low, upp, opts: QpOptions) -> bool:
    n, m = len(result.x), len(result.y)
    low = low.copy()
    upp = upp.copy()
    delta = opts.polish_delta
    # wrongly signed multipliers mark rows that do not belong in the active
    # set (a degenerate solution often over-selects); drop and re-solve
    for _ in range(4):
        active = np.flatnonzero(eq | low | upp)
        if len(active) == 0:
            return False
        z_act = np.where(upp, sc.u, sc.l)[active]
        A_act = sc.A[active]
        K = sp.bmat([[sc.P + delta * sp.eye(n), A_act.T],
                     [A_act, -delta * sp.eye(len(active))]], format="csc")
        K_true = sp.bmat([[sc.P, A_act.T], [A_act, None]], format="csc")
        rhs = np.concatenate([-sc.q, z_act])
        try:
            lu = spla.splu(K)
        except RuntimeError:
            return False
        sol = lu.solve(rhs)
        for _ in range(opts.polish_refine_iters):
            sol = sol + lu.solve(rhs - K_true @ sol)
        xs_p, nu = sol[:n], sol[n:]
        sign_tol = 1e-7 * max(1.0, float(np.max(np.abs(nu), initial=0.0)))
        low_act, upp_act = low[active], upp[active]
        bad_low = low_act & (nu > sign_tol)
        bad_upp = upp_act & (nu < -sign_tol)
        if not (bad_low.any() or bad_upp.any()):
            break
        low[active[bad_low]] = False
        upp[active[bad_upp]] = False
    else:
        return False

    ys_p = np.zeros(m)
    ys_p[active] = nu
    x = sc.unscale_x(xs_p)
    y = sc.unscale_y(ys_p)
    z = np.clip(A0 @ x, np.where(l0 <= -INF, -np.inf, l0),
                np.where(u0 >= INF, np.inf, u0))
    pri = float(np.max(np.abs(A0 @ x - z), initial=0.0))
    dua = float(np.max(np.abs(P0 @ x + q0 + A0.T @ y), initial=0.0))
    if max(pri, dua) >= max(result.pri_res, result.dua_res):
        return False
    result.x, result.y, result.z = x, y, A0 @ x
    result.pri_res, result.dua_res = pri, dua
    result.objective = float(0.5 * x @ (P0 @ x) + q0 @ x)
    result.polished = True
    return True
