"""QP solver versus direct KKT solves and an active-set enumeration oracle."""

import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from loadwalk.qp import QpOptions, solve_qp


def brute_force_qp(P, q, A, l, u, tol=1e-9):
    """Enumerate active sets of a small strictly convex QP.

    Each row is inactive, at its lower bound, or at its upper bound; solve
    the equality KKT system per assignment and keep the best feasible point
    with correctly signed multipliers.
    """
    P, A = np.asarray(P, float), np.asarray(A, float)
    q, l, u = (np.asarray(v, float) for v in (q, l, u))
    m, n = A.shape
    best = None
    for assign in itertools.product((0, 1, 2), repeat=m):  # 0 free, 1 lo, 2 up
        rows = [i for i, a in enumerate(assign) if a]
        targets = [l[i] if assign[i] == 1 else u[i] for i in rows]
        if any(not np.isfinite(t) for t in targets):
            continue
        Aact = A[rows]
        K = np.block([[P, Aact.T], [Aact, np.zeros((len(rows), len(rows)))]])
        rhs = np.concatenate([-q, targets])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x, nu = sol[:n], sol[n:]
        Ax = A @ x
        if np.any(Ax < l - 1e-8) or np.any(Ax > u + 1e-8):
            continue
        sign_ok = all((assign[i] == 2 and nu_k >= -1e-8)
                      or (assign[i] == 1 and nu_k <= 1e-8)
                      for i, nu_k in zip(rows, nu))
        if not sign_ok:
            continue
        obj = 0.5 * x @ P @ x + q @ x
        if best is None or obj < best[1] - 1e-12:
            best = (x, obj)
    assert best is not None, "oracle found no KKT point"
    return best[0]


class TestBasics:
    def test_separable_box(self):
        # min 1/2|x - c|^2 inside a box: solution is the clamp of c.
        c = np.array([2.0, -3.0, 0.25])
        P = sp.eye(3, format="csc")
        A = sp.eye(3, format="csc")
        res = solve_qp(P, -c, A, -np.ones(3), np.ones(3))
        assert res.ok
        np.testing.assert_allclose(res.x, [1.0, -1.0, 0.25], atol=1e-7)

    def test_equality_constrained_matches_kkt(self):
        rng = np.random.default_rng(5)
        n, m = 8, 3
        M = rng.normal(size=(n, n))
        P = M @ M.T + np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        K = np.block([[P, A.T], [A, np.zeros((m, m))]])
        xstar = np.linalg.solve(K, np.concatenate([-q, b]))[:n]
        res = solve_qp(sp.csc_matrix(P), q, sp.csc_matrix(A), b, b)
        assert res.ok
        np.testing.assert_allclose(res.x, xstar, atol=1e-7)

    def test_polish_reaches_tight_residuals(self):
        rng = np.random.default_rng(11)
        n = 6
        M = rng.normal(size=(n, n))
        P = sp.csc_matrix(M @ M.T + np.eye(n))
        q = rng.normal(size=n)
        A = sp.vstack([sp.eye(n), sp.csc_matrix(np.ones((1, n)))], format="csc")
        l = np.concatenate([-np.ones(n), [0.5]])
        u = np.concatenate([np.ones(n), [0.5]])
        res = solve_qp(P, q, A, l, u)
        assert res.ok
        assert res.pri_res < 1e-9
        assert res.dua_res < 1e-8

    def test_unconstrained(self):
        P = sp.csc_matrix(np.diag([2.0, 4.0]))
        q = np.array([-2.0, -8.0])
        res = solve_qp(P, q, sp.csc_matrix((0, 2)), np.zeros(0), np.zeros(0))
        assert res.ok
        np.testing.assert_allclose(res.x, [1.0, 2.0], atol=1e-6)

    def test_duplicate_redundant_rows(self):
        # same constraint twice should not break anything
        P = sp.eye(2, format="csc")
        q = np.array([-1.0, -1.0])
        A = sp.csc_matrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
        res = solve_qp(P, q, A, np.array([-0.5, -0.5]), np.array([0.5, 0.5]))
        assert res.ok
        np.testing.assert_allclose(res.x, [0.5, 1.0], atol=1e-7)


class TestOracleComparison:
    @pytest.mark.parametrize("seed", range(12))
    def test_random_small_qp(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 4, 4
        M = rng.normal(size=(n, n))
        P = M @ M.T + np.eye(n)
        q = rng.normal(size=n) * 2.0
        A = rng.normal(size=(m, n))
        mid = rng.normal(size=m)
        half = rng.uniform(0.1, 1.5, size=m)
        l, u = mid - half, mid + half
        # make one row an equality and one row one-sided
        l[0] = u[0]
        u[1] = np.inf
        xstar = brute_force_qp(P, q, A, l, u)
        res = solve_qp(sp.csc_matrix(P), q, sp.csc_matrix(A), l, u)
        assert res.ok
        np.testing.assert_allclose(res.x, xstar, atol=2e-6)

    def test_lp_like_rows(self):
        # tiny P regularization, active bounds decide the solution
        P = sp.csc_matrix(1e-6 * np.eye(2))
        q = np.array([1.0, 1.0])
        A = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        l = np.array([0.0, 0.0, 0.5])
        u = np.array([np.inf, np.inf, np.inf])
        res = solve_qp(P, q, A, l, u)
        assert res.ok
        assert res.x[0] + res.x[1] == pytest.approx(0.5, abs=1e-6)


class TestInfeasibility:
    def test_primal_infeasible_box(self):
        P = sp.eye(1, format="csc")
        q = np.zeros(1)
        A = sp.csc_matrix(np.array([[1.0], [1.0]]))
        l = np.array([1.0, -np.inf])
        u = np.array([np.inf, 0.0])
        res = solve_qp(P, q, A, l, u)
        assert res.status == "primal_infeasible"
        assert res.certificate is not None

    def test_primal_infeasible_sum(self):
        # x0 + x1 = 2 and x0 + x1 = 0 cannot both hold
        P = sp.eye(2, format="csc")
        q = np.zeros(2)
        A = sp.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
        res = solve_qp(P, q, A, np.array([2.0, 0.0]), np.array([2.0, 0.0]))
        assert res.status == "primal_infeasible"

    def test_dual_infeasible_unbounded(self):
        P = sp.csc_matrix((1, 1))
        q = np.array([1.0])
        A = sp.eye(1, format="csc")
        res = solve_qp(P, q, A, np.array([-np.inf]), np.array([5.0]))
        assert res.status == "dual_infeasible"


class TestWarmStart:
    def test_warm_start_cuts_iterations(self):
        rng = np.random.default_rng(21)
        n, m = 30, 40
        M = rng.normal(size=(n, n))
        P = sp.csc_matrix(M @ M.T + 0.5 * np.eye(n))
        q = rng.normal(size=n)
        A = sp.csc_matrix(rng.normal(size=(m, n)))
        mid = A @ rng.normal(size=n)
        l, u = mid - 0.5, mid + 0.5
        cold = solve_qp(P, q, A, l, u)
        assert cold.ok
        warm = solve_qp(P, q + 1e-3 * rng.normal(size=n), A, l, u,
                        x0=cold.x, y0=cold.y)
        assert warm.ok
        assert warm.iterations <= cold.iterations

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        n, m = 10, 12
        M = rng.normal(size=(n, n))
        P = sp.csc_matrix(M @ M.T + np.eye(n))
        q = rng.normal(size=n)
        A = sp.csc_matrix(rng.normal(size=(m, n)))
        l, u = -np.ones(m), np.ones(m)
        r1 = solve_qp(P, q, A, l, u)
        r2 = solve_qp(P, q, A, l, u)
        assert r1.iterations == r2.iterations
        np.testing.assert_array_equal(r1.x, r2.x)
