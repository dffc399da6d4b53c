"""Tests for the dense QP layer and the SQP solver."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from empc import sqp
from empc.qp import QpInfeasibleError, nnls, solve_qp, solve_qp_elastic


class TestNnls:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_matches_bruteforce_active_sets(self, seed):
        rng = np.random.default_rng(seed)
        m, n = rng.integers(1, 6), rng.integers(1, 6)
        e = rng.normal(size=(m, n))
        f = rng.normal(size=m)
        x, rnorm = nnls(e, f)
        assert np.all(x >= 0.0)
        best = np.linalg.norm(f)
        for k in range(n + 1):
            for cols in itertools.combinations(range(n), k):
                if not cols:
                    continue
                sol, *_ = np.linalg.lstsq(e[:, list(cols)], f, rcond=None)
                if np.any(sol < -1e-10):
                    continue
                cand = np.zeros(n)
                cand[list(cols)] = sol
                best = min(best, np.linalg.norm(e @ cand - f))
        assert rnorm <= best + 1e-9

    def test_exact_fit(self):
        e = np.eye(3)
        x, rnorm = nnls(e, np.array([1.0, 2.0, 3.0]))
        assert np.allclose(x, [1.0, 2.0, 3.0])
        assert rnorm == pytest.approx(0.0, abs=1e-12)

    def test_clips_negative_components(self):
        e = np.eye(2)
        x, rnorm = nnls(e, np.array([-1.0, 2.0]))
        assert np.allclose(x, [0.0, 2.0])
        assert rnorm == pytest.approx(1.0)


class TestQp:
    def test_projection(self):
        res = solve_qp(2 * np.eye(3), np.zeros(3), a_in=np.array([[1.0, 0, 0]]), b_in=np.array([1.0]))
        assert np.allclose(res.d, [1.0, 0.0, 0.0], atol=1e-10)
        assert res.objective == pytest.approx(1.0)

    def test_equality_matches_kkt_oracle(self):
        h = np.diag([2.0, 4.0, 6.0])
        g = np.array([1.0, -2.0, 3.0])
        a = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
        b = np.array([1.0, 0.2])
        res = solve_qp(h, g, a_eq=a, b_eq=b)
        kkt = np.block([[h, a.T], [a, np.zeros((2, 2))]])
        sol = np.linalg.solve(kkt, np.concatenate([-g, b]))
        assert np.allclose(res.d, sol[:3], atol=1e-10)
        # conventions: our stationarity is H d + g = A' nu, the oracle's is
        # H d + g + A' nu = 0
        assert np.allclose(res.mult_eq, -sol[3:], atol=1e-8)

    def test_detects_infeasible_rows(self):
        with pytest.raises(QpInfeasibleError):
            solve_qp(
                np.eye(1), np.zeros(1),
                a_in=np.array([[1.0], [-1.0]]), b_in=np.array([1.0, 1.0]),
            )

    @settings(max_examples=80, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_random_kkt_conditions(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, 8))
        ell = rng.normal(size=(n, n))
        h = ell @ ell.T + np.eye(n)
        g = rng.normal(size=n)
        a = rng.normal(size=(m, n))
        b = a @ rng.normal(size=n) - rng.uniform(0.0, 1.0, size=m)
        res = solve_qp(h, g, a_in=a, b_in=b)
        assert np.all(a @ res.d >= b - 1e-8)
        assert np.all(res.mult_ineq >= -1e-10)
        stationarity = h @ res.d + g - a.T @ res.mult_ineq
        assert np.abs(stationarity).max() < 1e-6
        assert np.abs(res.mult_ineq * (a @ res.d - b)).max() < 1e-6

    def test_elastic_always_solves(self):
        res, slack = solve_qp_elastic(
            np.eye(1), np.zeros(1), None, None,
            np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]), penalty=1e4,
        )
        assert slack == pytest.approx(2.0, abs=1e-2)

    def test_elastic_zero_slack_when_feasible(self):
        res, slack = solve_qp_elastic(
            2 * np.eye(2), np.zeros(2), None, None,
            np.array([[1.0, 0.0]]), np.array([1.0]), penalty=1e4,
        )
        assert slack < 1e-6
        assert np.allclose(res.d, [1.0, 0.0], atol=1e-4)


def rosenbrock(z):
    val = 100.0 * (z[1] - z[0] ** 2) ** 2 + (1.0 - z[0]) ** 2
    grad = np.array([
        -400.0 * z[0] * (z[1] - z[0] ** 2) - 2.0 * (1.0 - z[0]),
        200.0 * (z[1] - z[0] ** 2),
    ])
    return float(val), grad


class TestSqp:
    def test_unconstrained_rosenbrock(self):
        spec = sqp.NlpSpec(n_vars=2, objective=rosenbrock, initial_point=np.array([-1.2, 1.0]))
        res = sqp.solve(spec)
        assert res.status == "optimal"
        assert np.allclose(res.z, [1.0, 1.0], atol=1e-6)

    def test_projection_through_nonlinear_interface(self):
        def obj(z):
            return float(z @ z), 2.0 * z

        def ineq(z):
            return np.array([z[0] - 1.0]), np.array([[1.0, 0.0]])

        spec = sqp.NlpSpec(
            n_vars=2, objective=obj, ineq_constraints=ineq, initial_point=np.array([-3.0, 2.0])
        )
        res = sqp.solve(spec)
        assert res.status == "optimal"
        assert np.allclose(res.z, [1.0, 0.0], atol=1e-8)
        assert res.objective == pytest.approx(1.0, abs=1e-8)

    def test_equality_quadratic_matches_oracle(self):
        h = np.diag([2.0, 4.0, 6.0])
        g0 = np.array([1.0, -2.0, 3.0])
        a = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
        b = np.array([1.0, 0.2])

        def obj(z):
            return float(0.5 * z @ h @ z + g0 @ z), h @ z + g0

        def eq(z):
            return a @ z - b, a

        spec = sqp.NlpSpec(n_vars=3, objective=obj, eq_constraints=eq, initial_point=np.zeros(3))
        res = sqp.solve(spec)
        kkt = np.block([[h, a.T], [a, np.zeros((2, 2))]])
        sol = np.linalg.solve(kkt, np.concatenate([-g0, b]))
        assert res.status == "optimal"
        assert np.allclose(res.z, sol[:3], atol=1e-8)

    def test_hock_schittkowski_71(self):
        def obj(z):
            val = z[0] * z[3] * (z[0] + z[1] + z[2]) + z[2]
            grad = np.array([
                z[3] * (2 * z[0] + z[1] + z[2]),
                z[0] * z[3],
                z[0] * z[3] + 1.0,
                z[0] * (z[0] + z[1] + z[2]),
            ])
            return float(val), grad

        def eq(z):
            return np.array([z @ z - 40.0]), 2.0 * z[None, :]

        def ineq(z):
            jac = np.array([[z[1] * z[2] * z[3], z[0] * z[2] * z[3], z[0] * z[1] * z[3], z[0] * z[1] * z[2]]])
            return np.array([z[0] * z[1] * z[2] * z[3] - 25.0]), jac

        spec = sqp.NlpSpec(
            n_vars=4, objective=obj, eq_constraints=eq, ineq_constraints=ineq,
            lower=np.ones(4), upper=5.0 * np.ones(4),
            initial_point=np.array([1.0, 5.0, 5.0, 1.0]),
        )
        res = sqp.solve(spec)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(17.0140173, abs=1e-5)

    def test_bounds_only(self):
        def obj(z):
            return float((z[0] - 3.0) ** 2), np.array([2.0 * (z[0] - 3.0)])

        spec = sqp.NlpSpec(n_vars=1, objective=obj, upper=np.array([1.0]),
                           initial_point=np.array([0.0]))
        res = sqp.solve(spec)
        assert res.status == "optimal"
        assert res.z[0] == pytest.approx(1.0, abs=1e-10)

    def test_infeasible_problem_reported(self):
        def obj(z):
            return float(z @ z), 2.0 * z

        def ineq(z):
            return np.array([z[0] - 1.0, -1.0 - z[0]]), np.array([[1.0], [-1.0]])

        spec = sqp.NlpSpec(n_vars=1, objective=obj, ineq_constraints=ineq,
                           initial_point=np.zeros(1))
        res = sqp.solve(spec)
        assert res.status == "infeasible"
        assert not res.feasible
        assert res.max_violation >= 0.99

    def test_optimal_never_violates_contract(self):
        # randomized: whenever the solver reports optimal, feasibility and
        # stationarity must hold within the configured tolerances
        rng = np.random.default_rng(5)
        opts = sqp.SolverOptions()
        for _ in range(30):
            n = int(rng.integers(2, 5))
            ell = rng.normal(size=(n, n))
            h = ell @ ell.T + 0.5 * np.eye(n)
            g0 = rng.normal(size=n)
            a = rng.normal(size=(2, n))
            b = a @ rng.normal(size=n) - rng.uniform(0, 1, 2)

            def obj(z, h=h, g0=g0):
                return float(0.5 * z @ h @ z + g0 @ z), h @ z + g0

            def ineq(z, a=a, b=b):
                return a @ z - b, a

            res = sqp.solve(sqp.NlpSpec(n_vars=n, objective=obj, ineq_constraints=ineq,
                                        initial_point=rng.normal(size=n)), opts)
            if res.status == "optimal":
                assert res.max_violation <= opts.feas_tol
                assert res.kkt_residual <= opts.opt_tol

    def test_callback_error_on_nonfinite_start(self):
        def obj(z):
            return float("nan"), np.zeros(1)

        with pytest.raises(sqp.CallbackError):
            sqp.solve(sqp.NlpSpec(n_vars=1, objective=obj, initial_point=np.zeros(1)))

    def test_initial_point_clipped_into_bounds(self):
        def obj(z):
            return float(z @ z), 2.0 * z

        spec = sqp.NlpSpec(n_vars=1, objective=obj, lower=np.array([2.0]), upper=np.array([5.0]),
                           initial_point=np.array([-10.0]))
        res = sqp.solve(spec)
        assert res.z[0] == pytest.approx(2.0, abs=1e-10)
