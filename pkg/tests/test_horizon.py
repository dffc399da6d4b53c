"""Tests for horizon-problem assembly, gradients, the value bound, warm starts."""

import numpy as np
import pytest

from empc.costs import j_delta, v_delta
from empc.dynamics import rollout
from empc.horizon import (
    LyapunovLevels,
    build_horizon_problem,
    compute_v_max,
    feasibility_problem,
    polytope_vertices,
    sample_feasible_pairs,
    solve_horizon,
    warm_start_shift,
)
from empc.sqp import SolverOptions, solve


def _problem(hvac_model, hvac_suite, hvac_ingredients, kind, x0, **levels):
    return build_horizon_problem(
        hvac_model, hvac_suite, hvac_ingredients, 5, kind, x0,
        levels=LyapunovLevels(**levels) if levels else None,
    )


class TestAssembly:
    def test_decision_vector_and_row_counts(self, hvac_model, hvac_suite, hvac_ingredients):
        # hand count (N=5, n_u=2): 5 total-flow rows + 5*4 state-box rows +
        # 1 terminal row = 26, plus the kind's adaptive rows
        x0 = np.array([29.0, 28.0])
        z = np.tile(hvac_suite.us, 5)
        plain = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-plain", x0)
        assert plain.n_vars == 10
        assert plain.n_rows() == 26
        assert plain.constraint_values(z).size == 26
        eta = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-eta", x0, eta=50.0)
        assert eta.n_rows() == 27
        pair = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-xi-zeta", x0,
                        xi=60.0, zeta=50.0)
        assert pair.n_rows() == 28
        single = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-zeta", x0, zeta=50.0)
        assert single.n_rows() == 27
        track = _problem(hvac_model, hvac_suite, hvac_ingredients, "tracking", x0)
        assert track.n_rows() == 26

    def test_infinite_level_drops_row(self, hvac_model, hvac_suite, hvac_ingredients):
        x0 = np.array([29.0, 28.0])
        relaxed = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-eta", x0, eta=np.inf)
        plain = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-plain", x0)
        z = np.tile(hvac_suite.us, 5)
        assert np.array_equal(relaxed.constraint_values(z), plain.constraint_values(z))

    def test_missing_level_is_usage_error(self, hvac_model, hvac_suite, hvac_ingredients):
        with pytest.raises(ValueError, match="eta"):
            _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-eta", [29.0, 28.0])
        with pytest.raises(ValueError, match="xi and zeta"):
            _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-xi-zeta", [29.0, 28.0])
        with pytest.raises(ValueError, match="unknown problem kind"):
            _problem(hvac_model, hvac_suite, hvac_ingredients, "bogus", [29.0, 28.0])

    def test_big_xi_reduces_pair_to_single(self, hvac_model, hvac_suite, hvac_ingredients):
        # with the cap at the domain bound the pair behaves exactly like the
        # budget-only problem
        x0 = np.array([28.5, 27.5])
        v_bound = compute_v_max(hvac_model, hvac_suite, hvac_ingredients, 5, n_samples=200)
        pair = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-xi-zeta", x0,
                        xi=v_bound, zeta=40.0)
        single = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-zeta", x0, zeta=40.0)
        rng = np.random.default_rng(4)
        for _ in range(40):
            z = rng.uniform(0.0, 1.6, size=10)
            assert pair.point_feasible(z, 1e-9) == single.point_feasible(z, 1e-9)


class TestGradients:
    def test_analytic_matches_central_differences(self, hvac_model, hvac_suite, hvac_ingredients):
        problem = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-xi-zeta",
                           [29.0, 28.0], xi=300.0, zeta=250.0)
        rng = np.random.default_rng(9)
        h = 2e-6
        worst = 0.0
        for _ in range(100):
            z = rng.uniform(0.0, 1.6, size=10)
            for fun in (problem.econ_value, problem.tracking_value,
                        problem.v_delta_value, problem.j_delta_value,
                        problem.terminal_level_value):
                _, grad = fun(z)
                fd = np.zeros(10)
                for i in range(10):
                    dz = np.zeros(10)
                    dz[i] = h
                    fd[i] = (fun(z + dz)[0] - fun(z - dz)[0]) / (2 * h)
                err = np.linalg.norm(grad - fd) / max(1.0, np.linalg.norm(fd))
                worst = max(worst, err)
        assert worst <= 1e-5

    def test_constraint_jacobian_matches_fd(self, hvac_model, hvac_suite, hvac_ingredients):
        problem = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-xi-zeta",
                           [29.0, 28.0], xi=300.0, zeta=250.0)
        rng = np.random.default_rng(10)
        z = rng.uniform(0.2, 1.4, size=10)
        vals, jac = problem.constraints(z)
        h = 2e-6
        for i in range(10):
            dz = np.zeros(10)
            dz[i] = h
            fd = (problem.constraint_values(z + dz) - problem.constraint_values(z - dz)) / (2 * h)
            assert np.allclose(jac[:, i], fd, atol=1e-6, rtol=1e-5)

    def test_fd_mode_agrees_with_analytic_solution(self, hvac_model, hvac_suite, hvac_ingredients):
        x0 = np.array([27.0, 26.5])
        a = build_horizon_problem(hvac_model, hvac_suite, hvac_ingredients, 3,
                                  "tracking", x0, diff="analytic")
        b = build_horizon_problem(hvac_model, hvac_suite, hvac_ingredients, 3,
                                  "tracking", x0, diff="fd")
        z0 = np.tile(hvac_suite.us, 3)
        ra = solve(a.to_nlp_spec(z0), SolverOptions())
        rb = solve(b.to_nlp_spec(z0), SolverOptions())
        assert ra.status == "optimal" and rb.status == "optimal"
        assert np.allclose(ra.z, rb.z, atol=1e-5)


class TestWarmStart:
    def test_steady_sequence_shifts_to_itself(self, hvac_model, hvac_suite, hvac_ingredients):
        useq = np.tile(hvac_suite.us, (5, 1))
        states = rollout(hvac_model, hvac_suite.xs, useq)
        shifted = warm_start_shift(useq, states[-1], hvac_ingredients)
        assert np.allclose(shifted, useq, atol=1e-9)

    def test_single_stage_shift(self, hvac_model, hvac_suite, hvac_ingredients):
        useq = np.array([[0.9, 0.4]])
        x1 = rollout(hvac_model, [26.0, 25.5], useq)[1]
        shifted = warm_start_shift(useq, x1, hvac_ingredients)
        assert shifted.shape == (1, 2)
        assert np.allclose(shifted[0], hvac_ingredients.kappa_f(x1))

    def test_shifted_solution_feasible_for_next_problem(
        self, hvac_model, hvac_suite, hvac_ingredients
    ):
        # solve the initial problem, shift, and check feasibility for the
        # budget-constrained problem at the successor state
        x0 = np.array([31.0, 30.0])
        opts = SolverOptions()
        feas = feasibility_problem(hvac_model, hvac_suite, hvac_ingredients, 5, x0)
        z_feas = solve(feas.to_nlp_spec(np.tile(hvac_suite.us, 5)), opts).z
        plain = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-plain", x0)
        res, _ = solve_horizon(plain, z_feas, opts)
        assert res.status == "optimal"
        useq = res.z.reshape(5, 2)
        states = rollout(hvac_model, x0, useq)
        vd = v_delta(hvac_model, hvac_suite, useq, x0)
        jd = j_delta(hvac_model, hvac_suite, useq, x0)
        zeta1 = vd - jd
        shifted = warm_start_shift(useq, states[-1], hvac_ingredients)
        nxt = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-zeta",
                       states[1], zeta=zeta1)
        assert nxt.point_feasible(shifted.ravel(), opts.feas_tol)

    def test_solver_never_returns_worse_than_reference(
        self, hvac_model, hvac_suite, hvac_ingredients
    ):
        opts = SolverOptions()
        rng = np.random.default_rng(14)
        pairs = sample_feasible_pairs(hvac_model, hvac_suite, hvac_ingredients, 5,
                                      n_pairs=10, seed=31)
        for x0, useq in pairs:
            states = rollout(hvac_model, x0, useq)
            shifted = warm_start_shift(useq, states[-1], hvac_ingredients)
            problem = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-plain",
                               states[1])
            ref_obj = problem.objective(shifted.ravel())[0]
            res, fellback = solve_horizon(problem, shifted.ravel(), opts,
                                          reference=shifted.ravel())
            assert res.objective <= ref_obj + 1e-9


class TestValueBound:
    def test_dominates_sampled_feasible_values(self, hvac_model, hvac_suite, hvac_ingredients):
        bound = compute_v_max(hvac_model, hvac_suite, hvac_ingredients, 5,
                              n_samples=2000, seed=3)
        pairs = sample_feasible_pairs(hvac_model, hvac_suite, hvac_ingredients, 5,
                                      n_pairs=500, seed=77)
        worst = max(v_delta(hvac_model, hvac_suite, useq, x0) for x0, useq in pairs)
        assert bound >= worst

    def test_near_singleton_domain_collapses_to_point_value(self, hvac_ingredients, hvac_suite):
        # a near-degenerate box with a pinned input reduces the bound to the
        # value of the single admissible trajectory
        from empc.costs import CostSuite
        from empc.dynamics import AffineBilinearModel, InputSet
        from empc.terminal import TerminalIngredients

        xs = hvac_suite.xs
        us = hvac_suite.us
        eps = 1e-9
        bil = AffineBilinearModel(
            a_matrix=np.eye(2), g_coeff=np.array([0.05, 0.05]),
            d_vector=-np.diag(0.05 * (15.0 - xs)) @ us, g_offset=np.array([15.0, 15.0]),
        )
        iset = InputSet(lower=us, upper=us, a_rows=np.zeros((0, 2)), b_rows=np.zeros(0))
        model = bil.to_system(dt=600.0, state_box=(xs - eps, xs + eps),
                              input_set=iset, asymptotic_set=(xs,))
        ing = TerminalIngredients(
            k_gain=np.zeros((2, 2)), p_matrix=hvac_suite.weights.p,
            alpha=hvac_ingredients.alpha, xs=xs, us=us,
        )
        bound = compute_v_max(model, hvac_suite, ing, 5, n_samples=50, seed=1)
        point_value = v_delta(model, hvac_suite, np.tile(us, (5, 1)), xs)
        assert bound == pytest.approx(point_value, abs=1e-12)

    def test_vertex_enumeration_matches_sampled_max(self, hvac_suite):
        # convex quadratic over a box attains its max at a vertex
        from empc.horizon import _max_quad_over_box

        rng = np.random.default_rng(2)
        for _ in range(25):
            n = int(rng.integers(1, 5))
            ell = rng.normal(size=(n, n))
            w = ell @ ell.T + 0.1 * np.eye(n)
            center = rng.normal(size=n)
            lo = center - rng.uniform(0.5, 2.0, n)
            hi = center + rng.uniform(0.5, 2.0, n)
            exact = _max_quad_over_box(center, w, lo, hi)
            samples = rng.uniform(lo, hi, size=(4000, n)) - center
            sampled = np.einsum("ij,jk,ik->i", samples, w, samples).max()
            assert exact >= sampled
            assert exact <= sampled * 1.6 + 1e-9

    def test_hvac_input_polytope_vertices(self, hvac_model):
        verts = polytope_vertices(hvac_model.input_set)
        expect = {(0.0, 0.0), (3.2, 0.0), (0.0, 3.2)}
        got = {tuple(np.round(v, 9)) for v in verts}
        assert got == expect


class TestFeasiblePairs:
    def test_pairs_satisfy_all_constraints(self, hvac_model, hvac_suite, hvac_ingredients):
        pairs = sample_feasible_pairs(hvac_model, hvac_suite, hvac_ingredients, 5,
                                      n_pairs=50, seed=8)
        assert len(pairs) == 50
        plain_cache = {}
        for x0, useq in pairs:
            problem = _problem(hvac_model, hvac_suite, hvac_ingredients, "econ-plain", x0)
            assert problem.point_feasible(useq.ravel(), 1e-9)
