"""Tests for the stepping engine and the adaptive level update laws."""

from collections import deque

import numpy as np
import pytest

from empc.controller import (
    Controller,
    ControllerConfig,
    ControllerState,
    update_eta,
    update_xi,
    update_zeta,
)
from empc.dynamics import rollout, step
from empc.sqp import SolverOptions


class TestUpdateLaws:
    def _state(self, vd, jd, t=1):
        st = ControllerState()
        st.t = t
        st.prev_vdelta = vd
        st.prev_jdelta = jd
        return st

    @pytest.mark.parametrize("beta,expected", [(1.0, 3.0), (0.5, 4.0)])
    def test_eta_formula(self, beta, expected):
        assert update_eta(self._state(5.0, 2.0), beta) == pytest.approx(expected)

    def test_eta_zero_at_steady(self):
        assert update_eta(self._state(0.0, 0.0), 1.0) == 0.0

    def test_eta_requires_history(self):
        with pytest.raises(ValueError, match="t >= 1"):
            update_eta(ControllerState(), 1.0)

    @pytest.mark.parametrize("beta,expected", [(1.0, 3.0), (0.5, 4.0)])
    def test_zeta_same_formula(self, beta, expected):
        assert update_zeta(self._state(5.0, 2.0), beta) == pytest.approx(expected)

    def test_zeta_zero_at_steady(self):
        assert update_zeta(self._state(0.0, 0.0), 1.0) == 0.0

    def test_xi_max_of_contraction_and_budget(self):
        cfg = ControllerConfig(scheme="alg2", m=3, tau=0.6)
        st = ControllerState()
        st.t = 3
        st.v_max = 100.0
        st.xi_history = deque([10.0, 9.0, 8.5])
        st.zeta_history = deque([9.5, 8.0, 7.5])
        assert update_xi(st, cfg) == pytest.approx(max(0.6 * 10.0, 8.0))
        st.zeta_history = deque([9.5, 5.0, 4.5])
        assert update_xi(st, cfg) == pytest.approx(6.0)

    def test_xi_before_m_steps_is_initialization(self):
        cfg = ControllerConfig(scheme="alg2", m=4)
        st = ControllerState()
        st.t = 2
        st.v_max = 123.0
        assert update_xi(st, cfg) == 123.0

    def test_xi_degenerate_tau_uses_budget_only(self):
        cfg = ControllerConfig(scheme="alg2", m=2, tau=0.0)
        st = ControllerState()
        st.t = 2
        st.v_max = 50.0
        st.xi_history = deque([40.0, 30.0])
        st.zeta_history = deque([20.0, 12.0])
        assert update_xi(st, cfg) == pytest.approx(12.0)

    def test_xi_underflow_is_internal_error(self):
        cfg = ControllerConfig(scheme="alg2", m=4)
        st = ControllerState()
        st.t = 4
        st.v_max = 50.0
        st.xi_history = deque([40.0])
        st.zeta_history = deque([20.0])
        with pytest.raises(RuntimeError, match="underflow"):
            update_xi(st, cfg)


class TestConfig:
    def test_parameter_ranges(self):
        with pytest.raises(ValueError):
            ControllerConfig(scheme="alg2", beta=0.0)
        with pytest.raises(ValueError):
            ControllerConfig(scheme="alg2", beta=1.5)
        with pytest.raises(ValueError):
            ControllerConfig(scheme="alg2", tau=1.0)
        with pytest.raises(ValueError):
            ControllerConfig(scheme="alg2", tau=-0.1)
        with pytest.raises(ValueError):
            ControllerConfig(scheme="alg2", m=1)
        with pytest.raises(ValueError):
            ControllerConfig(scheme="bogus")
        ControllerConfig(scheme="alg1", m=1)  # m unused for alg1


class TestStepping:
    def _controller(self, model, suite, ingredients, scheme, m=4, v_max=None):
        cfg = ControllerConfig(scheme=scheme, n_horizon=5, m=m, v_max=v_max)
        return Controller(model, suite, ingredients, cfg, SolverOptions())

    def test_applied_control_is_first_element(self, hvac_model, hvac_suite, hvac_ingredients):
        ctrl = self._controller(hvac_model, hvac_suite, hvac_ingredients, "alg2")
        out = ctrl.step(np.array([29.0, 28.0]))
        assert np.array_equal(out.control, out.useq[0])

    def test_steady_state_with_cached_previous_solution(
        self, hvac_model, hvac_suite, hvac_ingredients
    ):
        for scheme in ("alg1", "alg2"):
            ctrl = self._controller(hvac_model, hvac_suite, hvac_ingredients, scheme)
            st = ctrl.state
            st.t = 1
            st.prev_useq = np.tile(hvac_suite.us, (5, 1))
            st.prev_states = rollout(hvac_model, hvac_suite.xs, st.prev_useq)
            st.prev_vdelta = 0.0
            st.prev_jdelta = 0.0
            if scheme == "alg2":
                st.zeta_history.append(st.v_max)
                st.xi_history.append(st.v_max)
            out = ctrl.step(hvac_suite.xs)
            assert np.allclose(out.control, hvac_suite.us, atol=1e-4)
            assert out.vdelta <= 1e-7

    def test_alg2_first_step_ignores_levels(self, hvac_model, hvac_suite, hvac_ingredients):
        # at the start the cap rows sit at the domain bound: same answer as
        # the plain economic problem
        from empc.horizon import build_horizon_problem, feasibility_problem, solve_horizon
        from empc.sqp import solve as nlp_solve

        x0 = np.array([31.0, 30.0])
        ctrl = self._controller(hvac_model, hvac_suite, hvac_ingredients, "alg2")
        out = ctrl.step(x0)
        opts = SolverOptions()
        feas = feasibility_problem(hvac_model, hvac_suite, hvac_ingredients, 5, x0)
        z0 = nlp_solve(feas.to_nlp_spec(np.tile(hvac_suite.us, 5)), opts).z
        plain = build_horizon_problem(hvac_model, hvac_suite, hvac_ingredients, 5,
                                      "econ-plain", x0)
        res, _ = solve_horizon(plain, z0, opts)
        assert out.vecon == pytest.approx(res.objective, rel=1e-6)
        assert out.vdelta < ctrl.state.v_max

    def test_alg1_levels_respected_along_run(self, hvac_model, hvac_suite, hvac_ingredients):
        ctrl = self._controller(hvac_model, hvac_suite, hvac_ingredients, "alg1")
        x = np.array([29.0, 28.5])
        tol = 1e-8
        prev = None
        for _ in range(12):
            out = ctrl.step(x)
            if prev is not None:
                eta_expected = prev[0] - 1.0 * prev[1]
                assert out.eta == pytest.approx(eta_expected, rel=1e-12)
                assert out.vdelta <= out.eta + tol
            prev = (out.vdelta, out.jdelta)
            x = step(hvac_model, x, out.control)

    def test_alg2_levels_respected_along_run(self, hvac_model, hvac_suite, hvac_ingredients):
        m = 3
        ctrl = self._controller(hvac_model, hvac_suite, hvac_ingredients, "alg2", m=m)
        x = np.array([29.0, 28.5])
        tol = 1e-8
        logs = []
        for t in range(12):
            out = ctrl.step(x)
            logs.append(out)
            assert out.vdelta <= out.xi + tol
            assert out.vdelta - 1.0 * out.jdelta <= out.zeta + tol
            x = step(hvac_model, x, out.control)
        # the m-step cap follows the written update law
        for t in range(m, 12):
            expected = max(0.6 * logs[t - m].xi, logs[t - m + 1].zeta)
            assert logs[t].xi == pytest.approx(expected, rel=1e-12)

    def test_alg1_strict_decrease_from_hot_start(self, hvac_model, hvac_suite, hvac_ingredients):
        ctrl = self._controller(hvac_model, hvac_suite, hvac_ingredients, "alg1")
        x = np.array([31.0, 30.0])
        values = []
        for _ in range(10):
            out = ctrl.step(x)
            values.append(out.vdelta)
            x = step(hvac_model, x, out.control)
        diffs = np.diff(values)
        assert np.all(diffs < 0.0)

    def test_shifted_sequence_fallback_when_solver_fails(
        self, hvac_model, hvac_suite, hvac_ingredients, monkeypatch
    ):
        # after the first step the shifted previous solution is always a valid
        # candidate; a failed solve must fall back to it, flagged
        import empc.horizon as horizon_mod
        from empc.horizon import warm_start_shift
        from empc.sqp import NlpResult

        cfg = ControllerConfig(scheme="alg2", n_horizon=5, m=4)
        ctrl = Controller(hvac_model, hvac_suite, hvac_ingredients, cfg, SolverOptions())
        x = np.array([29.5, 28.5])
        out0 = ctrl.step(x)
        x = step(hvac_model, x, out0.control)
        expected = warm_start_shift(out0.useq, ctrl.state.prev_states[-1], hvac_ingredients)

        def broken_solve(spec, opts):
            return NlpResult(
                z=spec.initial_point, objective=np.inf, max_violation=1.0,
                status="infeasible", iterations=1,
            )

        monkeypatch.setattr(horizon_mod, "solve", broken_solve)
        out1 = ctrl.step(x)
        assert out1.fallback
        assert ctrl.state.fallback_count == 1
        assert np.allclose(out1.useq, expected, atol=1e-12)
