"""Tests for the steady-state solve and terminal-ingredient synthesis."""

import numpy as np
import pytest

from empc.costs import CostSuite, EconomicCostParams, PenaltySpec, TrackingWeights
from empc.dynamics import AffineBilinearModel, InputSet, SystemModel, hvac_system, rollout
from empc.horizon import sample_feasible_pairs, warm_start_shift
from empc.costs import j_delta, v_delta
from empc.terminal import (
    SteadyStateError,
    TerminalIngredients,
    TerminalSynthesisError,
    solve_steady_state,
    synthesize_terminal,
    verify_terminal,
)
from tests.conftest import REFERENCE_GAIN


class TestSteadyState:
    def test_reference_instance(self, hvac_model, hvac_steady):
        assert np.allclose(hvac_steady.xs, [24.0, 25.0])
        assert np.allclose(hvac_steady.us, [0.4646, 0.4020], atol=1e-3)
        assert hvac_steady.residual <= 1e-8

    def test_zero_input_fixed_point(self):
        # a*x + d with d = (1-a)*target makes the target a zero-input fixed point
        target = np.array([20.0, 22.0])
        a = np.array([[0.9, 0.02], [0.01, 0.95]])
        bil = AffineBilinearModel(
            a_matrix=a, g_coeff=np.array([0.05, 0.05]),
            d_vector=(np.eye(2) - a) @ target, g_offset=np.array([15.0, 15.0]),
        )
        model = bil.to_system(dt=600.0, state_box=(10.0, 35.0), asymptotic_set=(target,))
        ss = solve_steady_state(model, EconomicCostParams())
        assert np.allclose(ss.us, 0.0, atol=1e-10)

    def test_planted_equilibrium_recovered(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = np.eye(2) + rng.normal(scale=0.01, size=(2, 2))
            gc = rng.uniform(0.03, 0.1, 2)
            xs = rng.uniform(20.0, 28.0, 2)
            us = rng.uniform(0.1, 1.0, 2)
            g = np.diag(gc * (15.0 - xs))
            d = xs - a @ xs - g @ us
            bil = AffineBilinearModel(a_matrix=a, g_coeff=gc, d_vector=d,
                                      g_offset=np.array([15.0, 15.0]))
            model = bil.to_system(dt=600.0, state_box=(10.0, 35.0), asymptotic_set=(xs,))
            ss = solve_steady_state(model, EconomicCostParams())
            assert np.allclose(ss.us, us, atol=1e-8)
            assert ss.residual <= 1e-8

    def test_infeasible_reports_residual(self):
        # target requires negative flow: outside the input set
        bil = AffineBilinearModel(
            a_matrix=np.array([[0.99, 0.0], [0.0, 0.99]]),
            g_coeff=np.array([0.05, 0.05]),
            d_vector=np.array([-1.0, -1.0]),  # strong cooling drift: holding needs u < 0
            g_offset=np.array([15.0, 15.0]),
        )
        model = bil.to_system(dt=600.0, state_box=(10.0, 35.0), asymptotic_set=((24.0, 25.0),))
        with pytest.raises(SteadyStateError):
            solve_steady_state(model, EconomicCostParams())

    def test_singular_gain_reported(self):
        bil = AffineBilinearModel(
            a_matrix=0.99 * np.eye(2),
            g_coeff=np.array([0.05, 0.05]),
            d_vector=np.array([0.3, 0.3]),
            g_offset=np.array([24.0, 15.0]),  # g vanishes at x1 = 24
        )
        model = bil.to_system(dt=600.0, state_box=(10.0, 35.0), asymptotic_set=((24.0, 25.0),))
        with pytest.raises(SteadyStateError, match="singular"):
            solve_steady_state(model, EconomicCostParams())


class TestSynthesis:
    def test_reference_gain_is_stabilizing(self, hvac_ingredients):
        assert hvac_ingredients.alpha > 0.0
        assert hvac_ingredients.verified is not None
        assert hvac_ingredients.verified.passed

    def test_law_matches_steady_input_at_center(self, hvac_ingredients, hvac_steady):
        assert np.allclose(hvac_ingredients.kappa_f(hvac_steady.xs), hvac_steady.us, atol=1e-14)

    def test_scalar_lyapunov_oracle(self):
        # x+ = 0.5 x, gain 0, unit weights, vanishing penalties: the inflated
        # Lyapunov equation has the closed form (1 + eps) / (1 - 0.25)
        iset = InputSet(lower=np.array([-5.0]), upper=np.array([5.0]),
                        a_rows=np.zeros((0, 1)), b_rows=np.zeros(0))
        model = SystemModel(
            n_x=1, n_u=1, step_map=lambda x, u: 0.5 * x + 0.0 * u,
            state_box=([-10.0], [10.0]), input_set=iset, asymptotic_set=([0.0],), dt=1.0,
        )
        suite = CostSuite(
            weights=TrackingWeights(q=np.eye(1), r=np.eye(1), p=np.eye(1)),
            penalties=PenaltySpec(delta_coeff=1e-30, gamma_coeff=1e-30),
            econ=EconomicCostParams(th=[1.0], ts=[0.0]),
            xs=np.zeros(1), us=np.zeros(1),
        )
        for eps in (0.1, 0.0):
            ing = synthesize_terminal(model, suite, n_horizon=4, k_gain=np.zeros((1, 1)),
                                      inflation=eps, seed=0)
            assert ing.p_matrix[0, 0] == pytest.approx((1.0 + eps) / 0.75, rel=1e-9)

    def test_degenerate_penalties_reduce_to_standard_condition(self, hvac_model, hvac_steady):
        # with vanishing delta/gamma the decrease check is the classical
        # terminal-cost condition; synthesis still passes with the reference gain
        suite = CostSuite(
            weights=TrackingWeights(q=np.eye(2), r=np.eye(2), p=np.eye(2)),
            penalties=PenaltySpec(delta_coeff=1e-30, gamma_coeff=1e-30),
            econ=EconomicCostParams(),
            xs=hvac_steady.xs, us=hvac_steady.us,
        )
        ing = synthesize_terminal(hvac_model, suite, n_horizon=5, k_gain=REFERENCE_GAIN, seed=1)
        assert ing.verified.passed

    def test_unstable_gain_rejected(self, hvac_model, hvac_suite_base):
        destabilizing = np.array([[-3.0, 0.0], [0.0, -3.0]])
        with pytest.raises(TerminalSynthesisError, match="spectral radius"):
            synthesize_terminal(hvac_model, hvac_suite_base, n_horizon=5,
                                k_gain=destabilizing, seed=0)

    def test_lq_gain_synthesized_when_omitted(self, hvac_model, hvac_suite_base):
        ing = synthesize_terminal(hvac_model, hvac_suite_base, n_horizon=5, seed=0)
        assert ing.verified.passed
        assert ing.alpha > 0.0

    def test_deterministic_given_seed(self, hvac_model, hvac_suite_base):
        a = synthesize_terminal(hvac_model, hvac_suite_base, n_horizon=5, k_gain=REFERENCE_GAIN, seed=3)
        b = synthesize_terminal(hvac_model, hvac_suite_base, n_horizon=5, k_gain=REFERENCE_GAIN, seed=3)
        assert a.alpha == b.alpha
        assert np.array_equal(a.p_matrix, b.p_matrix)


class TestVerification:
    def test_reference_instance_ten_thousand_samples(self, hvac_model, hvac_suite, hvac_ingredients):
        v = verify_terminal(hvac_model, hvac_suite, hvac_ingredients,
                            n_samples=10_000, seed=11)
        assert v.passed
        assert v.n_samples >= 10_000
        assert v.margin_input >= 0.0
        assert v.margin_invariance >= 0.0
        assert v.margin_decrease >= 0.0

    def test_center_margins(self, hvac_model, hvac_suite, hvac_ingredients):
        from empc.terminal import _check_samples

        devs = np.zeros((1, 2))
        m_in, m_inv, m_dec = _check_samples(
            hvac_model, hvac_suite, hvac_ingredients.k_gain,
            hvac_ingredients.p_matrix, hvac_ingredients.alpha, devs, 5,
        )
        assert m_in[0] > 0.0
        assert m_inv[0] > 0.0
        assert abs(m_dec[0]) <= 1e-12  # equality at the steady state

    def test_inflated_alpha_fails_input_check(self, hvac_model, hvac_suite, hvac_ingredients):
        bloated = TerminalIngredients(
            k_gain=hvac_ingredients.k_gain,
            p_matrix=hvac_ingredients.p_matrix,
            alpha=hvac_ingredients.alpha * 100.0,
            xs=hvac_ingredients.xs,
            us=hvac_ingredients.us,
        )
        v = verify_terminal(hvac_model, hvac_suite, bloated, n_samples=2000, seed=5)
        assert not v.passed
        assert v.margin_input < 0.0

    def test_worker_count_does_not_change_result(self, hvac_model, hvac_suite, hvac_ingredients):
        a = verify_terminal(hvac_model, hvac_suite, hvac_ingredients, n_samples=4000,
                            seed=13, workers=1)
        b = verify_terminal(hvac_model, hvac_suite, hvac_ingredients, n_samples=4000,
                            seed=13, workers=4)
        assert a.margin_input == b.margin_input
        assert a.margin_invariance == b.margin_invariance
        assert a.margin_decrease == b.margin_decrease

    def test_json_round_trip(self, hvac_ingredients, tmp_path):
        path = tmp_path / "ingredients.json"
        hvac_ingredients.save(path)
        loaded = TerminalIngredients.load(path)
        assert np.array_equal(loaded.k_gain, hvac_ingredients.k_gain)
        assert np.array_equal(loaded.p_matrix, hvac_ingredients.p_matrix)
        assert loaded.alpha == hvac_ingredients.alpha
        assert loaded.verified.passed == hvac_ingredients.verified.passed


class TestShiftInequality:
    def test_shift_decrease_on_sampled_pairs(self, hvac_model, hvac_suite, hvac_ingredients):
        # the value of the shifted sequence drops by at least the decrease
        # budget, for every sampled feasible pair with terminal state inside
        # the terminal set
        pairs = sample_feasible_pairs(hvac_model, hvac_suite, hvac_ingredients,
                                      n_horizon=5, n_pairs=100, seed=21)
        assert len(pairs) == 100
        for x0, useq in pairs:
            states = rollout(hvac_model, x0, useq)
            shifted = warm_start_shift(useq, states[-1], hvac_ingredients)
            lhs = v_delta(hvac_model, hvac_suite, shifted, states[1]) - v_delta(
                hvac_model, hvac_suite, useq, x0
            )
            assert lhs <= -j_delta(hvac_model, hvac_suite, useq, x0) + 1e-8
