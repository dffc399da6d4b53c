import warnings

import numpy as np
import pytest

from empc.costs import CostSuite, EconomicCostParams, PenaltySpec, TrackingWeights
from empc.dynamics import hvac_system
from empc.terminal import solve_steady_state, synthesize_terminal

REFERENCE_GAIN = np.array([[0.6947, 0.0059], [0.0061, 0.6818]])


@pytest.fixture(scope="session")
def hvac_model():
    return hvac_system()


@pytest.fixture(scope="session")
def hvac_steady(hvac_model):
    return solve_steady_state(hvac_model, EconomicCostParams())


@pytest.fixture(scope="session")
def hvac_suite_base(hvac_model, hvac_steady):
    weights = TrackingWeights(q=np.eye(2), r=np.eye(2), p=np.eye(2))
    return CostSuite(
        weights=weights,
        penalties=PenaltySpec(),
        econ=EconomicCostParams(),
        xs=hvac_steady.xs,
        us=hvac_steady.us,
    )


@pytest.fixture(scope="session")
def hvac_ingredients(hvac_model, hvac_suite_base):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return synthesize_terminal(
            hvac_model, hvac_suite_base, n_horizon=5, k_gain=REFERENCE_GAIN, seed=0
        )


@pytest.fixture(scope="session")
def hvac_suite(hvac_suite_base, hvac_ingredients):
    return hvac_suite_base.with_terminal_weight(hvac_ingredients.p_matrix)


@pytest.fixture(autouse=True)
def _quiet_model_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*bilinear offset.*")
        warnings.filterwarnings("ignore", message=".*sign-resolved.*")
        yield
