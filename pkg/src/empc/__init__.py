"""Economic MPC with non-monotonic Lyapunov constraints.

Library + CLI for receding-horizon economic control of a two-zone HVAC
thermal model, with an in-repo dense SQP solver, terminal-ingredient
synthesis, and a closed-loop harness that monitors every property the
controller is supposed to guarantee.
"""

from .controller import Controller, ControllerConfig, ControllerState, StepOutput
from .costs import (
    CostSuite,
    EconomicCostParams,
    PenaltySpec,
    TrackingWeights,
    econ_stage_cost,
    energy_kwh,
    j_delta,
    tracking_costs,
    v_delta,
    v_econ,
)
from .dynamics import (
    AffineBilinearModel,
    InputSet,
    SystemModel,
    TwoZoneHvacParams,
    discretize_rc,
    hvac_system,
    is_admissible,
    rounded_hvac_model,
    rollout,
    step,
)
from .harness import (
    SimConfig,
    SimLog,
    SimulationAborted,
    average_cost_series,
    monitor_suite,
    read_csv_log,
    replay_states,
    simulate,
    write_csv,
)
from .horizon import (
    HorizonProblem,
    LyapunovLevels,
    build_horizon_problem,
    compute_v_max,
    feasibility_problem,
    sample_feasible_pairs,
    solve_horizon,
    warm_start_shift,
)
from .scenario import Scenario, ScenarioError, reference_scenario
from .sqp import NlpResult, NlpSpec, SolverOptions, solve
from .terminal import (
    SteadyState,
    TerminalIngredients,
    TerminalVerification,
    solve_steady_state,
    synthesize_terminal,
    verify_terminal,
)

__version__ = "0.1.0"
