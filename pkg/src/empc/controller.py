"""Receding-horizon controllers with adaptive Lyapunov-constraint levels.

Three schemes share one stepping engine: quadratic tracking, the economic
controller whose tracking value must shrink every step (a single adaptive
level updated from the previous solution), and the economic controller whose
tracking value must shrink only every m steps (a level pair: a per-step
decrease budget and an m-step cap seeded from a large initialization).  The
warm start is always the shifted previous solution with the terminal law
appended; if the solver cannot beat it, the shifted sequence itself is applied
and flagged, which is exactly the certificate the feasibility argument
constructs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .costs import CostSuite, econ_stage_cost, j_delta, v_delta, v_econ
from .dynamics import SystemModel, rollout
from .horizon import (
    LyapunovLevels,
    build_horizon_problem,
    compute_v_max,
    feasibility_problem,
    solve_horizon,
    warm_start_shift,
)
from .sqp import SolverOptions, solve as nlp_solve
from .terminal import TerminalIngredients

SCHEMES = ("tracking", "alg1", "alg2")


class InfeasibleProblemError(Exception):
    """No feasible point found and the warm start is infeasible too.

    If the initial problem was feasible this indicates a solver/tolerance bug,
    not a control-theoretic failure; diagnostics ride along.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ControllerConfig:
    scheme: str = "alg2"
    n_horizon: int = 5
    m: int = 8
    beta: float = 1.0
    tau: float = 0.6
    v_max: float | None = None  # None: computed from the certified value bound
    diff: str = "auto"  # differentiation mode for the horizon problems

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.n_horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.scheme == "alg2" and self.m < 2:
            raise ValueError("the m-step scheme needs m >= 2")


@dataclass
class ControllerState:
    t: int = 0
    prev_useq: np.ndarray | None = None
    prev_states: np.ndarray | None = None
    prev_vdelta: float = np.nan
    prev_jdelta: float = np.nan
    zeta_history: deque = field(default_factory=deque)
    xi_history: deque = field(default_factory=deque)
    v_max: float = np.nan
    fallback_count: int = 0


@dataclass(frozen=True)
class StepOutput:
    control: np.ndarray
    useq: np.ndarray
    vdelta: float
    jdelta: float
    vecon: float
    le_inst: float
    eta: float
    xi: float
    zeta: float
    status: str
    fallback: bool
    iterations: int


def update_eta(state: ControllerState, beta: float) -> float:
    """Adaptive level for the per-step scheme: previous value minus beta times
    the previous decrease budget."""
    if state.t < 1 or not np.isfinite(state.prev_vdelta):
        raise ValueError("eta update needs a cached previous solution (t >= 1)")
    return state.prev_vdelta - beta * state.prev_jdelta


def update_zeta(state: ControllerState, beta: float) -> float:
    """Per-step decrease budget level of the m-step scheme; same formula."""
    if state.t < 1 or not np.isfinite(state.prev_vdelta):
        raise ValueError("zeta update needs a cached previous solution (t >= 1)")
    return state.prev_vdelta - beta * state.prev_jdelta


def update_xi(state: ControllerState, config: ControllerConfig) -> float:
    """m-step cap: large initialization before t = m, then the max of the
    tau-contracted cap from m steps ago and the budget level from m-1 ago."""
    if state.t < config.m:
        return state.v_max
    if len(state.xi_history) < config.m or len(state.zeta_history) < 2:
        raise RuntimeError("level history underflow; ring buffers were not maintained")
    return max(config.tau * state.xi_history[0], state.zeta_history[1])


class Controller:
    """Single-owner state machine around the horizon solver."""

    def __init__(
        self,
        model: SystemModel,
        suite: CostSuite,
        ingredients: TerminalIngredients,
        config: ControllerConfig,
        opts: SolverOptions | None = None,
    ):
        self.model = model
        self.suite = suite
        self.ingredients = ingredients
        self.config = config
        self.opts = opts or SolverOptions()
        self.state = ControllerState()
        if config.scheme == "alg2":
            if config.v_max is not None:
                self.state.v_max = float(config.v_max)
            else:
                # the certified upper bound over the feasible domain; any
                # number dominating every attainable value works here
                self.state.v_max = compute_v_max(
                    model, suite, ingredients, config.n_horizon, n_samples=200
                )

    # -- initial guesses ---------------------------------------------------

    def _initial_guess(self, x0: np.ndarray) -> np.ndarray:
        iset = self.model.input_set
        u_rep = np.clip(self.suite.us, iset.lower, iset.upper)
        guess = np.tile(u_rep, self.config.n_horizon)
        plain = build_horizon_problem(
            self.model, self.suite, self.ingredients, self.config.n_horizon, "econ-plain", x0,
            diff=self.config.diff,
        )
        if plain.point_feasible(guess, self.opts.feas_tol):
            return guess
        feas = feasibility_problem(
            self.model, self.suite, self.ingredients, self.config.n_horizon, x0,
            diff=self.config.diff,
        )
        res = nlp_solve(feas.to_nlp_spec(guess), self.opts)
        return res.z

    # -- levels --------------------------------------------------------------

    def _levels(self) -> LyapunovLevels:
        cfg, st = self.config, self.state
        if cfg.scheme == "tracking":
            return LyapunovLevels(beta=cfg.beta)
        if cfg.scheme == "alg1":
            eta = np.inf if st.t == 0 else update_eta(st, cfg.beta)
            return LyapunovLevels(eta=eta, beta=cfg.beta)
        if st.t == 0:
            return LyapunovLevels(xi=st.v_max, zeta=st.v_max, beta=cfg.beta)
        zeta = update_zeta(st, cfg.beta)
        xi = update_xi(st, cfg)
        return LyapunovLevels(xi=xi, zeta=zeta, beta=cfg.beta)

    def _problem_kind(self) -> str:
        return {"tracking": "tracking", "alg1": "econ-eta", "alg2": "econ-xi-zeta"}[self.config.scheme]

    # -- one closed-loop step -------------------------------------------------

    def step(self, x_t) -> StepOutput:
        x_t = np.asarray(x_t, dtype=float)
        cfg, st = self.config, self.state
        levels = self._levels()
        problem = build_horizon_problem(
            self.model,
            self.suite,
            self.ingredients,
            cfg.n_horizon,
            self._problem_kind(),
            x_t,
            levels=levels,
            diff=cfg.diff,
        )

        if st.t == 0:
            warm = self._initial_guess(x_t)
            reference = warm if problem.point_feasible(warm, self.opts.feas_tol) else None
        else:
            shifted = warm_start_shift(st.prev_useq, st.prev_states[-1], self.ingredients)
            warm = shifted.ravel()
            reference = warm

        result, used_fallback = solve_horizon(problem, warm, self.opts, reference=reference)
        if not result.feasible or result.max_violation > self.opts.feas_tol:
            raise InfeasibleProblemError(
                f"no feasible point at t={st.t} and the shifted warm start is "
                "infeasible; this indicates a solver or tolerance bug if the "
                "initial problem was feasible",
                diagnostics={
                    "t": st.t,
                    "x": x_t.tolist(),
                    "status": result.status,
                    "violation": result.max_violation,
                    "levels": {
                        "eta": levels.eta,
                        "xi": levels.xi,
                        "zeta": levels.zeta,
                    },
                },
            )
        if used_fallback:
            st.fallback_count += 1

        useq = result.z.reshape(cfg.n_horizon, self.model.n_u)
        states = rollout(self.model, x_t, useq)
        vd = v_delta(self.model, self.suite, useq, x_t)
        jd = j_delta(self.model, self.suite, useq, x_t)
        ve = v_econ(self.model, self.suite.econ, useq, x_t)

        if cfg.scheme == "alg2":
            zeta_now = levels.zeta
            xi_now = levels.xi
            st.zeta_history.append(zeta_now)
            st.xi_history.append(xi_now)
            while len(st.zeta_history) > cfg.m:
                st.zeta_history.popleft()
            while len(st.xi_history) > cfg.m:
                st.xi_history.popleft()
        else:
            zeta_now = np.nan
            xi_now = np.nan

        out = StepOutput(
            control=useq[0].copy(),
            useq=useq.copy(),
            vdelta=vd,
            jdelta=jd,
            vecon=ve,
            le_inst=econ_stage_cost(self.suite.econ, x_t, useq[0]),
            eta=levels.eta if cfg.scheme == "alg1" and st.t > 0 else (np.inf if cfg.scheme == "alg1" else np.nan),
            xi=xi_now,
            zeta=zeta_now,
            status=result.status,
            fallback=used_fallback,
            iterations=result.iterations,
        )
        st.prev_useq = useq
        st.prev_states = states
        st.prev_vdelta = vd
        st.prev_jdelta = jd
        st.t += 1
        return out
