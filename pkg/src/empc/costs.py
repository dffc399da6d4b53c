"""Stage, terminal, penalty, and composite trajectory cost functions.

Three families live here: the economic stage cost (fan power plus coil loads),
the quadratic tracking costs around the steady pair, and the small positive
definite penalties that weight predicted deviations.  The composite functions
evaluate a whole horizon: the economic total, the k-weighted tracking value,
and the guaranteed per-step decrease amount of that value under the shifted
warm start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemModel, rollout


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive definite") from exc
    return m


@dataclass(frozen=True)
class TrackingWeights:
    """Quadratic weights: Q on state error, R on input error, P terminal."""

    q: np.ndarray
    r: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _check_spd(self.q, "Q"))
        object.__setattr__(self, "r", _check_spd(self.r, "R"))
        object.__setattr__(self, "p", _check_spd(self.p, "P"))


@dataclass(frozen=True)
class EconomicCostParams:
    """Electrical-power model parameters.

    kappa_bar scales the cubic fan term; eta_c and eta_h are cooling/heating
    transfer efficiencies; th and ts are per-zone heating-coil and supply-air
    set points; cp is the specific heat of air.
    """

    kappa_bar: float = 1.0
    eta_c: float = 4.0
    eta_h: float = 0.9
    th: np.ndarray = field(default=None)
    ts: np.ndarray = field(default=None)
    cp: float = 1.012

    def __post_init__(self):
        if self.eta_c <= 0 or self.eta_h <= 0:
            raise ValueError("efficiencies must be strictly positive")
        if self.kappa_bar < 0:
            raise ValueError("kappa_bar must be nonnegative")
        th = np.full(2, 32.0) if self.th is None else np.atleast_1d(np.asarray(self.th, dtype=float))
        ts = np.full(2, 15.0) if self.ts is None else np.atleast_1d(np.asarray(self.ts, dtype=float))
        if th.shape != ts.shape:
            raise ValueError("th and ts must have the same shape")
        object.__setattr__(self, "th", th)
        object.__setattr__(self, "ts", ts)


@dataclass(frozen=True)
class PenaltySpec:
    """Scalar weights of the positive definite deviation penalties.

    delta_coeff weights ||x-x_s||^2 + ||u-u_s||^2 along the predicted path;
    gamma_coeff weights the terminal-state distance ||x-x_s||^2.
    """

    delta_coeff: float = 1e-4
    gamma_coeff: float = 1e-4

    def __post_init__(self):
        if self.delta_coeff <= 0 or self.gamma_coeff <= 0:
            raise ValueError("penalty coefficients must be strictly positive")


@dataclass(frozen=True)
class CostSuite:
    """Bundle of every cost ingredient plus the steady pair they center on."""

    weights: TrackingWeights
    penalties: PenaltySpec
    econ: EconomicCostParams
    xs: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xs", np.asarray(self.xs, dtype=float))
        object.__setattr__(self, "us", np.asarray(self.us, dtype=float))

    def with_terminal_weight(self, p: np.ndarray) -> "CostSuite":
        w = TrackingWeights(q=self.weights.q, r=self.weights.r, p=p)
        return CostSuite(weights=w, penalties=self.penalties, econ=self.econ, xs=self.xs, us=self.us)


def econ_stage_cost(params: EconomicCostParams, x: np.ndarray, u: np.ndarray) -> float:
    """Instantaneous electrical power in kW.

    Cubic fan power plus cooling and heating coil loads; exact absolute values,
    nonnegative for nonnegative flows.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    fan = params.kappa_bar * float(np.sum(u)) ** 3
    cool = np.sum(u * params.cp * np.abs(params.ts - x)) / params.eta_c
    heat = np.sum(u * params.cp * np.abs(params.th - x)) / params.eta_h
    return float(fan + cool + heat)


def econ_stage_cost_smooth(params: EconomicCostParams, x, u):
    """Sign-resolved power and its gradients, valid for ts <= x <= th.

    Returns (value, d/dx, d/du).  Used inside the optimizer where smooth
    derivatives are required; `econ_stage_cost` remains the exact evaluator.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    total = float(np.sum(u))
    fan = params.kappa_bar * total**3
    cool_w = params.cp / params.eta_c
    heat_w = params.cp / params.eta_h
    value = fan + float(np.sum(u * (cool_w * (x - params.ts) + heat_w * (params.th - x))))
    d_x = u * (cool_w - heat_w)
    d_u = 3.0 * params.kappa_bar * total**2 + cool_w * (x - params.ts) + heat_w * (params.th - x)
    return value, d_x, d_u


def tracking_costs(
    weights: TrackingWeights, xs: np.ndarray, us: np.ndarray, x: np.ndarray, u: np.ndarray
) -> tuple[float, float]:
    """Stage and terminal quadratic tracking costs around (xs, us)."""
    ex = np.asarray(x, dtype=float) - np.asarray(xs, dtype=float)
    eu = np.asarray(u, dtype=float) - np.asarray(us, dtype=float)
    stage = float(ex @ weights.q @ ex + eu @ weights.r @ eu)
    terminal = float(ex @ weights.p @ ex)
    return stage, terminal


def stage_cost(suite: CostSuite, x, u) -> float:
    ex = np.asarray(x, dtype=float) - suite.xs
    eu = np.asarray(u, dtype=float) - suite.us
    return float(ex @ suite.weights.q @ ex + eu @ suite.weights.r @ eu)


def terminal_cost(suite: CostSuite, x) -> float:
    ex = np.asarray(x, dtype=float) - suite.xs
    return float(ex @ suite.weights.p @ ex)


def delta_penalty(suite: CostSuite, x, u) -> float:
    ex = np.asarray(x, dtype=float) - suite.xs
    eu = np.asarray(u, dtype=float) - suite.us
    return suite.penalties.delta_coeff * float(ex @ ex + eu @ eu)


def gamma_penalty(suite: CostSuite, x) -> float:
    ex = np.asarray(x, dtype=float) - suite.xs
    return suite.penalties.gamma_coeff * float(ex @ ex)


def _states(model: SystemModel, useq, x0) -> tuple[np.ndarray, np.ndarray]:
    useq = np.atleast_2d(np.asarray(useq, dtype=float))
    return rollout(model, x0, useq), useq


def v_delta(model: SystemModel, suite: CostSuite, useq, x0) -> float:
    """k-weighted tracking value of the horizon.

    Sum over stages of (stage cost + k * deviation penalty), plus the terminal
    cost; the penalty weight starts at zero on the first stage.
    """
    xs, useq = _states(model, useq, x0)
    total = 0.0
    for k in range(useq.shape[0]):
        total += stage_cost(suite, xs[k], useq[k]) + k * delta_penalty(suite, xs[k], useq[k])
    return total + terminal_cost(suite, xs[-1])


def j_delta(model: SystemModel, suite: CostSuite, useq, x0) -> float:
    """Guaranteed decrease of `v_delta` under the one-step shifted sequence.

    First-stage cost plus the deviation penalties of stages 1..N-1 plus the
    terminal-distance penalty; strictly positive away from the steady pair.
    """
    xs, useq = _states(model, useq, x0)
    total = stage_cost(suite, xs[0], useq[0])
    for k in range(1, useq.shape[0]):
        total += delta_penalty(suite, xs[k], useq[k])
    return total + gamma_penalty(suite, xs[-1])


def v_econ(model: SystemModel, params: EconomicCostParams, useq, x0) -> float:
    """Total economic cost of the horizon (sum of stage powers)."""
    xs, useq = _states(model, useq, x0)
    return float(sum(econ_stage_cost(params, xs[k], useq[k]) for k in range(useq.shape[0])))


def energy_kwh(power_series, dt: float) -> float:
    """Integrate a kW series sampled every dt seconds into kWh."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    series = np.asarray(power_series, dtype=float)
    if series.size == 0:
        return 0.0
    return float(np.sum(series) * dt / 3600.0)
