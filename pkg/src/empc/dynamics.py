"""Discrete-time system abstraction and the two-zone HVAC thermal model.

The plant interface is a plain step map ``x_next = f(x, u)`` together with the
constraint geometry: a per-coordinate state box, a polyhedral input set
(coordinate bounds plus linear rows ``A_u u <= b_u``), and a finite list of
asymptotic target states.  The HVAC instance is a two-zone RC network
discretized at a 10-minute sampling period; the discrete model is affine in the
state with a bilinear (flow times temperature-difference) input term.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

DEFAULT_STATE_BOX = (15.0, 35.0)  # deg C per zone; wide enough not to bind


def _as_vec(v, n: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class InputSet:
    """Polyhedral input set: per-coordinate bounds plus rows ``A u <= b``."""

    lower: np.ndarray
    upper: np.ndarray
    a_rows: np.ndarray  # (n_rows, n_u)
    b_rows: np.ndarray  # (n_rows,)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        a = np.atleast_2d(np.asarray(self.a_rows, dtype=float))
        b = np.atleast_1d(np.asarray(self.b_rows, dtype=float))
        if a.size == 0:
            a = a.reshape(0, lower.size)
            b = b.reshape(0)
        if a.shape[0] != b.shape[0] or a.shape[1] != lower.size:
            raise ValueError("inconsistent input-set row dimensions")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "a_rows", a)
        object.__setattr__(self, "b_rows", b)
        if not self._nonempty():
            raise ValueError("input set is empty (feasibility LP failed)")

    def _nonempty(self) -> bool:
        n = self.lower.size
        bounds = [
            (lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
            for lo, hi in zip(self.lower, self.upper)
        ]
        res = linprog(
            np.zeros(n),
            A_ub=self.a_rows if self.a_rows.size else None,
            b_ub=self.b_rows if self.b_rows.size else None,
            bounds=bounds,
            method="highs",
        )
        return bool(res.success)

    @property
    def n_u(self) -> int:
        return self.lower.size

    def slack(self, u: np.ndarray) -> np.ndarray:
        """Signed slack per constraint: bounds first, then linear rows.

        Nonnegative entries mean the constraint is satisfied.
        """
        u = _as_vec(u, self.n_u, "u")
        parts = [u - self.lower, self.upper - u]
        if self.a_rows.size:
            parts.append(self.b_rows - self.a_rows @ u)
        return np.concatenate(parts)

    def contains(self, u: np.ndarray, tol: float = 1e-8) -> bool:
        return bool(np.all(self.slack(u) >= -tol))


def hvac_input_set(total_flow: float = 3.2) -> InputSet:
    """Flow-rate set: u1, u2 >= 0 and u1 + u2 <= total_flow (kg/s)."""
    return InputSet(
        lower=np.zeros(2),
        upper=np.full(2, np.inf),
        a_rows=np.array([[1.0, 1.0]]),
        b_rows=np.array([total_flow]),
    )


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time plant with constraint geometry.

    Attributes:
        n_x, n_u: state and input dimensions.
        step_map: callable (x, u) -> next state.
        state_box: (lower, upper) arrays defining the hard state box X.
        input_set: admissible input set U.
        asymptotic_set: list of target states (singleton for the HVAC case).
        dt: sampling period in seconds.
        jac_x, jac_u: optional callables returning d f/dx and d f/du at (x, u);
            present for models that support analytic differentiation.
    """

    n_x: int
    n_u: int
    step_map: object
    state_box: tuple
    input_set: InputSet
    asymptotic_set: tuple
    dt: float
    jac_x: object = None
    jac_u: object = None

    def __post_init__(self):
        if self.n_x < 1 or self.n_u < 1:
            raise ValueError("n_x and n_u must be >= 1")
        lo = _as_vec(self.state_box[0], self.n_x, "state_box lower")
        hi = _as_vec(self.state_box[1], self.n_x, "state_box upper")
        if not np.all(lo < hi):
            raise ValueError("state_box lower must be < upper in every coordinate")
        object.__setattr__(self, "state_box", (lo, hi))
        targets = tuple(_as_vec(p, self.n_x, "asymptotic_set point") for p in self.asymptotic_set)
        if not targets:
            raise ValueError("asymptotic_set must contain at least one point")
        for p in targets:
            if np.any(p < lo) or np.any(p > hi):
                raise ValueError(f"asymptotic target {p} lies outside the state box")
        object.__setattr__(self, "asymptotic_set", targets)
        if self.input_set.n_u != self.n_u:
            raise ValueError("input_set dimension does not match n_u")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def has_jacobians(self) -> bool:
        return self.jac_x is not None and self.jac_u is not None

    def state_slack(self, x: np.ndarray) -> np.ndarray:
        x = _as_vec(x, self.n_x, "x")
        lo, hi = self.state_box
        return np.concatenate([x - lo, hi - x])


@dataclass(frozen=True)
class TwoZoneHvacParams:
    """Physical parameters of the two-zone RC model (Table-1 defaults).

    Units: capacitances kJ/K, specific heat kJ/(kg K), temperatures deg C,
    loads kW, sampling period seconds.  The resistances are used numerically
    as quoted (the quoted unit kW/K is the dimensional inverse of what the heat
    balance requires; see the model notes in the README).
    """

    c1: float = 9.163e3
    c2: float = 9.163e3
    cp: float = 1.012
    r12: float = 14.0
    r1o: float = 50.0
    r2o: float = 50.0
    ts1: float = 15.0
    ts2: float = 15.0
    to: float = 32.0
    q1: float = 4.0
    q2: float = 4.0
    dt_seconds: float = 600.0

    def __post_init__(self):
        for name in ("c1", "c2", "cp", "r12", "r1o", "r2o"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.dt_seconds <= 0:
            raise ValueError("dt_seconds must be strictly positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "TwoZoneHvacParams":
        unknown = set(doc) - {f.name for f in _hvac_fields()}
        if unknown:
            raise ValueError(f"unknown HVAC parameter fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in _hvac_fields()}


def _hvac_fields():
    import dataclasses

    return dataclasses.fields(TwoZoneHvacParams)


@dataclass(frozen=True)
class AffineBilinearModel:
    """Discrete model ``x+ = A x + g(x) u + d`` with diagonal bilinear gain.

    ``g(x) = diag(g_coeff_i * (g_offset_i - x_i))``.  The default offset is the
    rounded reference model's value (16); the physically consistent offset is
    the supply-air temperature (15), which is what the RC discretization
    produces.
    """

    a_matrix: np.ndarray
    g_coeff: np.ndarray
    d_vector: np.ndarray
    g_offset: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n) or not np.all(np.isfinite(a)):
            raise ValueError("a_matrix must be a finite square matrix")
        gc = _as_vec(self.g_coeff, n, "g_coeff")
        d = _as_vec(self.d_vector, n, "d_vector")
        off = self.g_offset
        off = np.full(n, 16.0) if off is None else _as_vec(off, n, "g_offset")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "g_coeff", gc)
        object.__setattr__(self, "d_vector", d)
        object.__setattr__(self, "g_offset", off)

    @property
    def n_x(self) -> int:
        return self.a_matrix.shape[0]

    def g(self, x: np.ndarray) -> np.ndarray:
        return np.diag(self.g_coeff * (self.g_offset - np.asarray(x, dtype=float)))

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.a_matrix @ x + self.g_coeff * (self.g_offset - x) * u + self.d_vector

    def jac_x(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.a_matrix - np.diag(self.g_coeff * np.asarray(u, dtype=float))

    def jac_u(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.g(x)

    def to_system(
        self,
        dt: float,
        state_box: tuple = DEFAULT_STATE_BOX,
        input_set: InputSet | None = None,
        asymptotic_set: tuple = ((24.0, 25.0),),
    ) -> SystemModel:
        n = self.n_x
        lo, hi = state_box
        box = (np.full(n, lo) if np.isscalar(lo) else lo, np.full(n, hi) if np.isscalar(hi) else hi)
        return SystemModel(
            n_x=n,
            n_u=n,
            step_map=self.step,
            state_box=box,
            input_set=input_set if input_set is not None else hvac_input_set(),
            asymptotic_set=asymptotic_set,
            dt=dt,
            jac_x=self.jac_x,
            jac_u=self.jac_u,
        )


def discretize_rc(params: TwoZoneHvacParams, method: str = "euler") -> AffineBilinearModel:
    """Discretize the two-zone RC network at the sampling period.

    method="euler" reproduces the reference coefficient set exactly (A diagonal
    0.9940, coupling 0.0047, input coefficient 0.0663, affine term 0.3038 with
    the default physical parameters).  method="zoh" uses the exact matrix
    exponential for the linear and affine parts; its coupling/affine terms
    differ from the reference ones in the 4th decimal.  The bilinear input term
    is scaled by dt*cp/c_i in both modes (state-dependent gains admit no exact
    ZOH).

    The bilinear offset is the supply-air temperature from the parameters; the
    rounded reference model uses 16 instead of the 15-degree supply
    temperature, which is surfaced as a warning rather than silently
    reconciled.
    """
    if params.dt_seconds <= 0:
        raise ValueError("dt_seconds must be positive")
    caps = np.array([params.c1, params.c2])
    a_c = np.array(
        [
            [-(1.0 / params.r12 + 1.0 / params.r1o) / params.c1, (1.0 / params.r12) / params.c1],
            [(1.0 / params.r12) / params.c2, -(1.0 / params.r12 + 1.0 / params.r2o) / params.c2],
        ]
    )
    b_aff = np.array(
        [
            params.to / (params.c1 * params.r1o) + params.q1 / params.c1,
            params.to / (params.c2 * params.r2o) + params.q2 / params.c2,
        ]
    )
    dt = params.dt_seconds
    if method == "euler":
        a_d = np.eye(2) + a_c * dt
        d_d = dt * b_aff
    elif method == "zoh":
        aug = np.zeros((4, 4))
        aug[:2, :2] = a_c
        aug[:2, 2:] = np.eye(2)
        e = expm(aug * dt)
        a_d = e[:2, :2]
        d_d = e[:2, 2:] @ b_aff
    else:
        raise ValueError(f"unknown discretization method {method!r}")
    offsets = np.array([params.ts1, params.ts2])
    if not np.allclose(offsets, 16.0):
        warnings.warn(
            "bilinear offset uses the supply-air temperature "
            f"{offsets.tolist()}; the rounded reference model uses 16",
            stacklevel=2,
        )
    return AffineBilinearModel(
        a_matrix=a_d,
        g_coeff=dt * params.cp / caps,
        d_vector=d_d,
        g_offset=offsets,
    )


def rounded_hvac_model() -> AffineBilinearModel:
    """The rounded reference coefficient set: 4 decimals, bilinear offset 16."""
    return AffineBilinearModel(
        a_matrix=np.array([[0.9940, 0.0047], [0.0047, 0.9940]]),
        g_coeff=np.array([0.0663, 0.0663]),
        d_vector=np.array([0.3038, 0.3038]),
        g_offset=np.array([16.0, 16.0]),
    )


def hvac_system(
    params: TwoZoneHvacParams | None = None,
    state_box: tuple = DEFAULT_STATE_BOX,
    set_points: tuple = (24.0, 25.0),
    total_flow: float = 3.2,
    method: str = "euler",
) -> SystemModel:
    """Full HVAC plant: discretized RC model plus the constraint geometry."""
    params = params if params is not None else TwoZoneHvacParams()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bilinear = discretize_rc(params, method=method)
    return bilinear.to_system(
        dt=params.dt_seconds,
        state_box=state_box,
        input_set=hvac_input_set(total_flow),
        asymptotic_set=(np.asarray(set_points, dtype=float),),
    )


def step(model: SystemModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One application of the plant map; no constraint checking."""
    x = _as_vec(x, model.n_x, "x")
    u = _as_vec(u, model.n_u, "u")
    out = np.asarray(model.step_map(x, u), dtype=float)
    return out


def rollout(model: SystemModel, x0: np.ndarray, useq: np.ndarray) -> np.ndarray:
    """States (x_0..x_N) produced by applying the control sequence from x0."""
    useq = np.atleast_2d(np.asarray(useq, dtype=float))
    if useq.shape[0] < 1 or useq.shape[1] != model.n_u:
        raise ValueError(f"useq must have shape (N>=1, {model.n_u}), got {useq.shape}")
    x0 = _as_vec(x0, model.n_x, "x0")
    xs = np.empty((useq.shape[0] + 1, model.n_x))
    xs[0] = x0
    for k, u in enumerate(useq):
        xs[k + 1] = model.step_map(xs[k], u)
    return xs


@dataclass(frozen=True)
class AdmissibilityReport:
    """Membership verdict with signed slack per constraint row."""

    admissible: bool
    state_slack: np.ndarray
    input_slack: np.ndarray
    tolerance: float

    @property
    def worst_slack(self) -> float:
        return float(min(self.state_slack.min(), self.input_slack.min()))

    def violated_rows(self) -> dict:
        return {
            "state": np.flatnonzero(self.state_slack < -self.tolerance).tolist(),
            "input": np.flatnonzero(self.input_slack < -self.tolerance).tolist(),
        }


def is_admissible(
    model: SystemModel, x: np.ndarray, u: np.ndarray, tol: float = 1e-8
) -> AdmissibilityReport:
    """Check x in X and u in U, reporting signed slack per constraint row."""
    s_state = model.state_slack(x)
    s_input = model.input_set.slack(u)
    ok = bool(np.all(s_state >= -tol) and np.all(s_input >= -tol))
    return AdmissibilityReport(admissible=ok, state_slack=s_state, input_slack=s_input, tolerance=tol)


def with_state_box(model: SystemModel, lower, upper) -> SystemModel:
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (model.n_x,)).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (model.n_x,)).copy()
    return replace(model, state_box=(lo, hi))
