"""Dense SQP solver with damped BFGS Hessian and an l1-penalty line search.

Problem form: minimize f(z) subject to c_eq(z) = 0, c_in(z) >= 0 and variable
bounds.  Each iteration solves a strictly convex QP linearization (elastic when
the linearization is inconsistent), performs an Armijo backtracking search on
the l1 merit function, and updates a Powell-damped BFGS approximation of the
Lagrangian Hessian.  Designed for the small dense problems this package
produces (tens of variables, tens of constraint rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qp import QpInfeasibleError, solve_qp, solve_qp_elastic


class CallbackError(Exception):
    """A user callback produced a non-finite value where one was required."""


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-6
    max_iter: int = 200
    elastic_penalty: float = 1e4
    armijo: float = 1e-4
    min_step: float = 1e-12


@dataclass
class NlpSpec:
    """Callback-defined dense NLP.

    objective(z) -> (value, gradient); eq_constraints/ineq_constraints(z) ->
    (values, jacobian) with inequality convention c(z) >= 0.  Bounds may be
    +-inf.  initial_point is clipped into the bounds before solving.  The
    optional *_value(s) callbacks evaluate without derivatives; the line
    search uses them when present.
    """

    n_vars: int
    objective: object
    eq_constraints: object = None
    ineq_constraints: object = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    initial_point: np.ndarray = None
    objective_value: object = None
    ineq_values: object = None
    eq_values: object = None

    def __post_init__(self):
        n = self.n_vars
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have shape (n_vars,)")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if self.initial_point is None:
            self.initial_point = np.clip(np.zeros(n), self.lower, self.upper)
        else:
            self.initial_point = np.asarray(self.initial_point, dtype=float)
            if self.initial_point.shape != (n,):
                raise ValueError("initial_point has wrong shape")


@dataclass
class NlpResult:
    z: np.ndarray
    objective: float
    max_violation: float
    status: str  # optimal | feasible-suboptimal | infeasible | iteration-limit
    iterations: int
    kkt_residual: float = np.nan
    multipliers_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "feasible-suboptimal", "iteration-limit")


class _Eval:
    """One full evaluation of objective and constraints at a point."""

    __slots__ = ("z", "f", "grad", "c_eq", "j_eq", "c_in", "j_in")

    def __init__(self, spec: NlpSpec, z: np.ndarray, need_jac: bool = True):
        self.z = z
        self.f, grad = spec.objective(z)
        self.grad = np.asarray(grad, dtype=float)
        if spec.eq_constraints is not None:
            c, j = spec.eq_constraints(z)
            self.c_eq = np.atleast_1d(np.asarray(c, dtype=float))
            self.j_eq = np.atleast_2d(np.asarray(j, dtype=float))
        else:
            self.c_eq = np.zeros(0)
            self.j_eq = np.zeros((0, z.size))
        if spec.ineq_constraints is not None:
            c, j = spec.ineq_constraints(z)
            self.c_in = np.atleast_1d(np.asarray(c, dtype=float))
            self.j_in = np.atleast_2d(np.asarray(j, dtype=float))
        else:
            self.c_in = np.zeros(0)
            self.j_in = np.zeros((0, z.size))

    def finite(self) -> bool:
        return bool(
            np.isfinite(self.f)
            and np.all(np.isfinite(self.grad))
            and np.all(np.isfinite(self.c_eq))
            and np.all(np.isfinite(self.c_in))
        )


def _violation(ev: _Eval, lower, upper) -> float:
    v = 0.0
    if ev.c_eq.size:
        v = max(v, float(np.abs(ev.c_eq).max()))
    if ev.c_in.size:
        v = max(v, float(np.maximum(-ev.c_in, 0.0).max()))
    v = max(v, float(np.maximum(lower - ev.z, 0.0).max(initial=0.0)))
    v = max(v, float(np.maximum(ev.z - upper, 0.0).max(initial=0.0)))
    return v


def _merit(ev: _Eval, lower, upper, mu: float) -> float:
    pen = float(np.abs(ev.c_eq).sum()) if ev.c_eq.size else 0.0
    pen += float(np.maximum(-ev.c_in, 0.0).sum()) if ev.c_in.size else 0.0
    pen += float(np.maximum(lower - ev.z, 0.0).sum())
    pen += float(np.maximum(ev.z - upper, 0.0).sum())
    return ev.f + mu * pen


class _LightEval:
    """Derivative-free evaluation used inside the line search."""

    __slots__ = ("z", "f", "c_eq", "c_in")

    def __init__(self, spec: NlpSpec, z: np.ndarray):
        self.z = z
        if spec.objective_value is not None:
            self.f = spec.objective_value(z)
        else:
            self.f = spec.objective(z)[0]
        if spec.eq_constraints is not None:
            self.c_eq = np.atleast_1d(
                spec.eq_values(z) if spec.eq_values is not None else spec.eq_constraints(z)[0]
            ).astype(float)
        else:
            self.c_eq = np.zeros(0)
        if spec.ineq_constraints is not None:
            self.c_in = np.atleast_1d(
                spec.ineq_values(z) if spec.ineq_values is not None else spec.ineq_constraints(z)[0]
            ).astype(float)
        else:
            self.c_in = np.zeros(0)

    def finite(self) -> bool:
        return bool(
            np.isfinite(self.f) and np.all(np.isfinite(self.c_eq)) and np.all(np.isfinite(self.c_in))
        )


def solve(spec: NlpSpec, opts: SolverOptions | None = None) -> NlpResult:
    """Run the SQP iteration; see NlpResult.status for the outcome contract.

    status == "optimal" guarantees max constraint violation <= feas_tol and a
    first-order stationarity residual <= opt_tol.  When the iteration cap is
    reached, the best feasible iterate seen is returned (status
    "iteration-limit"), or "infeasible" if none was found.  Non-finite values
    at an accepted iterate raise CallbackError.
    """
    opts = opts or SolverOptions()
    n = spec.n_vars
    z = np.clip(spec.initial_point.astype(float).copy(), spec.lower, spec.upper)
    ev = _Eval(spec, z)
    if not ev.finite():
        raise CallbackError("non-finite objective/constraints at the initial point")

    b_mat = np.eye(n)
    mu = 1.0
    merit_window: list = []
    lam = np.zeros(ev.c_in.shape[0])
    nu = np.zeros(ev.c_eq.shape[0])
    best_feas: _Eval | None = None
    best_kkt = np.inf

    def remember(e: _Eval, kkt: float):
        nonlocal best_feas, best_kkt
        if _violation(e, spec.lower, spec.upper) <= opts.feas_tol:
            if best_feas is None or e.f < best_feas.f:
                best_feas = e
                best_kkt = kkt

    iteration = 0
    for iteration in range(1, opts.max_iter + 1):
        # bound rows folded into the inequality block of the QP
        fin_lo = np.isfinite(spec.lower)
        fin_hi = np.isfinite(spec.upper)
        a_bounds = np.vstack([np.eye(n)[fin_lo], -np.eye(n)[fin_hi]])
        b_bounds = np.concatenate([spec.lower[fin_lo] - z[fin_lo], z[fin_hi] - spec.upper[fin_hi]])
        a_in = np.vstack([ev.j_in, a_bounds]) if ev.c_in.size else a_bounds
        b_in = np.concatenate([-ev.c_in, b_bounds]) if ev.c_in.size else b_bounds

        try:
            qp = solve_qp(b_mat, ev.grad, ev.j_eq if ev.c_eq.size else None,
                          -ev.c_eq if ev.c_eq.size else None, a_in, b_in)
            slack_used = 0.0
        except QpInfeasibleError:
            qp, slack_used = solve_qp_elastic(
                b_mat, ev.grad, ev.j_eq if ev.c_eq.size else None,
                -ev.c_eq if ev.c_eq.size else None, a_in, b_in,
                penalty=opts.elastic_penalty,
            )

        d = qp.d
        n_in = ev.c_in.shape[0]
        lam = qp.mult_ineq[:n_in] if qp.mult_ineq.size >= n_in else np.zeros(n_in)
        nu = qp.mult_eq if qp.mult_eq.size else np.zeros(0)

        kkt = _kkt_residual(ev, spec, lam, nu, qp.mult_ineq[n_in:] if qp.mult_ineq.size > n_in else None)
        viol = _violation(ev, spec.lower, spec.upper)
        remember(ev, kkt)
        if viol <= opts.feas_tol and kkt <= opts.opt_tol:
            return _result(ev, "optimal", iteration, kkt, lam, nu, spec)
        step_norm = float(np.linalg.norm(d, np.inf))
        if step_norm <= 1e-14 and slack_used <= opts.feas_tol:
            status = "feasible-suboptimal" if viol <= opts.feas_tol else "infeasible"
            if status == "infeasible" and best_feas is not None:
                return _result(best_feas, "feasible-suboptimal", iteration, best_kkt, lam, nu, spec)
            return _result(ev, status, iteration, kkt, lam, nu, spec)

        mult_inf = max(
            float(np.abs(lam).max(initial=0.0)),
            float(np.abs(nu).max(initial=0.0)),
        )
        mu = max(mu, 1.5 * mult_inf + 1e-2)

        phi0 = _merit(ev, spec.lower, spec.upper, mu)
        # directional derivative estimate of the merit along d
        deriv = float(ev.grad @ d) - mu * (
            float(np.abs(ev.c_eq).sum())
            + float(np.maximum(-ev.c_in, 0.0).sum())
            + float(np.maximum(spec.lower - z, 0.0).sum())
            + float(np.maximum(z - spec.upper, 0.0).sum())
        )
        if deriv > 0:
            deriv = -abs(deriv)

        # nonmonotone Armijo on the merit (window of recent values guards
        # against rejecting superlinear steps along curved constraints)
        merit_window.append(phi0)
        if len(merit_window) > 4:
            merit_window.pop(0)
        phi_ref = max(merit_window)
        alpha = 1.0
        accepted = None
        while alpha >= opts.min_step:
            trial = np.clip(z + alpha * d, spec.lower, spec.upper)
            cand = _LightEval(spec, trial)
            if cand.finite() and _merit(cand, spec.lower, spec.upper, mu) <= phi_ref + opts.armijo * alpha * deriv:
                accepted = _Eval(spec, trial)
                break
            alpha *= 0.5
        if accepted is None:
            # merit stall: accept a tiny safeguarded step if it reduces raw
            # violation, otherwise stop with the best point seen
            trial = np.clip(z + 1e-8 * d, spec.lower, spec.upper)
            cand = _Eval(spec, trial)
            if cand.finite() and _violation(cand, spec.lower, spec.upper) < viol:
                accepted = cand
            else:
                if best_feas is not None:
                    return _result(best_feas, "feasible-suboptimal", iteration, best_kkt, lam, nu, spec)
                return _result(ev, "infeasible", iteration, kkt, lam, nu, spec)

        grad_l_old = _lagrangian_grad(ev, lam, nu)
        s = accepted.z - z
        z = accepted.z
        ev_new = accepted
        y = _lagrangian_grad(ev_new, lam, nu) - grad_l_old
        b_mat = _bfgs_update(b_mat, s, y)
        ev = ev_new

    # iteration cap
    kkt = _kkt_residual(ev, spec, lam, nu, None)
    remember(ev, kkt)
    if best_feas is not None:
        return _result(best_feas, "iteration-limit", iteration, best_kkt, lam, nu, spec)
    return _result(ev, "infeasible", iteration, kkt, lam, nu, spec)


def _result(ev: _Eval, status, iterations, kkt, lam, nu, spec) -> NlpResult:
    return NlpResult(
        z=ev.z.copy(),
        objective=float(ev.f),
        max_violation=_violation(ev, spec.lower, spec.upper),
        status=status,
        iterations=iterations,
        kkt_residual=float(kkt),
        multipliers_ineq=np.asarray(lam, dtype=float).copy(),
        multipliers_eq=np.asarray(nu, dtype=float).copy(),
    )


def _lagrangian_grad(ev: _Eval, lam, nu) -> np.ndarray:
    g = ev.grad.copy()
    if ev.c_in.size and lam.size == ev.c_in.size:
        g -= ev.j_in.T @ lam
    if ev.c_eq.size and nu.size == ev.c_eq.size:
        g -= ev.j_eq.T @ nu
    return g


def _kkt_residual(ev: _Eval, spec, lam, nu, bound_mults) -> float:
    g = _lagrangian_grad(ev, lam, nu)
    if bound_mults is not None and bound_mults.size:
        n = ev.z.size
        fin_lo = np.isfinite(spec.lower)
        fin_hi = np.isfinite(spec.upper)
        rows = np.vstack([np.eye(n)[fin_lo], -np.eye(n)[fin_hi]])
        g -= rows.T @ bound_mults
    else:
        # project out active-bound components instead of tracking their multipliers
        at_lo = ev.z <= spec.lower + 1e-12
        at_hi = ev.z >= spec.upper - 1e-12
        g = np.where(at_lo, np.minimum(g, 0.0), g)
        g = np.where(at_hi, np.maximum(g, 0.0), g)
    stat = float(np.abs(g).max(initial=0.0))
    comp = 0.0
    if ev.c_in.size and lam.size == ev.c_in.size:
        comp = float(np.abs(lam * ev.c_in).max(initial=0.0))
    return max(stat, comp)


def _bfgs_update(b: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    sn = float(s @ s)
    yn = float(y @ y)
    if sn < 1e-30:
        return b
    bs = b @ s
    sbs = float(s @ bs)
    sy = float(s @ y)
    # Powell damping keeps the update positive definite
    if sy < 0.2 * sbs:
        theta = 0.8 * sbs / (sbs - sy) if sbs > sy else 1.0
        y = theta * y + (1.0 - theta) * bs
        sy = float(s @ y)
        yn = float(y @ y)
    if sy <= 1e-12 * np.sqrt(sn * yn) or sy <= 1e-14 or sbs <= 1e-14:
        return b
    b_new = b - np.outer(bs, bs) / sbs + np.outer(y, y) / sy
    eigs = np.linalg.eigvalsh(b_new)
    if eigs[0] <= 0.0 or eigs[-1] / max(eigs[0], 1e-300) > 1e10:
        # curvature estimate degenerated: restart from a scaled identity
        return max(min(sy / sn, 1e6), 1e-6) * np.eye(b.shape[0])
    return b_new
