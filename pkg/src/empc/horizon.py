"""Finite-horizon optimal control problems over a stacked control vector.

Single shooting: the decision vector is the concatenated control sequence and
the states are eliminated through the rollout inside the callbacks.  One
builder covers the five problem kinds this package solves online — quadratic
tracking, plain economic, and the three Lyapunov-constrained economic variants
(single adaptive level, paired level/decrease, decrease only).  Gradients are
propagated analytically through the rollout when the model carries Jacobians,
with a dense central-difference fallback.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .costs import CostSuite, v_delta
from .dynamics import SystemModel, is_admissible, rollout
from .sqp import NlpResult, NlpSpec, SolverOptions, solve
from .terminal import TerminalIngredients

KINDS = ("tracking", "econ-plain", "econ-eta", "econ-xi-zeta", "econ-zeta")


@dataclass(frozen=True)
class LyapunovLevels:
    """Adaptive constraint levels; +inf disables the corresponding row."""

    eta: float | None = None
    xi: float | None = None
    zeta: float | None = None
    beta: float = 1.0


@dataclass
class HorizonProblem:
    """A fully specified finite-horizon problem instance at a measured state.

    Constraint rows, in order: the linear input-set rows per step, the state
    box rows per step (lower then upper, for every step including the measured
    one), the terminal level row, then the kind's Lyapunov rows.  Coordinate
    input bounds are variable bounds, not rows.
    """

    model: SystemModel
    suite: CostSuite
    ingredients: TerminalIngredients
    n_horizon: int
    kind: str
    x0: np.ndarray
    levels: LyapunovLevels = field(default_factory=LyapunovLevels)
    diff: str = "auto"  # analytic | fd | auto
    include_terminal_row: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.n_horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.kind == "econ-eta" and self.levels.eta is None:
            raise ValueError("kind econ-eta requires an eta level")
        if self.kind == "econ-xi-zeta" and (self.levels.xi is None or self.levels.zeta is None):
            raise ValueError("kind econ-xi-zeta requires xi and zeta levels")
        if self.kind == "econ-zeta" and self.levels.zeta is None:
            raise ValueError("kind econ-zeta requires a zeta level")
        if not 0.0 < self.levels.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.diff == "auto":
            self.diff = "analytic" if self.model.has_jacobians else "fd"
        if self.diff == "analytic" and not self.model.has_jacobians:
            raise ValueError("analytic differentiation requires model Jacobians")
        lo, hi = self.model.state_box
        ts, th = self.suite.econ.ts, self.suite.econ.th
        if self.kind != "tracking" and (np.any(lo < ts - 1e-9) or np.any(hi > th + 1e-9)):
            warnings.warn(
                "state box exceeds the sign-resolved validity range "
                f"[{ts.tolist()}, {th.tolist()}]; economic gradients assume "
                "states stay inside it",
                stacklevel=3,
            )

    # -- dimensions ------------------------------------------------------

    @property
    def n_u(self) -> int:
        return self.model.n_u

    @property
    def n_vars(self) -> int:
        return self.n_horizon * self.n_u

    def lyapunov_row_kinds(self) -> list[str]:
        rows = []
        if self.kind == "econ-eta" and np.isfinite(self.levels.eta):
            rows.append("eta")
        if self.kind == "econ-xi-zeta":
            if np.isfinite(self.levels.xi):
                rows.append("xi")
            if np.isfinite(self.levels.zeta):
                rows.append("zeta")
        if self.kind == "econ-zeta" and np.isfinite(self.levels.zeta):
            rows.append("zeta")
        return rows

    def n_rows(self) -> int:
        n_linear = self.model.input_set.a_rows.shape[0] * self.n_horizon
        n_box = 2 * self.model.n_x * self.n_horizon
        return n_linear + n_box + int(self.include_terminal_row) + len(self.lyapunov_row_kinds())

    # -- trajectory cache --------------------------------------------------

    def _traj(self, z: np.ndarray, need_sens: bool = True) -> dict:
        key = z.tobytes()
        cached = self._cache.get("val") if self._cache.get("key") == key else None
        if cached is not None and (not need_sens or "sens" in cached):
            if need_sens and "sens" not in cached:
                pass
            else:
                return cached
        n, nu, nx = self.n_horizon, self.n_u, self.model.n_x
        if cached is not None:
            useq, xs = cached["useq"], cached["xs"]
        else:
            useq = z.reshape(n, nu)
            xs = np.empty((n + 1, nx))
            xs[0] = self.x0
            for k in range(n):
                xs[k + 1] = self.model.step_map(xs[k], useq[k])
        val = {"useq": useq, "xs": xs}
        if need_sens and self.diff == "analytic":
            sens = np.zeros((n + 1, nx, n * nu))
            for k in range(n):
                fx = np.asarray(self.model.jac_x(xs[k], useq[k]), dtype=float)
                fu = np.asarray(self.model.jac_u(xs[k], useq[k]), dtype=float)
                sens[k + 1] = fx @ sens[k]
                sens[k + 1][:, k * nu : (k + 1) * nu] += fu
            val["sens"] = sens
        elif need_sens:
            val["sens"] = np.zeros((n + 1, nx, n * nu))
        self._cache["key"] = key
        self._cache["val"] = val
        return val

    # -- scalar functionals (value, gradient wrt z) -------------------------
    # stage sums are vectorized over the horizon; each functional also has a
    # value-only path used by the merit line search

    def _chain(self, w_x: np.ndarray, w_u: np.ndarray, sens: np.ndarray) -> np.ndarray:
        """Gradient of sum_k w_x[k] . x_k + w_u[k] . u_k through the rollout."""
        grad = np.einsum("kj,kjl->l", w_x, sens[: w_x.shape[0]])
        grad += w_u.ravel()
        return grad

    def econ_value(self, z: np.ndarray, need_grad: bool = True):
        tr = self._traj(z, need_sens=need_grad)
        xs, useq = tr["xs"][:-1], tr["useq"]
        econ = self.suite.econ
        cool_w = econ.cp / econ.eta_c
        heat_w = econ.cp / econ.eta_h
        totals = useq.sum(axis=1)
        value = float(
            econ.kappa_bar * np.sum(totals**3)
            + np.sum(useq * (cool_w * (xs - econ.ts) + heat_w * (econ.th - xs)))
        )
        if not need_grad:
            return value, None
        d_x = useq * (cool_w - heat_w)
        d_u = (3.0 * econ.kappa_bar * totals**2)[:, None] + cool_w * (xs - econ.ts) + heat_w * (
            econ.th - xs
        )
        return value, self._chain(d_x, d_u, tr["sens"])

    def tracking_value(self, z: np.ndarray, need_grad: bool = True):
        tr = self._traj(z, need_sens=need_grad)
        xs, useq = tr["xs"], tr["useq"]
        q, r, p = self.suite.weights.q, self.suite.weights.r, self.suite.weights.p
        ex = xs[:-1] - self.suite.xs
        eu = useq - self.suite.us
        e_n = xs[-1] - self.suite.xs
        value = float(
            np.einsum("kj,jl,kl->", ex, q, ex)
            + np.einsum("kj,jl,kl->", eu, r, eu)
            + e_n @ p @ e_n
        )
        if not need_grad:
            return value, None
        sens = tr["sens"]
        grad = self._chain(2 * ex @ q, 2 * eu @ r, sens)
        grad += (2 * p @ e_n) @ sens[-1]
        return value, grad

    def v_delta_value(self, z: np.ndarray, need_grad: bool = True):
        tr = self._traj(z, need_sens=need_grad)
        xs, useq = tr["xs"], tr["useq"]
        q, r, p = self.suite.weights.q, self.suite.weights.r, self.suite.weights.p
        dc = self.suite.penalties.delta_coeff
        ks = np.arange(self.n_horizon)
        ex = xs[:-1] - self.suite.xs
        eu = useq - self.suite.us
        e_n = xs[-1] - self.suite.xs
        value = float(
            np.einsum("kj,jl,kl->", ex, q, ex)
            + np.einsum("kj,jl,kl->", eu, r, eu)
            + dc * np.sum(ks * ((ex**2).sum(axis=1) + (eu**2).sum(axis=1)))
            + e_n @ p @ e_n
        )
        if not need_grad:
            return value, None
        sens = tr["sens"]
        grad = self._chain(
            2 * ex @ q + 2 * dc * ks[:, None] * ex,
            2 * eu @ r + 2 * dc * ks[:, None] * eu,
            sens,
        )
        grad += (2 * p @ e_n) @ sens[-1]
        return value, grad

    def j_delta_value(self, z: np.ndarray, need_grad: bool = True):
        tr = self._traj(z, need_sens=need_grad)
        xs, useq = tr["xs"], tr["useq"]
        q, r = self.suite.weights.q, self.suite.weights.r
        dc, gc = self.suite.penalties.delta_coeff, self.suite.penalties.gamma_coeff
        ex = xs[:-1] - self.suite.xs
        eu = useq - self.suite.us
        e_n = xs[-1] - self.suite.xs
        value = float(
            ex[0] @ q @ ex[0]
            + eu[0] @ r @ eu[0]
            + dc * ((ex[1:] ** 2).sum() + (eu[1:] ** 2).sum())
            + gc * (e_n @ e_n)
        )
        if not need_grad:
            return value, None
        sens = tr["sens"]
        w_x = 2 * dc * ex
        w_x[0] = 2 * q @ ex[0]
        w_u = 2 * dc * eu
        w_u[0] = 2 * r @ eu[0]
        grad = self._chain(w_x, w_u, sens)
        grad += (2 * gc * e_n) @ sens[-1]
        return value, grad

    def terminal_level_value(self, z: np.ndarray, need_grad: bool = True):
        tr = self._traj(z, need_sens=need_grad)
        p = self.ingredients.p_matrix
        e = tr["xs"][-1] - self.ingredients.xs
        value = float(e @ p @ e)
        if not need_grad:
            return value, None
        return value, (2 * p @ e) @ tr["sens"][-1]

    # -- NLP assembly --------------------------------------------------------

    def objective(self, z: np.ndarray):
        if self.kind == "tracking":
            return self.tracking_value(z)
        return self.econ_value(z)

    def constraint_values(self, z: np.ndarray):
        """Inequality rows c(z) >= 0, in the documented order."""
        vals, _ = self._constraints(z, need_jac=False)
        return vals

    def constraints(self, z: np.ndarray):
        return self._constraints(z, need_jac=True)

    def _constraints(self, z: np.ndarray, need_jac: bool):
        tr = self._traj(z, need_sens=need_jac)
        xs, useq = tr["xs"], tr["useq"]
        n, nu = self.n_horizon, self.n_u
        iset = self.model.input_set
        lo, hi = self.model.state_box
        vals = []
        jacs = []

        n_lin = iset.a_rows.shape[0]
        if n_lin:
            vals.append((iset.b_rows[None, :] - useq @ iset.a_rows.T).ravel())
            if need_jac:
                block = np.zeros((n * n_lin, self.n_vars))
                for k in range(n):
                    block[k * n_lin : (k + 1) * n_lin, k * nu : (k + 1) * nu] = -iset.a_rows
                jacs.append(block)
        vals.append((xs[:-1] - lo).ravel())
        vals.append((hi - xs[:-1]).ravel())
        if need_jac:
            sens = tr["sens"]
            stacked = sens[:-1].reshape(-1, self.n_vars)
            jacs.append(stacked)
            jacs.append(-stacked)
        if self.include_terminal_row:
            level, d_level = self.terminal_level_value(z, need_grad=need_jac)
            vals.append(np.array([self.ingredients.alpha - level]))
            if need_jac:
                jacs.append(-d_level[None, :])

        row_kinds = self.lyapunov_row_kinds()
        if row_kinds:
            vd, d_vd = self.v_delta_value(z, need_grad=need_jac)
            if "zeta" in row_kinds:
                jd, d_jd = self.j_delta_value(z, need_grad=need_jac)
            for rk in row_kinds:
                if rk == "eta":
                    vals.append(np.array([self.levels.eta - vd]))
                    if need_jac:
                        jacs.append(-d_vd[None, :])
                elif rk == "xi":
                    vals.append(np.array([self.levels.xi - vd]))
                    if need_jac:
                        jacs.append(-d_vd[None, :])
                else:  # zeta
                    beta = self.levels.beta
                    vals.append(np.array([self.levels.zeta - (vd - beta * jd)]))
                    if need_jac:
                        jacs.append(-(d_vd - beta * d_jd)[None, :])

        values = np.concatenate(vals)
        if not need_jac:
            return values, None
        return values, np.vstack(jacs)

    def var_bounds(self):
        lo = np.tile(self.model.input_set.lower, self.n_horizon)
        hi = np.tile(self.model.input_set.upper, self.n_horizon)
        return lo, hi

    def objective_value(self, z: np.ndarray) -> float:
        if self.kind == "tracking":
            return self.tracking_value(z, need_grad=False)[0]
        return self.econ_value(z, need_grad=False)[0]

    def to_nlp_spec(self, initial_point: np.ndarray) -> NlpSpec:
        if self.diff == "fd":
            objective = _fd_wrap_scalar(lambda z: self.objective(z)[0])
            ineq = _fd_wrap_vector(lambda z: self.constraint_values(z))
        else:
            objective = self.objective

            def ineq(z):
                return self.constraints(z)

        lo, hi = self.var_bounds()
        return NlpSpec(
            n_vars=self.n_vars,
            objective=objective,
            ineq_constraints=ineq,
            lower=lo,
            upper=hi,
            initial_point=np.asarray(initial_point, dtype=float).ravel(),
            objective_value=self.objective_value,
            ineq_values=self.constraint_values,
        )

    def point_feasible(self, z: np.ndarray, tol: float) -> bool:
        lo, hi = self.var_bounds()
        z = np.asarray(z, dtype=float).ravel()
        if np.any(z < lo - tol) or np.any(z > hi + tol):
            return False
        return bool(self.constraint_values(z).min() >= -tol)


def _fd_wrap_scalar(fun, h: float = 1e-6):
    def wrapped(z):
        val = fun(z)
        grad = np.zeros(z.size)
        for i in range(z.size):
            dz = np.zeros(z.size)
            dz[i] = h
            grad[i] = (fun(z + dz) - fun(z - dz)) / (2 * h)
        return val, grad

    return wrapped


def _fd_wrap_vector(fun, h: float = 1e-6):
    def wrapped(z):
        val = fun(z)
        jac = np.zeros((val.size, z.size))
        for i in range(z.size):
            dz = np.zeros(z.size)
            dz[i] = h
            jac[:, i] = (fun(z + dz) - fun(z - dz)) / (2 * h)
        return val, jac

    return wrapped


def build_horizon_problem(
    model: SystemModel,
    suite: CostSuite,
    ingredients: TerminalIngredients,
    n_horizon: int,
    kind: str,
    x0,
    levels: LyapunovLevels | None = None,
    diff: str = "auto",
) -> HorizonProblem:
    """Assemble one online problem; see HorizonProblem for the row layout."""
    return HorizonProblem(
        model=model,
        suite=suite,
        ingredients=ingredients,
        n_horizon=n_horizon,
        kind=kind,
        x0=np.asarray(x0, dtype=float),
        levels=levels if levels is not None else LyapunovLevels(),
        diff=diff,
    )


def warm_start_shift(prev_useq: np.ndarray, prev_x_terminal, ingredients: TerminalIngredients):
    """Shift the previous optimal sequence and append the terminal law's move."""
    prev_useq = np.atleast_2d(np.asarray(prev_useq, dtype=float))
    tail = ingredients.kappa_f(prev_x_terminal)
    return np.vstack([prev_useq[1:], tail[None, :]])


def solve_horizon(
    problem: HorizonProblem,
    initial_point: np.ndarray,
    opts: SolverOptions | None = None,
    reference: np.ndarray | None = None,
) -> tuple[NlpResult, bool]:
    """Solve one horizon problem, never returning worse than the reference.

    When a feasible reference point (typically the shifted previous solution)
    is supplied and the solver's answer is infeasible or more expensive, the
    reference is returned unchanged with the fallback flag set.
    """
    opts = opts or SolverOptions()
    spec = problem.to_nlp_spec(initial_point)
    result = solve(spec, opts)
    if reference is None:
        return result, False
    ref = np.asarray(reference, dtype=float).ravel()
    if not problem.point_feasible(ref, opts.feas_tol):
        return result, False
    ref_obj = problem.objective(ref)[0]
    if result.feasible and result.max_violation <= opts.feas_tol and result.objective <= ref_obj:
        return result, False
    fallback = NlpResult(
        z=ref,
        objective=float(ref_obj),
        max_violation=float(max(0.0, -problem.constraint_values(ref).min())),
        status="feasible-suboptimal",
        iterations=result.iterations,
        kkt_residual=np.nan,
    )
    return fallback, True


def feasibility_problem(
    model: SystemModel,
    suite: CostSuite,
    ingredients: TerminalIngredients,
    n_horizon: int,
    x0,
    diff: str = "auto",
) -> HorizonProblem:
    """Terminal-reachability phase: minimize the terminal level, no terminal row."""
    problem = HorizonProblem(
        model=model,
        suite=suite,
        ingredients=ingredients,
        n_horizon=n_horizon,
        kind="tracking",
        x0=np.asarray(x0, dtype=float),
        diff=diff,
        include_terminal_row=False,
    )
    problem.objective = problem.terminal_level_value  # type: ignore[method-assign]
    problem.objective_value = lambda z: problem.terminal_level_value(z, need_grad=False)[0]  # type: ignore[method-assign]
    return problem


def polytope_vertices(input_set) -> np.ndarray:
    """Vertices of the input polytope by active-row enumeration (small n_u)."""
    n = input_set.n_u
    rows = []
    rhs = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        if np.isfinite(input_set.lower[i]):
            rows.append(e.copy())
            rhs.append(input_set.lower[i])
        if np.isfinite(input_set.upper[i]):
            rows.append(e.copy())
            rhs.append(input_set.upper[i])
    for a, b in zip(input_set.a_rows, input_set.b_rows):
        rows.append(np.asarray(a, dtype=float))
        rhs.append(float(b))
    rows = np.asarray(rows)
    rhs = np.asarray(rhs)
    verts = []
    for combo in itertools.combinations(range(len(rows)), n):
        a = rows[list(combo)]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        v = np.linalg.solve(a, rhs[list(combo)])
        if input_set.contains(v, tol=1e-9):
            verts.append(v)
    if not verts:
        raise ValueError("input polytope is unbounded or degenerate; cannot enumerate vertices")
    verts = np.asarray(verts)
    keep = []
    for v in verts:
        if not any(np.allclose(v, w, atol=1e-9) for w in keep):
            keep.append(v)
    return np.asarray(keep)


def _max_quad_over_box(center: np.ndarray, weight: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Exact max of (x-center)' W (x-center) over a box (vertex enumeration)."""
    n = center.size
    if n > 16:
        m = np.maximum(np.abs(lo - center), np.abs(hi - center))
        return float(np.abs(weight) @ m @ m) if weight.ndim == 2 else float(np.sum(np.abs(weight) * m * m))
    best = 0.0
    for corner in itertools.product(*[(lo[i], hi[i]) for i in range(n)]):
        e = np.asarray(corner) - center
        best = max(best, float(e @ weight @ e))
    return best


def compute_v_max(
    model: SystemModel,
    suite: CostSuite,
    ingredients: TerminalIngredients,
    n_horizon: int,
    n_samples: int = 1000,
    seed: int = 2,
) -> float:
    """Certified upper bound on the k-weighted tracking value over X x U.

    Term-wise: every stage cost is bounded by its exact maximum over the state
    box (vertex enumeration of the convex quadratic) plus its maximum over the
    input polytope's vertices; the terminal cost is bounded by the terminal-set
    level capped by the box maximum.  The bound is cross-checked against
    sampled feasible trajectories and must dominate all of them.
    """
    lo, hi = model.state_box
    lx_max = _max_quad_over_box(suite.xs, suite.weights.q, lo, hi)
    dx_max = _max_quad_over_box(suite.xs, np.eye(model.n_x), lo, hi)
    verts = polytope_vertices(model.input_set)
    eu = verts - suite.us
    lu_max = float(np.max(np.einsum("ij,jk,ik->i", eu, suite.weights.r, eu)))
    du_max = float(np.max((eu**2).sum(axis=1)))
    l_max = lx_max + lu_max
    d_max = suite.penalties.delta_coeff * (dx_max + du_max)
    lf_max = min(
        float(ingredients.alpha),
        _max_quad_over_box(ingredients.xs, ingredients.p_matrix, lo, hi),
    )
    bound = sum(l_max + k * d_max for k in range(n_horizon)) + lf_max

    sampled = sample_feasible_pairs(
        model, suite, ingredients, n_horizon, n_pairs=n_samples, seed=seed, solver_pairs=0
    )
    worst = max((v_delta(model, suite, useq, x0) for x0, useq in sampled), default=0.0)
    if worst > bound:
        raise RuntimeError(
            f"value bound {bound} fails to dominate a sampled feasible value {worst}; bound logic broken"
        )
    return float(bound)


def sample_feasible_pairs(
    model: SystemModel,
    suite: CostSuite,
    ingredients: TerminalIngredients,
    n_horizon: int,
    n_pairs: int,
    seed: int = 0,
    perturbation: float = 0.05,
    solver_pairs: int = 0,
    solver_box: tuple | None = None,
    opts: SolverOptions | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random feasible (state, control-sequence) pairs with terminal state in the set.

    Mixes terminal-law rollouts from interior points of the terminal set,
    perturbed variants of those rollouts (projected into the input set and
    filtered for feasibility), and optionally solver-generated pairs from
    states sampled in a wider box.
    """
    from .terminal import _sample_ellipsoid  # local to avoid cycles

    rng = np.random.default_rng(seed)
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    plain = build_horizon_problem(
        model, suite, ingredients, n_horizon, "econ-plain", ingredients.xs
    )

    def feasible(x0, useq) -> bool:
        states = rollout(model, x0, useq)
        for k in range(n_horizon):
            if not is_admissible(model, states[k], useq[k]).admissible:
                return False
        return ingredients.contains(states[-1]) and bool(model.state_slack(states[-1]).min() >= 0)

    n_solver = min(solver_pairs, n_pairs)
    attempts = 0
    while len(pairs) < n_pairs - n_solver and attempts < 50 * n_pairs:
        attempts += 1
        dev = _sample_ellipsoid(ingredients.p_matrix, ingredients.alpha * 0.98, 0, 1, rng)[0]
        x0 = ingredients.xs + dev
        x = x0.copy()
        useq = np.empty((n_horizon, model.n_u))
        for k in range(n_horizon):
            u = ingredients.kappa_f(x)
            if rng.uniform() < 0.7:
                u = u + rng.normal(scale=perturbation, size=model.n_u)
                u = np.clip(u, model.input_set.lower, model.input_set.upper)
            useq[k] = u
            x = model.step_map(x, u)
        if feasible(x0, useq):
            pairs.append((x0, useq))

    if n_solver > 0:
        box = solver_box if solver_box is not None else (
            ingredients.xs - 2.0, ingredients.xs + 2.0
        )
        lo_b, hi_b = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
        while len(pairs) < n_pairs and attempts < 100 * n_pairs:
            attempts += 1
            x0 = rng.uniform(lo_b, hi_b)
            prob = feasibility_problem(model, suite, ingredients, n_horizon, x0)
            res = solve(prob.to_nlp_spec(np.tile(suite.us, n_horizon)), opts or SolverOptions())
            useq = res.z.reshape(n_horizon, model.n_u)
            if feasible(x0, useq):
                pairs.append((x0, useq))
    return pairs
