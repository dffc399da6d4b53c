"""Optimal economic steady state and terminal ingredients.

The steady pair is the admissible fixed point of the plant on the asymptotic
target set with the lowest economic cost.  The terminal ingredients are an
affine local control law ``u = K (x - x_s) + u_s``, a quadratic terminal weight
P solving an inflated discrete Lyapunov inequality on the closed-loop
linearization, and the largest ellipsoidal level ``alpha`` on which input
admissibility, invariance, and the required terminal decrease all hold.  The
nonlinear conditions are certified by seeded sampling (boundary-biased), which
is also the standard this package uses everywhere a closed form is out of
reach.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov

from . import sqp
from .costs import CostSuite, EconomicCostParams, econ_stage_cost
from .dynamics import SystemModel

DEFAULT_STEADY_TOL = 1e-8


class SteadyStateError(Exception):
    """No admissible steady input exists; carries the best equality residual."""

    def __init__(self, message: str, residual: float = np.nan):
        super().__init__(message)
        self.residual = residual


class TerminalSynthesisError(Exception):
    """Terminal-ingredient synthesis failed; carries diagnostics."""


@dataclass(frozen=True)
class SteadyState:
    xs: np.ndarray
    us: np.ndarray
    cost: float
    residual: float


def _fd_jacobians(model: SystemModel, x, u, h: float = 1e-6):
    fx = np.zeros((model.n_x, model.n_x))
    fu = np.zeros((model.n_x, model.n_u))
    for i in range(model.n_x):
        dx = np.zeros(model.n_x)
        dx[i] = h
        fx[:, i] = (model.step_map(x + dx, u) - model.step_map(x - dx, u)) / (2 * h)
    for i in range(model.n_u):
        du = np.zeros(model.n_u)
        du[i] = h
        fu[:, i] = (model.step_map(x, u + du) - model.step_map(x, u - du)) / (2 * h)
    return fx, fu


def linearize(model: SystemModel, x, u):
    """Jacobians of the step map, analytic when the model provides them."""
    if model.has_jacobians:
        return np.asarray(model.jac_x(x, u), dtype=float), np.asarray(model.jac_u(x, u), dtype=float)
    return _fd_jacobians(model, x, u)


def _solve_fixed_input(model: SystemModel, x_target: np.ndarray, tol: float):
    """Newton solve of f(x_target, u) = x_target for u; needs n_u == n_x."""
    u = np.zeros(model.n_u)
    for _ in range(50):
        res = model.step_map(x_target, u) - x_target
        if np.linalg.norm(res, np.inf) <= tol:
            return u, float(np.linalg.norm(res))
        _, fu = linearize(model, x_target, u)
        try:
            du = np.linalg.solve(fu, -res)
        except np.linalg.LinAlgError as exc:
            raise SteadyStateError(
                f"input Jacobian singular at target {x_target.tolist()}",
                residual=float(np.linalg.norm(res)),
            ) from exc
        u = u + du
    return u, float(np.linalg.norm(model.step_map(x_target, u) - x_target))


def _solve_steady_nlp(model: SystemModel, econ: EconomicCostParams, x_target: np.ndarray, tol: float):
    """Economic steady input via the NLP when the equality system is not square."""

    def objective(u):
        h = 1e-6
        val = econ_stage_cost(econ, x_target, u)
        grad = np.zeros(model.n_u)
        for i in range(model.n_u):
            du = np.zeros(model.n_u)
            du[i] = h
            grad[i] = (
                econ_stage_cost(econ, x_target, u + du) - econ_stage_cost(econ, x_target, u - du)
            ) / (2 * h)
        return val, grad

    def eq(u):
        res = model.step_map(x_target, u) - x_target
        _, fu = linearize(model, x_target, u)
        return res, fu

    def ineq(u):
        s = model.input_set.slack(u)
        rows = []
        n = model.n_u
        eye = np.eye(n)
        rows.append(eye)
        rows.append(-eye)
        if model.input_set.a_rows.size:
            rows.append(-model.input_set.a_rows)
        jac = np.vstack(rows)
        finite = np.isfinite(s)
        return s[finite], jac[finite]

    spec = sqp.NlpSpec(
        n_vars=model.n_u,
        objective=objective,
        eq_constraints=eq,
        ineq_constraints=ineq,
        initial_point=np.zeros(model.n_u),
    )
    res = sqp.solve(spec, sqp.SolverOptions(feas_tol=tol))
    residual = float(np.linalg.norm(model.step_map(x_target, res.z) - x_target))
    return res.z, residual


def solve_steady_state(
    model: SystemModel,
    econ: EconomicCostParams,
    tol: float = DEFAULT_STEADY_TOL,
) -> SteadyState:
    """Best admissible steady pair over the asymptotic target set.

    Each target state is held fixed and the steady input solved from the
    fixed-point equation; candidates outside the input set are rejected.  The
    admissible candidate with the lowest economic cost wins.
    """
    best: SteadyState | None = None
    best_residual = np.inf
    for x_target in model.asymptotic_set:
        x_target = np.asarray(x_target, dtype=float)
        try:
            if model.n_u == model.n_x:
                u, residual = _solve_fixed_input(model, x_target, tol)
            else:
                u, residual = _solve_steady_nlp(model, econ, x_target, tol)
        except SteadyStateError:
            raise
        best_residual = min(best_residual, residual)
        if residual > tol:
            continue
        if not model.input_set.contains(u, tol=1e-9):
            continue
        cand = SteadyState(
            xs=x_target, us=u, cost=econ_stage_cost(econ, x_target, u), residual=residual
        )
        if best is None or cand.cost < best.cost:
            best = cand
    if best is None:
        raise SteadyStateError(
            "no admissible steady input on the asymptotic set", residual=best_residual
        )
    return best


@dataclass(frozen=True)
class TerminalVerification:
    passed: bool
    n_samples: int
    margin_input: float
    margin_invariance: float
    margin_decrease: float
    worst_point: np.ndarray

    def as_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "n_samples": int(self.n_samples),
            "margin_input": float(self.margin_input),
            "margin_invariance": float(self.margin_invariance),
            "margin_decrease": float(self.margin_decrease),
            "worst_point": np.asarray(self.worst_point).tolist(),
        }


@dataclass(frozen=True)
class TerminalIngredients:
    """Affine terminal law, quadratic terminal weight, and set level.

    The terminal set is ``{x : (x - xs)' P (x - xs) <= alpha}``; the law is
    ``u = k_gain (x - xs) + us`` and equals us at xs by construction.
    """

    k_gain: np.ndarray
    p_matrix: np.ndarray
    alpha: float
    xs: np.ndarray
    us: np.ndarray
    verified: TerminalVerification | None = None

    def kappa_f(self, x) -> np.ndarray:
        return self.us + self.k_gain @ (np.asarray(x, dtype=float) - self.xs)

    def level(self, x) -> float:
        e = np.asarray(x, dtype=float) - self.xs
        return float(e @ self.p_matrix @ e)

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.level(x) <= self.alpha + tol

    def to_dict(self) -> dict:
        doc = {
            "k_gain": self.k_gain.tolist(),
            "p_matrix": self.p_matrix.tolist(),
            "alpha": float(self.alpha),
            "xs": self.xs.tolist(),
            "us": self.us.tolist(),
        }
        if self.verified is not None:
            doc["verified"] = self.verified.as_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TerminalIngredients":
        verified = None
        if "verified" in doc:
            v = doc["verified"]
            verified = TerminalVerification(
                passed=v["passed"],
                n_samples=v["n_samples"],
                margin_input=v["margin_input"],
                margin_invariance=v["margin_invariance"],
                margin_decrease=v["margin_decrease"],
                worst_point=np.asarray(v["worst_point"], dtype=float),
            )
        return cls(
            k_gain=np.asarray(doc["k_gain"], dtype=float),
            p_matrix=np.asarray(doc["p_matrix"], dtype=float),
            alpha=float(doc["alpha"]),
            xs=np.asarray(doc["xs"], dtype=float),
            us=np.asarray(doc["us"], dtype=float),
            verified=verified,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "TerminalIngredients":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _admissibility_alpha_cap(model: SystemModel, suite: CostSuite, k_gain, p_matrix) -> float:
    """Exact largest level keeping the set inside X and its law inside U.

    Affine rows a'e <= b with b > 0 cap the level at b^2 / (a' P^-1 a).
    """
    xs, us = suite.xs, suite.us
    p_inv = np.linalg.inv(p_matrix)
    rows: list[tuple[np.ndarray, float]] = []
    lo, hi = model.state_box
    n = model.n_x
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append((e, hi[i] - xs[i]))
        rows.append((-e, xs[i] - lo[i]))
    iset = model.input_set
    for i in range(model.n_u):
        if np.isfinite(iset.lower[i]):
            rows.append((-k_gain[i], us[i] - iset.lower[i]))
        if np.isfinite(iset.upper[i]):
            rows.append((k_gain[i], iset.upper[i] - us[i]))
    for a_row, b_row in zip(iset.a_rows, iset.b_rows):
        rows.append((a_row @ k_gain, b_row - a_row @ us))
    cap = np.inf
    for a, b in rows:
        norm = float(a @ p_inv @ a)
        if norm <= 0:
            continue
        if b <= 0:
            raise TerminalSynthesisError(
                "steady pair sits on a constraint boundary; no terminal set exists"
            )
        cap = min(cap, b * b / norm)
    return cap


def _sample_ellipsoid(p_matrix, alpha, n_boundary, n_interior, rng) -> np.ndarray:
    """Deviations e with e'Pe = alpha (boundary) or <= alpha (rejection)."""
    n = p_matrix.shape[0]
    chol = np.linalg.cholesky(p_matrix)
    dirs = rng.normal(size=(n_boundary, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    boundary = np.sqrt(alpha) * np.linalg.solve(chol.T, dirs.T).T
    half = np.sqrt(alpha * np.diag(np.linalg.inv(p_matrix)))
    interior = np.zeros((n_interior, n))
    count = 0
    while count < n_interior:
        cand = rng.uniform(-half, half, size=(2 * (n_interior - count) + 8, n))
        lv = np.einsum("ij,jk,ik->i", cand, p_matrix, cand)
        good = cand[lv <= alpha]
        take = min(len(good), n_interior - count)
        interior[count : count + take] = good[:take]
        count += take
    return np.vstack([boundary, interior])


def _check_samples(model: SystemModel, suite: CostSuite, k_gain, p_matrix, alpha, devs, n_horizon):
    """Margins of the three terminal checks at xs + devs; vectorized over rows."""
    xs, us = suite.xs, suite.us
    x = xs + devs
    u = us + devs @ k_gain.T
    m_input = np.array([model.input_set.slack(ui).min() for ui in u])
    x_next = np.array([model.step_map(xi, ui) for xi, ui in zip(x, u)])
    e_next = x_next - xs
    m_inv = alpha - np.einsum("ij,jk,ik->i", e_next, p_matrix, e_next)
    q, r = suite.weights.q, suite.weights.r
    dc, gc = suite.penalties.delta_coeff, suite.penalties.gamma_coeff
    eu = u - us
    lf_next = np.einsum("ij,jk,ik->i", e_next, p_matrix, e_next)
    lf_here = np.einsum("ij,jk,ik->i", devs, p_matrix, devs)
    stage = np.einsum("ij,jk,ik->i", devs, q, devs) + np.einsum("ij,jk,ik->i", eu, r, eu)
    delta = dc * ((devs**2).sum(axis=1) + (eu**2).sum(axis=1))
    gamma = gc * (devs**2).sum(axis=1)
    m_dec = -(lf_next - lf_here + stage + (n_horizon - 1) * delta + gamma)
    return m_input, m_inv, m_dec


def synthesize_terminal(
    model: SystemModel,
    suite: CostSuite,
    n_horizon: int,
    k_gain: np.ndarray | None = None,
    inflation: float = 0.1,
    n_samples: int = 4000,
    seed: int = 0,
    safety: float = 0.95,
    workers: int = 1,
) -> TerminalIngredients:
    """Build (K, P, alpha) around the steady pair carried by the cost suite.

    K defaults to the LQ-optimal gain of the linearization.  P solves the
    closed-loop discrete Lyapunov equation against the stage cost plus the
    horizon-weighted deviation penalties, inflated by `inflation` to absorb
    nonlinearity.  alpha is the exact admissibility cap bisected down until the
    sampled invariance and decrease checks hold, then shrunk by `safety`.
    """
    xs, us = suite.xs, suite.us
    a_lin, b_lin = linearize(model, xs, us)
    if k_gain is None:
        p_are = solve_discrete_are(a_lin, b_lin, suite.weights.q, suite.weights.r)
        k_lqr = np.linalg.solve(suite.weights.r + b_lin.T @ p_are @ b_lin, b_lin.T @ p_are @ a_lin)
        k_gain = -k_lqr
    else:
        k_gain = np.asarray(k_gain, dtype=float)
    a_cl = a_lin + b_lin @ k_gain
    radius = float(np.max(np.abs(np.linalg.eigvals(a_cl))))
    if radius >= 1.0:
        raise TerminalSynthesisError(
            f"closed-loop linearization is not stable: spectral radius {radius:.6f}, "
            f"eigenvalues {np.linalg.eigvals(a_cl).tolist()}"
        )
    q, r = suite.weights.q, suite.weights.r
    dc, gc = suite.penalties.delta_coeff, suite.penalties.gamma_coeff
    n_x = model.n_x
    s_mat = (
        q
        + k_gain.T @ r @ k_gain
        + (n_horizon - 1) * dc * (np.eye(n_x) + k_gain.T @ k_gain)
        + gc * np.eye(n_x)
    )
    p_matrix = solve_discrete_lyapunov(a_cl.T, (1.0 + inflation) * s_mat)
    p_matrix = 0.5 * (p_matrix + p_matrix.T)

    cap = _admissibility_alpha_cap(model, suite, k_gain, p_matrix)
    if not np.isfinite(cap) or cap <= 0:
        raise TerminalSynthesisError("no positive admissible level exists")

    rng = np.random.default_rng(seed)

    roundoff = 1e-12

    def passes(alpha: float) -> bool:
        devs = _sample_ellipsoid(p_matrix, alpha, n_samples // 2, n_samples // 2, rng)
        m_in, m_inv, m_dec = _check_samples(model, suite, k_gain, p_matrix, alpha, devs, n_horizon)
        return bool(
            m_in.min() >= -roundoff and m_inv.min() >= -roundoff and m_dec.min() >= -roundoff
        )

    lo, hi = 0.0, cap
    if passes(cap):
        alpha = cap
    else:
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if passes(mid):
                lo = mid
            else:
                hi = mid
        alpha = lo
    if alpha <= 0:
        devs = _sample_ellipsoid(p_matrix, cap * 1e-6, 8, 8, rng)
        m_in, m_inv, m_dec = _check_samples(model, suite, k_gain, p_matrix, cap * 1e-6, devs, n_horizon)
        raise TerminalSynthesisError(
            "no positive alpha passes verification; worst margins "
            f"input={m_in.min():.3e} invariance={m_inv.min():.3e} decrease={m_dec.min():.3e}"
        )
    alpha *= safety

    ingredients = TerminalIngredients(
        k_gain=k_gain, p_matrix=p_matrix, alpha=float(alpha), xs=xs, us=us
    )
    verification = verify_terminal(
        model, suite, ingredients, n_samples=n_samples, seed=seed + 1, workers=workers
    )
    if not verification.passed:
        raise TerminalSynthesisError(
            f"post-synthesis verification failed: {verification.as_dict()}"
        )
    return TerminalIngredients(
        k_gain=k_gain, p_matrix=p_matrix, alpha=float(alpha), xs=xs, us=us, verified=verification
    )


def verify_terminal(
    model: SystemModel,
    suite: CostSuite,
    ingredients: TerminalIngredients,
    n_samples: int = 10_000,
    seed: int = 1,
    n_horizon: int | None = None,
    workers: int = 1,
) -> TerminalVerification:
    """Sampled certificate of the three terminal conditions.

    Half the samples sit on the level-set boundary, half are interior
    (rejection sampled).  Samples are pre-generated from the seed and processed
    in chunks (optionally across threads); margins merge by min-reduction, so
    the verdict is independent of the worker count.
    """
    if n_horizon is None:
        n_horizon = 5
    rng = np.random.default_rng(seed)
    devs = _sample_ellipsoid(
        ingredients.p_matrix, ingredients.alpha, n_samples // 2, n_samples - n_samples // 2, rng
    )

    def run_chunk(chunk):
        return _check_samples(
            model, suite, ingredients.k_gain, ingredients.p_matrix, ingredients.alpha, chunk, n_horizon
        )

    n_chunks = max(1, min(workers, len(devs)))
    chunks = np.array_split(devs, n_chunks)
    if n_chunks == 1:
        results = [run_chunk(devs)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    m_in = np.concatenate([r[0] for r in results])
    m_inv = np.concatenate([r[1] for r in results])
    m_dec = np.concatenate([r[2] for r in results])
    worst_idx = int(np.argmin(np.minimum(np.minimum(m_in, m_inv), m_dec)))
    roundoff = 1e-12
    passed = bool(
        m_in.min() >= -roundoff and m_inv.min() >= -roundoff and m_dec.min() >= -roundoff
    )
    return TerminalVerification(
        passed=passed,
        n_samples=len(devs),
        margin_input=float(m_in.min()),
        margin_invariance=float(m_inv.min()),
        margin_decrease=float(m_dec.min()),
        worst_point=suite.xs + devs[worst_idx],
    )
