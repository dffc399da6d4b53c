"""Dense strictly convex quadratic programming via the LDP/NNLS reduction.

Solves  min 0.5 d'H d + g'd  s.t.  A_eq d = b_eq,  A_in d >= b_in  for small
dense problems with H positive definite.  Equalities are eliminated through a
nullspace basis; the inequality-constrained core is transformed to a least
distance program and solved exactly with Lawson-Hanson nonnegative least
squares, which also yields the inequality multipliers.  An elastic variant
relaxes the constraints with penalized slacks and is always feasible; the SQP
layer uses it when a linearization has no feasible point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, null_space


class QpInfeasibleError(Exception):
    """The constraint system admits no solution."""


def nnls(e: np.ndarray, f: np.ndarray, maxiter: int | None = None) -> tuple[np.ndarray, float]:
    """Lawson-Hanson nonnegative least squares: min ||e u - f||, u >= 0.

    Active-set iteration solved to first-order optimality; written in-repo
    because the quality of the LDP reduction depends on the NNLS terminating
    at an exact KKT point.
    """
    m, n = e.shape
    maxiter = maxiter if maxiter is not None else 50 * max(m, n)
    passive = np.zeros(n, dtype=bool)
    x = np.zeros(n)
    resid = f.copy()
    w = e.T @ resid
    tol = 10.0 * np.finfo(float).eps * np.linalg.norm(e, 1) * max(m, n)
    it = 0
    while it < maxiter and not passive.all() and np.max(w[~passive], initial=-np.inf) > tol:
        it += 1
        candidates = np.where(~passive)[0]
        j = candidates[np.argmax(w[candidates])]
        passive[j] = True
        while True:
            cols = np.where(passive)[0]
            s_p, *_ = np.linalg.lstsq(e[:, cols], f, rcond=None)
            if np.all(s_p > tol):
                x = np.zeros(n)
                x[cols] = s_p
                break
            # step back to the feasibility boundary and drop zeroed columns
            mask = s_p <= tol
            ratios = x[cols[mask]] / (x[cols[mask]] - s_p[mask])
            alpha = np.min(ratios)
            x[cols] = x[cols] + alpha * (s_p - x[cols])
            passive[cols[x[cols] <= tol]] = False
            x[~passive] = 0.0
            if not passive.any():
                x = np.zeros(n)
                break
        resid = f - e @ x
        w = e.T @ resid
    return x, float(np.linalg.norm(resid))


@dataclass
class QpResult:
    d: np.ndarray
    mult_ineq: np.ndarray
    mult_eq: np.ndarray
    objective: float


def _solve_ldp(g_mat: np.ndarray, h_vec: np.ndarray, tol: float = 1e-11):
    """min 0.5||w||^2 s.t. g_mat w >= h_vec; returns (w, multipliers).

    Rows are norm-equilibrated before the NNLS solve; multipliers are mapped
    back to the original row scaling.
    """
    m, n = g_mat.shape
    if m == 0:
        return np.zeros(n), np.zeros(0)
    scale = np.maximum(np.linalg.norm(np.column_stack([g_mat, h_vec]), axis=1), 1e-300)
    g_s = g_mat / scale[:, None]
    h_s = h_vec / scale
    e = np.vstack([g_s.T, h_s[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    u, _ = nnls(e, f, maxiter=30 * max(m, n) + 200)
    r = e @ u - f
    rn = r[-1]
    if rn > -tol:
        raise QpInfeasibleError("LDP residual vanished: inequality system infeasible")
    w = -r[:-1] / rn
    lam = (-u / rn) / scale
    return w, np.maximum(lam, 0.0)


def solve_qp(
    h: np.ndarray,
    g: np.ndarray,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    a_in: np.ndarray | None = None,
    b_in: np.ndarray | None = None,
    ridge: float = 0.0,
) -> QpResult:
    """Exact solve of the strictly convex dense QP.

    Raises QpInfeasibleError when the equality system is inconsistent or the
    inequalities have no common point (within the reduced space).
    """
    n = g.shape[0]
    h = np.asarray(h, dtype=float)
    if ridge > 0.0:
        h = h + ridge * np.eye(n)
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(a_eq)
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(b_eq)
    a_in = np.zeros((0, n)) if a_in is None else np.atleast_2d(a_in)
    b_in = np.zeros(0) if b_in is None else np.atleast_1d(b_in)

    if a_eq.shape[0]:
        d0, residual, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
        if np.linalg.norm(a_eq @ d0 - b_eq, np.inf) > 1e-8 * max(1.0, np.linalg.norm(b_eq, np.inf)):
            raise QpInfeasibleError("equality system inconsistent")
        z = null_space(a_eq)
        if z.shape[1] == 0:
            d = d0
            if a_in.shape[0] and np.any(a_in @ d < b_in - 1e-10):
                raise QpInfeasibleError("equalities pin an inequality-violating point")
            lam = np.zeros(a_in.shape[0])
            nu = _eq_multipliers(h, g, a_eq, a_in, d, lam)
            return QpResult(d=d, mult_ineq=lam, mult_eq=nu, objective=_obj(h, g, d))
    else:
        d0 = np.zeros(n)
        z = np.eye(n)

    h_red = z.T @ h @ z
    g_red = z.T @ (h @ d0 + g)
    scale = max(1.0, float(np.abs(h_red).max()))
    l_mat = None
    for reg in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            l_mat = np.linalg.cholesky(h_red + reg * scale * np.eye(h_red.shape[0]) if reg else h_red)
            break
        except np.linalg.LinAlgError:
            continue
    if l_mat is None:
        l_mat = np.linalg.cholesky(h_red + 1e-4 * scale * np.eye(h_red.shape[0]))
    y_free = cho_solve((l_mat, True), -g_red)

    if a_in.shape[0] == 0:
        d = d0 + z @ y_free
        nu = _eq_multipliers(h, g, a_eq, a_in, d, np.zeros(0))
        return QpResult(d=d, mult_ineq=np.zeros(0), mult_eq=nu, objective=_obj(h, g, d))

    a_red = a_in @ z
    b_red = b_in - a_in @ d0
    slack_free = a_red @ y_free - b_red
    if np.all(slack_free >= -1e-12 * max(1.0, np.linalg.norm(b_red, np.inf))):
        d = d0 + z @ y_free
        lam = np.zeros(a_in.shape[0])
        nu = _eq_multipliers(h, g, a_eq, a_in, d, lam)
        return QpResult(d=d, mult_ineq=lam, mult_eq=nu, objective=_obj(h, g, d))

    # LDP in w = L' (y - y_free): constraints (A_red L^-T) w >= b_red - A_red y_free
    g_ldp = np.linalg.solve(l_mat, a_red.T).T
    h_ldp = b_red - a_red @ y_free
    w, lam = _solve_ldp(g_ldp, h_ldp)
    y = y_free + np.linalg.solve(l_mat.T, w)
    d = d0 + z @ y
    nu = _eq_multipliers(h, g, a_eq, a_in, d, lam)
    return QpResult(d=d, mult_ineq=lam, mult_eq=nu, objective=_obj(h, g, d))


def _obj(h, g, d) -> float:
    return float(0.5 * d @ h @ d + g @ d)


def _eq_multipliers(h, g, a_eq, a_in, d, lam) -> np.ndarray:
    if a_eq.shape[0] == 0:
        return np.zeros(0)
    rhs = h @ d + g
    if a_in.shape[0]:
        rhs = rhs - a_in.T @ lam
    nu, *_ = np.linalg.lstsq(a_eq.T, rhs, rcond=None)
    return nu


def solve_qp_elastic(
    h: np.ndarray,
    g: np.ndarray,
    a_eq: np.ndarray | None,
    b_eq: np.ndarray | None,
    a_in: np.ndarray | None,
    b_in: np.ndarray | None,
    penalty: float,
) -> tuple[QpResult, float]:
    """Relaxed QP with penalized slacks on every constraint row.

    Equalities receive two-sided slacks, inequalities one-sided.  Each slack
    carries a linear penalty plus a quadratic ridge scaled so its unconstrained
    minimizer sits near the slack actually needed, which keeps the reduction
    well conditioned.  Always feasible; returns the result restricted to the
    original variables plus the total slack used (zero means the original
    constraints were met).
    """
    n = g.shape[0]
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(a_eq)
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(b_eq)
    a_in = np.zeros((0, n)) if a_in is None else np.atleast_2d(a_in)
    b_in = np.zeros(0) if b_in is None else np.atleast_1d(b_in)
    m_eq, m_in = a_eq.shape[0], a_in.shape[0]
    n_s = 2 * m_eq + m_in
    if n_s == 0:
        res = solve_qp(h, g)
        return res, 0.0

    # slack needed at d = 0, used to scale the ridge of each slack variable
    need = np.concatenate(
        [np.abs(b_eq), np.abs(b_eq), np.maximum(b_in, 0.0)] if m_eq else [np.maximum(b_in, 0.0)]
    )
    ridge = penalty / (need + 1.0)
    h_aug = np.zeros((n + n_s, n + n_s))
    h_aug[:n, :n] = h
    h_aug[n:, n:] = np.diag(ridge)
    g_aug = np.concatenate([g, penalty * np.ones(n_s)])

    # a_eq d + s+ - s- = b_eq ; a_in d + t >= b_in ; s,t >= 0
    a_eq_aug = np.zeros((m_eq, n + n_s))
    if m_eq:
        a_eq_aug[:, :n] = a_eq
        a_eq_aug[:, n : n + m_eq] = np.eye(m_eq)
        a_eq_aug[:, n + m_eq : n + 2 * m_eq] = -np.eye(m_eq)
    rows = []
    rhs = []
    if m_in:
        block = np.zeros((m_in, n + n_s))
        block[:, :n] = a_in
        block[:, n + 2 * m_eq :] = np.eye(m_in)
        rows.append(block)
        rhs.append(b_in)
    nonneg = np.zeros((n_s, n + n_s))
    nonneg[:, n:] = np.eye(n_s)
    rows.append(nonneg)
    rhs.append(np.zeros(n_s))
    a_in_aug = np.vstack(rows)
    b_in_aug = np.concatenate(rhs)

    res = solve_qp(h_aug, g_aug, a_eq_aug if m_eq else None, b_eq if m_eq else None, a_in_aug, b_in_aug)
    slack_total = float(np.sum(res.d[n:]))
    lam = res.mult_ineq[:m_in] if m_in else np.zeros(0)
    return (
        QpResult(d=res.d[:n], mult_ineq=lam, mult_eq=res.mult_eq, objective=_obj(h, g, res.d[:n])),
        slack_total,
    )
