"""Dense convex quadratic programming.

    minimize    1/2 x'Px + q'x
    subject to  A_eq x  = b_eq
                A_in x <= b_in

``solve`` is a primal active-set method working in the null space of the
current working set.  A feasible starting point comes from a phase-1 linear
feasibility problem.  ``brute_force_solve`` enumerates every active set and
is only meant as a test oracle for small problems.

Sign convention for multipliers (matches the stationarity condition used
throughout):  P x + q + A_eq' lam + A_in' mu = 0,  mu >= 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"
INACCURATE = "inaccurate"

DEFAULT_TOL = 1e-9


def _as_matrix(A, n: int, name: str) -> np.ndarray:
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n))
    if A.shape[1] != n:
        raise ValueError(f"{name} has {A.shape[1]} columns, expected {n}")
    return A


def _as_vector(b, m: int, name: str) -> np.ndarray:
    if b is None:
        b = np.zeros(0)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (m,):
        raise ValueError(f"{name} has length {b.size}, expected {m}")
    return b


@dataclass(frozen=True)
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.size
        P = np.asarray(self.P, dtype=float)
        if P.shape != (n, n):
            raise ValueError(f"P has shape {P.shape}, expected {(n, n)}")
        scale = max(1.0, float(np.abs(P).max(initial=0.0)))
        if np.abs(P - P.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("P is not symmetric")
        A_eq = _as_matrix(self.A_eq, n, "A_eq")
        A_in = _as_matrix(self.A_in, n, "A_in")
        b_eq = _as_vector(self.b_eq, A_eq.shape[0], "b_eq")
        b_in = _as_vector(self.b_in, A_in.shape[0], "b_in")
        for name, arr in [("P", P), ("q", q), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("A_in", A_in), ("b_in", b_in)]:
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def m_in(self) -> int:
        return self.A_in.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    eq_multipliers: np.ndarray
    in_multipliers: np.ndarray
    status: str
    kkt_residual: float
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residual(qp: QuadraticProgram, x, lam, mu) -> float:
    """Largest violation among the KKT conditions.

    Stationarity and complementarity are divided by ``1 + max(|q|, |Px|)``
    (infinity norms); primal infeasibility and negative multipliers are
    absolute.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Px = qp.P @ x
    scale = 1.0 + max(np.abs(qp.q).max(initial=0.0), np.abs(Px).max(initial=0.0))
    grad = Px + qp.q + qp.A_eq.T @ lam + qp.A_in.T @ mu
    stat = np.abs(grad).max(initial=0.0) / scale
    slack = qp.b_in - qp.A_in @ x
    primal = max(np.abs(qp.A_eq @ x - qp.b_eq).max(initial=0.0),
                 np.maximum(-slack, 0.0).max(initial=0.0))
    dual = np.maximum(-mu, 0.0).max(initial=0.0)
    comp = np.abs(mu * slack).max(initial=0.0) / scale
    return float(max(stat, primal, dual, comp))


def _null_space(A: np.ndarray, n: int) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps * s[0]))
    return vt[rank:].T


def _is_independent(rows: np.ndarray, new: np.ndarray) -> bool:
    norm = np.linalg.norm(new)
    if norm == 0.0:
        return False
    if rows.shape[0] == 0:
        return True
    coef, *_ = np.linalg.lstsq(rows.T, new, rcond=None)
    return np.linalg.norm(rows.T @ coef - new) > 1e-10 * norm


def _phase_one(qp: QuadraticProgram, x0) -> np.ndarray | None:
    """A point satisfying all constraints, or None when the set is empty."""
    n = qp.n
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        viol = max(np.abs(qp.A_eq @ x0 - qp.b_eq).max(initial=0.0),
                   (qp.A_in @ x0 - qp.b_in).max(initial=0.0))
        if viol <= 1e-12 * (1.0 + np.abs(x0).max(initial=0.0)):
            return x0.copy()
    if qp.m_eq + qp.m_in == 0:
        return np.zeros(n) if x0 is None else x0.copy()
    res = linprog(
        np.zeros(n),
        A_ub=qp.A_in if qp.m_in else None,
        b_ub=qp.b_in if qp.m_in else None,
        A_eq=qp.A_eq if qp.m_eq else None,
        b_eq=qp.b_eq if qp.m_eq else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:
        return None
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"phase-1 feasibility problem failed: {res.message}")
    return np.asarray(res.x, dtype=float)


def _initial_working_set(qp: QuadraticProgram, x: np.ndarray):
    """Pick independent equality rows plus near-active inequalities, and move x
    onto them exactly."""
    eq_keep: list[int] = []
    rows = np.zeros((0, qp.n))
    for i in range(qp.m_eq):
        if _is_independent(rows, qp.A_eq[i]):
            eq_keep.append(i)
            rows = np.vstack([rows, qp.A_eq[i]])
    in_keep: list[int] = []
    slack = qp.b_in - qp.A_in @ x
    near = slack <= 1e-7 * (1.0 + np.abs(qp.b_in))
    for i in np.nonzero(near)[0]:
        if _is_independent(rows, qp.A_in[i]):
            in_keep.append(int(i))
            rows = np.vstack([rows, qp.A_in[i]])
    if rows.shape[0]:
        rhs = np.concatenate([qp.b_eq[eq_keep], qp.b_in[in_keep]])
        corr, *_ = np.linalg.lstsq(rows, rhs - rows @ x, rcond=None)
        x = x + corr
    return x, eq_keep, in_keep


def _multipliers(qp, g, eq_keep, W):
    A_W = np.vstack([qp.A_eq[eq_keep], qp.A_in[W]]) if (eq_keep or W) else np.zeros((0, qp.n))
    if A_W.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    lam, *_ = np.linalg.lstsq(A_W.T, -g, rcond=None)
    return lam[: len(eq_keep)], lam[len(eq_keep):]


def _finish(qp, x, eq_keep, W, tol, status, iterations):
    g = qp.P @ x + qp.q
    lam_k, mu_k = _multipliers(qp, g, eq_keep, W)
    lam = np.zeros(qp.m_eq)
    lam[eq_keep] = lam_k
    mu = np.zeros(qp.m_in)
    mu[W] = np.maximum(mu_k, 0.0)
    res = kkt_residual(qp, x, lam, mu)
    if status == OPTIMAL and res > tol:
        status = INACCURATE
    return QpSolution(x, lam, mu, status, res, iterations)


def _ratio_test(qp, x, p, W, alpha_max):
    """Step length along p and the first blocking inequality (smallest index on ties)."""
    alpha, block = alpha_max, None
    if qp.m_in == 0:
        return alpha, block
    ap = qp.A_in @ p
    slack = qp.b_in - qp.A_in @ x
    pn = np.linalg.norm(p)
    in_W = np.zeros(qp.m_in, dtype=bool)
    in_W[W] = True
    for i in range(qp.m_in):
        if in_W[i] or ap[i] <= 1e-14 * pn * np.linalg.norm(qp.A_in[i]):
            continue
        step = max(slack[i], 0.0) / ap[i]
        if step < alpha:
            alpha, block = step, i
    return alpha, block


def _unit_rows(A, b):
    """Rows scaled to unit norm; zero rows are returned separately."""
    norms = np.linalg.norm(A, axis=1)
    nz = norms > 0
    scale = np.ones_like(norms)
    scale[nz] = norms[nz]
    return A / scale[:, None], b / scale, scale, ~nz


def solve(qp: QuadraticProgram, tol: float = DEFAULT_TOL, max_iter: int | None = None,
          x0=None) -> QpSolution:
    """Solve a convex QP by a primal active-set method.

    ``x0`` is used as the starting point when it is feasible; otherwise the
    phase-1 problem supplies one.  Statuses: optimal, infeasible, unbounded,
    max_iterations, and inaccurate (converged active set whose KKT residual
    still exceeds ``tol``).

    Constraint rows are scaled to unit norm internally; multipliers are
    reported for the rows as given.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A_eq, b_eq, s_eq, zero_eq = _unit_rows(qp.A_eq, qp.b_eq)
    A_in, b_in, s_in, zero_in = _unit_rows(qp.A_in, qp.b_in)
    if np.any(np.abs(b_eq[zero_eq]) > 0) or np.any(b_in[zero_in] < 0):
        nan = np.full(qp.n, np.nan)
        return QpSolution(nan, np.zeros(qp.m_eq), np.zeros(qp.m_in), INFEASIBLE, np.inf, 0)
    scaled = QuadraticProgram(qp.P, qp.q, A_eq[~zero_eq], b_eq[~zero_eq],
                              A_in[~zero_in], b_in[~zero_in])
    sol = _active_set(scaled, tol, max_iter, x0)
    lam = np.zeros(qp.m_eq)
    lam[~zero_eq] = sol.eq_multipliers / s_eq[~zero_eq]
    mu = np.zeros(qp.m_in)
    mu[~zero_in] = sol.in_multipliers / s_in[~zero_in]
    if sol.status == INFEASIBLE:
        return QpSolution(sol.x, lam, mu, INFEASIBLE, np.inf, sol.iterations)
    # the residual is invariant under row scaling up to rounding; report it
    # for the problem as posed
    res = kkt_residual(qp, sol.x, lam, mu)
    status = sol.status
    if status in (OPTIMAL, INACCURATE):
        status = OPTIMAL if res <= tol else INACCURATE
    return QpSolution(sol.x, lam, mu, status, res, sol.iterations)


def _active_set(qp: QuadraticProgram, tol: float, max_iter: int | None, x0) -> QpSolution:
    n = qp.n
    if max_iter is None:
        max_iter = 100 * (n + qp.m_in)

    start = _phase_one(qp, x0)
    if start is None:
        nan = np.full(n, np.nan)
        return QpSolution(nan, np.zeros(qp.m_eq), np.zeros(qp.m_in), INFEASIBLE, np.inf, 0)
    x, eq_keep, W = _initial_working_set(qp, start)

    P = qp.P
    curv_floor = 1e-12 * max(np.trace(P) / max(n, 1), 0.0)
    at_min = False
    for it in range(1, max_iter + 1):
        g = P @ x + qp.q
        if not at_min:
            A_W = np.vstack([qp.A_eq[eq_keep], qp.A_in[W]]) if (eq_keep or W) else np.zeros((0, n))
            Z = _null_space(A_W, n)
            if Z.shape[1] == 0:
                at_min = True
            else:
                Hr = Z.T @ P @ Z
                w, Q = np.linalg.eigh(0.5 * (Hr + Hr.T))
                c = Q.T @ (Z.T @ g)
                flat = w <= curv_floor
                gtol = 1e-12 * (1.0 + np.abs(g).max())
                ray = np.nonzero(flat & (np.abs(c) > gtol))[0]
                if ray.size:
                    i = ray[0]
                    d = -np.sign(c[i]) * (Z @ Q[:, i])
                    alpha, block = _ratio_test(qp, x, d, W, np.inf)
                    if block is None:
                        return _finish(qp, x, eq_keep, W, tol, UNBOUNDED, it)
                    x = x + alpha * d
                    W.append(block)
                    continue
                sharp = ~flat
                p = -(Z @ (Q[:, sharp] @ (c[sharp] / w[sharp])))
                if np.linalg.norm(p) <= 1e-15 * (1.0 + np.linalg.norm(x)):
                    at_min = True
                else:
                    alpha, block = _ratio_test(qp, x, p, W, 1.0)
                    x = x + alpha * p
                    if block is None:
                        at_min = True
                    else:
                        W.append(block)
                    continue
        # x minimizes over the current working set: check inequality multipliers
        _, mu = _multipliers(qp, g, eq_keep, W)
        if mu.size == 0:
            return _finish(qp, x, eq_keep, W, tol, OPTIMAL, it)
        mult_tol = 1e-12 * (1.0 + np.abs(g).max())
        worst = int(np.argmin(mu))
        if mu[worst] >= -mult_tol:
            return _finish(qp, x, eq_keep, W, tol, OPTIMAL, it)
        W.pop(worst)
        at_min = False
    return _finish(qp, x, eq_keep, W, tol, MAX_ITERATIONS, max_iter)


def brute_force_solve(qp: QuadraticProgram, tol: float = 1e-9) -> QpSolution:
    """Enumerate all 2^m_in active sets and keep the best KKT point.

    Each candidate solves the equality-constrained KKT system with the
    active inequalities held tight.  Test oracle only: m_in <= 20.
    """
    if qp.m_in > 20:
        raise ValueError("brute_force_solve is limited to m_in <= 20")
    original = qp
    A_eq, b_eq, s_eq, z_eq = _unit_rows(qp.A_eq, qp.b_eq)
    A_in, b_in, s_in, z_in = _unit_rows(qp.A_in, qp.b_in)
    qp = QuadraticProgram(qp.P, qp.q, A_eq, b_eq, A_in, b_in)
    n = qp.n
    best = None
    feas_tol = 1e-9 * (1.0 + np.abs(qp.b_in).max(initial=0.0) + np.abs(qp.b_eq).max(initial=0.0))
    for k in range(qp.m_in + 1):
        for S in itertools.combinations(range(qp.m_in), k):
            S = list(S)
            A = np.vstack([qp.A_eq, qp.A_in[S]])
            b = np.concatenate([qp.b_eq, qp.b_in[S]])
            m = A.shape[0]
            K = np.block([[qp.P, A.T], [A, np.zeros((m, m))]])
            rhs = np.concatenate([-qp.q, b])
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            if np.linalg.norm(K @ sol - rhs) > 1e-8 * (1.0 + np.linalg.norm(rhs)):
                continue
            x = sol[:n]
            lam = sol[n: n + qp.m_eq]
            mu_S = sol[n + qp.m_eq:]
            if np.any(qp.A_in @ x - qp.b_in > feas_tol):
                continue
            if np.any(np.abs(qp.A_eq @ x - qp.b_eq) > feas_tol):
                continue
            if np.any(mu_S < -1e-9 * (1.0 + np.abs(mu_S).max(initial=0.0))):
                continue
            obj = qp.objective(x)
            if best is None or obj < best[0] - 1e-14 * (1.0 + abs(obj)):
                mu = np.zeros(qp.m_in)
                mu[S] = mu_S
                best = (obj, x, lam, mu)
    if best is None:
        nan = np.full(n, np.nan)
        return QpSolution(nan, np.zeros(qp.m_eq), np.zeros(qp.m_in), INFEASIBLE, np.inf, 0)
    _, x, lam, mu = best
    lam = lam / s_eq
    mu = mu / s_in
    res = kkt_residual(original, x, lam, np.maximum(mu, 0.0))
    return QpSolution(x, lam, mu, OPTIMAL if res <= tol else INACCURATE, res, 0)
