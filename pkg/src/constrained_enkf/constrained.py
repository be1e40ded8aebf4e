"""Constraint-aware analysis for the EnKF.

A member whose unconstrained update violates

    F v = f,   G v <= g

is re-solved as a QP.  Two routes give the same answer:

* original variables: v = v_hat + U z over an orthonormal eigenbasis U of
  range(C), with quadratic weight diag(1/lambda) on z;
* range of covariance: v = v_hat + B b over b in R^N, minimizing J(b) with
  the constraints rewritten as F B b = f - F v_hat, G B b <= g - G v_hat.

Members that already satisfy the constraints keep their Kalman update.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qp as qpmod
from .enkf import (FilterModel, FilterRun, NoiseStreams, UPDATES, _range_objective,
                   perturb_observations, predict)
from .ensemble import Ensemble, EnsembleStats

log = logging.getLogger(__name__)


class InfeasibleConstraintsError(ValueError):
    """The (restricted) feasible set is empty."""

    def __init__(self, message: str, member: int | None = None, step: int | None = None):
        where = []
        if step is not None:
            where.append(f"step {step}")
        if member is not None:
            where.append(f"member {member}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.detail = message
        self.member = member
        self.step = step


class QpFailure(RuntimeError):
    pass


def _block(A, b, d, name):
    if A is None or np.size(A) == 0:
        return np.zeros((0, d)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[1] != d:
        raise ValueError(f"{name} has {A.shape[1]} columns but the state dimension is {d}")
    if b.shape != (A.shape[0],):
        raise ValueError(f"{name} has {A.shape[0]} rows but its right-hand side has {b.size}")
    return A, b


@dataclass(frozen=True, eq=False)
class LinearConstraints:
    """Constraints F v = f and G v <= g on d-vectors.

    Construction certifies that the feasible set is nonempty.  Rows are
    numbered equality rows first, then inequality rows; ``labels`` names them
    in that order.
    """

    d: int
    F: np.ndarray | None = None
    f: np.ndarray | None = None
    G: np.ndarray | None = None
    g: np.ndarray | None = None
    labels: tuple[str, ...] | None = None
    check_feasible: bool = True

    def __post_init__(self):
        F, f = _block(self.F, self.f, self.d, "F")
        G, g = _block(self.G, self.g, self.d, "G")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        m = F.shape[0] + G.shape[0]
        if self.labels is None:
            labels = tuple([f"eq{i}" for i in range(F.shape[0])]
                           + [f"in{i}" for i in range(G.shape[0])])
            object.__setattr__(self, "labels", labels)
        elif len(self.labels) != m:
            raise ValueError(f"{len(self.labels)} labels for {m} constraint rows")
        if self.check_feasible and m:
            probe = qpmod.QuadraticProgram(np.zeros((self.d, self.d)), np.zeros(self.d), F, f, G, g)
            if qpmod._phase_one(probe, None) is None:
                raise InfeasibleConstraintsError("constraint set {Fv = f, Gv <= g} is empty")

    @classmethod
    def bounds(cls, lower, upper, names: Sequence[str] | None = None) -> "LinearConstraints":
        """Box constraints lower <= v <= upper; lower-bound rows come first.

        Infinite entries are dropped.
        """
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        d = lower.size
        names = list(names) if names is not None else [f"x{i}" for i in range(d)]
        rows, rhs, labels = [], [], []
        for i in range(d):
            if np.isfinite(lower[i]):
                e = np.zeros(d)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-lower[i])
                labels.append(f"{names[i]}>={lower[i]:g}")
        for i in range(d):
            if np.isfinite(upper[i]):
                e = np.zeros(d)
                e[i] = 1.0
                rows.append(e)
                rhs.append(upper[i])
                labels.append(f"{names[i]}<={upper[i]:g}")
        G = np.array(rows) if rows else None
        return cls(d, G=G, g=np.array(rhs), labels=tuple(labels))

    @property
    def m_eq(self) -> int:
        return self.F.shape[0]

    @property
    def m_in(self) -> int:
        return self.G.shape[0]

    @property
    def rows(self) -> int:
        return self.m_eq + self.m_in

    def default_tol(self) -> np.ndarray:
        return 1e-9 * (1.0 + np.abs(np.concatenate([self.f, self.g])))

    def max_violation(self, v) -> float:
        v = np.asarray(v, dtype=float)
        eq = np.abs(self.F @ v - self.f).max(initial=0.0)
        ineq = (self.G @ v - self.g).max(initial=0.0)
        return float(max(eq, ineq, 0.0))


def violates(v, constraints: LinearConstraints, tol=None) -> list[int]:
    """Indices of violated rows (equality rows first).

    An inequality row i is violated when (Gv)_i > g_i + tol, an equality row
    when |(Fv)_i - f_i| > tol.  ``tol`` defaults to 1e-9 (1 + |rhs_i|) per row.
    """
    v = np.asarray(v, dtype=float)
    tol = constraints.default_tol() if tol is None else np.broadcast_to(
        np.asarray(tol, dtype=float), (constraints.rows,))
    if np.any(tol < 0):
        raise ValueError("tol must be nonnegative")
    eq = np.abs(constraints.F @ v - constraints.f) > tol[: constraints.m_eq]
    ineq = constraints.G @ v - constraints.g > tol[constraints.m_eq:]
    return np.nonzero(np.concatenate([eq, ineq]))[0].tolist()


@dataclass
class ViolationReport:
    """Per-step fraction of members violating each constraint row, measured
    on the unconstrained update (before any re-solve)."""

    labels: tuple[str, ...]
    fractions: list[np.ndarray] = field(default_factory=list)
    resolved: list[int] = field(default_factory=list)

    def record(self, violating: Sequence[Sequence[int]], N: int):
        counts = np.zeros(len(self.labels))
        for rows in violating:
            counts[list(rows)] += 1
        self.fractions.append(counts / N)
        self.resolved.append(sum(1 for rows in violating if rows))

    @property
    def matrix(self) -> np.ndarray:
        """(constraint rows, steps) array of violation fractions."""
        if not self.fractions:
            return np.zeros((len(self.labels), 0))
        return np.column_stack(self.fractions)

    def to_csv(self, path):
        M = self.matrix
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["constraint"] + [f"step_{j + 1}" for j in range(M.shape[1])])
            for label, row in zip(self.labels, M):
                w.writerow([label] + [f"{x:.17g}" for x in row])


def _check_solution(sol: qpmod.QpSolution, member, step=None):
    if sol.status == qpmod.INFEASIBLE:
        raise InfeasibleConstraintsError(
            "constraint set restricted to v_hat + range(C) is empty", member=member, step=step)
    if sol.status == qpmod.INACCURATE:
        log.warning("member %s: QP KKT residual %.3e above tolerance", member, sol.kkt_residual)
        return
    if sol.status != qpmod.OPTIMAL:
        raise QpFailure(f"member {member}: QP solver returned {sol.status}")


def _effective_rows(v_hat, stats: EnsembleStats, constraints: LinearConstraints, member=None):
    """Split the rows into those that vary over v_hat + range(C) and flat ones.

    A row is flat when the ensemble spread of its value, sqrt(a' C a), is within
    its violation tolerance; such a row is checked at v_hat instead, and
    violating it means the restricted feasible set is empty.  Returns
    (F, f, G, g, flat) with ``flat`` a LinearConstraints of the dropped rows.
    """
    tol = constraints.default_tol()
    C = stats.covariance
    A = np.vstack([constraints.F, constraints.G])
    spread = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", A, C, A), 0.0))
    keep = spread > tol
    keep_eq, keep_in = keep[: constraints.m_eq], keep[constraints.m_eq:]
    resid = np.concatenate([np.abs(constraints.F @ v_hat - constraints.f),
                            constraints.G @ v_hat - constraints.g])
    if np.any(~keep & (resid > tol)):
        raise InfeasibleConstraintsError(
            "a constraint that is constant over v_hat + range(C) is violated", member=member)
    flat = LinearConstraints(constraints.d, constraints.F[~keep_eq], constraints.f[~keep_eq],
                             constraints.G[~keep_in], constraints.g[~keep_in],
                             check_feasible=False)
    return (constraints.F[keep_eq], constraints.f[keep_eq],
            constraints.G[keep_in], constraints.g[keep_in], flat)


def _solve_restricted(build, v_hat, stats, constraints, x0, member, tol, to_state):
    """Solve with flat rows dropped; fall back to all rows if the answer breaks one."""
    F, f, G, g, flat = _effective_rows(v_hat, stats, constraints, member)
    sol = qpmod.solve(build(F, f, G, g), tol=tol, x0=x0)
    _check_solution(sol, member)
    if flat.rows and violates(to_state(sol.x), flat):
        sol = qpmod.solve(build(constraints.F, constraints.f, constraints.G, constraints.g),
                          tol=tol, x0=x0)
        _check_solution(sol, member)
    return sol.x


def constrained_update_original(v_hat, stats: EnsembleStats, model: FilterModel, y_n,
                                constraints: LinearConstraints, member: int | None = None,
                                tol: float = qpmod.DEFAULT_TOL) -> np.ndarray:
    """Constrained minimizer of the filter objective, posed over range(C).

    v = v_hat + U z, where U, lambda come from the symmetric eigendecomposition
    of C; the prior term becomes 1/2 z' diag(1/lambda) z.
    """
    v_hat = np.asarray(v_hat, dtype=float)
    U, lam = stats.range_basis()
    r = U.shape[1]
    if r == 0:
        if violates(v_hat, constraints):
            raise InfeasibleConstraintsError("covariance is zero and v_hat is infeasible",
                                             member=member)
        return v_hat.copy()
    HU = model.H @ U
    GiHU = model.gamma_solve(HU)
    resid = np.asarray(y_n, dtype=float) - model.H @ v_hat
    P = HU.T @ GiHU + np.diag(1.0 / lam)
    q = -(GiHU.T @ resid)
    P = 0.5 * (P + P.T)

    def build(F, f, G, g):
        return qpmod.QuadraticProgram(P, q, F @ U, f - F @ v_hat, G @ U, g - G @ v_hat)

    z = _solve_restricted(build, v_hat, stats, constraints, np.zeros(r), member, tol,
                          lambda z: v_hat + U @ z)
    return v_hat + U @ z


def constrained_range_coefficients(v_hat, stats: EnsembleStats, model: FilterModel, y_n,
                                   constraints: LinearConstraints, member: int | None = None,
                                   tol: float = qpmod.DEFAULT_TOL) -> np.ndarray:
    """Constrained minimizer b of J(b)."""
    v_hat = np.asarray(v_hat, dtype=float)
    P, q = _range_objective(v_hat, stats, model, y_n)
    B = stats.B

    def build(F, f, G, g):
        return qpmod.QuadraticProgram(P, q, F @ B, f - F @ v_hat, G @ B, g - G @ v_hat)

    return _solve_restricted(build, v_hat, stats, constraints, np.zeros(stats.N), member, tol,
                             lambda b: v_hat + B @ b)


def constrained_update_range(v_hat, stats: EnsembleStats, model: FilterModel, y_n,
                             constraints: LinearConstraints, member: int | None = None,
                             tol: float = qpmod.DEFAULT_TOL) -> np.ndarray:
    """Constrained update in b-space, returned as v_hat + B b."""
    b = constrained_range_coefficients(v_hat, stats, model, y_n, constraints, member, tol)
    return np.asarray(v_hat, dtype=float) + stats.B @ b


def regularized_constrained_update(v_hat, stats: EnsembleStats, model: FilterModel, y_n,
                                   constraints: LinearConstraints, eps: float) -> np.ndarray:
    """Constrained minimizer with C replaced by C + eps I (full state space)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v_hat = np.asarray(v_hat, dtype=float)
    lam, vec = np.linalg.eigh(stats.covariance)
    Ceps_inv = (vec / (np.clip(lam, 0.0, None) + eps)) @ vec.T
    H = model.H
    P = H.T @ model.gamma_solve(H) + Ceps_inv
    resid = np.asarray(y_n, dtype=float) - H @ v_hat
    q = -(H.T @ model.gamma_solve(resid))
    prob = qpmod.QuadraticProgram(
        0.5 * (P + P.T), q,
        constraints.F, constraints.f - constraints.F @ v_hat,
        constraints.G, constraints.g - constraints.G @ v_hat)
    sol = qpmod.solve(prob, x0=np.zeros(v_hat.size))
    _check_solution(sol, None)
    return v_hat + sol.x


CONSTRAINED = {"original": ("gain", constrained_update_original),
               "range": ("range", constrained_update_range)}


def _variant(name: str):
    key = name.replace("constrained-", "")
    if key not in CONSTRAINED:
        raise ValueError(f"unknown constrained variant {name!r}")
    return CONSTRAINED[key]


def constrain_ensemble(predicted: Ensemble, stats: EnsembleStats, model: FilterModel,
                       Y: np.ndarray, updated: Ensemble, constraints: LinearConstraints,
                       variant: str = "range", step: int | None = None):
    """Re-solve the violating members of an unconstrained update.

    Returns the new ensemble and, per member, the violated row indices of the
    unconstrained update.
    """
    _, solver = _variant(variant)
    out = updated.members.copy()
    violating = []
    for n, v in enumerate(updated.members):
        rows = violates(v, constraints)
        violating.append(rows)
        if rows:
            try:
                out[n] = solver(predicted.members[n], stats, model, Y[n], constraints, member=n)
            except InfeasibleConstraintsError as exc:
                raise InfeasibleConstraintsError(exc.detail, member=n, step=step) from exc
    return Ensemble(out), violating


def constrained_filter_run(model: FilterModel, initial: Ensemble, data: Sequence,
                           constraints: LinearConstraints, variant: str = "range",
                           seed: int = 0) -> tuple[FilterRun, ViolationReport]:
    """Constrained EnKF: unconstrained update, then re-solve violators only.

    ``variant="original"`` uses the gain update and the eigenbasis QP;
    ``variant="range"`` uses the b-space update and the b-space QP.
    """
    unconstrained, _ = _variant(variant)
    update = UPDATES[unconstrained]
    streams = NoiseStreams(seed)
    run = FilterRun(seed=seed, ensembles=[initial])
    report = ViolationReport(constraints.labels)
    ens = initial
    for j, y in enumerate(data):
        pred, stats = predict(ens, model, j, streams)
        Y = perturb_observations(y, model, pred.N, streams, j)
        ens = update(pred, stats, model, Y)
        ens, violating = constrain_ensemble(pred, stats, model, Y, ens, constraints, variant, j)
        report.record(violating, pred.N)
        run.predicted.append(pred)
        run.observations.append(Y)
        run.ensembles.append(ens)
    return run, report


def violation_report(run: FilterRun, constraints: LinearConstraints) -> ViolationReport:
    """Violation fractions of the analysis ensembles of an (unconstrained) run."""
    report = ViolationReport(constraints.labels)
    for ens in run.ensembles[1:]:
        report.record([violates(v, constraints) for v in ens.members], ens.N)
    return report
