"""Constrained ensemble Kalman inversion.

Constraints may act on the parameters u and on the predicted data w:

    F_u u = f_u,  G_u u <= g_u,  F_w w = f_w,  G_w w <= g_w.

They are assembled block-diagonally on the lifted vector v = (u, w) and the
constrained EnKF machinery is applied to the lifted system with H = [0, I].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import qp as qpmod
from .constrained import (InfeasibleConstraintsError, LinearConstraints, ViolationReport,
                          constrained_range_coefficients, constrained_update_original, violates)
from .eki import (EkiHistory, InverseProblem, _member_obs, block_stats, evaluate, eki_update,
                  w_update)
from .enkf import NoiseStreams
from .ensemble import Ensemble


def _block(A, b, cols, name):
    if A is None or np.size(A) == 0:
        return np.zeros((0, cols)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[1] != cols:
        raise ValueError(f"{name} has {A.shape[1]} columns, expected {cols}")
    if b.shape != (A.shape[0],):
        raise ValueError(f"{name} has {A.shape[0]} rows but its right-hand side has {b.size}")
    return A, b


@dataclass(frozen=True, eq=False)
class LiftedConstraints:
    """Parameter-space and data-space constraint blocks.

    ``labels`` (optional) names the rows in assembled order: F_u, F_w, G_u, G_w.
    """

    p: int
    k: int
    F_u: np.ndarray | None = None
    f_u: np.ndarray | None = None
    G_u: np.ndarray | None = None
    g_u: np.ndarray | None = None
    F_w: np.ndarray | None = None
    f_w: np.ndarray | None = None
    G_w: np.ndarray | None = None
    g_w: np.ndarray | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        for A, b, cols, name in (("F_u", "f_u", self.p, "F_u"), ("G_u", "g_u", self.p, "G_u"),
                                 ("F_w", "f_w", self.k, "F_w"), ("G_w", "g_w", self.k, "G_w")):
            M, r = _block(getattr(self, A), getattr(self, b), cols, name)
            object.__setattr__(self, A, M)
            object.__setattr__(self, b, r)

    def _labels(self):
        if self.labels is not None:
            return tuple(self.labels)
        return tuple([f"Fu{i}" for i in range(self.F_u.shape[0])]
                     + [f"Fw{i}" for i in range(self.F_w.shape[0])]
                     + [f"Gu{i}" for i in range(self.G_u.shape[0])]
                     + [f"Gw{i}" for i in range(self.G_w.shape[0])])

    def parameter_constraints(self) -> LinearConstraints:
        """The u-blocks alone, as constraints on p-vectors."""
        labels = self._labels()
        me = self.F_u.shape[0] + self.F_w.shape[0]
        keep = list(labels[: self.F_u.shape[0]]) + list(labels[me: me + self.G_u.shape[0]])
        return LinearConstraints(self.p, self.F_u, self.f_u, self.G_u, self.g_u, tuple(keep))


def assemble_lifted(lc: LiftedConstraints) -> LinearConstraints:
    """F = diag(F_u, F_w), G = diag(G_u, G_w), f = (f_u, f_w), g = (g_u, g_w)."""
    p, k = lc.p, lc.k
    F = np.block([[lc.F_u, np.zeros((lc.F_u.shape[0], k))],
                  [np.zeros((lc.F_w.shape[0], p)), lc.F_w]])
    G = np.block([[lc.G_u, np.zeros((lc.G_u.shape[0], k))],
                  [np.zeros((lc.G_w.shape[0], p)), lc.G_w]])
    f = np.concatenate([lc.f_u, lc.f_w])
    g = np.concatenate([lc.g_u, lc.g_w])
    labels = lc._labels()
    if len(labels) != F.shape[0] + G.shape[0]:
        raise ValueError(f"{len(labels)} labels for {F.shape[0] + G.shape[0]} constraint rows")
    return LinearConstraints(p + k, F, f, G, g, labels)


def _as_lifted(constraints, p, k) -> LinearConstraints:
    if isinstance(constraints, LiftedConstraints):
        if (constraints.p, constraints.k) != (p, k):
            raise ValueError(f"constraints are for (p, k) = ({constraints.p}, {constraints.k}), "
                             f"problem has ({p}, {k})")
        return assemble_lifted(constraints)
    if constraints.d != p + k:
        raise ValueError(f"lifted constraints must have dimension {p + k}, got {constraints.d}")
    return constraints


def constrained_eki_update_original(u, evaluations_n, blocks, problem: InverseProblem, y_n,
                                    constraints, member: int | None = None,
                                    tol: float = qpmod.DEFAULT_TOL):
    """Lifted constrained update over the eigenbasis of the lifted covariance.

    Returns (u, w).
    """
    u = np.asarray(u, dtype=float)
    p = u.size
    lifted = _as_lifted(constraints, p, problem.k)
    v_hat = np.concatenate([u, np.asarray(evaluations_n, dtype=float)])
    v = constrained_update_original(v_hat, blocks.lifted(), problem.lifted_model(p), y_n,
                                    lifted, member=member, tol=tol)
    return v[:p], v[p:]


def constrained_eki_update_range(u, evaluations_n, blocks, problem: InverseProblem, y_n,
                                 constraints, member: int | None = None,
                                 tol: float = qpmod.DEFAULT_TOL):
    """Constrained minimizer of 1/2|y_n - G(u) - B_w b|^2_Gamma + 1/(2N)|b|^2;
    returns (u + B_u b, G(u) + B_w b)."""
    u = np.asarray(u, dtype=float)
    p = u.size
    lifted = _as_lifted(constraints, p, problem.k)
    stats = blocks.lifted()
    v_hat = np.concatenate([u, np.asarray(evaluations_n, dtype=float)])
    b = constrained_range_coefficients(v_hat, stats, problem.lifted_model(p), y_n, lifted,
                                       member=member, tol=tol)
    B_u = blocks.u_anom.T / blocks.divisor
    B_w = blocks.w_anom.T / blocks.divisor
    return u + B_u @ b, v_hat[p:] + B_w @ b


CONSTRAINED_EKI = {"original": constrained_eki_update_original,
                   "range": constrained_eki_update_range}


def _solver(variant: str):
    key = variant.replace("constrained-", "")
    if key not in CONSTRAINED_EKI:
        raise ValueError(f"unknown constrained variant {variant!r}")
    return CONSTRAINED_EKI[key]


class RejectionSamplingError(RuntimeError):
    pass


def rejection_sample_initial(sampler: Callable[[np.random.Generator], np.ndarray], constraints,
                             extra_predicate: Callable[[np.ndarray], bool] | None, N: int,
                             max_draws: int, rng: np.random.Generator) -> Ensemble:
    """Draw from ``sampler`` until N draws satisfy the parameter constraints and
    ``extra_predicate``."""
    if max_draws < N:
        raise ValueError("max_draws must be >= N")
    if isinstance(constraints, LiftedConstraints):
        constraints = constraints.parameter_constraints()
    kept = []
    draws = 0
    while len(kept) < N and draws < max_draws:
        u = np.asarray(sampler(rng), dtype=float)
        draws += 1
        if constraints is not None and violates(u, constraints):
            continue
        if extra_predicate is not None and not extra_predicate(u):
            continue
        kept.append(u)
    if len(kept) < N:
        raise RejectionSamplingError(
            f"accepted {len(kept)} of {draws} draws (rate {len(kept) / draws:.3g}), needed {N}")
    return Ensemble(np.array(kept))


def constrained_eki_step(ens: Ensemble, W: np.ndarray, problem: InverseProblem, Y: np.ndarray,
                         lifted: LinearConstraints, variant: str = "range",
                         iteration: int | None = None):
    """One unconstrained update followed by re-solves of the violating members.

    Returns (u-ensemble, w array, violated rows per member).
    """
    solve = _solver(variant)
    blocks = block_stats(ens, W)
    U = eki_update(ens, W, problem, Y).members.copy()
    Wn = w_update(ens, W, problem, Y)
    violating = []
    for n in range(ens.N):
        rows = violates(np.concatenate([U[n], Wn[n]]), lifted)
        violating.append(rows)
        if rows:
            try:
                U[n], Wn[n] = solve(ens.members[n], W[n], blocks, problem, Y[n], lifted, member=n)
            except InfeasibleConstraintsError as exc:
                raise InfeasibleConstraintsError(exc.detail, member=n, step=iteration) from exc
    return Ensemble(U), Wn, violating


def constrained_eki_run(problem: InverseProblem, constraints, initial: Ensemble, iterations: int,
                        variant: str = "range", seed: int = 0) -> tuple[EkiHistory, ViolationReport]:
    """EKI with per-member constrained re-solves; the report measures the
    unconstrained update of each iteration."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    _solver(variant)
    lifted = _as_lifted(constraints, initial.d, problem.k)
    streams = NoiseStreams(seed)
    hist = EkiHistory(seed, [initial])
    report = ViolationReport(lifted.labels)
    ens = initial
    for j in range(iterations):
        W = evaluate(problem, ens, j)
        Y = _member_obs(problem, None, ens.N, streams, j)
        ens, Wn, violating = constrained_eki_step(ens, W, problem, Y, lifted, variant, j)
        report.record(violating, ens.N)
        hist.evaluations.append(W)
        hist.data_updates.append(Wn)
        hist.observations.append(Y)
        hist.ensembles.append(ens)
    return hist, report


def lifted_members(u_ensemble: Ensemble, w: Sequence) -> np.ndarray:
    """Stack (u, w) member-wise, shape (N, p + k)."""
    return np.hstack([u_ensemble.members, np.asarray(w, dtype=float)])
