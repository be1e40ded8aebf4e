"""Ensemble Kalman inversion.

The inverse problem y = G(u) + eta is lifted to v = (u, w) with w = G(u),
observed through H = [0, I].  With that structure the EnKF analysis reduces
to

    u <- u + C_uw (C_ww + Gamma)^-1 (y_n - G(u))
    w  = G(u) + C_ww (C_ww + Gamma)^-1 (y_n - G(u))

where the blocks are empirical (1/N) covariances of (u, G(u)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .enkf import FilterModel, ForwardModelError, NoiseStreams, perturb_observations
from .ensemble import Ensemble, EnsembleStats


@dataclass(frozen=True, eq=False)
class InverseProblem:
    """Forward map, data and noise model.

    ``forward_batch`` (optional) evaluates all members at once and must raise
    ``ForwardModelError`` with the offending member index on failure.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    y: np.ndarray
    obs_cov: np.ndarray | float
    perturb: int = 1
    forward_batch: Callable[[np.ndarray], np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "y", y)
        # reuse FilterModel's covariance validation for the observation block
        self._cache["obs"] = FilterModel(None, np.eye(y.size), 0.0, self.obs_cov, self.perturb)
        object.__setattr__(self, "obs_cov", self._cache["obs"].obs_cov)

    @property
    def k(self) -> int:
        return self.y.size

    @property
    def obs_model(self) -> FilterModel:
        return self._cache["obs"]

    def lifted_model(self, p: int) -> FilterModel:
        """The lifted system v = (u, w): Psi(v) = (u, G(u)), H = [0, I], Sigma = 0."""
        key = ("lifted", p)
        if key not in self._cache:
            H = np.hstack([np.zeros((self.k, p)), np.eye(self.k)])

            def psi(v, j, _p=p):
                u = v[:_p]
                return np.concatenate([u, self.forward(u)])

            self._cache[key] = FilterModel(psi, H, 0.0, self.obs_cov, self.perturb)
        return self._cache[key]


@dataclass(frozen=True)
class BlockStats:
    u_mean: np.ndarray
    w_mean: np.ndarray
    u_anom: np.ndarray
    w_anom: np.ndarray
    C_uu: np.ndarray
    C_uw: np.ndarray
    C_ww: np.ndarray
    divisor: float

    @property
    def N(self) -> int:
        return self.u_anom.shape[0]

    def lifted(self) -> EnsembleStats:
        """The same statistics as an EnsembleStats over v = (u, w)."""
        E = np.hstack([self.u_anom, self.w_anom])
        C = np.block([[self.C_uu, self.C_uw], [self.C_uw.T, self.C_ww]])
        return EnsembleStats(np.concatenate([self.u_mean, self.w_mean]),
                             0.5 * (C + C.T), E, self.divisor)


def _check_evaluations(W: np.ndarray, iteration: int | None = None):
    bad = ~np.all(np.isfinite(W), axis=1)
    if bad.any():
        raise ForwardModelError("forward map returned non-finite values",
                                step=iteration, member=int(np.nonzero(bad)[0][0]))


def block_stats(ensemble: Ensemble, evaluations) -> BlockStats:
    """Empirical means and covariance blocks of (u, G(u)), divisor N."""
    U = ensemble.members
    W = np.atleast_2d(np.asarray(evaluations, dtype=float))
    if W.shape[0] != U.shape[0]:
        raise ValueError(f"{W.shape[0]} evaluations for {U.shape[0]} members")
    _check_evaluations(W)
    N = U.shape[0]
    u_mean = U.sum(axis=0) / N
    w_mean = W.sum(axis=0) / N
    Eu = U - u_mean
    Ew = W - w_mean
    C_uu = Eu.T @ Eu / N
    C_ww = Ew.T @ Ew / N
    C_uw = Eu.T @ Ew / N
    return BlockStats(u_mean, w_mean, Eu, Ew, 0.5 * (C_uu + C_uu.T), C_uw,
                      0.5 * (C_ww + C_ww.T), float(N))


def evaluate(problem: InverseProblem, ensemble: Ensemble, iteration: int | None = None) -> np.ndarray:
    """Forward evaluations G(u_n), shape (N, k)."""
    if problem.forward_batch is not None:
        try:
            W = np.asarray(problem.forward_batch(ensemble.members), dtype=float)
        except ForwardModelError as exc:
            raise ForwardModelError(exc.detail, step=iteration, member=exc.member) from exc
    else:
        W = np.empty((ensemble.N, problem.k))
        for n, u in enumerate(ensemble.members):
            try:
                W[n] = problem.forward(u.copy())
            except ForwardModelError as exc:
                raise ForwardModelError(exc.detail, step=iteration, member=n) from exc
    if W.shape != (ensemble.N, problem.k):
        raise ForwardModelError(f"forward map returned shape {W.shape}", step=iteration)
    _check_evaluations(W, iteration)
    return W


def _member_obs(problem, y, N, streams, step):
    if y is None:
        y = problem.y
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        return y
    return perturb_observations(y, problem.obs_model, N, streams, step, purpose="eki-obs")


def _gain_solve(blocks: BlockStats, problem: InverseProblem, R: np.ndarray) -> np.ndarray:
    """(C_ww + Gamma)^-1 applied to the rows of R."""
    cho = cho_factor(blocks.C_ww + problem.obs_cov, lower=True)
    return cho_solve(cho, R.T).T


def eki_update(ensemble: Ensemble, evaluations, problem: InverseProblem, y=None,
               streams: NoiseStreams | None = None, step: int = 0) -> Ensemble:
    """u_n + C_uw (C_ww + Gamma)^-1 (y_n - G(u_n)) for every member."""
    W = np.asarray(evaluations, dtype=float)
    blocks = block_stats(ensemble, W)
    Y = _member_obs(problem, y, ensemble.N, streams, step)
    return Ensemble(ensemble.members + _gain_solve(blocks, problem, Y - W) @ blocks.C_uw.T)


def w_update(ensemble: Ensemble, evaluations, problem: InverseProblem, y=None,
             streams: NoiseStreams | None = None, step: int = 0) -> np.ndarray:
    """G(u_n) + C_ww (C_ww + Gamma)^-1 (y_n - G(u_n)), shape (N, k)."""
    W = np.asarray(evaluations, dtype=float)
    blocks = block_stats(ensemble, W)
    Y = _member_obs(problem, y, ensemble.N, streams, step)
    return W + _gain_solve(blocks, problem, Y - W) @ blocks.C_ww.T


@dataclass
class EkiHistory:
    """``ensembles[j]`` is u_j; ``evaluations[j]`` is G(u_j) for j < J;
    ``data_updates[j]`` the w-part of the update and ``observations[j]`` the
    per-member data used at iteration j."""

    seed: int
    ensembles: list[Ensemble]
    evaluations: list[np.ndarray] = field(default_factory=list)
    data_updates: list[np.ndarray] = field(default_factory=list)
    observations: list[np.ndarray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.ensembles) - 1

    @property
    def final(self) -> Ensemble:
        return self.ensembles[-1]

    def stacked(self) -> np.ndarray:
        """(J+1, N, p) array of parameter ensembles."""
        return np.stack([e.members for e in self.ensembles])


def eki_run(problem: InverseProblem, initial: Ensemble, iterations: int, seed: int = 0) -> EkiHistory:
    """J rounds of evaluate-then-update."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    streams = NoiseStreams(seed)
    hist = EkiHistory(seed, [initial])
    ens = initial
    for j in range(iterations):
        W = evaluate(problem, ens, j)
        Y = _member_obs(problem, None, ens.N, streams, j)
        new_w = w_update(ens, W, problem, Y)
        ens = eki_update(ens, W, problem, Y)
        hist.evaluations.append(W)
        hist.data_updates.append(new_w)
        hist.observations.append(Y)
        hist.ensembles.append(ens)
    return hist


def data_misfit(problem: InverseProblem, w) -> float:
    """|y - w|_Gamma."""
    r = problem.y - np.asarray(w, dtype=float)
    return float(np.sqrt(r @ problem.obs_model.gamma_solve(r)))


def span_residual(initial: Ensemble, u) -> float:
    """Distance from u to span{u_0^(1), ..., u_0^(N)}."""
    Q, R = np.linalg.qr(initial.members.T)
    diag = np.abs(np.diag(R))
    Q = Q[:, diag > 1e-12 * max(diag.max(initial=0.0), 1e-300)]
    u = np.asarray(u, dtype=float)
    return float(np.linalg.norm(u - Q @ (Q.T @ u)))
