"""Unconstrained ensemble Kalman filter.

Two equivalent analysis steps are provided: the gain form

    v = (I - K H) v_hat + K y_n,      K = C H' (H C H' + Gamma)^-1

and the range-of-covariance form, which minimizes over b in R^N

    J(b) = 1/2 |y_n - H v_hat - H B b|^2_Gamma + 1/(2N) |b|^2

and sets v = v_hat + B b.  Both consume the same perturbed observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ensemble import Ensemble, EnsembleStats, compute_stats

_PURPOSES = {"process": 0, "obs": 1, "eki-obs": 2, "init": 3, "data": 4}


class ForwardModelError(RuntimeError):
    """A forward/transition model produced unusable output."""

    def __init__(self, message: str, step: int | None = None, member: int | None = None):
        where = []
        if step is not None:
            where.append(f"step {step}")
        if member is not None:
            where.append(f"member {member}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.detail = message
        self.step = step
        self.member = member


class NoiseStreams:
    """Independent Gaussian substreams keyed by (purpose, step, member).

    Every draw comes from ``SeedSequence(seed, spawn_key=(purpose_id, step,
    member))`` so a member's noise does not depend on the order in which
    members are processed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, purpose: str, step: int, member: int) -> np.random.Generator:
        key = (_PURPOSES[purpose], int(step), int(member))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def standard_normal(self, purpose: str, step: int, member: int, size: int) -> np.ndarray:
        return self.generator(purpose, step, member).standard_normal(size)


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor L with L L' = cov; eigen-based fallback for singular PSD input."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
        return vec * np.sqrt(np.clip(lam, 0.0, None))


def _as_cov(c, dim: int, name: str) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        c = float(c) * np.eye(dim)
    elif c.ndim == 1:
        c = np.diag(c)
    if c.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {c.shape}")
    if np.abs(c - c.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(c).max(initial=0.0)):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (c + c.T)


@dataclass(frozen=True, eq=False)
class FilterModel:
    """Dynamics and observation model.

    ``transition(v, j)`` maps a state at step j to step j+1; ``None`` means
    the model is only used for analysis steps.  Covariances may be given as
    scalars (times identity), diagonals or full matrices.
    """

    transition: Callable[[np.ndarray, int], np.ndarray] | None
    H: np.ndarray
    process_cov: np.ndarray | float = 0.0
    obs_cov: np.ndarray | float = 1.0
    perturb: int = 1
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        k, d = H.shape
        object.__setattr__(self, "H", H)
        Sigma = _as_cov(self.process_cov, d, "process_cov")
        Gamma = _as_cov(self.obs_cov, k, "obs_cov")
        if np.linalg.eigvalsh(Sigma).min() < -1e-12 * max(1.0, np.abs(Sigma).max()):
            raise ValueError("process_cov must be positive semidefinite")
        try:
            self._cache["gamma_cho"] = cho_factor(Gamma, lower=True)
        except np.linalg.LinAlgError:
            raise ValueError("obs_cov must be positive definite") from None
        if self.perturb not in (0, 1):
            raise ValueError("perturb flag must be 0 or 1")
        object.__setattr__(self, "process_cov", Sigma)
        object.__setattr__(self, "obs_cov", Gamma)
        self._cache["sigma_L"] = gaussian_factor(Sigma)
        self._cache["gamma_L"] = np.linalg.cholesky(Gamma)

    @classmethod
    def autonomous(cls, psi: Callable[[np.ndarray], np.ndarray], H, **kw) -> "FilterModel":
        return cls(lambda v, j: psi(v), H, **kw)

    @property
    def d(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return self.H.shape[0]

    def gamma_solve(self, r: np.ndarray) -> np.ndarray:
        """Gamma^-1 r."""
        return cho_solve(self._cache["gamma_cho"], r)


@dataclass
class FilterRun:
    """Everything a filter run produced.

    ``ensembles[0]`` is the initial ensemble and ``ensembles[j]`` the analysis
    at step j.  ``predicted[j-1]`` and ``observations[j-1]`` (shape (N, k))
    belong to step j.
    """

    seed: int
    ensembles: list[Ensemble]
    predicted: list[Ensemble] = field(default_factory=list)
    observations: list[np.ndarray] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.predicted)

    @property
    def final(self) -> Ensemble:
        return self.ensembles[-1]


def predict(ensemble: Ensemble, model: FilterModel, step: int,
            streams: NoiseStreams) -> tuple[Ensemble, EnsembleStats]:
    """Push every member through the transition and add process noise."""
    if model.transition is None:
        raise ValueError("model has no transition")
    L = model._cache["sigma_L"]
    noisy = np.any(L)
    out = np.empty_like(ensemble.members)
    for n, v in enumerate(ensemble.members):
        try:
            x = np.asarray(model.transition(v.copy(), step), dtype=float)
        except ForwardModelError as exc:
            raise ForwardModelError(exc.detail, step=step, member=n) from exc
        if x.shape != v.shape or not np.all(np.isfinite(x)):
            raise ForwardModelError("transition returned non-finite values", step=step, member=n)
        if noisy:
            x = x + L @ streams.standard_normal("process", step, n, v.size)
        out[n] = x
    pred = Ensemble(out)
    return pred, compute_stats(pred)


def perturb_observations(y, model: FilterModel, N: int, streams: NoiseStreams | None = None,
                         step: int = 0, purpose: str = "obs") -> np.ndarray:
    """Per-member data copies y + s * eta_n with eta_n ~ N(0, Gamma); shape (N, k)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    out = np.tile(y, (N, 1))
    if model.perturb == 0:
        return out
    if streams is None:
        raise ValueError("perturbed observations need noise streams")
    L = model._cache["gamma_L"]
    for n in range(N):
        out[n] += L @ streams.standard_normal(purpose, step, n, y.size)
    return out


def _member_obs(y, model, N, streams, step) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        if y.shape != (N, model.k):
            raise ValueError(f"perturbed observations must be ({N}, {model.k}), got {y.shape}")
        return y
    return perturb_observations(y, model, N, streams, step)


def kalman_gain(stats: EnsembleStats, model: FilterModel) -> np.ndarray:
    """K = C H' (H C H' + Gamma)^-1, via a Cholesky factorization of S."""
    H, C = model.H, stats.covariance
    CHt = C @ H.T
    S = H @ CHt + model.obs_cov
    try:
        cho = cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            f"innovation covariance not positive definite (cond={np.linalg.cond(S):.3e})") from None
    return cho_solve(cho, CHt.T).T


def kalman_gain_alternative(stats: EnsembleStats, model: FilterModel) -> np.ndarray:
    """K = C (H' Gamma^-1 H C + I)^-1 H' Gamma^-1, the state-space form."""
    H, C = model.H, stats.covariance
    HtGi = model.gamma_solve(H).T
    M = HtGi @ H @ C + np.eye(C.shape[0])
    return C @ np.linalg.solve(M, HtGi)


def analysis_update(predicted: Ensemble, stats: EnsembleStats, model: FilterModel, y,
                    streams: NoiseStreams | None = None, step: int = 0) -> Ensemble:
    """Gain-form analysis.  ``y`` is either the data (k,) or already perturbed (N, k)."""
    Y = _member_obs(y, model, predicted.N, streams, step)
    K = kalman_gain(stats, model)
    X = predicted.members
    return Ensemble(X + (Y - X @ model.H.T) @ K.T)


def range_coefficients(v_hat, stats: EnsembleStats, model: FilterModel, y_n) -> np.ndarray:
    """Unconstrained minimizer b of J(b) for one member."""
    P, q = _range_objective(v_hat, stats, model, y_n)
    return np.linalg.solve(P, -q)


def _range_objective(v_hat, stats, model, y_n):
    HB = model.H @ stats.B
    GiHB = model.gamma_solve(HB)
    P = HB.T @ GiHB + np.eye(stats.N) / stats.divisor
    resid = np.asarray(y_n, dtype=float) - model.H @ v_hat
    q = -(GiHB.T @ resid)
    return 0.5 * (P + P.T), q


def range_update(predicted: Ensemble, stats: EnsembleStats, model: FilterModel, y,
                 streams: NoiseStreams | None = None, step: int = 0) -> Ensemble:
    """Analysis by minimizing J(b) per member and setting v = v_hat + B b."""
    Y = _member_obs(y, model, predicted.N, streams, step)
    B = stats.B
    out = np.empty_like(predicted.members)
    for n, v_hat in enumerate(predicted.members):
        out[n] = v_hat + B @ range_coefficients(v_hat, stats, model, Y[n])
    return Ensemble(out)


def regularized_update(v_hat, stats: EnsembleStats, model: FilterModel, y_n,
                       eps: float) -> np.ndarray:
    """Minimizer of 1/2|y_n - Hv|^2_Gamma + 1/2|v - v_hat|^2_(C + eps I).

    Solved through its normal equations, written for the increment
    v - v_hat to avoid cancellation; (C + eps I)^-1 is formed from the
    eigendecomposition of C.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lam, vec = np.linalg.eigh(stats.covariance)
    lam = np.clip(lam, 0.0, None)
    Ceps_inv = (vec / (lam + eps)) @ vec.T
    H = model.H
    M = H.T @ model.gamma_solve(H) + Ceps_inv
    resid = np.asarray(y_n, dtype=float) - H @ v_hat
    delta = np.linalg.solve(0.5 * (M + M.T), H.T @ model.gamma_solve(resid))
    return np.asarray(v_hat, dtype=float) + delta


UPDATES = {"gain": analysis_update, "range": range_update}


def filter_run(model: FilterModel, initial: Ensemble, data: Sequence, seed: int,
               variant: str = "gain") -> FilterRun:
    """Alternate prediction and analysis over the data sequence (y_1, y_2, ...)."""
    if variant not in UPDATES:
        raise ValueError(f"unknown update variant {variant!r}")
    update = UPDATES[variant]
    streams = NoiseStreams(seed)
    run = FilterRun(seed=seed, ensembles=[initial])
    ens = initial
    for j, y in enumerate(data):
        pred, stats = predict(ens, model, j, streams)
        Y = perturb_observations(y, model, pred.N, streams, j)
        ens = update(pred, stats, model, Y)
        run.predicted.append(pred)
        run.observations.append(Y)
        run.ensembles.append(ens)
    return run
