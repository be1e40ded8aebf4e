"""Ensemble container and empirical statistics.

An ensemble is stored as an ``(N, d)`` array: one row per member.  The
statistics object carries the mean, the empirical covariance and the
anomalies ``e_m = v_m - mean``, from which the anomaly map

    B b = (1/N) sum_m b_m e_m

is built.  Every update in the package (gain, range-of-covariance and the
constrained variants) consumes these three quantities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# eigenvalues below this fraction of the largest one count as zero rank
RANK_RTOL = 1e-12


class EnsembleError(ValueError):
    """Invalid ensemble input (too few members, ragged, non-finite)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Ensemble:
    """N state vectors of common dimension d, stored row-wise."""

    members: np.ndarray

    def __post_init__(self):
        try:
            m = np.asarray(self.members, dtype=float)
        except ValueError as exc:
            raise EnsembleError(f"members must form a rectangular array: {exc}") from None
        if m.ndim != 2:
            raise EnsembleError(f"members must be a 2-D (N, d) array, got shape {m.shape}")
        if m.shape[0] < 2:
            raise EnsembleError(f"an ensemble needs N >= 2 members, got {m.shape[0]}")
        if m.shape[1] < 1:
            raise EnsembleError("state dimension must be >= 1")
        bad = ~np.isfinite(m)
        if bad.any():
            rows = sorted(set(np.nonzero(bad)[0].tolist()))
            raise EnsembleError(f"non-finite entries in member(s) {rows}")
        object.__setattr__(self, "members", _frozen(m))

    @property
    def N(self) -> int:
        return self.members.shape[0]

    @property
    def d(self) -> int:
        return self.members.shape[1]

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, n: int) -> np.ndarray:
        return self.members[n]


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    covariance: np.ndarray
    anomalies: np.ndarray
    divisor: float
    _eig: tuple = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.anomalies.shape[0]

    @property
    def d(self) -> int:
        return self.anomalies.shape[1]

    @property
    def B(self) -> np.ndarray:
        """Dense (d, N) matrix of the anomaly map."""
        return self.anomalies.T / self.divisor

    def range_basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal basis U (d, r) of range(C) and the matching eigenvalues.

        Uses a symmetric eigensolver; eigenvalues below ``RANK_RTOL * lam_max``
        are dropped.
        """
        if self._eig is None:
            lam, vec = np.linalg.eigh(self.covariance)
            lam_max = lam[-1] if lam.size else 0.0
            if lam_max <= 0.0:
                keep = np.zeros(lam.shape, dtype=bool)
            else:
                keep = lam > RANK_RTOL * lam_max
            object.__setattr__(self, "_eig", (_frozen(vec[:, keep]), _frozen(lam[keep])))
        return self._eig


def compute_stats(ensemble: Ensemble, ddof: int = 0) -> EnsembleStats:
    """Mean, covariance and anomalies of an ensemble.

    ``ddof=0`` gives the 1/N divisor; ``ddof=1`` the 1/(N-1) alternative.
    The covariance is assembled from the anomalies with a fixed summation
    order and symmetrized.
    """
    if not isinstance(ensemble, Ensemble):
        ensemble = Ensemble(ensemble)
    if ddof not in (0, 1):
        raise ValueError("ddof must be 0 or 1")
    X = ensemble.members
    N = X.shape[0]
    mean = X.sum(axis=0) / N
    E = X - mean
    divisor = float(N - ddof)
    C = (E.T @ E) / divisor
    C = 0.5 * (C + C.T)
    return EnsembleStats(_frozen(mean), _frozen(C), _frozen(E), divisor)


def anomaly_apply(stats: EnsembleStats, b) -> np.ndarray:
    """Return B b = (1/N) sum_m b_m e_m."""
    b = np.asarray(b, dtype=float)
    if b.shape != (stats.N,):
        raise ValueError(f"b must have length N={stats.N}, got shape {b.shape}")
    return stats.anomalies.T @ b / stats.divisor


def covariance_action_coefficients(stats: EnsembleStats, a) -> np.ndarray:
    """Coefficients b_m = <e_m, a>, so that ``anomaly_apply(stats, b) == C a``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (stats.d,):
        raise ValueError(f"a must have length d={stats.d}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("a must be finite")
    return stats.anomalies @ a


def range_residual(stats: EnsembleStats, x) -> float:
    """Norm of the component of x orthogonal to range(C)."""
    U, _ = stats.range_basis()
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - U @ (U.T @ x)))
