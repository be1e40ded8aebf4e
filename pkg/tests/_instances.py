"""Random problem instances shared by the unit and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from constrained_enkf.constrained import LinearConstraints
from constrained_enkf.constrained_eki import LiftedConstraints
from constrained_enkf.eki import InverseProblem, block_stats, evaluate
from constrained_enkf.enkf import FilterModel
from constrained_enkf.ensemble import Ensemble, EnsembleStats, compute_stats
from constrained_enkf.qp import QuadraticProgram


def random_spd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T + floor * np.eye(n)


def random_psd(rng, n, rank):
    A = rng.standard_normal((n, rank))
    return A @ A.T


@dataclass
class UpdateInstance:
    ensemble: Ensemble
    stats: EnsembleStats
    model: FilterModel
    Y: np.ndarray  # perturbed data, (N, k)

    @property
    def scale(self):
        return 1.0 + np.abs(self.ensemble.members).max() + np.abs(self.Y).max()


def update_instance(rng, d=None, k=None, N=None) -> UpdateInstance:
    d = d or int(rng.integers(1, 7))
    k = k or int(rng.integers(1, 4))
    N = N or int(rng.integers(2, 6))
    ens = Ensemble(rng.standard_normal((N, d)) * rng.uniform(0.5, 3.0) + rng.standard_normal(d))
    H = rng.standard_normal((k, d))
    model = FilterModel(None, H, 0.0, random_spd(rng, k, 0.2))
    Y = rng.standard_normal((N, k)) * 2.0
    return UpdateInstance(ens, compute_stats(ens), model, Y)


def feasible_constraints(rng, inst: UpdateInstance, member: int, m_eq=None, m_in=None,
                         active=True) -> LinearConstraints:
    """Constraints whose restriction to v_hat + range(C) is nonempty.

    Rows are built around an anchor point v_hat + B b0; with ``active`` the
    right-hand sides are tight enough that the unconstrained optimum usually
    violates some of them.
    """
    d, N = inst.ensemble.d, inst.ensemble.N
    rank = np.linalg.matrix_rank(inst.stats.covariance)
    m_eq = int(rng.integers(0, min(rank, 2) + 1)) if m_eq is None else m_eq
    m_in = int(rng.integers(1, 4)) if m_in is None else m_in
    v_hat = inst.ensemble.members[member]
    anchor = v_hat + inst.stats.B @ rng.standard_normal(N)
    F = rng.standard_normal((m_eq, d))
    G = rng.standard_normal((m_in, d))
    slack = rng.uniform(0.0, 0.5 if active else 50.0, m_in)
    return LinearConstraints(d, F, F @ anchor, G, G @ anchor + slack)


def random_lifted_instance(rng):
    """Nonlinear inverse problem with lifted constraints feasible near member n."""
    p, k, N = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
    M = rng.standard_normal((k, p))
    prob = InverseProblem(lambda u: np.sin(M @ u) + M @ u, rng.standard_normal(k) * 2,
                          random_spd(rng, k, 0.3), perturb=0)
    ens = Ensemble(rng.standard_normal((N, p)) * 1.5)
    W = evaluate(prob, ens)
    b = block_stats(ens, W)
    n = int(rng.integers(0, N))
    anchor = b.lifted().anomalies.T @ rng.standard_normal(N) / N
    anchor = anchor + np.concatenate([ens.members[n], W[n]])
    Gu = rng.standard_normal((int(rng.integers(1, 3)), p))
    Gw = rng.standard_normal((int(rng.integers(0, 2)), k))
    lc = LiftedConstraints(p, k, G_u=Gu, g_u=Gu @ anchor[:p] + rng.uniform(0, 0.3, Gu.shape[0]),
                           G_w=Gw, g_w=Gw @ anchor[p:] + rng.uniform(0, 0.3, Gw.shape[0]))
    return prob, ens, W, b, n, lc


def random_qp(rng, n=None, m_eq=None, m_in=None, strict=True) -> QuadraticProgram:
    """Feasible random QP: rows built around a random interior-ish point."""
    n = n or int(rng.integers(1, 7))
    m_eq = int(rng.integers(0, min(n, 3))) if m_eq is None else m_eq
    m_in = int(rng.integers(0, 5)) if m_in is None else m_in
    P = random_spd(rng, n, 0.1) if strict else random_psd(rng, n, n)
    q = rng.standard_normal(n) * 3
    x0 = rng.standard_normal(n)
    A = rng.standard_normal((m_eq, n))
    G = rng.standard_normal((m_in, n))
    h = G @ x0 + rng.uniform(0.0, 1.0, m_in)
    return QuadraticProgram(P, q, A, A @ x0, G, h)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def homogeneous_wave_error(nz, courant=0.5, c=250.0, depth=50.0, f=15.0):
    """Relative max error of the simulated surface displacement against
    2 d_0(t - H/c), the free-surface doubled arrival, before the reflection
    from the base returns at t = 3H/c."""
    from constrained_enkf.models import wave as wv

    dz = depth / nz
    dt = courant * dz / c
    T = 2.9 * depth / c
    grid = wv.WaveGrid(depth=depth, nz=nz, dt=dt, T=T, sample_every=1, peak_frequency=f)
    u = np.array([c, 0.0, 0.0, 0.0, 0.0, 1.0])
    surf = wv.simulate_surface(wv.WaveParams.from_vector(u), grid)
    exact = 2.0 * grid.input_function()(grid.times - depth / c)
    return float(np.abs(surf - exact).max() / np.abs(exact).max())
