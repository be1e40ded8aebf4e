"""1-D shear-wave propagation in a layered soil column.

Solves d_tt = (c(z)^2 d_z)_z on 0 < z < H with d(H, t) = d_0(t), d_z(0, t) = 0
and zero initial data.  Spatial discretization is flux-form second-order
finite differences (c^2 sampled at cell midpoints) with a ghost node
mirroring the free surface; time stepping is explicit central differences,
with the step subdivided for members too fast for the base grid.  The
observable is the surface acceleration obtained by second differences in
time on the base grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..enkf import ForwardModelError

PARAM_NAMES = ("c_s0", "k", "z_0", "n", "z_1", "alpha")
COURANT_LIMIT = 0.95
# velocities this far below zero (m/s) are solver round-off at a c >= 0 bound
NEGATIVE_VELOCITY_TOL = 1e-6


class CflError(ForwardModelError):
    """The grid time step is too large for the velocities of a member."""


@dataclass(frozen=True)
class WaveParams:
    c_s0: float
    k: float
    z_0: float
    n: float
    z_1: float
    alpha: float

    @classmethod
    def from_vector(cls, u) -> "WaveParams":
        u = np.asarray(u, dtype=float)
        if u.shape != (6,):
            raise ValueError(f"wave parameters need 6 entries, got shape {u.shape}")
        return cls(*map(float, u))

    def to_vector(self) -> np.ndarray:
        return np.array([self.c_s0, self.k, self.z_0, self.n, self.z_1, self.alpha])


@dataclass(frozen=True)
class WaveGrid:
    """Uniform grid: nodes z_i = i H / nz, i = 0..nz; time steps of dt up to T.

    Every ``sample_every``-th surface acceleration is reported.
    """

    depth: float = 50.0
    nz: int = 50
    dt: float = 1e-4
    T: float = 0.6
    sample_every: int = 20
    peak_frequency: float = 15.0
    delay: float | None = None
    amplitude: float = 1e-3
    max_refinement: int = 64

    def __post_init__(self):
        if not (self.depth > 0 and self.nz >= 2 and self.dt > 0 and self.T > 0):
            raise ValueError("grid needs depth > 0, nz >= 2, dt > 0, T > 0")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.peak_frequency <= 0:
            raise ValueError("peak_frequency must be positive")
        if self.max_refinement < 1:
            raise ValueError("max_refinement must be >= 1")

    @property
    def dz(self) -> float:
        return self.depth / self.nz

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.depth, self.nz + 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def sample_indices(self) -> np.ndarray:
        """Time indices of the reported accelerations (interior steps only)."""
        return np.arange(self.sample_every, self.steps, self.sample_every)

    @property
    def sample_times(self) -> np.ndarray:
        return self.sample_indices * self.dt

    @property
    def n_samples(self) -> int:
        return self.sample_indices.size

    @property
    def max_velocity(self) -> float:
        """Largest velocity allowed with the finest time-step subdivision."""
        return COURANT_LIMIT * self.max_refinement * self.dz / self.dt

    def input_function(self):
        return lambda t: ricker(t, self.peak_frequency, self.delay, self.amplitude)

    def input_motion(self) -> np.ndarray:
        return self.input_function()(self.times)


def ricker(t, peak_frequency: float, delay: float | None = None, amplitude: float = 1.0):
    """Ricker wavelet; the default delay 1.5/f makes it negligible at t = 0."""
    t = np.asarray(t, dtype=float)
    t0 = 1.5 / peak_frequency if delay is None else delay
    a = (np.pi * peak_frequency * (t - t0)) ** 2
    return amplitude * (1.0 - 2.0 * a) * np.exp(-a)


def _profile(z, c_s0, k, z_0, n, z_1, alpha):
    """Vectorized profile; parameters broadcast against z."""
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        mid = c_s0 * (1.0 + k * (z - z_0)) ** n
        top = alpha * c_s0 * (1.0 + k * (z_1 - z_0)) ** n
    return np.where(z <= z_0, c_s0, np.where(z <= z_1, mid, top))


def cs_profile(z, params: WaveParams, depth: float | None = None):
    """Piecewise shear velocity: constant above z_0, power law to z_1, scaled constant below."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or (depth is not None and np.any(z > depth)):
        raise ValueError(f"depth z must lie in [0, {depth}]")
    p = params
    c = _profile(z, p.c_s0, p.k, p.z_0, p.n, p.z_1, p.alpha)
    return float(c) if c.ndim == 0 else c


def velocity_at_transition(u) -> float:
    """c_s just below z_1 (the largest value of the profile for alpha >= 1)."""
    p = WaveParams.from_vector(u)
    with np.errstate(invalid="ignore", over="ignore"):
        return float(p.alpha * p.c_s0 * (1.0 + p.k * (p.z_1 - p.z_0)) ** p.n)


def _midpoint_c2(U: np.ndarray, grid: WaveGrid) -> np.ndarray:
    """c^2 at the cell midpoints for every member, shape (N, nz); validated."""
    zm = (grid.z[:-1] + grid.z[1:]) / 2.0
    cols = [U[:, i:i + 1] for i in range(6)]
    c = _profile(zm[None, :], *cols)
    bad = ~np.all(np.isfinite(c) & (c >= -NEGATIVE_VELOCITY_TOL), axis=1)
    if bad.any():
        m = int(np.nonzero(bad)[0][0])
        raise ForwardModelError(f"unphysical velocity profile for parameters {U[m].tolist()}",
                                member=m)
    c = np.maximum(c, 0.0)
    return c * c


def refinement(c2: np.ndarray, grid: WaveGrid, refinable: bool = True) -> np.ndarray:
    """Time-step subdivision per member that keeps the Courant number <= the limit."""
    courant = np.sqrt(c2.max(axis=1)) * grid.dt / grid.dz
    factor = np.maximum(np.ceil(courant / COURANT_LIMIT - 1e-12), 1).astype(int)
    limit = grid.max_refinement if refinable else 1
    over = factor > limit
    if over.any():
        m = int(np.nonzero(over)[0][0])
        raise CflError(f"Courant number {courant[m]:.3g} needs {factor[m]} substeps "
                       f"(limit {limit})", member=m)
    return factor


def _leapfrog(c2: np.ndarray, d0_fine: np.ndarray, r: float, every: int, nt: int) -> np.ndarray:
    """Explicit scheme on fine steps; returns the surface at every ``every``-th step."""
    N, nz = c2.shape
    prev = np.zeros((N, nz + 1))
    cur = np.zeros((N, nz + 1))
    prev[:, nz] = d0_fine[0]
    cur[:, nz] = d0_fine[1]
    surface = np.zeros((N, nt + 1))
    if every == 1:
        surface[:, 1] = cur[:, 0]
    flux = np.empty((N, nz))
    for n in range(1, nt * every):
        np.multiply(c2, cur[:, 1:] - cur[:, :-1], out=flux)
        nxt = np.empty_like(cur)
        nxt[:, 1:nz] = 2.0 * cur[:, 1:nz] - prev[:, 1:nz] + r * (flux[:, 1:] - flux[:, :-1])
        # ghost node d_{-1} = d_1 makes the flux through z = 0 vanish
        nxt[:, 0] = 2.0 * cur[:, 0] - prev[:, 0] + 2.0 * r * flux[:, 0]
        nxt[:, nz] = d0_fine[n + 1]
        prev, cur = cur, nxt
        if (n + 1) % every == 0:
            surface[:, (n + 1) // every] = cur[:, 0]
    return surface


def simulate_surface_batch(U, grid: WaveGrid, d0=None) -> np.ndarray:
    """Surface displacement histories at the grid times, shape (N, steps + 1).

    ``d0`` is the input motion: None (the grid's Ricker wavelet), a callable
    of time, or samples at the grid times.  Members whose velocities exceed
    the grid's Courant limit run on a time step subdivided by an integer
    factor (at most ``grid.max_refinement``); that needs a callable input.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    c2 = _midpoint_c2(U, grid)
    nt = grid.steps
    if nt < 1:
        raise ValueError("grid needs at least one time step")
    if d0 is None:
        d0 = grid.input_function()
    if callable(d0):
        motion = d0
        factors = refinement(c2, grid)
    else:
        samples = np.asarray(d0, dtype=float)
        if samples.shape != (nt + 1,):
            raise ValueError(f"input motion must have {nt + 1} samples")
        motion = None
        factors = refinement(c2, grid, refinable=False)
    surface = np.zeros((U.shape[0], nt + 1))
    for f in np.unique(factors):
        rows = np.nonzero(factors == f)[0]
        if motion is None:
            fine = samples
        else:
            fine = np.asarray(motion(grid.dt / f * np.arange(nt * f + 1)), dtype=float)
        r = (grid.dt / f / grid.dz) ** 2
        surface[rows] = _leapfrog(c2[rows], fine, r, int(f), nt)
    return surface


def simulate_surface(params: WaveParams, grid: WaveGrid, d0=None) -> np.ndarray:
    """Surface displacement history d(0, t_n), n = 0..steps."""
    return simulate_surface_batch(params.to_vector()[None, :], grid, d0)[0]


def surface_acceleration(surface: np.ndarray, grid: WaveGrid) -> np.ndarray:
    """Second time differences of the surface displacement at the sample indices."""
    idx = grid.sample_indices
    s = np.atleast_2d(surface)
    acc = (s[:, idx + 1] - 2.0 * s[:, idx] + s[:, idx - 1]) / grid.dt ** 2
    return acc if np.ndim(surface) == 2 else acc[0]


def wave_forward_batch(U, grid: WaveGrid, d0=None) -> np.ndarray:
    """Sampled surface accelerations for each parameter row, shape (N, n_samples)."""
    return surface_acceleration(simulate_surface_batch(U, grid, d0), grid)


def wave_forward(params, grid: WaveGrid, d0=None) -> np.ndarray:
    """Sampled surface acceleration for one parameter set (WaveParams or 6-vector)."""
    u = params.to_vector() if isinstance(params, WaveParams) else np.asarray(params, dtype=float)
    return wave_forward_batch(u[None, :], grid, d0)[0]
