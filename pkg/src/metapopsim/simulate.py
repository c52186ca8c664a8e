"""Finite-n stochastic metapopulation with a Markovian landscape.

One step updates occupancy first, using the current characteristics, and then
moves every patch characteristic one step along its chain. All randomness
comes from :mod:`metapopsim.rng` blocks keyed by ``(seed, substream, t)``;
patch ``i`` always reads element ``i`` of a block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .patch import DispersalKernel, PatchTraits, SpatialDomain

N_BATCHES = 100


@dataclass(frozen=True)
class MetapopState:
    X: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    t: int = 0

    def __post_init__(self):
        n = len(self.X)
        if len(self.theta) != n or len(self.z) != n:
            raise ValueError("X, theta and z must all have length n")
        if not np.isin(self.X, (0, 1)).all():
            raise ValueError("occupancy entries must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def locations(self) -> np.ndarray:
        """Locations as an ``(n, d)`` array."""
        return self.z[:, None] if self.z.ndim == 1 else self.z


@dataclass(frozen=True)
class OccupancySummary:
    z: np.ndarray
    proportion: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray | None = None
    final: MetapopState | None = None

    def rows(self):
        z = self.z if self.z.ndim == 1 else self.z[:, 0]
        for i, (zi, p, se) in enumerate(zip(z, self.proportion, self.stderr)):
            yield i, float(zi), float(p), float(se)


def _q0_values(q0, theta, z) -> np.ndarray:
    if callable(q0):
        return np.asarray(q0(theta, z), dtype=float) * np.ones(len(theta))
    return np.full(len(theta), float(q0))


def init_metapop(n: int, domain: SpatialDomain, chain, q0=1.0, seed: int = 0) -> MetapopState:
    """Locations from the domain density, characteristics from stationarity."""
    if n < 1:
        raise ValueError("n must be at least 1")
    z = domain.sample(rng.uniforms(seed, rng.INIT, 1, (n, domain.d)))
    if domain.d == 1:
        z = z[:, 0]
    theta = chain.draw_stationary(rng.uniforms(seed, rng.INIT, 2, n))
    X = (rng.uniforms(seed, rng.INIT, 3, n) < _q0_values(q0, theta, z)).astype(np.int8)
    return MetapopState(X, theta, z, 0)


def dispersal_matrix(state: MetapopState, kernel: DispersalKernel) -> np.ndarray:
    return kernel.matrix(state.locations)


def connectivities(state: MetapopState, traits: PatchTraits, kernel: DispersalKernel,
                   D: np.ndarray | None = None) -> np.ndarray:
    """Connectivity of every patch; the sum includes the patch itself."""
    D = dispersal_matrix(state, kernel) if D is None else D
    return D @ (state.X * traits.a(state.theta)) / state.n


def connectivity(state: MetapopState, i: int, traits: PatchTraits, kernel: DispersalKernel) -> float:
    """Connectivity of patch ``i`` (0-based)."""
    if not 0 <= i < state.n:
        raise IndexError(i)
    loc = state.locations
    d = np.exp(-kernel.alpha * np.sqrt(((loc - loc[i]) ** 2).sum(axis=1)))
    return float((state.X * d * traits.a(state.theta)).sum() / state.n)


def step(state: MetapopState, traits: PatchTraits, kernel: DispersalKernel, chain,
         seed: int, D: np.ndarray | None = None) -> MetapopState:
    x = connectivities(state, traits, kernel, D)
    X = state.X
    p = traits.s(state.theta) * X + traits.f(x, state.theta) * (1 - X)
    u = rng.uniforms(seed, rng.OCCUPANCY, state.t, state.n)
    X_next = (u < p).astype(np.int8)
    u_land = rng.uniforms(seed, rng.LANDSCAPE, state.t, (state.n, chain.n_uniforms))
    theta_next = chain.step(state.theta, u_land)
    return MetapopState(X_next, theta_next, state.z, state.t + 1)


def run_occupancy(state: MetapopState, T: int, traits: PatchTraits, kernel: DispersalKernel,
                  chain, seed: int, burn_in: int = 0, record_counts: bool = False,
                  n_batches: int = N_BATCHES) -> OccupancySummary:
    """Fraction of steps ``1..T`` (after ``burn_in``) each patch is occupied.

    Standard errors are batch means over ``n_batches`` contiguous batches.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    D = dispersal_matrix(state, kernel)
    for _ in range(burn_in):
        state = step(state, traits, kernel, chain, seed, D)
    n_batches = min(n_batches, T)
    edges = np.linspace(0, T, n_batches + 1).astype(int)
    batch_sums = np.zeros((n_batches, state.n))
    counts = np.zeros(T, dtype=np.int64) if record_counts else None
    b = 0
    for k in range(T):
        state = step(state, traits, kernel, chain, seed, D)
        if k >= edges[b + 1]:
            b += 1
        batch_sums[b] += state.X
        if counts is not None:
            counts[k] = state.X.sum()
    sizes = np.diff(edges)[:, None]
    proportion = batch_sums.sum(axis=0) / T
    if n_batches > 1:
        means = batch_sums / sizes
        stderr = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    else:
        stderr = np.full(state.n, np.nan)
    return OccupancySummary(state.z, proportion, stderr, counts, state)


def empirical_functional(state: MetapopState, h) -> float:
    """``n^-1 sum_i X_i h(theta_i, z_i)``."""
    values = np.asarray(h(state.theta, state.z), dtype=float) * np.ones(state.n)
    return float((state.X * values).sum() / state.n)


def permuted(state: MetapopState, order) -> MetapopState:
    order = np.asarray(order)
    return replace(state, X=state.X[order], theta=state.theta[order], z=state.z[order])
