"""Large-n occupancy recursion, the operator H and its fixed point.

The occupancy probability ``q(theta, z)`` is stored on a finite
characteristic support times the spatial quadrature grid. Finite chains use
their own states. The Beta-jump chain is represented in field computations by
its histogram surrogate (:func:`metapopsim.landscape.discretize`), while the
equilibrium of a chain with a characteristic-free ``fbar`` only needs the
survival moments, which are estimated from sample paths.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (MaxIterExceeded, MetapopError, MissingDual, NotPhaseStructured,
                     SupSurvivalOne, ZeroMassState)
from .landscape import BetaJumpChain, FiniteChain, discretize, stationary_paths, stationary_reference
from .patch import DispersalKernel, Grid, PatchTraits

ZERO_FLOOR = 1e-12


class TruncationTooShort(MetapopError):
    pass


# ---------------------------------------------------------------------------
# characteristic support
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Support:
    """Finite chain used for field computations plus the traits' argument."""

    chain: FiniteChain
    theta: np.ndarray


@functools.lru_cache(maxsize=8)
def _surrogate(chain: BetaJumpChain, n_bins: int) -> FiniteChain:
    return discretize(chain, n_bins)


def support_of(chain, n_bins: int = 100) -> Support:
    if isinstance(chain, Support):
        return chain
    if isinstance(chain, FiniteChain):
        return Support(chain, np.arange(chain.m))
    if isinstance(chain, BetaJumpChain):
        sur = _surrogate(chain, n_bins)
        return Support(sur, np.asarray(sur.states, dtype=float))
    raise MissingDual(f"no stationary/dual data for {type(chain).__name__}")


def _dual(sup: Support) -> np.ndarray:
    try:
        return sup.chain.P_star
    except ZeroMassState as exc:
        raise MissingDual(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class OccupancyField:
    theta: np.ndarray
    pi: np.ndarray
    grid: Grid
    q: np.ndarray

    def __post_init__(self):
        if self.q.shape != (len(self.theta), len(self.grid)):
            raise ValueError("q must have shape (support size, grid size)")

    @classmethod
    def constant(cls, chain, grid: Grid, value: float = 0.0) -> "OccupancyField":
        sup = support_of(chain)
        return cls(sup.theta, sup.chain.pi, grid, np.full((len(sup.theta), len(grid)), float(value)))

    def with_q(self, q) -> "OccupancyField":
        return OccupancyField(self.theta, self.pi, self.grid, np.asarray(q, dtype=float))

    def occupancy(self) -> np.ndarray:
        """``sum_j q(j, z) pi_j`` at each grid node."""
        return self.pi @ self.q

    def weighted(self, traits: PatchTraits) -> np.ndarray:
        """``sum_j a(j) q(j, z) pi_j`` at each grid node."""
        return (self.pi * traits.a(self.theta)) @ self.q


@dataclass(frozen=True)
class ConnectivityProfile:
    psi: np.ndarray


def _kernel_matrix(kernel: DispersalKernel, grid: Grid) -> np.ndarray:
    return kernel.matrix(grid.nodes)


def integral_operator(kernel: DispersalKernel, grid: Grid) -> np.ndarray:
    """Matrix of ``phi -> int D(z, .) phi zeta``: ``D_kl zeta_l w_l``."""
    return _kernel_matrix(kernel, grid) * grid.zeta_w[None, :]


def psi_of_field(field: OccupancyField, traits: PatchTraits, kernel: DispersalKernel) -> ConnectivityProfile:
    return ConnectivityProfile(integral_operator(kernel, field.grid) @ field.weighted(traits))


# ---------------------------------------------------------------------------
# the recursion
# ---------------------------------------------------------------------------


def recursion_step(field: OccupancyField, traits: PatchTraits, kernel: DispersalKernel, chain,
                   operator: np.ndarray | None = None) -> OccupancyField:
    """One step of the occupancy recursion, averaging over the dual chain."""
    sup = support_of(chain)
    P_star = _dual(sup)
    K = integral_operator(kernel, field.grid) if operator is None else operator
    psi = K @ field.weighted(traits)
    th = sup.theta[:, None]
    q = field.q
    g = traits.s(th) * q + traits.f(psi[None, :], th) * (1.0 - q)
    return field.with_q(P_star @ g)


@dataclass(frozen=True)
class IterationResult:
    final: OccupancyField
    deltas: np.ndarray
    history: list = field(default_factory=list)


def iterate_recursion(q0: OccupancyField, T: int, traits: PatchTraits, kernel: DispersalKernel,
                      chain, keep_history: bool = False) -> IterationResult:
    if T < 1:
        raise ValueError("T must be at least 1")
    K = integral_operator(kernel, q0.grid)
    cur = q0
    deltas = np.empty(T)
    history = [q0] if keep_history else []
    for t in range(T):
        nxt = recursion_step(cur, traits, kernel, chain, K)
        deltas[t] = np.abs(nxt.q - cur.q).max()
        cur = nxt
        if keep_history:
            history.append(cur)
    return IterationResult(cur, deltas, history)


# ---------------------------------------------------------------------------
# inner fixed point for a frozen connectivity
# ---------------------------------------------------------------------------


def _check_phase(traits: PatchTraits, s: np.ndarray) -> float:
    if not traits.phase_flag:
        raise NotPhaseStructured(f"colonisation {traits.colonisation.name!r} has no phase structure")
    rho = float(s.max())
    if rho >= 1.0:
        raise SupSurvivalOne(f"sup s = {rho} must be below 1")
    return rho


def q_phi_infinity(phi, chain, traits: PatchTraits, grid: Grid, method: str = "inner",
                   M: int = 1000, tol: float = 1e-10, max_iter: int = 1_000_000,
                   allow_truncation: bool = False) -> OccupancyField:
    """Fixed point of the recursion with connectivity frozen at ``phi``.

    ``method`` is ``"inner"`` (iterate to an a-posteriori sup-norm error of
    ``tol``), ``"series"`` (the dual-chain path series truncated at ``M``
    terms) or ``"solve"`` (one linear solve per grid node).
    """
    sup = support_of(chain)
    P_star = _dual(sup)
    th = sup.theta[:, None]
    s = np.asarray(traits.s(sup.theta), dtype=float)
    rho = _check_phase(traits, s)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (len(grid),))
    f = traits.f(phi[None, :], th) * np.ones((len(s), len(grid)))
    g = s[:, None] - f

    if method == "inner":
        q = np.zeros_like(f)
        bound = rho / (1.0 - rho) if rho > 0 else 0.0
        for _ in range(max_iter):
            nxt = P_star @ (g * q + f)
            delta = np.abs(nxt - q).max()
            q = nxt
            if delta * bound <= tol:
                break
        else:
            raise MaxIterExceeded("inner iteration did not converge", delta)
    elif method == "series":
        tail = rho**M
        if tail > 1e-8 and not allow_truncation:
            raise TruncationTooShort(f"tail bound (sup s)^M = {tail:.3g} exceeds 1e-8")
        term = P_star @ f
        q = term.copy()
        for _ in range(M - 1):
            term = P_star @ (g * term)
            q += term
            if not term.any():
                break
    elif method == "solve":
        m = len(s)
        A = np.eye(m)[None, :, :] - P_star[None, :, :] * g.T[:, None, :]
        b = (P_star @ f).T[:, :, None]
        q = np.linalg.solve(A, b)[:, :, 0].T
    else:
        raise ValueError(f"unknown method {method!r}")
    return OccupancyField(sup.theta, sup.chain.pi, grid, q)


@dataclass(frozen=True)
class MonteCarloField:
    theta: np.ndarray
    grid: Grid
    q: np.ndarray
    stderr: np.ndarray


def q_phi_infinity_mc(phi, chain: BetaJumpChain, traits: PatchTraits, grid: Grid,
                      theta0, n_paths: int = 1000, M: int = 1000, n_bins: int = 100,
                      seed: int = 0) -> MonteCarloField:
    """Path-series estimate of ``q_phi`` for a sampler chain.

    Dual paths are reversed segments of the stationary reference run that
    start in the same histogram bin as ``theta0``.
    """
    ref = stationary_reference(chain)
    s_ref = np.asarray(traits.s(ref), dtype=float)
    _check_phase(traits, s_ref)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (len(grid),))
    bins = np.minimum((ref * n_bins).astype(np.int64), n_bins - 1)
    gen = rng.generator(seed, rng.PATHS, 0)
    est = np.empty((len(theta0), len(grid)))
    err = np.empty_like(est)
    lags = np.arange(1, M + 1)
    for k, th0 in enumerate(theta0):
        pool = np.flatnonzero(bins[M:] == min(int(th0 * n_bins), n_bins - 1)) + M
        if len(pool) == 0:
            raise ValueError(f"no reference visits near theta = {th0}")
        taus = gen.choice(pool, size=n_paths)
        paths = ref[taus[:, None] - lags[None, :]]            # theta*_1 .. theta*_M
        samples = np.zeros((n_paths, len(grid)))
        for l, x in enumerate(phi):
            f = traits.f(x, paths)
            g = traits.s(paths) - f
            surv = np.concatenate([np.ones((n_paths, 1)), np.cumprod(g[:, :-1], axis=1)], axis=1)
            samples[:, l] = (f * surv).sum(axis=1)
        est[k] = samples.mean(axis=0)
        err[k] = samples.std(axis=0, ddof=1) / np.sqrt(n_paths)
    return MonteCarloField(theta0, grid, est, err)


def H_operator(phi, chain, traits: PatchTraits, kernel: DispersalKernel, grid: Grid,
               method: str = "solve", operator: np.ndarray | None = None, **kwargs) -> np.ndarray:
    """``(H phi)(z_k) = sum_l D_kl [sum_j a_j q_phi(j, z_l) pi_j] zeta_l w_l``."""
    qf = q_phi_infinity(phi, chain, traits, grid, method=method, **kwargs)
    K = integral_operator(kernel, grid) if operator is None else operator
    return K @ qf.weighted(traits)


# ---------------------------------------------------------------------------
# survival moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalMoments:
    """Moments of a stationary chain, index ``m - 1`` holds term ``m``.

    ``weighted[m-1] = E[a(theta_{m+1}) prod_{n=1..m} s(theta_n)]`` and
    ``tail[m-1] = E[prod_{n=1..m} s(theta_n)]``.
    """

    weighted: np.ndarray
    tail: np.ndarray
    weighted_se: np.ndarray | None = None
    tail_se: np.ndarray | None = None
    exact: bool = True


def survival_moments(chain, traits: PatchTraits, M: int = 1000, n_paths: int = 1000,
                     seed: int = 0) -> SurvivalMoments:
    """Exact matrix recursion for finite chains, sample paths otherwise."""
    if isinstance(chain, FiniteChain):
        s, a = traits.tabulate(np.arange(chain.m))
        u = chain.pi.copy()
        weighted = np.empty(M)
        tail = np.empty(M)
        for m in range(M):
            u = (u * s) if m == 0 else (u @ chain.P) * s
            tail[m] = u.sum()
            weighted[m] = (u @ chain.P) @ a
        return SurvivalMoments(weighted, tail)
    paths = stationary_paths(chain, n_paths, M, seed)        # theta_1 .. theta_{M+1}
    surv = np.cumprod(np.asarray(traits.s(paths[:, :-1]), dtype=float), axis=1)
    contrib = surv * np.asarray(traits.a(paths[:, 1:]), dtype=float)
    root_n = np.sqrt(n_paths)
    return SurvivalMoments(contrib.mean(axis=0), surv.mean(axis=0),
                           contrib.std(axis=0, ddof=1) / root_n,
                           surv.std(axis=0, ddof=1) / root_n, exact=False)


def moment_sequence(chain, traits: PatchTraits, M: int = 1000, n_paths: int = 1000,
                    seed: int = 0) -> SurvivalMoments:
    """Terms ``m = 1..M`` of ``E[a(theta_{m+1}) prod_{n=1..m} s(theta_n)]``.

    Returned as :class:`SurvivalMoments`; the sequence is ``.weighted``.
    """
    return survival_moments(chain, traits, M, n_paths, seed)


def _geometric_mix(x: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """``sum_m x (1 - x)^(m-1) coeffs[m-1]`` for each entry of ``x``."""
    M = len(coeffs)
    powers = np.cumprod(np.concatenate([np.ones((len(x), 1)),
                                        np.repeat((1.0 - x)[:, None], M - 1, axis=1)], axis=1), axis=1)
    return x * (powers @ coeffs)


# ---------------------------------------------------------------------------
# equilibrium
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumResult:
    phi_star: np.ndarray
    occupancy: np.ndarray
    weighted: np.ndarray
    grid: Grid
    iterations: int
    residual: float
    extinct: bool
    route: str
    q_star: OccupancyField | None = None
    moments: SurvivalMoments | None = None
    tail_bound: float = 0.0

    def to_json(self) -> dict:
        return {
            "z": self.grid.nodes.tolist(),
            "phi_star": self.phi_star.tolist(),
            "occupancy": self.occupancy.tolist(),
            "weighted_occupancy": self.weighted.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
            "extinct": self.extinct,
            "route": self.route,
            "tail_bound": self.tail_bound,
        }


def equilibrium(chain, traits: PatchTraits, kernel: DispersalKernel, grid: Grid,
                tol: float = 1e-9, max_iter: int = 50_000, route: str = "auto",
                method: str = "solve", M: int = 1000, n_paths: int = 1000, seed: int = 0,
                start=None, moments: SurvivalMoments | None = None) -> EquilibriumResult:
    """Fixed point of ``H`` by plain iteration.

    ``route="field"`` applies ``H`` through the full occupancy field (finite
    chains, any phase-structured ``fbar``). ``route="moments"`` uses the
    survival moment sequence and needs ``fbar`` free of the characteristic;
    it is the only route for sampler chains. The default start is ``H``
    applied to the constant 1. Iteration stops once the sup-norm change falls
    below ``tol`` relative to ``sup phi``, or reports extinction once
    ``sup phi`` drops below 1e-12.
    """
    if route == "auto":
        route = "field" if isinstance(chain, FiniteChain) else "moments"
    K = integral_operator(kernel, grid)
    tail_bound = 0.0

    if route == "field":
        sup = support_of(chain)
        s = np.asarray(traits.s(sup.theta), dtype=float)
        rho = _check_phase(traits, s)
        if not traits.colonisation.concave:
            raise NotPhaseStructured("equilibrium analysis needs a concave fbar")

        def apply(phi):
            return K @ q_phi_infinity(phi, sup, traits, grid, method=method, M=M,
                                      allow_truncation=True).weighted(traits)

        if method == "series":
            tail_bound = rho**M
    elif route == "moments":
        if not traits.phase_flag:
            raise NotPhaseStructured("moment route needs phase structure")
        if not traits.colonisation.fbar_independent_of_theta():
            raise ValueError("moment route needs fbar independent of the characteristic")
        if moments is None:
            moments = survival_moments(chain, traits, M, n_paths, seed)
        mu = moments.weighted
        probe = np.zeros(1)

        def apply(phi):
            return K @ _geometric_mix(traits.fbar(phi, probe), mu)

        tail_bound = float(mu[-1])
    else:
        raise ValueError(f"unknown route {route!r}")

    phi = apply(np.ones(len(grid))) if start is None else np.broadcast_to(
        np.asarray(start, dtype=float), (len(grid),)).copy()
    extinct = False
    residual = np.inf
    for it in range(1, max_iter + 1):
        new = apply(phi)
        residual = float(np.abs(new - phi).max())
        phi = new
        top = phi.max()
        if top < ZERO_FLOOR:
            extinct = True
            phi = np.zeros_like(phi)
            break
        if residual <= tol * top:
            break
    else:
        raise MaxIterExceeded(f"no fixed point after {max_iter} iterations", residual)

    if route == "field":
        q_star = q_phi_infinity(phi, sup, traits, grid, method=method, M=M, allow_truncation=True)
        return EquilibriumResult(phi, q_star.occupancy(), q_star.weighted(traits), grid, it,
                                 residual, extinct, route, q_star=q_star, tail_bound=tail_bound)
    x = traits.fbar(phi, probe)
    occ = _geometric_mix(x, moments.tail)
    weighted = _geometric_mix(x, moments.weighted)
    return EquilibriumResult(phi, occ, weighted, grid, it, residual, extinct, route,
                             moments=moments, tail_bound=tail_bound)


def scalar_fixed_point(g, lo: float = 0.0, hi: float = 1.0, tol: float = 1e-14) -> float:
    """Largest root of ``g(q) - q`` in ``(lo, hi]`` by bisection; 0 if none."""
    h = lambda q: g(q) - q
    if h(hi) > 0:
        raise ValueError("no sign change on the bracket")
    a = max(lo, 1e-12)
    if h(a) <= 0:
        return 0.0
    b = hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if h(mid) > 0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)
