"""Markov chains for the patch characteristic.

Two kinds of chain are supported:

* :class:`FiniteChain` -- a transition matrix with its stationary law, handled
  with exact linear algebra.
* :class:`BetaJumpChain` -- a chain on ``[0, 1]`` that is only available
  through its sampler. A state is a survival probability which either drops by
  a random fraction ``L`` (with probability ``p(s)``) or recovers a random
  fraction ``R`` of the remaining distance to one.

Both expose ``n_uniforms`` and ``step(states, u)`` so that the simulator can
drive them from counter-based uniforms.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy.sparse.csgraph import connected_components

from . import rng
from .errors import NotIrreducible, ZeroMassState

REFERENCE_STEPS = 10**6
REFERENCE_BURN_IN = 10**4
REFERENCE_SEED = 20160101

DIRECT_SOLVE_MAX = 2000


# ---------------------------------------------------------------------------
# finite chains
# ---------------------------------------------------------------------------


def _as_stochastic(P) -> np.ndarray:
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < 0):
        raise ValueError("transition matrix has negative entries")
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0):
        raise ValueError("transition matrix rows must sum to 1")
    return P


def _closed_classes(P: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    n_comp, labels = connected_components(P > 0, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.ones(len(P), dtype=bool)
        outside[members] = False
        if not np.any(P[np.ix_(members, outside)] > 0):
            closed.append(members)
    return labels, closed


def stationary_distribution(P) -> np.ndarray:
    """Stationary law ``pi`` with ``pi P = pi``.

    Solved directly from ``(P^T - I) pi = 0`` with the normalisation appended,
    falling back to power iteration on the lazy chain for very large ``P``.
    Raises :class:`NotIrreducible` if the stationary law is not unique.
    """
    P = _as_stochastic(P)
    m = len(P)
    _, closed = _closed_classes(P)
    if len(closed) > 1:
        raise NotIrreducible(f"chain has {len(closed)} closed communicating classes")
    if m <= DIRECT_SOLVE_MAX:
        A = np.vstack([P.T - np.eye(m), np.ones((1, m))])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    else:
        lazy = 0.5 * (P + np.eye(m))
        pi = np.full(m, 1.0 / m)
        for _ in range(100_000):
            new = pi @ lazy
            if np.abs(new - pi).max() < 1e-15:
                pi = new
                break
            pi = new
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.abs(pi @ P - pi).max()
    if resid >= 1e-10:
        # one step of iterative refinement on the same system
        pi = pi @ P
        pi /= pi.sum()
    return pi


@dataclass(frozen=True)
class DualKernel:
    """Time reversal of a stationary finite chain."""

    P_star: np.ndarray


def dual_kernel(P, pi) -> DualKernel:
    """``P*[j, i] = pi[i] P[i, j] / pi[j]``."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        bad = np.flatnonzero(pi <= 0).tolist()
        raise ZeroMassState(f"dual undefined on zero-mass states {bad}")
    P_star = (pi[:, None] * P).T / pi[:, None]
    return DualKernel(P_star)


def is_reversible(P, pi, tol: float = 1e-12) -> bool:
    flux = np.asarray(pi, dtype=float)[:, None] * np.asarray(P, dtype=float)
    return bool(np.abs(flux - flux.T).max() <= tol)


@dataclass(frozen=True)
class ChainDiagnosis:
    classes: list[list[int]]
    closed_classes: list[list[int]]
    period: int | None
    irreducible: bool
    aperiodic: bool

    @property
    def positive_harris(self) -> bool:
        return self.irreducible and self.aperiodic


def _period(P: np.ndarray, members: np.ndarray) -> int:
    # gcd of level(i) + 1 - level(j) over edges i -> j inside the class
    sub = P[np.ix_(members, members)] > 0
    level = np.full(len(members), -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.flatnonzero(sub[i]):
                if level[j] < 0:
                    level[j] = level[i] + 1
                    nxt.append(j)
        frontier = nxt
    g = 0
    for i, j in zip(*np.nonzero(sub)):
        g = math.gcd(g, int(level[i] + 1 - level[j]))
    return g


def check_irreducible_aperiodic(P) -> ChainDiagnosis:
    P = _as_stochastic(P)
    labels, closed = _closed_classes(P)
    classes = [np.flatnonzero(labels == c).tolist() for c in range(labels.max() + 1)]
    irreducible = len(classes) == 1
    period = _period(P, np.arange(len(P))) if irreducible else None
    return ChainDiagnosis(
        classes=classes,
        closed_classes=[c.tolist() for c in closed],
        period=period,
        irreducible=irreducible,
        aperiodic=period == 1,
    )


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Finite-state chain ``(P, pi)``.

    ``pi`` may be supplied for reducible chains such as the static landscape
    ``P = I``; it is checked for invariance but not for uniqueness.
    """

    P: np.ndarray
    pi: np.ndarray
    states: tuple = ()

    n_uniforms = 1

    def __post_init__(self):
        P = _as_stochastic(self.P)
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape != (len(P),):
            raise ValueError("pi has the wrong length")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be a probability vector")
        if np.abs(pi @ P - pi).max() > 1e-10:
            raise ValueError("pi is not invariant for P")
        states = tuple(self.states) if len(self.states) else tuple(range(len(P)))
        if len(states) != len(P):
            raise ValueError("states has the wrong length")
        P.setflags(write=False)
        pi = pi.copy()
        pi.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "states", states)

    @classmethod
    def from_matrix(cls, P, states: Sequence = ()) -> "FiniteChain":
        return cls(np.asarray(P, dtype=float), stationary_distribution(P), tuple(states))

    @property
    def m(self) -> int:
        return len(self.P)

    @functools.cached_property
    def P_star(self) -> np.ndarray:
        return dual_kernel(self.P, self.pi).P_star

    def dual(self) -> "FiniteChain":
        return FiniteChain(self.P_star, self.pi, self.states)

    def permuted(self, order) -> "FiniteChain":
        order = np.asarray(order)
        return FiniteChain(self.P[np.ix_(order, order)], self.pi[order],
                           tuple(self.states[i] for i in order))

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.P, axis=1)
        u = np.asarray(u).reshape(len(states), -1)[:, 0]
        rows = cdf[np.asarray(states, dtype=int)]
        nxt = (rows <= u[:, None]).sum(axis=1)
        return np.minimum(nxt, self.m - 1)

    def draw_stationary(self, u: np.ndarray) -> np.ndarray:
        nxt = np.searchsorted(np.cumsum(self.pi), u, side="right")
        return np.minimum(nxt, self.m - 1)

    def to_json(self) -> dict:
        return {"states": list(self.states), "P": self.P.tolist(), "pi": self.pi.tolist()}


# ---------------------------------------------------------------------------
# sampler chain on [0, 1]
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaLaw:
    a: float
    b: float

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.a == 1.0:
            return 1.0 - (1.0 - u) ** (1.0 / self.b)
        if self.b == 1.0:
            return u ** (1.0 / self.a)
        return special.betaincinv(self.a, self.b, u)

    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class PointMass:
    value: float

    def ppf(self, u):
        return np.full(np.shape(u), float(self.value))

    def mean(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class BetaJumpChain:
    """Survival-probability chain with random drops and recoveries.

    ``p(s) = clip(p_slope * (s - p_knee), 0, 1)`` for ``s > p_knee`` and 0
    otherwise, unless ``p_const`` fixes a constant drop probability.
    """

    L: BetaLaw | PointMass
    R: BetaLaw | PointMass
    p_slope: float = 10.0
    p_knee: float = 0.9
    p_const: float | None = None

    n_uniforms = 3

    @classmethod
    def beta(cls, aL, bL, aR, bR, p_slope=10.0, p_knee=0.9) -> "BetaJumpChain":
        return cls(BetaLaw(float(aL), float(bL)), BetaLaw(float(aR), float(bR)),
                   float(p_slope), float(p_knee))

    def p(self, s):
        s = np.asarray(s, dtype=float)
        if self.p_const is not None:
            return np.full(s.shape, float(self.p_const))
        return np.where(s > self.p_knee, np.clip(self.p_slope * (s - self.p_knee), 0.0, 1.0), 0.0)

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        u = np.asarray(u, dtype=float).reshape(len(s), 3)
        drop = u[:, 0] < self.p(s)
        down = s * (1.0 - self.L.ppf(u[:, 1]))
        up = s + (1.0 - s) * self.R.ppf(u[:, 2])
        return np.clip(np.where(drop, down, up), 0.0, 1.0)

    def run(self, s0: float, u: np.ndarray) -> np.ndarray:
        """Single path driven by a ``(T, 3)`` block of uniforms."""
        u = np.asarray(u, dtype=float)
        losses = self.L.ppf(u[:, 1]).tolist()
        gains = self.R.ppf(u[:, 2]).tolist()
        branch = u[:, 0].tolist()
        out = np.empty(len(u) + 1)
        out[0] = s = float(s0)
        const, slope, knee = self.p_const, self.p_slope, self.p_knee
        for t, (b, lo, gain) in enumerate(zip(branch, losses, gains), start=1):
            if const is not None:
                p = const
            elif s > knee:
                p = min(max(slope * (s - knee), 0.0), 1.0)
            else:
                p = 0.0
            if b < p:
                s = s * (1.0 - lo)
            else:
                s = s + (1.0 - s) * gain
                if s > 1.0:
                    s = 1.0
            out[t] = s
        return out

    def draw_stationary(self, u: np.ndarray) -> np.ndarray:
        ref = stationary_reference(self)
        idx = np.minimum((np.asarray(u) * len(ref)).astype(np.int64), len(ref) - 1)
        return ref[idx]

    def to_json(self) -> dict:
        if not (isinstance(self.L, BetaLaw) and isinstance(self.R, BetaLaw)):
            raise ValueError("only Beta laws are serialisable")
        body = {"aL": self.L.a, "bL": self.L.b, "aR": self.R.a, "bR": self.R.b,
                "p_slope": self.p_slope, "p_knee": self.p_knee}
        if self.p_const is not None:
            body["p_const"] = self.p_const
        return {"beta_jump": body}


SampledChain = BetaJumpChain


@functools.lru_cache(maxsize=16)
def stationary_reference(chain: BetaJumpChain, n_steps: int = REFERENCE_STEPS,
                         burn_in: int = REFERENCE_BURN_IN, seed: int = REFERENCE_SEED) -> np.ndarray:
    """Long-run sample standing in for the (unknown) stationary law."""
    u = rng.uniforms(seed, rng.REFERENCE, 0, (n_steps + burn_in, 3))
    path = chain.run(0.5, u)
    ref = path[burn_in + 1:]
    ref.setflags(write=False)
    return ref


def discretize(chain: BetaJumpChain, n_bins: int = 100, reference: np.ndarray | None = None,
               min_visits: int = 1) -> FiniteChain:
    """Histogram surrogate of a sampler chain.

    Bins ``[0, 1]``, estimates the transition matrix from one-step moves of the
    reference run, restricts to the largest closed class and labels each state
    by the mean of the reference values that fell into it.
    """
    ref = stationary_reference(chain) if reference is None else np.asarray(reference)
    bins = np.minimum((ref * n_bins).astype(np.int64), n_bins - 1)
    counts = np.zeros((n_bins, n_bins))
    np.add.at(counts, (bins[:-1], bins[1:]), 1.0)
    visits = np.bincount(bins, minlength=n_bins)
    keep = np.flatnonzero((counts.sum(axis=1) >= min_visits) & (visits > 0))
    counts = counts[np.ix_(keep, keep)]
    while True:
        rows = counts.sum(axis=1)
        alive = rows > 0
        if alive.all():
            break
        keep, counts = keep[alive], counts[np.ix_(alive, alive)]
    P = counts / counts.sum(axis=1, keepdims=True)
    labels, closed = _closed_classes(P)
    if len(closed) > 1 or len(closed[0]) < len(P):
        main = max(closed, key=lambda c: visits[keep[c]].sum())
        keep = keep[main]
        sub = counts[np.ix_(main, main)]
        P = sub / sub.sum(axis=1, keepdims=True)
    means = np.bincount(bins, weights=ref, minlength=n_bins)[keep] / visits[keep]
    return FiniteChain.from_matrix(P, states=tuple(means.tolist()))


# ---------------------------------------------------------------------------
# paths and diagnostics
# ---------------------------------------------------------------------------


def sample_path(chain, theta0, T: int, seed: int) -> np.ndarray:
    if T < 0:
        raise ValueError("T must be non-negative")
    u = rng.uniforms(seed, rng.PATHS, 0, (T, chain.n_uniforms))
    if isinstance(chain, BetaJumpChain):
        return chain.run(theta0, u)
    path = np.empty(T + 1, dtype=int)
    path[0] = state = int(theta0)
    cdf = np.cumsum(chain.P, axis=1)
    for t in range(T):
        state = min(int(np.searchsorted(cdf[state], u[t, 0], side="right")), chain.m - 1)
        path[t + 1] = state
    return path


def sample_paths(chain, theta0: np.ndarray, T: int, seed: int) -> np.ndarray:
    """``len(theta0)`` independent paths, shape ``(len(theta0), T + 1)``."""
    theta0 = np.asarray(theta0)
    out = np.empty((len(theta0), T + 1), dtype=theta0.dtype)
    out[:, 0] = theta0
    for t in range(T):
        u = rng.uniforms(seed, rng.PATHS, t + 1, (len(theta0), chain.n_uniforms))
        out[:, t + 1] = chain.step(out[:, t], u)
    return out


def stationary_paths(chain, n_paths: int, T: int, seed: int) -> np.ndarray:
    """Paths whose first state is drawn from the stationary law."""
    start = chain.draw_stationary(rng.uniforms(seed, rng.INIT, 0, n_paths))
    return sample_paths(chain, start, T, seed)


def tv_distance_to_stationary(chain, theta0, t: int, n_samples: int | None = None,
                              seed: int = 0, bins: int = 100) -> float:
    """Total variation distance between the law of ``theta_t`` and stationarity.

    For a finite chain with ``n_samples=None`` the law of ``theta_t`` is exact
    (a row of ``P^t``); otherwise it is estimated from ``n_samples`` paths.
    The sampler chain is compared to a ``bins``-bin histogram of
    :func:`stationary_reference`.
    """
    if isinstance(chain, FiniteChain):
        if n_samples is None:
            law = np.linalg.matrix_power(chain.P, t)[int(theta0)]
        else:
            end = sample_paths(chain, np.full(n_samples, int(theta0)), t, seed)[:, -1]
            law = np.bincount(end, minlength=chain.m) / n_samples
        return float(0.5 * np.abs(law - chain.pi).sum())
    n_samples = 10_000 if n_samples is None else n_samples
    end = sample_paths(chain, np.full(n_samples, float(theta0)), t, seed)[:, -1]
    edges = np.linspace(0.0, 1.0, bins + 1)
    emp = np.histogram(end, edges)[0] / n_samples
    ref = stationary_reference(chain)
    target = np.histogram(ref, edges)[0] / len(ref)
    return float(0.5 * np.abs(emp - target).sum())


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def chain_from_json(spec: dict):
    if "beta_jump" in spec:
        b = spec["beta_jump"]
        chain = BetaJumpChain.beta(b["aL"], b["bL"], b["aR"], b["bR"],
                                   b.get("p_slope", 10.0), b.get("p_knee", 0.9))
        if b.get("p_const") is not None:
            chain = BetaJumpChain(chain.L, chain.R, chain.p_slope, chain.p_knee, float(b["p_const"]))
        return chain
    P = np.asarray(spec["P"], dtype=float)
    states = tuple(spec.get("states", ()))
    if spec.get("pi") is not None:
        return FiniteChain(P, np.asarray(spec["pi"], dtype=float), states)
    return FiniteChain.from_matrix(P, states)


def chain_to_json(chain) -> dict:
    return chain.to_json()
