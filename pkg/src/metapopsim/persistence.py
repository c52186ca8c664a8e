"""Persistence threshold and life-span results.

The metapopulation persists when ``r_S * r(M) > 1``: ``r_S`` sums the
expected future connectivity contributions of a newly colonised patch and
``r(M)`` is the spectral radius of the dispersal operator over the patch
location density.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolated, NoConvergence
from .landscape import FiniteChain, stationary_paths
from .meanfield import equilibrium, integral_operator, survival_moments
from .patch import DispersalKernel, Grid, PatchTraits


def _power_iteration(A: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Perron root of a non-negative matrix.

    Stops when the Collatz-Wielandt bracket ``min(Av/v) <= r <= max(Av/v)``
    is narrower than ``tol`` relative to its upper end.
    """
    if not A.any():
        return 0.0
    v = np.ones(len(A))
    for _ in range(max_iter):
        w = A @ v
        if not w.any():
            return 0.0
        ratio = w / v
        hi, lo = ratio.max(), ratio.min()
        if hi - lo <= tol * hi:
            return float(0.5 * (hi + lo))
        v = w / w.max()
    raise NoConvergence(f"power iteration did not converge in {max_iter} iterations", hi - lo)


def r_S(chain, traits: PatchTraits, M_trunc: int = 1000, include_m0: bool = False,
        n_paths: int = 10_000, seed: int = 0) -> float:
    """``sum_{m>=1} E[fbar'(0; theta_0) prod_{n<m} s(theta_n) a(theta_m)]``.

    ``include_m0`` adds the ``m = 0`` term ``E[fbar'(0; theta_0) a(theta_0)]``
    (the index-shifted constant-area form). Sampler chains are estimated from
    ``n_paths`` stationary paths; see :func:`r_S_estimate` for the error.
    """
    return r_S_estimate(chain, traits, M_trunc, include_m0, n_paths, seed)[0]


def r_S_estimate(chain, traits: PatchTraits, M_trunc: int = 1000, include_m0: bool = False,
                 n_paths: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """``(r_S, standard error)``; the error is 0 for finite chains."""
    if isinstance(chain, FiniteChain):
        states = np.arange(chain.m)
        s, a = traits.tabulate(states)
        u = chain.pi * traits.fbar_prime0(states)
        total = float(u @ a) if include_m0 else 0.0
        for _ in range(M_trunc):
            u = (u * s) @ chain.P
            total += float(u @ a)
            if not u.any():
                break
        return total, 0.0
    paths = stationary_paths(chain, n_paths, M_trunc, seed)    # theta_0 .. theta_M
    surv = np.cumprod(np.asarray(traits.s(paths[:, :-1]), dtype=float), axis=1)
    per_path = (surv * traits.a(paths[:, 1:])).sum(axis=1)
    if include_m0:
        per_path = per_path + traits.a(paths[:, 0])
    per_path = per_path * traits.fbar_prime0(paths[:, 0])
    return float(per_path.mean()), float(per_path.std(ddof=1) / np.sqrt(n_paths))


def spectral_radius_M(kernel: DispersalKernel, grid: Grid, tol: float = 1e-10,
                      max_iter: int = 100_000) -> float:
    return _power_iteration(integral_operator(kernel, grid), tol, max_iter)


def dual_series_weights(chain: FiniteChain, traits: PatchTraits, M: int = 1000) -> np.ndarray:
    """``w(theta) = sum_{m>=1} E*[f'(0; theta*_m) prod_{n=1}^{m-1} s(theta*_n) | theta*_0 = theta]``."""
    states = np.arange(chain.m)
    s = traits.tabulate(states)[0]
    P_star = chain.P_star
    term = P_star @ traits.f_prime0(states)
    total = term.copy()
    for _ in range(M - 1):
        term = P_star @ (s * term)
        total += term
        if not term.any():
            break
    return total


def spectral_radius_A(chain: FiniteChain, traits: PatchTraits, kernel: DispersalKernel,
                      grid: Grid, M: int = 1000, tol: float = 1e-10) -> float:
    """Spectral radius of the linearisation of ``H`` at zero.

    The dual-chain weights are summed over characteristics against ``pi`` and
    ``a`` and folded into the dispersal matrix before the power iteration.
    """
    if not isinstance(chain, FiniteChain):
        raise TypeError("spectral_radius_A needs a finite chain")
    w = dual_series_weights(chain, traits, M)
    a = traits.tabulate(np.arange(chain.m))[1]
    A = np.einsum("j,kl->kl", chain.pi * a * w, integral_operator(kernel, grid))
    return _power_iteration(A, tol)


# ---------------------------------------------------------------------------
# verdict
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PersistenceReport:
    r_S: float
    r_M: float
    product: float
    verdict: str
    truncation_bound: float = 0.0
    mc_stderr: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def persistent(self) -> bool:
        return self.verdict == "persistent"

    def to_json(self) -> dict:
        return {"r_S": self.r_S, "r_M": self.r_M, "product": self.product,
                "verdict": self.verdict, "truncation_bound": self.truncation_bound,
                "mc_stderr": self.mc_stderr, "notes": list(self.notes)}


def _uncolonisable(chain: FiniteChain, traits: PatchTraits) -> np.ndarray:
    states = np.arange(chain.m)
    s = traits.tabulate(states)[0]
    return (s == 0) | (traits.fbar_prime0(states) == 0)


def check_assumptions(chain, traits: PatchTraits) -> list[str]:
    """Raise on (G), (H), (I); return notes, including a failed (J)."""
    col = traits.colonisation
    if not traits.phase_flag:
        raise AssumptionViolated("G", f"{col.name!r} is not phase structured")
    if not col.concave:
        raise AssumptionViolated("H", f"{col.name!r} is not concave")
    notes = []
    if isinstance(chain, FiniteChain):
        s, a = traits.tabulate(np.arange(chain.m))
        if s.max() >= 1.0:
            raise AssumptionViolated("I", f"sup s = {s.max()} is not below 1")
        theta1 = _uncolonisable(chain, traits)
        escape = chain.P_star[:, theta1].sum(axis=1) < 1.0
        if not np.any((chain.pi > 0) & (a > 0) & escape):
            notes.append("assumption (J) fails: no colonised patch ever contributes; r_S = 0")
    else:
        notes.append("assumption (J) assumed for sampler chains (a > 0 somewhere)")
    if not col.strictly_concave:
        notes.append(f"{col.name!r} is concave but not strictly concave")
    return notes


def persistence_verdict(chain, traits: PatchTraits, kernel: DispersalKernel, grid: Grid,
                        M_trunc: int = 1000, n_paths: int = 10_000, seed: int = 0) -> PersistenceReport:
    notes = check_assumptions(chain, traits)
    rs, se = r_S_estimate(chain, traits, M_trunc, n_paths=n_paths, seed=seed)
    rm = spectral_radius_M(kernel, grid)
    product = rs * rm
    bound = 0.0
    if isinstance(chain, FiniteChain):
        s, a = traits.tabulate(np.arange(chain.m))
        rho = s.max()
        bound = float(a.max() * traits.fbar_prime0(np.arange(chain.m)).max()
                      * rho ** (M_trunc + 1) / (1.0 - rho))
    verdict = "persistent" if product > 1.0 else "extinct"
    return PersistenceReport(rs, rm, product, verdict, bound, se, notes)


# ---------------------------------------------------------------------------
# life span
# ---------------------------------------------------------------------------


def lifespan_tails(chain, traits: PatchTraits, M: int, n_paths: int = 10_000, seed: int = 0) -> np.ndarray:
    """``tail(m) = E[prod_{n=0}^{m-1} s(theta_n)]`` for ``m = 0..M``."""
    tails = survival_moments(chain, traits, max(M, 1), n_paths, seed).tail
    return np.concatenate([[1.0], tails[:M]])


def lifespan_tail(chain, traits: PatchTraits, m: int, **kwargs) -> float:
    return float(lifespan_tails(chain, traits, m, **kwargs)[m])


def expected_lifespan(chain, traits: PatchTraits, M_trunc: int = 1000, **kwargs) -> float:
    """Sum of ``tail(m)`` for ``m = 0..M_trunc``."""
    return float(lifespan_tails(chain, traits, M_trunc, **kwargs).sum())


# ---------------------------------------------------------------------------
# comparing landscapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    seq1: np.ndarray
    seq2: np.ndarray
    relation: str
    ordering_holds: bool | None
    weighted1: np.ndarray | None = None
    weighted2: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["m", "seq1", "seq2", "seq2_le_seq1"])
        for m, (x, y) in enumerate(zip(self.seq1, self.seq2), start=1):
            w.writerow([m, repr(float(x)), repr(float(y)), int(y <= x)])
        return buf.getvalue()


def compare_landscapes(chain1, chain2, traits: PatchTraits, kernel: DispersalKernel, grid: Grid,
                       M: int = 1000, tol: float = 1e-8, rtol: float = 1e-12) -> ComparisonReport:
    """Check termwise moment dominance and, where it holds, the occupancy order.

    Neither sequence dominating gives ``relation="incomparable"`` and no
    equilibria are computed.
    """
    seq1 = survival_moments(chain1, traits, M).weighted
    seq2 = survival_moments(chain2, traits, M).weighted
    slack = rtol * np.maximum(np.abs(seq1), np.abs(seq2))
    two_le_one = bool(np.all(seq2 <= seq1 + slack))
    one_le_two = bool(np.all(seq1 <= seq2 + slack))
    if two_le_one and one_le_two:
        relation = "equal"
    elif two_le_one:
        relation = "first_dominates"
    elif one_le_two:
        relation = "second_dominates"
    else:
        return ComparisonReport(seq1, seq2, "incomparable", None)
    eq1 = equilibrium(chain1, traits, kernel, grid, M=M)
    eq2 = equilibrium(chain2, traits, kernel, grid, M=M)
    w1, w2 = eq1.weighted, eq2.weighted
    if relation == "equal":
        holds = bool(np.all(np.abs(w1 - w2) <= tol))
    elif relation == "first_dominates":
        holds = bool(np.all(w2 <= w1 + tol))
    else:
        holds = bool(np.all(w1 <= w2 + tol))
    return ComparisonReport(seq1, seq2, relation, holds, w1, w2)


@dataclass(frozen=True)
class StaticBoundReport:
    m: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    stderr: np.ndarray
    holds: np.ndarray

    @property
    def all_hold(self) -> bool:
        return bool(self.holds.all())


def static_bound_check(chain, traits: PatchTraits, m_max: int = 20, n_samples: int = 100_000,
                       seed: int = 0, tol: float = 1e-14) -> StaticBoundReport:
    """``E[prod_{n=0}^m s(theta_n)] <= E[s(theta_0)^(m+1)]`` for ``m = 0..m_max``.

    Exact for finite chains; otherwise both sides come from the same paths and
    the bound is accepted within three standard errors of the difference.
    """
    ms = np.arange(m_max + 1)
    if isinstance(chain, FiniteChain):
        s = traits.tabulate(np.arange(chain.m))[0]
        lhs = lifespan_tails(chain, traits, m_max + 1)[1:]
        rhs = np.array([chain.pi @ s ** (m + 1) for m in ms])
        se = np.zeros_like(lhs)
        return StaticBoundReport(ms, lhs, rhs, se, lhs <= rhs + tol)
    paths = stationary_paths(chain, n_samples, m_max, seed)
    s = np.asarray(traits.s(paths), dtype=float)
    prod = np.cumprod(s, axis=1)
    powers = s[:, :1] ** (ms + 1)[None, :]
    diff = powers - prod
    se = diff.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return StaticBoundReport(ms, prod.mean(axis=0), powers.mean(axis=0), se,
                             diff.mean(axis=0) >= -3.0 * se)
