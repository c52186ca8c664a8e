"""Species and landscape ingredients.

Survival and weight maps, the colonisation catalogue, the exponential
dispersal kernel and the 1-d spatial domain with its midpoint quadrature.

Traits are vectorised callables of the patch characteristic. For a
:class:`~metapopsim.landscape.FiniteChain` the characteristic is the state
index, for the Beta-jump chain it is the survival probability itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UnsupportedDimension

# ---------------------------------------------------------------------------
# colonisation functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Colonisation:
    """Colonisation probability ``f(x; theta)``.

    Phase-structured entries have ``f = s(theta) * fbar(x; theta)``; ``fbar``
    and its slope at zero are then what the equilibrium analysis needs.
    """

    name: str
    params: dict = field(default_factory=dict)
    phase: bool = True
    concave: bool = True
    strictly_concave: bool = True

    def fbar(self, x, theta):
        x = np.asarray(x, dtype=float)
        if self.name == "phase_exponential":
            rate = _per_state(self.params.get("rate", 1.0), theta)
            return 1.0 - np.exp(-rate * x)
        if self.name == "phase_linear_capped":
            b = _per_state(self.params.get("b", 1.0), theta)
            return np.minimum(b * x, 1.0)
        if self.name == "hanski":
            beta = self.params.get("beta", 1.0)
            gamma = self.params.get("gamma", 1.0)
            return beta * x**2 / (gamma + beta * x**2)
        raise KeyError(f"unknown colonisation function {self.name!r}")

    def fbar_prime0(self, theta):
        if self.name == "phase_exponential":
            return _per_state(self.params.get("rate", 1.0), theta) * np.ones(np.shape(theta))
        if self.name == "phase_linear_capped":
            return _per_state(self.params.get("b", 1.0), theta) * np.ones(np.shape(theta))
        if self.name == "hanski":
            return np.zeros(np.shape(theta))
        raise KeyError(self.name)

    def fbar_independent_of_theta(self) -> bool:
        return all(np.ndim(v) == 0 for v in self.params.values())

    def to_json(self) -> dict:
        out = {"name": self.name}
        out.update({k: (np.asarray(v).tolist()) for k, v in self.params.items()})
        return out


def _per_state(value, theta):
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return value
    return value[np.asarray(theta, dtype=int)]


def phase_exponential(rate=1.0) -> Colonisation:
    return Colonisation("phase_exponential", {"rate": rate})


def phase_linear_capped(b) -> Colonisation:
    # concave, but flat beyond 1/b
    return Colonisation("phase_linear_capped", {"b": b}, strictly_concave=False)


def hanski(beta=1.0, gamma=1.0) -> Colonisation:
    """Sigmoidal colonisation; simulation only (not concave near zero)."""
    return Colonisation("hanski", {"beta": beta, "gamma": gamma}, phase=False,
                        concave=False, strictly_concave=False)


def colonisation_from_json(spec: dict) -> Colonisation:
    spec = dict(spec)
    name = spec.pop("name")
    factories = {"phase_exponential": phase_exponential,
                 "phase_linear_capped": phase_linear_capped,
                 "hanski": hanski}
    if name not in factories:
        raise KeyError(f"unknown colonisation function {name!r}")
    return factories[name](**spec)


# ---------------------------------------------------------------------------
# patch traits
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatchTraits:
    """``theta -> (s(theta), a(theta), f(x; theta))``."""

    s: Callable[[np.ndarray], np.ndarray]
    a: Callable[[np.ndarray], np.ndarray]
    colonisation: Colonisation
    spec: dict = field(default_factory=dict)

    @property
    def phase_flag(self) -> bool:
        return self.colonisation.phase

    @classmethod
    def tabular(cls, s, a, colonisation: Colonisation | None = None) -> "PatchTraits":
        """Traits for a finite chain, indexed by state."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        a_arr = np.asarray(a, dtype=float)
        if np.any((s_arr < 0) | (s_arr > 1)):
            raise ValueError("survival probabilities must lie in [0, 1]")
        if np.any(a_arr < 0):
            raise ValueError("weights must be non-negative")
        colonisation = colonisation or phase_exponential()
        s_fn = lambda th: s_arr[np.asarray(th, dtype=int)]
        if a_arr.ndim == 0:
            a_fn = lambda th: np.full(np.shape(th), float(a_arr))
        else:
            a_fn = lambda th: a_arr[np.asarray(th, dtype=int)]
        spec = {"survival": s_arr.tolist(), "weight": a_arr.tolist(),
                "colonisation": colonisation.to_json()}
        return cls(s_fn, a_fn, colonisation, spec)

    @classmethod
    def survival_state(cls, a=10.0, colonisation: Colonisation | None = None) -> "PatchTraits":
        """Traits for a chain whose state *is* the survival probability."""
        a = float(a)
        colonisation = colonisation or phase_exponential()
        spec = {"survival": "state", "weight": a, "colonisation": colonisation.to_json()}
        return cls(lambda th: np.asarray(th, dtype=float),
                   lambda th: np.full(np.shape(th), a), colonisation, spec)

    @classmethod
    def pulsed(cls, s_suitable: float, a_suitable: float, a_unsuitable: float,
               colonisation: Colonisation | None = None) -> "PatchTraits":
        """Two-state suitable/unsuitable traits with ``s(1) = f(., 1) = 0``.

        State 0 is suitable, state 1 unsuitable; ``a_unsuitable > a_suitable``
        gives pulsed dispersal from deteriorating patches.
        """
        return cls.tabular([s_suitable, 0.0], [a_suitable, a_unsuitable], colonisation)

    def f(self, x, theta):
        if self.colonisation.phase:
            return self.s(theta) * self.colonisation.fbar(x, theta)
        return self.colonisation.fbar(x, theta)

    def fbar(self, x, theta):
        return self.colonisation.fbar(x, theta)

    def fbar_prime0(self, theta):
        return self.colonisation.fbar_prime0(theta)

    def f_prime0(self, theta):
        if self.colonisation.phase:
            return self.s(theta) * self.fbar_prime0(theta)
        return self.fbar_prime0(theta)

    def tabulate(self, states) -> tuple[np.ndarray, np.ndarray]:
        states = np.asarray(states)
        return np.asarray(self.s(states), dtype=float), np.asarray(self.a(states), dtype=float)

    def to_json(self) -> dict:
        return dict(self.spec)


def colonisation_eval(x, theta, traits: PatchTraits):
    return traits.f(x, theta)


def traits_from_json(spec: dict) -> PatchTraits:
    col = colonisation_from_json(spec.get("colonisation", {"name": "phase_exponential"}))
    if spec.get("survival") == "state":
        return PatchTraits.survival_state(spec.get("weight", 10.0), col)
    return PatchTraits.tabular(spec["survival"], spec.get("weight", 1.0), col)


# ---------------------------------------------------------------------------
# dispersal and space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DispersalKernel:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def __call__(self, z, z_other):
        return dispersal(z, z_other, self)

    def matrix(self, z, z_other=None) -> np.ndarray:
        z = _points(z)
        z_other = z if z_other is None else _points(z_other)
        dist = np.sqrt(((z[:, None, :] - z_other[None, :, :]) ** 2).sum(axis=-1))
        return np.exp(-self.alpha * dist)


def _points(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def dispersal(z, z_other, kernel: DispersalKernel):
    """``exp(-alpha * |z - z_other|)`` with the Euclidean norm on the last axis."""
    diff = np.asarray(z, dtype=float) - np.asarray(z_other, dtype=float)
    dist = np.abs(diff) if diff.ndim == 0 else np.sqrt((np.atleast_1d(diff) ** 2).sum(axis=-1))
    return np.exp(-kernel.alpha * dist)


@dataclass(frozen=True)
class Grid:
    nodes: np.ndarray
    weights: np.ndarray
    density: np.ndarray

    @property
    def zeta_w(self) -> np.ndarray:
        """Quadrature weights already multiplied by the location density."""
        return self.density * self.weights

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True)
class SpatialDomain:
    """Box domain for patch locations.

    Only the uniform density is built in; ``density`` may be any vectorised
    callable that integrates to one over the box.
    """

    bounds: tuple = ((0.0, 10.0),)
    density: Callable | None = None

    @classmethod
    def interval(cls, lo: float, hi: float, density=None) -> "SpatialDomain":
        return cls(((float(lo), float(hi)),), density)

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds)))

    def zeta(self, z) -> np.ndarray:
        if self.density is not None:
            return np.asarray(self.density(z), dtype=float)
        return np.full(np.shape(z)[:1] if np.ndim(z) else (), 1.0 / self.volume)

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map ``(n, d)`` uniforms to locations; uniform density only."""
        if self.density is not None:
            raise NotImplementedError("sampling supports the uniform density only")
        u = np.asarray(u, dtype=float).reshape(len(u), self.d)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + u * (hi - lo)

    def to_json(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "density": "uniform"}


def build_grid(domain: SpatialDomain, n_nodes: int = 500) -> Grid:
    """Midpoint rule on a 1-d box."""
    if domain.d != 1:
        raise UnsupportedDimension(f"quadrature grid needs d = 1, got d = {domain.d}")
    if n_nodes < 2:
        raise ValueError("n_nodes must be at least 2")
    lo, hi = domain.bounds[0]
    h = (hi - lo) / n_nodes
    nodes = lo + h * (np.arange(n_nodes) + 0.5)
    return Grid(nodes, np.full(n_nodes, h), domain.zeta(nodes))


def single_node_grid(z: float = 0.0) -> Grid:
    """One-point grid with unit mass; the non-spatial limit."""
    return Grid(np.array([float(z)]), np.array([1.0]), np.array([1.0]))


def domain_from_json(spec: dict) -> SpatialDomain:
    if spec.get("density", "uniform") != "uniform":
        raise ValueError("only the uniform density is supported in JSON configs")
    bounds = spec.get("bounds", [0.0, 10.0])
    if np.ndim(bounds) == 1:
        bounds = [bounds]
    return SpatialDomain(tuple((float(lo), float(hi)) for lo, hi in bounds))
