"""Experiment configuration loaded from JSON."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .landscape import chain_from_json
from .patch import DispersalKernel, domain_from_json, traits_from_json

FIG1_PANELS = (
    {"aL": 1.0, "bL": 0.1, "aR": 1.0, "bR": 1.0},
    {"aL": 1.0, "bL": 1.0, "aR": 1.0, "bR": 20.0},
)

_KNOWN = {
    "landscape", "traits", "kernel", "domain", "n_patches", "T_steps", "grid_nodes",
    "series_truncation", "mc_paths", "seed", "output_dir", "q0", "burn_in", "replicates",
    "fig1", "fig2", "tol", "max_iter",
}


@dataclass
class ExperimentConfig:
    landscape: dict
    traits: dict
    seed: int
    kernel: dict = field(default_factory=lambda: {"alpha": 1.0})
    domain: dict = field(default_factory=lambda: {"bounds": [0.0, 10.0], "density": "uniform"})
    n_patches: int = 50
    T_steps: int = 10_000
    grid_nodes: int = 500
    series_truncation: int = 1000
    mc_paths: int = 1000
    output_dir: str = "out"
    q0: float = 1.0
    burn_in: int = 0
    replicates: int = 1
    tol: float = 1e-9
    max_iter: int = 50_000
    fig1: dict = field(default_factory=dict)
    fig2: dict = field(default_factory=dict)

    # built objects
    def chain(self):
        return _build("landscape", chain_from_json, self.landscape)

    def patch_traits(self):
        return _build("traits", traits_from_json, self.traits)

    def dispersal(self) -> DispersalKernel:
        return _build("kernel", lambda k: DispersalKernel(float(k.get("alpha", 1.0))), self.kernel)

    def spatial_domain(self):
        return _build("domain", domain_from_json, self.domain)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in sorted(_KNOWN)}

    def sha256(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(path, fn, spec):
    try:
        return fn(spec)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _int(raw, key, minimum):
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    unknown = set(raw) - _KNOWN
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    for key in ("landscape", "traits", "seed"):
        if key not in raw:
            raise ConfigError(key, "required field missing")
    for key in ("landscape", "traits", "kernel", "domain", "fig1", "fig2"):
        if key in raw and not isinstance(raw[key], dict):
            raise ConfigError(key, "expected an object")
    land = raw["landscape"]
    if "beta_jump" in land:
        for k in ("aL", "bL", "aR", "bR"):
            if k not in land["beta_jump"]:
                raise ConfigError(f"landscape.beta_jump.{k}", "required field missing")
    elif "P" not in land:
        raise ConfigError("landscape", "expected 'P' or 'beta_jump'")
    if "colonisation" in raw["traits"] and "name" not in raw["traits"]["colonisation"]:
        raise ConfigError("traits.colonisation.name", "required field missing")
    values = {}
    for key, minimum in (("seed", 0), ("n_patches", 1), ("T_steps", 1), ("grid_nodes", 2),
                         ("series_truncation", 1), ("mc_paths", 2), ("burn_in", 0),
                         ("replicates", 1), ("max_iter", 1)):
        if key in raw:
            values[key] = _int(raw, key, minimum)
    if "q0" in raw and not (isinstance(raw["q0"], (int, float)) and 0 <= raw["q0"] <= 1):
        raise ConfigError("q0", "expected a probability")
    alpha = raw.get("kernel", {}).get("alpha", 1.0)
    if not isinstance(alpha, (int, float)) or alpha <= 0:
        raise ConfigError("kernel.alpha", "expected a positive number")
    merged = {**raw, **values}
    cfg = ExperimentConfig(**merged)
    cfg.chain()
    cfg.patch_traits()
    cfg.spatial_domain()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    return parse_config(raw)


def fig2_config(panel: int = 0, seed: int = 1, **overrides) -> ExperimentConfig:
    """Configuration of one row of the occupancy-versus-location comparison."""
    raw = {
        "landscape": {"beta_jump": {**FIG1_PANELS[panel], "p_slope": 10.0, "p_knee": 0.9}},
        "traits": {"survival": "state", "weight": 10.0,
                   "colonisation": {"name": "phase_exponential", "rate": 1.0}},
        "kernel": {"alpha": 1.0},
        "domain": {"bounds": [0.0, 10.0], "density": "uniform"},
        "seed": seed,
    }
    raw.update(overrides)
    return parse_config(raw)
