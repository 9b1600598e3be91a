"""Flat run configuration loaded from JSON, the environment and flags.

Precedence, lowest first: built-in defaults, the config file (an explicit
path, else the file named by ``SCANREG_CONFIG``), then explicit overrides.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .descriptors import DEFAULT_RADIUS_MULTIPLIERS, ScaleSet
from .errors import ConfigError
from .multiview import MultiviewConfig
from .pairwise import PairwiseConfig, TricpParams

ENV_VAR = "SCANREG_CONFIG"

# file keys that differ from attribute names
_ALIASES = {"lambda": "lam", "K": "max_iterations"}


@dataclass
class Config:
    delta: float = 0.3
    full_propagation: bool = False
    full_propagation_fallback: bool = False
    descriptor_freq: int = 100
    model_descriptor_freq: int | None = None
    icp_freq: int = 10
    radius_multipliers: tuple = DEFAULT_RADIUS_MULTIPLIERS
    ransac_iterations: int = 1000
    ransac_seed: int = 0
    inlier_factor: float = 3.0
    min_consensus: int = 10
    d_factor: float = 3.0
    normal_angle_deg: float = 20.0
    length_factor: float = 3.0
    propagation_factor: float | None = None
    refine_full_resolution: bool = True
    lam: float = 2.0
    xi_min: float = 0.2
    max_iterations: int = 100
    epsilon: float | None = None
    epsilon_scale: float = 1e-6
    rude_augmentation: bool = False
    reference: int = 0
    desc_gate_factor: float = 3.0

    def __post_init__(self):
        self.radius_multipliers = tuple(float(m) for m in self.radius_multipliers)
        try:
            ScaleSet.from_resolution(1.0, self.radius_multipliers)
            self.to_multiview()
        except (ValueError, TypeError) as err:
            raise ConfigError(str(err)) from err

    def tricp(self) -> TricpParams:
        return TricpParams(self.lam, self.xi_min, self.max_iterations, self.epsilon, self.epsilon_scale)

    def to_pairwise(self) -> PairwiseConfig:
        return PairwiseConfig(
            delta=self.delta,
            full_propagation=self.full_propagation,
            full_propagation_fallback=self.full_propagation_fallback,
            descriptor_freq=self.descriptor_freq,
            model_descriptor_freq=self.model_descriptor_freq,
            icp_freq=self.icp_freq,
            radius_multipliers=self.radius_multipliers,
            ransac_iterations=self.ransac_iterations,
            ransac_seed=self.ransac_seed,
            inlier_factor=self.inlier_factor,
            min_consensus=self.min_consensus,
            d_factor=self.d_factor,
            normal_angle_deg=self.normal_angle_deg,
            length_factor=self.length_factor,
            propagation_factor=self.propagation_factor,
            refine_full_resolution=self.refine_full_resolution,
            tricp=self.tricp(),
        )

    def to_multiview(self) -> MultiviewConfig:
        return MultiviewConfig(self.to_pairwise(), self.reference, self.rude_augmentation, self.desc_gate_factor)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["radius_multipliers"] = list(self.radius_multipliers)
        return out


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, value):
    kind = _TYPES[name]
    if value is None:
        if "None" in kind:
            return None
        raise ConfigError(f"{name} may not be null")
    try:
        if kind.startswith("bool"):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind.startswith("int"):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind.startswith("float"):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "tuple":
            return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: invalid value {value!r}") from None
    return value


def normalize(mapping: dict) -> dict:
    """Map file keys to attribute names, rejecting unknown keys."""
    out = {}
    for key, value in mapping.items():
        name = _ALIASES.get(key, key).replace("-", "_")
        if name not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[name] = _coerce(name, value)
    return out


def read_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return normalize(doc)


def load_config(path=None, overrides: dict | None = None, environ=None) -> Config:
    environ = os.environ if environ is None else environ
    values: dict = {}
    path = path or environ.get(ENV_VAR) or None
    if path:
        values.update(read_config_file(path))
    if overrides:
        values.update(normalize({k: v for k, v in overrides.items()}))
    return Config(**values)
