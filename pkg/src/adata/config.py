"""Pipeline configuration: dataclass defaults, JSON file loading, overrides.

The config file is plain JSON with the keys documented on the dataclasses
below. CLI flags override file values; the effective configuration is echoed
into every report for provenance.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .controller import DEFAULT_PROFILES
from .errors import ConfigError
from .grids import GranularityProfile

SEED_ENV_VAR = "ADATA_SEED"

# offsets used to derive role seeds from the base seed when a config file
# does not pin them explicitly
_SEED_OFFSETS = {
    "embed": 1,
    "projector": 2,
    "controller": 3,
    "cluster": 4,
    "corpus": 5,
    "scene": 6,
}


@dataclass(frozen=True)
class DimensionConfig:
    d_text: int = 64      # surrogate text embedding width
    d_desc: int = 32      # compact text descriptor width
    d_hidden: int = 64    # controller MLP hidden width
    channels: int = 8     # visual feature channels
    d_model: int = 64     # mixed-stream token width


@dataclass(frozen=True)
class SeedConfig:
    base: int = 0
    embed: int = 1
    projector: int = 2
    controller: int = 3
    cluster: int = 4
    corpus: int = 5
    scene: int = 6


@dataclass(frozen=True)
class PipelineConfig:
    profiles: tuple = DEFAULT_PROFILES
    grid_side: int = 16
    feature_weight: float = 0.5       # feature-distance weight in the cluster cost
    saliency_scale: float = 1.0       # scale of the saliency channel in the cluster space
    size_weight: float = 1.0
    coherence_weight: float = 1.0
    dispersion_weight: float = 1.0
    k_rule: str = "half_beta"         # or "fixed:<k>"
    semantic_mix: float = 1.0         # semantic share inside the contribution objective
    pixel_loss_weight: float = 0.1
    semantic_loss_weight: float = 0.1
    dims: DimensionConfig = field(default_factory=DimensionConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    max_iter: int = 50
    tol: float = 1e-7
    restarts: int = 1
    pool_pixel_stream: bool = False   # pool the pixel stream too, not just the semantic branch
    controller_lr: float = 0.05
    controller_epochs: int = 2000
    items_per_class: int = 200


def validate_config(config: PipelineConfig) -> PipelineConfig:
    if config.grid_side < 1:
        raise ConfigError(f"grid_side must be positive, got {config.grid_side}")
    for profile in config.profiles:
        if config.grid_side % profile.pool_factor != 0:
            raise ConfigError(
                f"pool_factor {profile.pool_factor} does not divide "
                f"grid_side {config.grid_side}"
            )
        if profile.projector_index >= len(config.profiles):
            raise ConfigError(
                f"projector_index {profile.projector_index} outside bank of "
                f"size {len(config.profiles)}"
            )
    parse_k_rule(config.k_rule)
    for name in (
        "feature_weight", "saliency_scale", "size_weight", "coherence_weight",
        "dispersion_weight", "semantic_mix", "pixel_loss_weight",
        "semantic_loss_weight", "tol",
    ):
        if getattr(config, name) < 0:
            raise ConfigError(f"{name} must be >= 0")
    if config.max_iter < 1 or config.restarts < 1:
        raise ConfigError("max_iter and restarts must be >= 1")
    return config


def parse_k_rule(rule: str):
    """Return a function mapping a profile's cluster count to K."""
    if rule == "half_beta":
        return lambda cluster_count: math.ceil(cluster_count / 2)
    if rule.startswith("fixed:"):
        try:
            k = int(rule.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad k_rule {rule!r}") from None
        if k < 1:
            raise ConfigError(f"fixed k must be >= 1, got {k}")
        return lambda cluster_count: k
    raise ConfigError(f"k_rule must be 'half_beta' or 'fixed:<k>', got {rule!r}")


def semantic_token_count(config: PipelineConfig, profile: GranularityProfile) -> int:
    return parse_k_rule(config.k_rule)(profile.cluster_count)


def _profiles_from(entries) -> tuple:
    out = []
    for entry in entries:
        unknown = set(entry) - {"pool_factor", "cluster_count", "projector_index"}
        if unknown:
            raise ConfigError(f"unknown profile keys: {sorted(unknown)}")
        out.append(GranularityProfile(**entry))
    return tuple(out)


def _sub_config(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path=None, overrides: dict = None) -> PipelineConfig:
    """Build the effective config: file values, then overrides, then seed
    resolution (unpinned role seeds derive from base + fixed offsets)."""
    data = {}
    if path is not None:
        raw = Path(path)
        if not raw.exists():
            raise ConfigError(f"config file not found: {raw}")
        try:
            data = json.loads(raw.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {raw} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {raw} must hold a JSON object")
    if overrides:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}

    known = {f.name for f in fields(PipelineConfig)} | {"seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    kwargs = {}
    if "profiles" in data:
        kwargs["profiles"] = _profiles_from(data.pop("profiles"))
    if "dims" in data:
        kwargs["dims"] = _sub_config(DimensionConfig, data.pop("dims"), "dims")

    seed_data = dict(data.pop("seeds", {}))
    unknown = set(seed_data) - {f.name for f in fields(SeedConfig)}
    if unknown:
        raise ConfigError(f"unknown seeds keys: {sorted(unknown)}")
    base_override = data.pop("seed", None)
    if base_override is None:
        base_override = os.environ.get(SEED_ENV_VAR)
    if base_override is not None:
        try:
            seed_data["base"] = int(base_override)
        except ValueError:
            raise ConfigError(f"seed must be an integer, got {base_override!r}") from None
    base = int(seed_data.get("base", 0))
    for role, offset in _SEED_OFFSETS.items():
        seed_data.setdefault(role, base + offset)
    seed_data["base"] = base
    kwargs["seeds"] = SeedConfig(**{k: int(v) for k, v in seed_data.items()})

    kwargs.update(data)
    try:
        config = PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return validate_config(config)


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "profiles": [p.as_dict() for p in config.profiles],
        "grid_side": config.grid_side,
        "feature_weight": config.feature_weight,
        "saliency_scale": config.saliency_scale,
        "size_weight": config.size_weight,
        "coherence_weight": config.coherence_weight,
        "dispersion_weight": config.dispersion_weight,
        "k_rule": config.k_rule,
        "semantic_mix": config.semantic_mix,
        "pixel_loss_weight": config.pixel_loss_weight,
        "semantic_loss_weight": config.semantic_loss_weight,
        "dims": vars(config.dims).copy(),
        "seeds": vars(config.seeds).copy(),
        "max_iter": config.max_iter,
        "tol": config.tol,
        "restarts": config.restarts,
        "pool_pixel_stream": config.pool_pixel_stream,
        "controller_lr": config.controller_lr,
        "controller_epochs": config.controller_epochs,
        "items_per_class": config.items_per_class,
    }
