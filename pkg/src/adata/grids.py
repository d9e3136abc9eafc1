"""Dense grid containers and elementary grid arithmetic.

The pipeline operates on square feature grids and unit-mass saliency grids.
Arrays are copied on construction and frozen read-only, so downstream
operations can treat every input as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllZeroSaliency,
    DimensionMismatch,
    InputError,
    NonFiniteData,
)

ROLE_PIXEL = "pixel"
ROLE_SEMANTIC = "semantic"
ROLE_TEXT = "text"
TOKEN_ROLES = (ROLE_PIXEL, ROLE_SEMANTIC, ROLE_TEXT)

SALIENCY_MASS_TOL = 1e-9


def freeze(values, dtype=float) -> np.ndarray:
    """Copy to a read-only array, rejecting NaN and infinity."""
    arr = np.array(values, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteData("array contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """Square grid of per-location feature vectors, stored as (side, side, channels)."""

    values: np.ndarray

    def __post_init__(self):
        arr = freeze(self.values)
        if arr.ndim != 3:
            raise DimensionMismatch(f"feature grid needs 3 axes, got shape {arr.shape}")
        if arr.shape[0] != arr.shape[1]:
            # rectangular grids are rejected at ingestion; the bilinear pooling
            # form downstream requires a single square kernel
            raise DimensionMismatch(
                f"feature grid must be square, got {arr.shape[0]}x{arr.shape[1]}"
            )
        if arr.shape[0] < 1 or arr.shape[2] < 1:
            raise DimensionMismatch(f"feature grid axes must be positive, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def side(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_flat(cls, side: int, channels: int, data) -> "FeatureMap":
        flat = np.asarray(data, dtype=float).ravel()
        if flat.size != side * side * channels:
            raise DimensionMismatch(
                f"expected {side * side * channels} values for a "
                f"{side}x{side}x{channels} grid, got {flat.size}"
            )
        return cls(flat.reshape(side, side, channels))

    def flat_features(self) -> np.ndarray:
        """Row-major (side*side, channels) view of the grid."""
        return self.values.reshape(-1, self.channels)


@dataclass(frozen=True)
class SaliencyMap:
    """Non-negative per-location mass on a square grid, summing to one."""

    values: np.ndarray

    def __post_init__(self):
        arr = freeze(self.values)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise DimensionMismatch(f"saliency grid must be square 2-D, got {arr.shape}")
        if np.any(arr < 0):
            raise InputError("saliency values must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > SALIENCY_MASS_TOL:
            raise InputError(
                f"saliency mass must be 1 within {SALIENCY_MASS_TOL}, got {total!r}"
            )
        object.__setattr__(self, "values", arr)

    @property
    def side(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True)
class GranularityProfile:
    """One granularity hypothesis: spatial pooling factor, cluster count, projector slot."""

    pool_factor: int
    cluster_count: int
    projector_index: int

    def __post_init__(self):
        if self.pool_factor < 1:
            raise InputError(f"pool_factor must be >= 1, got {self.pool_factor}")
        if self.cluster_count < 1:
            raise InputError(f"cluster_count must be >= 1, got {self.cluster_count}")
        if self.projector_index < 0:
            raise InputError(f"projector_index must be >= 0, got {self.projector_index}")

    def as_dict(self) -> dict:
        return {
            "pool_factor": self.pool_factor,
            "cluster_count": self.cluster_count,
            "projector_index": self.projector_index,
        }


@dataclass(frozen=True)
class TokenSequence:
    """Ordered token vectors with a parallel role tag per token."""

    tokens: np.ndarray
    roles: tuple = field(default=())

    def __post_init__(self):
        arr = freeze(self.tokens)
        if arr.ndim != 2:
            raise DimensionMismatch(f"tokens must be (n, dim), got shape {arr.shape}")
        roles = tuple(self.roles)
        if len(roles) != arr.shape[0]:
            raise DimensionMismatch(
                f"{arr.shape[0]} tokens but {len(roles)} roles"
            )
        bad = sorted({r for r in roles} - set(TOKEN_ROLES))
        if bad:
            raise InputError(f"unknown token roles: {bad}")
        object.__setattr__(self, "tokens", arr)
        object.__setattr__(self, "roles", roles)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def grid_coords(side: int) -> np.ndarray:
    """Cell-center coordinates in [0,1]^2, row-major, shape (side*side, 2).

    Location (r, c) maps to ((c + 0.5) / side, (r + 0.5) / side) so scores built
    on coordinates are resolution independent.
    """
    centers = (np.arange(side) + 0.5) / side
    xs, ys = np.meshgrid(centers, centers)
    return np.column_stack([xs.ravel(), ys.ravel()])


def flatten_grid(feature_map: FeatureMap) -> list:
    """List the grid row-major as (coord, feature) pairs.

    The inverse is reshaping the features back to (side, side, channels); the
    mapping is a bijection.
    """
    coords = grid_coords(feature_map.side)
    flat = feature_map.flat_features()
    return [((float(x), float(y)), flat[i]) for i, (x, y) in enumerate(coords)]


def unit_mass(raw) -> np.ndarray:
    """Scale a non-negative array to unit total mass, preserving proportions."""
    arr = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteData("saliency input contains non-finite values")
    if np.any(arr < 0):
        raise InputError("saliency input must be non-negative")
    total = float(arr.sum())
    if total == 0.0:
        raise AllZeroSaliency("all saliency entries are zero")
    return arr / total


def normalize_saliency(raw) -> SaliencyMap:
    """Normalize a square grid (or its row-major flattening) into a SaliencyMap."""
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1:
        side = int(round(arr.size ** 0.5))
        if side * side != arr.size:
            raise DimensionMismatch(
                f"flat saliency of length {arr.size} is not a square grid"
            )
        arr = arr.reshape(side, side)
    return SaliencyMap(unit_mass(arr))
