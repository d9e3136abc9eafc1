"""Projection and assembly of the mixed token stream.

A bank of frozen linear maps (one per projector slot) lifts visual tokens to
the model dimension; the mixed sequence concatenates pixel tokens, semantic
tokens, and text tokens in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadGamma, DimensionMismatch
from .grids import (
    ROLE_PIXEL,
    ROLE_SEMANTIC,
    ROLE_TEXT,
    TokenSequence,
    freeze,
)


@dataclass(frozen=True)
class LinearMap:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = freeze(self.weight)
        bias = freeze(self.bias)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise DimensionMismatch(
                f"linear map shapes {weight.shape} / {bias.shape} are inconsistent"
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ProjectorBank:
    """Per-slot linear maps sharing one output dimension."""

    maps: tuple

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise DimensionMismatch("projector bank is empty")
        out = maps[0].out_dim
        if any(m.out_dim != out for m in maps):
            raise DimensionMismatch("projector maps disagree on output dimension")
        object.__setattr__(self, "maps", maps)

    @property
    def out_dim(self) -> int:
        return self.maps[0].out_dim

    def __len__(self) -> int:
        return len(self.maps)


def make_projector_bank(
    n_maps: int, in_dim: int, out_dim: int, seed: int = 0
) -> ProjectorBank:
    """Seeded random bank, frozen after creation; biases start at zero."""
    rng = np.random.default_rng(seed)
    maps = [
        LinearMap(
            weight=rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim),
            bias=np.zeros(out_dim),
        )
        for _ in range(n_maps)
    ]
    return ProjectorBank(maps=tuple(maps))


def project(tokens, bank: ProjectorBank, index: int) -> np.ndarray:
    """Apply the selected map to each token independently, order preserved."""
    if not 0 <= index < len(bank):
        raise BadGamma(
            f"projector index {index} outside bank of size {len(bank)}"
        )
    arr = np.asarray(tokens, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatch(f"tokens must be (n, dim), got shape {arr.shape}")
    m = bank.maps[index]
    if arr.shape[1] != m.in_dim:
        raise DimensionMismatch(
            f"token dim {arr.shape[1]} != projector input dim {m.in_dim}"
        )
    return arr @ m.weight.T + m.bias


def assemble(pixel_tokens, semantic_tokens, text_tokens) -> TokenSequence:
    """Concatenate pixel, semantic, and text tokens with role tags.

    All groups must already share the model dimension. Semantic tokens may
    be empty; order inside each group is preserved exactly.
    """
    pixel = np.asarray(pixel_tokens, dtype=float)
    text = np.asarray(text_tokens, dtype=float)
    if semantic_tokens is None:
        semantic = np.zeros((0, pixel.shape[1]))
    else:
        semantic = np.asarray(semantic_tokens, dtype=float)
        if semantic.size == 0:
            semantic = semantic.reshape(0, pixel.shape[1])
    for name, group in (("pixel", pixel), ("semantic", semantic), ("text", text)):
        if group.ndim != 2:
            raise DimensionMismatch(f"{name} tokens must be (n, dim)")
    dim = pixel.shape[1]
    if semantic.shape[1] != dim or text.shape[1] != dim:
        raise DimensionMismatch(
            f"token dims differ: pixel {dim}, semantic {semantic.shape[1]}, "
            f"text {text.shape[1]}"
        )
    roles = (
        (ROLE_PIXEL,) * pixel.shape[0]
        + (ROLE_SEMANTIC,) * semantic.shape[0]
        + (ROLE_TEXT,) * text.shape[0]
    )
    return TokenSequence(tokens=np.vstack([pixel, semantic, text]), roles=roles)


def token_budget(seq: TokenSequence) -> dict:
    """Exact role counts plus the semantic-to-pixel overhead ratio."""
    n_pixel = sum(1 for r in seq.roles if r == ROLE_PIXEL)
    n_semantic = sum(1 for r in seq.roles if r == ROLE_SEMANTIC)
    n_text = sum(1 for r in seq.roles if r == ROLE_TEXT)
    return {
        "n_pixel": n_pixel,
        "n_semantic": n_semantic,
        "n_text": n_text,
        "total": len(seq),
        "overhead_ratio": (n_semantic / n_pixel) if n_pixel else 0.0,
    }
