"""Granularity-guided spatial abstraction of feature and saliency grids.

Pooling is a bilinear form K^T X K with a block-average kernel K whose
columns sum to one, so constant grids are fixed points and a pooling factor
of 1 is the identity. Saliency is renormalized to unit mass afterwards;
block ordering is unaffected because every block divides by the same factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InputError, NonDivisible
from .grids import FeatureMap, SaliencyMap, freeze

MASS_TOL = 1e-9


@dataclass(frozen=True)
class PoolKernel:
    """Block-average pooling kernel, shape (side_in, side_out)."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = freeze(self.matrix)
        if arr.ndim != 2 or arr.shape[0] < arr.shape[1] or arr.shape[1] < 1:
            raise DimensionMismatch(f"pooling kernel has invalid shape {arr.shape}")
        object.__setattr__(self, "matrix", arr)

    @property
    def side_in(self) -> int:
        return self.matrix.shape[0]

    @property
    def side_out(self) -> int:
        return self.matrix.shape[1]


def build_kernel(side_in: int, pool_factor: int) -> PoolKernel:
    """Build the block-average kernel for one spatial axis.

    Column j carries 1/pool_factor on rows [j*pool_factor, (j+1)*pool_factor)
    and zero elsewhere; pool_factor 1 yields the identity matrix.
    """
    if side_in < 1:
        raise InputError(f"side_in must be positive, got {side_in}")
    if pool_factor < 1:
        raise InputError(f"pool_factor must be >= 1, got {pool_factor}")
    if side_in % pool_factor != 0:
        raise NonDivisible(
            f"pool_factor {pool_factor} does not divide grid side {side_in}"
        )
    side_out = side_in // pool_factor
    matrix = np.zeros((side_in, side_out))
    for j in range(side_out):
        matrix[j * pool_factor : (j + 1) * pool_factor, j] = 1.0 / pool_factor
    return PoolKernel(matrix)


def _bilinear(kernel: PoolKernel, grid: np.ndarray) -> np.ndarray:
    m = kernel.matrix
    return m.T @ grid @ m


def pool_features(features: FeatureMap, kernel: PoolKernel) -> FeatureMap:
    """Pool each channel independently: out = K^T grid K."""
    if features.side != kernel.side_in:
        raise DimensionMismatch(
            f"feature side {features.side} does not match kernel side_in {kernel.side_in}"
        )
    pooled = np.einsum(
        "ri,rcx,cj->ijx", kernel.matrix, features.values, kernel.matrix
    )
    return FeatureMap(pooled)


def pool_saliency(saliency: SaliencyMap, kernel: PoolKernel) -> SaliencyMap:
    """Pool saliency bilinearly, then restore unit mass.

    The block average scales total mass by 1/pool_factor^2; dividing it out
    keeps the SaliencyMap invariant without disturbing relative ordering.
    The division is skipped when the mass is already within tolerance so the
    identity kernel reproduces its input bitwise.
    """
    if saliency.side != kernel.side_in:
        raise DimensionMismatch(
            f"saliency side {saliency.side} does not match kernel side_in {kernel.side_in}"
        )
    pooled = _bilinear(kernel, saliency.values)
    total = float(pooled.sum())
    if abs(total - 1.0) > MASS_TOL:
        pooled = pooled / total
    return SaliencyMap(pooled)
