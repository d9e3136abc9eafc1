"""Synthetic planted-blob scenes for recovery and training tests.

A scene is a square feature grid with G blobs: each grid cell takes the
feature signature of its nearest blob center plus small noise, and the
saliency field peaks on the centers. The planted per-cell labels are the
clustering ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .grids import FeatureMap, SaliencyMap, freeze, grid_coords, unit_mass


@dataclass(frozen=True)
class SyntheticScene:
    features: FeatureMap
    saliency: SaliencyMap
    labels: np.ndarray
    class_label: int
    signatures: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int).copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "signatures", freeze(self.signatures))
        object.__setattr__(self, "centers", freeze(self.centers))

    @property
    def n_blobs(self) -> int:
        return self.signatures.shape[0]


def _blob_signatures(rng, n_blobs, channels, separation):
    """Random signatures rescaled so every pairwise distance >= separation."""
    sig = rng.standard_normal((n_blobs, channels)) * separation
    if n_blobs == 1:
        return sig
    dists = np.linalg.norm(sig[:, None, :] - sig[None, :, :], axis=2)
    min_pair = dists[~np.eye(n_blobs, dtype=bool)].min()
    if min_pair <= 0:
        # astronomically unlikely; nudge apart deterministically
        sig += np.arange(n_blobs)[:, None] * separation
        dists = np.linalg.norm(sig[:, None, :] - sig[None, :, :], axis=2)
        min_pair = dists[~np.eye(n_blobs, dtype=bool)].min()
    if min_pair < separation:
        sig *= separation / min_pair
    return sig


def _blob_centers(rng, n_blobs, coords):
    """Spread blob centers so each claims at least one grid cell."""
    for _ in range(64):
        centers = rng.uniform(0.1, 0.9, size=(n_blobs, 2))
        d = np.linalg.norm(coords[:, None, :] - centers[None, :, :], axis=2)
        labels = d.argmin(axis=1)
        if np.bincount(labels, minlength=n_blobs).min() > 0:
            return centers, labels
    # fall back to a jittered diagonal layout, which always separates
    ts = (np.arange(n_blobs) + 0.5) / n_blobs
    centers = np.column_stack([ts, ts]) + rng.uniform(-0.02, 0.02, (n_blobs, 2))
    d = np.linalg.norm(coords[:, None, :] - centers[None, :, :], axis=2)
    return centers, d.argmin(axis=1)


def generate_scene(
    n_blobs: int,
    side: int,
    channels: int,
    separation: float = 10.0,
    seed: int = 0,
    noise: float = None,
    class_label: int = 0,
    feature_shift=None,
    saliency_width: float = 0.12,
) -> SyntheticScene:
    """Deterministic scene with recoverable planted blob labels.

    ``noise`` defaults to separation/20, keeping the intra-blob spread an
    order of magnitude below the inter-blob signature distance.
    ``feature_shift`` adds a constant vector to every cell, which makes
    scenes of different classes linearly separable by their mean token.
    """
    if n_blobs < 1 or side < 1 or channels < 1:
        raise InputError("n_blobs, side, and channels must be positive")
    if n_blobs > side * side:
        raise InputError(f"{n_blobs} blobs cannot fit a {side}x{side} grid")
    if separation <= 0:
        raise InputError(f"separation must be positive, got {separation}")
    if noise is None:
        noise = separation / 20.0

    rng = np.random.default_rng(seed)
    coords = grid_coords(side)
    signatures = _blob_signatures(rng, n_blobs, channels, separation)
    centers, labels = _blob_centers(rng, n_blobs, coords)

    cells = signatures[labels] + rng.normal(0.0, noise, size=(side * side, channels))
    if feature_shift is not None:
        cells = cells + np.asarray(feature_shift, dtype=float)
    features = FeatureMap(cells.reshape(side, side, channels))

    d2 = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    raw = np.exp(-d2 / (2.0 * saliency_width**2)).sum(axis=1) + 1e-3
    saliency = SaliencyMap(unit_mass(raw).reshape(side, side))

    return SyntheticScene(
        features=features,
        saliency=saliency,
        labels=labels,
        class_label=int(class_label),
        signatures=signatures,
        centers=centers,
    )


def generate_classed_scenes(
    n_classes: int,
    scenes_per_class: int,
    n_blobs: int,
    side: int,
    channels: int,
    separation: float = 10.0,
    seed: int = 0,
    class_gap: float = None,
) -> list:
    """Scenes whose class is encoded as a constant feature offset.

    The offset magnitude defaults to 3x the blob separation so the scene
    classes stay linearly separable by the mean token.
    """
    if n_classes < 2 or scenes_per_class < 1:
        raise InputError("need >= 2 classes and >= 1 scene per class")
    if class_gap is None:
        class_gap = 3.0 * separation
    direction = np.zeros(channels)
    direction[0] = 1.0
    scenes = []
    for cls in range(n_classes):
        for k in range(scenes_per_class):
            scenes.append(
                generate_scene(
                    n_blobs,
                    side,
                    channels,
                    separation=separation,
                    seed=seed + 1009 * cls + k,
                    class_label=cls,
                    feature_shift=cls * class_gap * direction,
                )
            )
    return scenes
