"""Quality scoring of clusters and top-K semantic token synthesis.

Each cluster gets three bounded, dimensionless scores (spatial support,
feature homogeneity, spatial scatter) combined linearly into a composite;
the top-K composites are turned into saliency-weighted mean tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import Centroid, Clustering
from .errors import EmptyTokenSet, InputError, ZeroVector
from .grids import freeze

SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class ClusterScore:
    size_score: float
    coherence_score: float
    dispersion_score: float
    composite: float

    def as_dict(self) -> dict:
        return {
            "size": self.size_score,
            "coherence": self.coherence_score,
            "dispersion": self.dispersion_score,
            "composite": self.composite,
        }


@dataclass(frozen=True)
class SemanticTokenSet:
    """Selected-cluster tokens ordered by descending composite score."""

    tokens: np.ndarray
    source_clusters: tuple
    scores: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", freeze(self.tokens))
        object.__setattr__(self, "source_clusters", tuple(self.source_clusters))
        object.__setattr__(self, "scores", tuple(self.scores))


def score_size(centroid: Centroid, n_total: int) -> float:
    """Fraction of all tokens inside the cluster."""
    if not centroid.members:
        raise EmptyTokenSet("size score needs a non-empty cluster")
    return len(centroid.members) / n_total


def score_coherence(centroid: Centroid, features: np.ndarray) -> float:
    """One minus the mean cosine distance from member features to their mean.

    Singletons score 1. A zero-norm member (or a degenerate zero mean) has no
    direction to compare against and raises ZeroVector.
    """
    if not centroid.members:
        raise EmptyTokenSet("coherence score needs a non-empty cluster")
    members = np.asarray(features)[list(centroid.members)]
    if members.shape[0] == 1:
        return 1.0
    norms = np.linalg.norm(members, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("cluster member feature has zero norm")
    mean = members.mean(axis=0)
    mean_norm = np.linalg.norm(mean)
    if mean_norm == 0:
        raise ZeroVector("cluster feature mean has zero norm")
    cosines = (members @ mean) / (norms * mean_norm)
    coherence = 1.0 - float(np.mean(1.0 - cosines))
    return float(np.clip(coherence, 0.0, 1.0))


def score_dispersion(centroid: Centroid, coords: np.ndarray) -> float:
    """RMS distance of member coordinates to their mean, scaled by the
    unit-square diagonal so the score is resolution independent."""
    if not centroid.members:
        raise EmptyTokenSet("dispersion score needs a non-empty cluster")
    pts = np.asarray(coords)[list(centroid.members)]
    if pts.shape[0] == 1:
        return 0.0
    center = pts.mean(axis=0)
    rms = float(np.sqrt(np.mean(((pts - center) ** 2).sum(axis=1))))
    return rms / SQRT2


def composite_score(
    scores,
    size_weight: float = 1.0,
    coherence_weight: float = 1.0,
    dispersion_weight: float = 1.0,
) -> float:
    """Weighted combination: w1*size + w2*coherence - w3*dispersion."""
    if min(size_weight, coherence_weight, dispersion_weight) < 0:
        raise InputError("score weights must be >= 0")
    size, coherence, dispersion = scores
    return (
        size_weight * size
        + coherence_weight * coherence
        - dispersion_weight * dispersion
    )


def score_clusters(
    clustering: Clustering,
    features: np.ndarray,
    coords: np.ndarray,
    size_weight: float = 1.0,
    coherence_weight: float = 1.0,
    dispersion_weight: float = 1.0,
) -> list:
    """Score every cluster of a clustering; returns one ClusterScore per cluster."""
    n_total = int(clustering.assignments.shape[0])
    result = []
    for centroid in clustering.centroids:
        size = score_size(centroid, n_total)
        coherence = score_coherence(centroid, features)
        dispersion = score_dispersion(centroid, coords)
        result.append(
            ClusterScore(
                size_score=size,
                coherence_score=coherence,
                dispersion_score=dispersion,
                composite=composite_score(
                    (size, coherence, dispersion),
                    size_weight,
                    coherence_weight,
                    dispersion_weight,
                ),
            )
        )
    return result


def select_topk(scores, k: int) -> list:
    """Indices of the k largest scores, descending; ties go to the lower index."""
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    values = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(values.size), -values))
    return [int(i) for i in order[: min(k, values.size)]]


def emit_semantic_tokens(
    clustering: Clustering,
    selected,
    features: np.ndarray,
    saliencies: np.ndarray,
    scores,
) -> SemanticTokenSet:
    """Turn each selected cluster into one token: the saliency-weighted mean
    of its member features (unweighted if every member saliency is zero)."""
    features = np.asarray(features, dtype=float)
    saliencies = np.asarray(saliencies, dtype=float)
    tokens = []
    picked_scores = []
    for j in selected:
        if not 0 <= j < clustering.n_clusters:
            raise InputError(f"selected cluster index {j} out of range")
        members = list(clustering.centroids[j].members)
        weights = saliencies[members]
        total = weights.sum()
        if total > 0:
            token = (features[members] * (weights / total)[:, None]).sum(axis=0)
        else:
            token = features[members].mean(axis=0)
        tokens.append(token)
        picked_scores.append(scores[j])
    dim = features.shape[1]
    stacked = np.array(tokens) if tokens else np.zeros((0, dim))
    return SemanticTokenSet(
        tokens=stacked,
        source_clusters=tuple(int(j) for j in selected),
        scores=tuple(picked_scores),
    )
