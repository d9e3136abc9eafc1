"""Relation-aware mini k-means over pooled tokens.

Tokens are clustered in a joint space: an attention vector [x, y, saliency]
plus a feature-space regularizer weighted by ``feature_weight``. Seeding is
k-means++ in the joint cost with a saliency-weighted first pick; Lloyd sweeps
record the assignment objective so the trace is provably non-increasing.

After Lloyd converges, a first-improvement swap pass moves single tokens
between clusters whenever that strictly lowers the exact assignment
objective, then Lloyd resumes. Lloyd alone gets stuck on local optima often
enough that tiny instances miss the exhaustive-search optimum even across
many restarts; with the swap refinement the restart mechanism reliably
reaches it. All tie-breaks go to the lowest index, so runs are reproducible
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InputError,
    NumericError,
    TooManyClusters,
)
from .grids import FeatureMap, SaliencyMap, freeze, grid_coords

TRACE_TOL = -1e-9


@dataclass(frozen=True)
class TokenDescriptor:
    """One clusterable token: grid-center coordinate, saliency mass, feature vector."""

    coord: tuple
    saliency: float
    feature: np.ndarray

    def __post_init__(self):
        x, y = self.coord
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise InputError(f"coord must lie in the unit square, got {self.coord}")
        if not np.isfinite(self.saliency) or self.saliency < 0:
            raise InputError(f"saliency must be finite and >= 0, got {self.saliency}")
        object.__setattr__(self, "feature", freeze(self.feature))

    def attention_vector(self, saliency_scale: float = 1.0) -> np.ndarray:
        return np.array([self.coord[0], self.coord[1], saliency_scale * self.saliency])


@dataclass(frozen=True)
class Centroid:
    """Cluster center in both spaces plus its member token indices."""

    a_center: np.ndarray
    f_center: np.ndarray
    members: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "a_center", freeze(self.a_center))
        object.__setattr__(self, "f_center", freeze(self.f_center))
        object.__setattr__(self, "members", tuple(int(i) for i in self.members))


@dataclass(frozen=True)
class Clustering:
    """Converged clustering with its per-sweep objective trace."""

    centroids: tuple
    assignments: np.ndarray
    objective_trace: tuple
    seed: int
    feature_weight: float

    def __post_init__(self):
        assign = np.asarray(self.assignments, dtype=int).copy()
        assign.setflags(write=False)
        object.__setattr__(self, "assignments", assign)
        object.__setattr__(self, "centroids", tuple(self.centroids))
        trace = tuple(float(v) for v in self.objective_trace)
        object.__setattr__(self, "objective_trace", trace)
        for prev, cur in zip(trace, trace[1:]):
            if prev - cur < TRACE_TOL:
                raise NumericError(
                    f"objective trace increased: {prev!r} -> {cur!r}"
                )
        counts = np.bincount(assign, minlength=len(self.centroids))
        if len(self.centroids) and np.any(counts == 0):
            raise NumericError("clustering terminated with an empty cluster")

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]


def make_descriptors(features: FeatureMap, saliency: SaliencyMap) -> list:
    """Pair pooled features and saliency into row-major token descriptors."""
    if features.side != saliency.side:
        raise DimensionMismatch(
            f"feature side {features.side} != saliency side {saliency.side}"
        )
    coords = grid_coords(features.side)
    flat_features = features.flat_features()
    flat_sal = saliency.flat()
    return [
        TokenDescriptor(
            coord=(float(coords[i, 0]), float(coords[i, 1])),
            saliency=float(flat_sal[i]),
            feature=flat_features[i],
        )
        for i in range(coords.shape[0])
    ]


def pair_cost(token: TokenDescriptor, centroid: Centroid, feature_weight: float) -> float:
    """Joint cost: squared attention-space distance plus weighted feature distance."""
    if feature_weight < 0:
        raise InputError(f"feature_weight must be >= 0, got {feature_weight}")
    da = token.attention_vector() - centroid.a_center
    df = token.feature - centroid.f_center
    return float(da @ da + feature_weight * (df @ df))


def _stack(descriptors, saliency_scale: float):
    attention = np.array(
        [[d.coord[0], d.coord[1], saliency_scale * d.saliency] for d in descriptors]
    )
    features = np.array([d.feature for d in descriptors])
    return attention, features


def _cost_matrix(attention, features, centers_a, centers_f, feature_weight):
    da = ((attention[:, None, :] - centers_a[None, :, :]) ** 2).sum(axis=2)
    df = ((features[:, None, :] - centers_f[None, :, :]) ** 2).sum(axis=2)
    return da + feature_weight * df


def seed_indices(
    descriptors,
    n_clusters: int,
    rng_seed,
    feature_weight: float = 0.5,
    saliency_scale: float = 1.0,
) -> list:
    """Choose seeding token indices: saliency-weighted first pick, then
    k-means++ style picks proportional to the joint cost to the nearest seed."""
    n = len(descriptors)
    if n_clusters < 1:
        raise InputError(f"n_clusters must be >= 1, got {n_clusters}")
    if n_clusters > n:
        raise TooManyClusters(f"{n_clusters} clusters requested for {n} tokens")
    rng = np.random.default_rng(rng_seed)
    attention, features = _stack(descriptors, saliency_scale)
    weights = np.array([d.saliency for d in descriptors], dtype=float)
    taken = np.zeros(n, dtype=bool)
    chosen = []
    for k in range(n_clusters):
        w = np.where(taken, 0.0, weights)
        total = w.sum()
        if total > 0:
            p = w / total
        else:
            # degenerate weights (duplicate tokens, zero saliency): uniform
            # over the tokens not yet chosen keeps seeds distinct
            free = (~taken).astype(float)
            p = free / free.sum()
        idx = int(rng.choice(n, p=p))
        chosen.append(idx)
        taken[idx] = True
        cost_new = ((attention - attention[idx]) ** 2).sum(axis=1)
        cost_new += feature_weight * ((features - features[idx]) ** 2).sum(axis=1)
        weights = cost_new if k == 0 else np.minimum(weights, cost_new)
    return chosen


def _centroids_from_indices(descriptors, indices, saliency_scale):
    attention, features = _stack(descriptors, saliency_scale)
    return [
        Centroid(a_center=attention[i], f_center=features[i]) for i in indices
    ]


def init_centroids(
    descriptors,
    n_clusters: int,
    rng_seed,
    feature_weight: float = 0.5,
    saliency_scale: float = 1.0,
) -> list:
    """Seed centroids at chosen tokens; deterministic for a fixed seed."""
    indices = seed_indices(
        descriptors, n_clusters, rng_seed, feature_weight, saliency_scale
    )
    return _centroids_from_indices(descriptors, indices, saliency_scale)


def lloyd_step(
    descriptors,
    centroids,
    feature_weight: float,
    saliency_scale: float = 1.0,
):
    """One assignment + update sweep of the joint objective.

    Returns (assignments, new centroids, objective). The objective is the
    summed min-cost against the incoming centroids, recorded before the mean
    update so the trace over sweeps never increases. Clusters left empty by
    the assignment are reseeded to the worst-fit token that is not the sole
    member of its own cluster; this keeps the cardinality fixed.
    """
    if not centroids:
        raise InputError("lloyd_step needs at least one centroid")
    n = len(descriptors)
    m = len(centroids)
    attention, features = _stack(descriptors, saliency_scale)
    centers_a = np.array([c.a_center for c in centroids])
    centers_f = np.array([c.f_center for c in centroids])
    costs = _cost_matrix(attention, features, centers_a, centers_f, feature_weight)
    assignments = costs.argmin(axis=1)
    min_costs = costs[np.arange(n), assignments].copy()
    objective = float(min_costs.sum())

    counts = np.bincount(assignments, minlength=m)
    for j in np.flatnonzero(counts == 0):
        # worst-fit token first; index order breaks ties
        order = np.lexsort((np.arange(n), -min_costs))
        for i in order:
            if counts[assignments[i]] > 1:
                counts[assignments[i]] -= 1
                assignments[i] = j
                counts[j] = 1
                min_costs[i] = 0.0
                break

    new_centroids = []
    for j in range(m):
        members = np.flatnonzero(assignments == j)
        if members.size == 0:
            new_centroids.append(centroids[j])
            continue
        new_centroids.append(
            Centroid(
                a_center=attention[members].mean(axis=0),
                f_center=features[members].mean(axis=0),
                members=tuple(int(i) for i in members),
            )
        )
    return assignments, new_centroids, objective


def _joint_points(attention, features, feature_weight):
    # the joint cost is squared Euclidean on [a, sqrt(w) * f]
    return np.hstack([attention, np.sqrt(feature_weight) * features])


def _swap_pass(points, assignments, counts, sums, max_moves=10000):
    """Best-improvement single-token moves with exact mean bookkeeping.

    Moving token x from cluster A (size n_A) to B (size n_B) changes the
    assignment objective by n_B/(n_B+1) d(x, mu_B)^2 - n_A/(n_A-1) d(x, mu_A)^2.
    Each step applies the single most-improving move, which keeps the result
    independent of token ordering (up to exact ties). Tokens that are the
    sole member of their cluster stay put so no cluster empties. Returns
    True if any move was accepted.
    """
    n = points.shape[0]
    m = counts.shape[0]
    rows = np.arange(n)
    moved_any = False
    for _ in range(max_moves):
        means = sums / counts[:, None]
        dists = ((points[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        current = assignments
        shrink = counts[current] / np.maximum(counts[current] - 1.0, 1.0)
        shrink = shrink * dists[rows, current]
        delta = counts[None, :] / (counts[None, :] + 1.0) * dists - shrink[:, None]
        delta[rows, current] = np.inf
        delta[counts[current] <= 1, :] = np.inf
        flat = int(np.argmin(delta))
        i, j = divmod(flat, m)
        if delta[i, j] >= -1e-12:
            break
        a = assignments[i]
        sums[a] -= points[i]
        counts[a] -= 1
        sums[j] += points[i]
        counts[j] += 1
        assignments[i] = j
        moved_any = True
    return moved_any


def _assignment_objective(points, assignments, n_clusters):
    total = 0.0
    for j in range(n_clusters):
        members = points[assignments == j]
        if len(members):
            total += ((members - members.mean(axis=0)) ** 2).sum()
    return float(total)


def cluster_descriptors(
    descriptors,
    n_clusters: int,
    feature_weight: float = 0.5,
    seed: int = 0,
    max_iter: int = 50,
    tol: float = 1e-7,
    restarts: int = 1,
    saliency_scale: float = 1.0,
    init_indices=None,
) -> Clustering:
    """Run Lloyd sweeps to convergence plus swap refinement, best of
    ``restarts`` runs.

    ``init_indices`` forces the seeding tokens (single deterministic start);
    otherwise restart r derives its rng seed from (seed, r).
    """
    if n_clusters < 1:
        raise InputError(f"n_clusters must be >= 1, got {n_clusters}")
    if max_iter < 1:
        raise InputError(f"max_iter must be >= 1, got {max_iter}")
    if tol < 0:
        raise InputError(f"tol must be >= 0, got {tol}")
    if restarts < 1:
        raise InputError(f"restarts must be >= 1, got {restarts}")
    if n_clusters > len(descriptors):
        raise TooManyClusters(
            f"{n_clusters} clusters requested for {len(descriptors)} tokens"
        )

    attention, features = _stack(descriptors, saliency_scale)
    points = _joint_points(attention, features, feature_weight)

    best = None
    n_runs = 1 if init_indices is not None else restarts
    for r in range(n_runs):
        if init_indices is not None:
            indices = list(init_indices)
            if len(indices) != n_clusters:
                raise InputError(
                    f"init_indices has {len(indices)} entries for {n_clusters} clusters"
                )
        else:
            indices = seed_indices(
                descriptors, n_clusters, [seed, r], feature_weight, saliency_scale
            )
        centroids = _centroids_from_indices(descriptors, indices, saliency_scale)
        trace = []
        assignments = None

        def lloyd_to_convergence(centroids, budget):
            nonlocal assignments
            prev = None
            for _ in range(budget):
                assignments, centroids, objective = lloyd_step(
                    descriptors, centroids, feature_weight, saliency_scale
                )
                trace.append(objective)
                if prev is not None and abs(prev - objective) <= tol:
                    break
                prev = objective
            return centroids

        centroids = lloyd_to_convergence(centroids, max_iter)
        for _ in range(max_iter):
            counts = np.bincount(assignments, minlength=n_clusters).astype(float)
            sums = np.zeros((n_clusters, points.shape[1]))
            np.add.at(sums, assignments, points)
            if not _swap_pass(points, assignments, counts, sums):
                break
            trace.append(_assignment_objective(points, assignments, n_clusters))
            centroids = [
                Centroid(
                    a_center=attention[assignments == j].mean(axis=0),
                    f_center=features[assignments == j].mean(axis=0),
                    members=tuple(int(i) for i in np.flatnonzero(assignments == j)),
                )
                for j in range(n_clusters)
            ]
            centroids = lloyd_to_convergence(centroids, max_iter)

        candidate = Clustering(
            centroids=tuple(centroids),
            assignments=assignments,
            objective_trace=tuple(trace),
            seed=seed,
            feature_weight=feature_weight,
        )
        if best is None or candidate.final_objective < best.final_objective:
            best = candidate
    return best


def cluster(
    features: FeatureMap,
    saliency: SaliencyMap,
    n_clusters: int,
    feature_weight: float = 0.5,
    seed: int = 0,
    max_iter: int = 50,
    tol: float = 1e-7,
    restarts: int = 1,
    saliency_scale: float = 1.0,
    init_indices=None,
) -> Clustering:
    """Cluster a pooled feature/saliency grid into ``n_clusters`` groups."""
    descriptors = make_descriptors(features, saliency)
    return cluster_descriptors(
        descriptors,
        n_clusters,
        feature_weight=feature_weight,
        seed=seed,
        max_iter=max_iter,
        tol=tol,
        restarts=restarts,
        saliency_scale=saliency_scale,
        init_indices=init_indices,
    )
