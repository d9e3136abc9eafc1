"""End-to-end orchestration: question -> profile -> pooled grids -> clusters
-> semantic tokens -> mixed stream, plus the multi-scale sweep harness.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import controller as ctrl
from .clustering import Clustering, cluster
from .config import PipelineConfig, config_to_dict, semantic_token_count
from .errors import ConfigError, DimensionMismatch, TooManyClusters
from .fusion import ProjectorBank, assemble, make_projector_bank, project, token_budget
from .grids import FeatureMap, GranularityProfile, SaliencyMap, TokenSequence, grid_coords
from .metrics import adjusted_rand_index
from .objective import TrainingExample, condition_text
from .pooling import build_kernel, pool_features, pool_saliency
from .selection import (
    SemanticTokenSet,
    emit_semantic_tokens,
    score_clusters,
    select_topk,
)

# cell seeds derive from the base seed and the linear cell index; index 0
# keeps the base seed so a single-cell sweep matches a direct pipeline run
_CELL_MIX = 0x9E3779B1


def cell_seed(base_seed: int, index: int) -> int:
    return int(base_seed) ^ ((index * _CELL_MIX) & 0x7FFFFFFF)


@dataclass(frozen=True)
class AggregationResult:
    pooled_features: FeatureMap
    pooled_saliency: SaliencyMap
    clustering: Clustering
    scores: tuple
    selected: tuple
    semantic: SemanticTokenSet


def aggregate_tokens(
    features: FeatureMap,
    saliency: SaliencyMap,
    pool_factor: int,
    cluster_count: int,
    config: PipelineConfig,
    seed: int,
    top_k: int = None,
) -> AggregationResult:
    """Pool, cluster, score, and select: the full semantic-token branch."""
    kernel = build_kernel(features.side, pool_factor)
    pooled_f = pool_features(features, kernel)
    pooled_a = pool_saliency(saliency, kernel)
    clustering = cluster(
        pooled_f,
        pooled_a,
        cluster_count,
        feature_weight=config.feature_weight,
        seed=seed,
        max_iter=config.max_iter,
        tol=config.tol,
        restarts=config.restarts,
        saliency_scale=config.saliency_scale,
    )
    coords = grid_coords(pooled_f.side)
    flat = pooled_f.flat_features()
    scores = score_clusters(
        clustering,
        flat,
        coords,
        size_weight=config.size_weight,
        coherence_weight=config.coherence_weight,
        dispersion_weight=config.dispersion_weight,
    )
    if top_k is None:
        top_k = semantic_token_count(
            config, GranularityProfile(pool_factor, cluster_count, 0)
        )
    selected = select_topk([s.composite for s in scores], top_k)
    semantic = emit_semantic_tokens(
        clustering, selected, flat, pooled_a.flat(), scores
    )
    return AggregationResult(
        pooled_features=pooled_f,
        pooled_saliency=pooled_a,
        clustering=clustering,
        scores=tuple(scores),
        selected=tuple(selected),
        semantic=semantic,
    )


def default_corpus(config: PipelineConfig) -> ctrl.GranularityCorpus:
    return ctrl.make_synthetic_corpus(
        n_profiles=len(config.profiles),
        items_per_class=config.items_per_class,
        seed=config.seeds.corpus,
    )


def train_default_controller(config: PipelineConfig, corpus=None) -> ctrl.ControllerFit:
    """Train the controller on the synthetic corpus with config defaults."""
    if corpus is None:
        corpus = default_corpus(config)
    init = ctrl.init_controller_params(
        profiles=config.profiles,
        d_text=config.dims.d_text,
        d_desc=config.dims.d_desc,
        d_hidden=config.dims.d_hidden,
        seed=config.seeds.controller,
    )
    settings = ctrl.TrainSettings(
        lr=config.controller_lr,
        epochs=config.controller_epochs,
        embed_seed=config.seeds.embed,
    )
    return ctrl.train(corpus, init, settings)


def projector_bank(config: PipelineConfig, channels: int) -> ProjectorBank:
    return make_projector_bank(
        n_maps=len(config.profiles),
        in_dim=channels,
        out_dim=config.dims.d_model,
        seed=config.seeds.projector,
    )


@dataclass(frozen=True)
class PipelineResult:
    report: dict
    mix: TokenSequence


def run_pipeline(
    config: PipelineConfig,
    features: FeatureMap,
    saliency: SaliencyMap,
    question_ids,
    params: ctrl.ControllerParams = None,
) -> PipelineResult:
    """Run the full flow for one question over one feature grid.

    Stages: text encoding, profile prediction, pooling, clustering, cluster
    scoring and selection, projection, and stream assembly. The report embeds
    the effective config and per-stage wall-clock timings; callers that need
    byte-stable artifacts drop the timings entry before writing.
    """
    for profile in config.profiles:
        if features.side % profile.pool_factor != 0:
            raise ConfigError(
                f"profile pool_factor {profile.pool_factor} does not divide "
                f"grid side {features.side}"
            )
    if features.side != saliency.side:
        raise DimensionMismatch(
            f"feature side {features.side} != saliency side {saliency.side}"
        )

    timings = {}
    start = time.perf_counter()
    if params is None:
        params = train_default_controller(config).params
        timings["controller_train"] = time.perf_counter() - start

    t0 = time.perf_counter()
    embedding = ctrl.encode_text_surrogate(
        question_ids, d_text=config.dims.d_text, seed=config.seeds.embed
    )
    descriptor = ctrl.aggregate(embedding, params)
    dist = ctrl.predict(descriptor, params)
    profile = ctrl.select(dist)
    timings["controller"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    agg = aggregate_tokens(
        features,
        saliency,
        profile.pool_factor,
        profile.cluster_count,
        config,
        seed=config.seeds.cluster,
    )
    timings["aggregation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bank = projector_bank(config, features.channels)
    if config.pool_pixel_stream:
        pixel_raw = agg.pooled_features.flat_features()
    else:
        pixel_raw = features.flat_features()
    pixel_tokens = project(pixel_raw, bank, profile.projector_index)
    if len(agg.semantic.tokens):
        semantic_tokens = project(agg.semantic.tokens, bank, profile.projector_index)
    else:
        semantic_tokens = np.zeros((0, config.dims.d_model))
    if embedding.dim != config.dims.d_model:
        raise DimensionMismatch(
            f"text embedding dim {embedding.dim} != d_model {config.dims.d_model}; "
            "the text stream joins the mix unprojected"
        )
    mix = assemble(pixel_tokens, semantic_tokens, embedding.vectors)
    budget = token_budget(mix)
    timings["fusion"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - start

    report = {
        "selected_profile": profile.as_dict(),
        "distribution": [float(p) for p in dist.probs],
        "expected_profile": [float(v) for v in ctrl.expected_profile(dist)],
        "question_ids": [int(t) for t in question_ids],
        "objective_trace": [float(v) for v in agg.clustering.objective_trace],
        "cluster_scores": [
            {**score.as_dict(), "cluster": i, "selected": i in agg.selected}
            for i, score in enumerate(agg.scores)
        ],
        "selected_clusters": [int(i) for i in agg.selected],
        "token_budget": budget,
        "config": config_to_dict(config),
        "timings": timings,
    }
    return PipelineResult(report=report, mix=mix)


def pool_labels(labels, side: int, pool_factor: int) -> np.ndarray:
    """Majority label per pooling block (ties go to the lowest label)."""
    grid = np.asarray(labels, dtype=int).reshape(side, side)
    if side % pool_factor != 0:
        raise ConfigError(
            f"pool_factor {pool_factor} does not divide side {side}"
        )
    out_side = side // pool_factor
    out = np.empty(out_side * out_side, dtype=int)
    for r in range(out_side):
        for c in range(out_side):
            block = grid[
                r * pool_factor : (r + 1) * pool_factor,
                c * pool_factor : (c + 1) * pool_factor,
            ]
            out[r * out_side + c] = np.bincount(block.ravel()).argmax()
    return out


SWEEP_COLUMNS = (
    "pool_factor",
    "cluster_count",
    "n_tokens",
    "mean_ari",
    "mean_coherence",
    "n_pixel",
    "n_semantic",
    "overhead_ratio",
)


def _sweep_cell(config, scenes, pool_factor, cluster_count, seed):
    t0 = time.perf_counter()
    aris = []
    coherences = []
    budget = None
    for scene in scenes:
        agg = aggregate_tokens(
            scene.features,
            scene.saliency,
            pool_factor,
            cluster_count,
            config,
            seed=seed,
        )
        planted = pool_labels(scene.labels, scene.features.side, pool_factor)
        aris.append(adjusted_rand_index(agg.clustering.assignments, planted))
        coherences.append(
            float(np.mean([s.coherence_score for s in agg.scores]))
        )
        if budget is None:
            n_pixel = (
                agg.pooled_features.side**2
                if config.pool_pixel_stream
                else scene.features.side**2
            )
            n_semantic = len(agg.semantic.tokens)
            budget = {
                "n_pixel": n_pixel,
                "n_semantic": n_semantic,
                "overhead_ratio": n_semantic / n_pixel,
            }
    row = {
        "pool_factor": pool_factor,
        "cluster_count": cluster_count,
        "n_tokens": (scenes[0].features.side // pool_factor) ** 2,
        "mean_ari": float(np.mean(aris)),
        "mean_coherence": float(np.mean(coherences)),
        "runtime_s": time.perf_counter() - t0,
        **budget,
    }
    return row


def sweep(
    config: PipelineConfig,
    pool_factors,
    cluster_counts,
    scenes,
    jobs: int = 1,
) -> list:
    """Evaluate every (pool_factor, cluster_count) cell on planted scenes.

    Rows come back sorted by cell regardless of execution order; each cell
    derives its own clustering seed from the base cluster seed and its index.
    """
    if not scenes:
        raise ConfigError("sweep needs at least one scene")
    side = scenes[0].features.side
    if any(s.features.side != side for s in scenes):
        raise ConfigError("sweep scenes must share one grid side")
    cells = [(a, b) for a in pool_factors for b in cluster_counts]
    for a, b in cells:
        if side % a != 0:
            raise ConfigError(f"pool_factor {a} does not divide side {side}")
        if b > (side // a) ** 2:
            raise TooManyClusters(
                f"cluster_count {b} exceeds {(side // a) ** 2} tokens at "
                f"pool_factor {a}"
            )

    def run(indexed):
        index, (a, b) = indexed
        return _sweep_cell(config, scenes, a, b, cell_seed(config.seeds.cluster, index))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, enumerate(cells)))
    else:
        rows = [run(item) for item in enumerate(cells)]
    rows.sort(key=lambda r: (r["pool_factor"], r["cluster_count"]))
    return rows


def build_training_examples(
    scenes,
    config: PipelineConfig,
    params: ctrl.ControllerParams,
    profile: GranularityProfile,
    questions=None,
) -> list:
    """Aggregate scenes into projected example bundles for head training.

    Pooling and clustering run once here; training afterwards treats them as
    fixed preprocessing. Questions default to a tiny generated batch.
    """
    if questions is None:
        corpus = ctrl.make_synthetic_corpus(
            n_profiles=len(config.profiles),
            items_per_class=max(1, (len(scenes) + len(config.profiles) - 1) // len(config.profiles)),
            seed=config.seeds.corpus,
        )
        questions = [ids for ids, _ in corpus.items][: len(scenes)]
    bank = projector_bank(config, scenes[0].features.channels)
    examples = []
    for scene, question in zip(scenes, questions):
        agg = aggregate_tokens(
            scene.features,
            scene.saliency,
            profile.pool_factor,
            profile.cluster_count,
            config,
            seed=config.seeds.cluster,
        )
        if config.pool_pixel_stream:
            raw_pixel = agg.pooled_features.flat_features()
        else:
            raw_pixel = scene.features.flat_features()
        raw_semantic = agg.semantic.tokens
        embedding = ctrl.encode_text_surrogate(
            question, d_text=config.dims.d_text, seed=config.seeds.embed
        )
        descriptor = ctrl.aggregate(embedding, params)
        examples.append(
            TrainingExample(
                pixel_tokens=project(raw_pixel, bank, profile.projector_index),
                semantic_tokens=project(raw_semantic, bank, profile.projector_index),
                text_tokens=embedding.vectors,
                conditioner=condition_text(descriptor, params.desc_map),
                label=scene.class_label,
                raw_pixel=np.asarray(raw_pixel, dtype=float),
                raw_semantic=np.asarray(raw_semantic, dtype=float),
            )
        )
    return examples
