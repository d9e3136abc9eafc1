"""Adaptive-granularity visual token aggregation.

A question-conditioned controller picks a granularity profile; the token
branch pools a feature grid, clusters it jointly in attention and feature
space, scores and selects the best clusters, and fuses the resulting semantic
tokens with the pixel and text streams. Training utilities cover both the
controller and the two-term confidence objective.
"""

from .clustering import (
    Centroid,
    Clustering,
    TokenDescriptor,
    cluster,
    cluster_descriptors,
    init_centroids,
    lloyd_step,
    make_descriptors,
    pair_cost,
    seed_indices,
)
from .config import DimensionConfig, PipelineConfig, SeedConfig, load_config
from .controller import (
    DEFAULT_PROFILES,
    ControllerParams,
    GranularityCorpus,
    GranularityDistribution,
    TextEmbedding,
    aggregate,
    encode_text_surrogate,
    expected_profile,
    init_controller_params,
    make_synthetic_corpus,
    predict,
    select,
    train,
    words_to_ids,
)
from .fileio import TensorContainer, read_corpus, read_tensor, write_corpus, write_tensor
from .fusion import (
    LinearMap,
    ProjectorBank,
    assemble,
    make_projector_bank,
    project,
    token_budget,
)
from .grids import (
    FeatureMap,
    GranularityProfile,
    SaliencyMap,
    TokenSequence,
    flatten_grid,
    grid_coords,
    normalize_saliency,
    unit_mass,
)
from .metrics import adjusted_rand_index
from .objective import (
    ConfidenceHead,
    LinearClassifier,
    LossBreakdown,
    TrainingExample,
    contribution_objective,
    likelihood,
    synthetic_task_loss,
    total_loss,
    train_heads,
)
from .pipeline import aggregate_tokens, run_pipeline, sweep
from .pooling import PoolKernel, build_kernel, pool_features, pool_saliency
from .scenes import SyntheticScene, generate_classed_scenes, generate_scene
from .selection import (
    ClusterScore,
    SemanticTokenSet,
    composite_score,
    emit_semantic_tokens,
    score_clusters,
    score_coherence,
    score_dispersion,
    score_size,
    select_topk,
)

__version__ = "0.1.0"
