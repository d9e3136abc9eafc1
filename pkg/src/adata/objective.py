"""Two-term training objective over mixed token streams.

Each token's usefulness under the question context is scored by a logistic
confidence head on a text-modulated token; the contribution objective mixes
the mean log-likelihoods of the pixel and semantic streams. The total loss
adds the negated streams to a synthetic task loss. Everything is trained by
hand-rolled full-batch gradient descent so analytic gradients can be checked
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCorpus,
    EmptyTokenSet,
    InputError,
)
from .fusion import LinearMap
from .grids import TokenSequence, freeze

_ONE_BELOW_1 = float(np.nextafter(1.0, 0.0))
_TINY = 1e-308


@dataclass(frozen=True)
class ConfidenceHead:
    """Logistic head scoring one token stream."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "w", freeze(self.w))
        if not np.isfinite(self.b):
            raise InputError("head bias must be finite")


@dataclass(frozen=True)
class LinearClassifier:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", freeze(self.weight))
        object.__setattr__(self, "bias", freeze(self.bias))


@dataclass(frozen=True)
class LossBreakdown:
    """Task loss plus the negated pixel/semantic expectations.

    ``weights`` stores (pixel_weight, semantic_weight, semantic_mix); the
    identity total = task + pixel_weight*pixel + semantic_weight*sema holds
    exactly by construction.
    """

    task: float
    pixel: float
    sema: float
    total: float
    weights: tuple


def condition_text(descriptor, desc_map) -> np.ndarray:
    """Lift the compact text descriptor back to text space via the transpose
    of the controller's descriptor projection."""
    desc_map = np.asarray(desc_map, dtype=float)
    descriptor = np.asarray(descriptor, dtype=float)
    if descriptor.shape != (desc_map.shape[0],):
        raise DimensionMismatch(
            f"descriptor shape {descriptor.shape} != ({desc_map.shape[0]},)"
        )
    return desc_map.T @ descriptor


def _fit_dim(vec: np.ndarray, dim: int) -> np.ndarray:
    # cyclic repeat / truncate so the conditioner matches any token dim
    if vec.size == dim:
        return vec
    return np.resize(vec, dim)


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def likelihood(token, conditioner, head: ConfidenceHead) -> float:
    """Probability in (0,1) that a token contributes under the text context."""
    token = np.asarray(token, dtype=float)
    modulated = token * _fit_dim(np.asarray(conditioner, dtype=float), token.size)
    z = float(head.w @ modulated + head.b)
    p = float(_sigmoid(z))
    return min(max(p, _TINY), _ONE_BELOW_1)


def log_likelihoods(tokens, conditioner, head: ConfidenceHead) -> np.ndarray:
    """Stable log sigmoid of the head response for a stack of tokens."""
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise EmptyTokenSet("log_likelihoods needs a non-empty (n, dim) stack")
    m = _fit_dim(np.asarray(conditioner, dtype=float), tokens.shape[1])
    z = tokens @ (head.w * m) + head.b
    return -np.logaddexp(0.0, -z)


def contribution_objective(
    pixel_tokens,
    semantic_tokens,
    conditioner,
    pixel_head: ConfidenceHead,
    semantic_head: ConfidenceHead,
    semantic_mix: float = 1.0,
) -> float:
    """Mean pixel log-likelihood plus ``semantic_mix`` times the semantic one.

    Always <= 0; approaches 0 only when every likelihood approaches 1.
    """
    pixel = np.asarray(pixel_tokens, dtype=float)
    semantic = np.asarray(semantic_tokens, dtype=float)
    if pixel.ndim != 2 or pixel.shape[0] == 0:
        raise EmptyTokenSet("contribution objective needs pixel tokens")
    if semantic.ndim != 2 or semantic.shape[0] == 0:
        raise EmptyTokenSet("contribution objective needs semantic tokens")
    pixel_term = float(log_likelihoods(pixel, conditioner, pixel_head).mean())
    sema_term = float(log_likelihoods(semantic, conditioner, semantic_head).mean())
    return pixel_term + semantic_mix * sema_term


def total_loss(
    task_loss: float,
    mean_log_pixel: float,
    mean_log_sema: float,
    pixel_weight: float,
    semantic_weight: float,
    semantic_mix: float = 1.0,
) -> LossBreakdown:
    """Combine the task loss with the negated stream expectations."""
    if pixel_weight < 0 or semantic_weight < 0:
        raise InputError("loss weights must be >= 0")
    pixel = -float(mean_log_pixel)
    sema = -float(mean_log_sema)
    total = task_loss + pixel_weight * pixel + semantic_weight * sema
    return LossBreakdown(
        task=float(task_loss),
        pixel=pixel,
        sema=sema,
        total=float(total),
        weights=(float(pixel_weight), float(semantic_weight), float(semantic_mix)),
    )


def synthetic_task_loss(seq, label: int, classifier: LinearClassifier) -> float:
    """Cross-entropy of a linear head over the mean of all tokens."""
    tokens = seq.tokens if isinstance(seq, TokenSequence) else np.asarray(seq, float)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise EmptyTokenSet("task loss needs a non-empty token sequence")
    mean = tokens.mean(axis=0)
    logits = classifier.weight @ mean + classifier.bias
    if not 0 <= label < logits.size:
        raise InputError(f"label {label} out of range for {logits.size} classes")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


# -- head training ------------------------------------------------------

@dataclass(frozen=True)
class TrainingExample:
    """One preprocessed scene: projected token groups, text conditioner, label.

    ``raw_pixel``/``raw_semantic`` hold the pre-projection tokens and are only
    needed when the projector itself is being trained.
    """

    pixel_tokens: np.ndarray
    semantic_tokens: np.ndarray
    text_tokens: np.ndarray
    conditioner: np.ndarray
    label: int
    raw_pixel: np.ndarray = None
    raw_semantic: np.ndarray = None


@dataclass(frozen=True)
class LossWeights:
    pixel: float = 0.1
    semantic: float = 0.1
    mix: float = 1.0


@dataclass(frozen=True)
class HeadTrainConfig:
    lr: float = 0.1
    steps: int = 500
    train_projector: bool = False


@dataclass(frozen=True)
class HeadFit:
    pixel_head: ConfidenceHead
    sema_head: ConfidenceHead
    classifier: LinearClassifier
    loss_trace: tuple
    projector: LinearMap = None


def _example_tokens(example: TrainingExample, projector: LinearMap):
    if projector is None:
        return example.pixel_tokens, example.semantic_tokens
    if example.raw_pixel is None or example.raw_semantic is None:
        raise InputError("projector training needs raw token groups")
    pix = example.raw_pixel @ projector.weight.T + projector.bias
    sem = example.raw_semantic @ projector.weight.T + projector.bias
    return pix, sem


def example_loss(
    example: TrainingExample,
    pixel_head: ConfidenceHead,
    sema_head: ConfidenceHead,
    classifier: LinearClassifier,
    weights: LossWeights,
    projector: LinearMap = None,
) -> LossBreakdown:
    pix, sem = _example_tokens(example, projector)
    all_tokens = np.vstack([pix, sem, example.text_tokens])
    task = synthetic_task_loss(all_tokens, example.label, classifier)
    log_pix = float(log_likelihoods(pix, example.conditioner, pixel_head).mean())
    log_sem = float(log_likelihoods(sem, example.conditioner, sema_head).mean())
    return total_loss(task, log_pix, log_sem, weights.pixel, weights.semantic, weights.mix)


def batch_loss(
    examples,
    pixel_head: ConfidenceHead,
    sema_head: ConfidenceHead,
    classifier: LinearClassifier,
    weights: LossWeights,
    projector: LinearMap = None,
) -> LossBreakdown:
    """Per-token means within each example, then the mean across examples."""
    if not examples:
        raise EmptyCorpus("batch loss needs at least one example")
    parts = [
        example_loss(e, pixel_head, sema_head, classifier, weights, projector)
        for e in examples
    ]
    task = float(np.mean([p.task for p in parts]))
    pixel = float(np.mean([p.pixel for p in parts]))
    sema = float(np.mean([p.sema for p in parts]))
    total = task + weights.pixel * pixel + weights.semantic * sema
    return LossBreakdown(
        task=task,
        pixel=pixel,
        sema=sema,
        total=total,
        weights=(weights.pixel, weights.semantic, weights.mix),
    )


def batch_gradients(
    examples,
    pixel_head: ConfidenceHead,
    sema_head: ConfidenceHead,
    classifier: LinearClassifier,
    weights: LossWeights,
    projector: LinearMap = None,
    train_projector: bool = False,
):
    """Analytic gradients of the batch total loss.

    Returns (LossBreakdown, grads) with grads keyed by parameter group.
    The projector entries appear only when ``train_projector`` is set.
    """
    if not examples:
        raise EmptyCorpus("gradients need at least one example")
    if train_projector and projector is None:
        raise InputError("train_projector requires a projector")
    n_classes, dim = classifier.weight.shape
    grads = {
        "pixel_w": np.zeros(dim),
        "pixel_b": 0.0,
        "sema_w": np.zeros(dim),
        "sema_b": 0.0,
        "clf_w": np.zeros((n_classes, dim)),
        "clf_b": np.zeros(n_classes),
    }
    if train_projector:
        grads["proj_w"] = np.zeros_like(projector.weight)
        grads["proj_b"] = np.zeros_like(projector.bias)

    tasks, pixels, semas = [], [], []
    batch = len(examples)
    for example in examples:
        pix, sem = _example_tokens(example, projector)
        text = example.text_tokens
        n_pix, n_sem, n_text = pix.shape[0], sem.shape[0], text.shape[0]
        n_tot = n_pix + n_sem + n_text
        cond = _fit_dim(np.asarray(example.conditioner, dtype=float), dim)

        # task term
        mean = (pix.sum(axis=0) + sem.sum(axis=0) + text.sum(axis=0)) / n_tot
        logits = classifier.weight @ mean + classifier.bias
        shifted = logits - logits.max()
        probs = np.exp(shifted) / np.exp(shifted).sum()
        tasks.append(float(np.log(np.exp(shifted).sum()) - shifted[example.label]))
        d_logits = probs.copy()
        d_logits[example.label] -= 1.0
        grads["clf_w"] += np.outer(d_logits, mean) / batch
        grads["clf_b"] += d_logits / batch
        d_mean = classifier.weight.T @ d_logits / batch

        # confidence terms: d(-log sigmoid(z))/dz = sigmoid(z) - 1
        z_pix = pix @ (pixel_head.w * cond) + pixel_head.b
        z_sem = sem @ (sema_head.w * cond) + sema_head.b
        pixels.append(float(np.logaddexp(0.0, -z_pix).mean()))
        semas.append(float(np.logaddexp(0.0, -z_sem).mean()))
        r_pix = (_sigmoid(z_pix) - 1.0) / n_pix
        r_sem = (_sigmoid(z_sem) - 1.0) / n_sem
        scale_p = weights.pixel / batch
        scale_s = weights.semantic / batch
        grads["pixel_w"] += scale_p * (r_pix @ pix) * cond
        grads["pixel_b"] += scale_p * r_pix.sum()
        grads["sema_w"] += scale_s * (r_sem @ sem) * cond
        grads["sema_b"] += scale_s * r_sem.sum()

        if train_projector:
            raw_all = np.vstack([example.raw_pixel, example.raw_semantic])
            # task path through the mean token
            grads["proj_w"] += np.outer(d_mean, raw_all.sum(axis=0)) / n_tot
            grads["proj_b"] += d_mean * ((n_pix + n_sem) / n_tot)
            # confidence paths through each projected token
            wp = pixel_head.w * cond
            ws = sema_head.w * cond
            grads["proj_w"] += scale_p * np.outer(wp, r_pix @ example.raw_pixel)
            grads["proj_b"] += scale_p * r_pix.sum() * wp
            grads["proj_w"] += scale_s * np.outer(ws, r_sem @ example.raw_semantic)
            grads["proj_b"] += scale_s * r_sem.sum() * ws

    task = float(np.mean(tasks))
    pixel = float(np.mean(pixels))
    sema = float(np.mean(semas))
    breakdown = LossBreakdown(
        task=task,
        pixel=pixel,
        sema=sema,
        total=task + weights.pixel * pixel + weights.semantic * sema,
        weights=(weights.pixel, weights.semantic, weights.mix),
    )
    return breakdown, grads


def train_heads(
    examples,
    config: HeadTrainConfig = HeadTrainConfig(),
    weights: LossWeights = LossWeights(),
    n_classes: int = 2,
    pixel_head: ConfidenceHead = None,
    sema_head: ConfidenceHead = None,
    classifier: LinearClassifier = None,
    projector: LinearMap = None,
) -> HeadFit:
    """Full-batch gradient descent over heads and classifier (and optionally
    the projector). Pooling and clustering are fixed preprocessing: examples
    arrive already aggregated. Loss is recorded before every step."""
    if not examples:
        raise EmptyCorpus("cannot train on zero scenes")
    if config.lr < 0:
        raise InputError(f"lr must be >= 0, got {config.lr}")
    dim = np.asarray(examples[0].pixel_tokens).shape[1]
    if pixel_head is None:
        pixel_head = ConfidenceHead(w=np.zeros(dim), b=0.0)
    if sema_head is None:
        sema_head = ConfidenceHead(w=np.zeros(dim), b=0.0)
    if classifier is None:
        classifier = LinearClassifier(
            weight=np.zeros((n_classes, dim)), bias=np.zeros(n_classes)
        )
    if not config.train_projector:
        # tokens are prebaked in the examples; a frozen projector plays no role
        projector = None
    trace = []
    for _ in range(config.steps):
        breakdown, grads = batch_gradients(
            examples,
            pixel_head,
            sema_head,
            classifier,
            weights,
            projector=projector,
            train_projector=config.train_projector,
        )
        trace.append(breakdown)
        if config.lr == 0:
            continue
        lr = config.lr
        pixel_head = ConfidenceHead(
            w=pixel_head.w - lr * grads["pixel_w"], b=pixel_head.b - lr * grads["pixel_b"]
        )
        sema_head = ConfidenceHead(
            w=sema_head.w - lr * grads["sema_w"], b=sema_head.b - lr * grads["sema_b"]
        )
        classifier = LinearClassifier(
            weight=classifier.weight - lr * grads["clf_w"],
            bias=classifier.bias - lr * grads["clf_b"],
        )
        if config.train_projector:
            projector = LinearMap(
                weight=projector.weight - lr * grads["proj_w"],
                bias=projector.bias - lr * grads["proj_b"],
            )
    return HeadFit(
        pixel_head=pixel_head,
        sema_head=sema_head,
        classifier=classifier,
        loss_trace=tuple(trace),
        projector=projector,
    )
