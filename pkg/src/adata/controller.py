"""Text-conditioned granularity controller.

Maps a tokenized question to a categorical distribution over granularity
profiles: a surrogate hashed-embedding encoder stands in for a real language
model block, mean pooling plus a projection yields a compact descriptor, and
a small MLP head produces the profile logits. Training is full-batch gradient
descent on cross-entropy against soft labels, implemented by hand so the
gradients can be checked against finite differences.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCorpus,
    EmptyQuestion,
    InputError,
)
from .grids import GranularityProfile, freeze

DEFAULT_PROFILES = (
    GranularityProfile(pool_factor=4, cluster_count=5, projector_index=0),
    GranularityProfile(pool_factor=2, cluster_count=20, projector_index=1),
    GranularityProfile(pool_factor=1, cluster_count=50, projector_index=2),
)

PROB_TOL = 1e-9

# Question vocabulary for the synthetic corpus. One keyword pool per
# granularity class, ordered coarse -> fine; filler words are shared.
FILLER_WORDS = (
    "what", "is", "are", "the", "a", "an", "in", "this", "image",
    "picture", "of", "does", "there", "how", "it", "you", "see",
)
COARSE_WORDS = (
    "scene", "overall", "whole", "many", "count", "objects", "animals",
    "landscape", "setting", "background", "crowd", "room", "layout",
    "total", "everything",
)
MEDIUM_WORDS = (
    "person", "object", "action", "doing", "holding", "wearing",
    "location", "position", "between", "next", "behind", "front",
    "relation", "activity", "gesture",
)
FINE_WORDS = (
    "color", "texture", "ear", "pattern", "stripe", "spot", "edge",
    "corner", "tiny", "detail", "letter", "digit", "material",
    "surface", "shade",
)

_VOCABULARY = tuple(FILLER_WORDS + COARSE_WORDS + MEDIUM_WORDS + FINE_WORDS)
_WORD_TO_ID = {word: i for i, word in enumerate(_VOCABULARY)}
_UNKNOWN_BASE = 10_000


def words_to_ids(text: str) -> list:
    """Whitespace tokenizer mapping known words to vocabulary ids and unknown
    words to a stable CRC-derived id. No subword handling."""
    words = re.findall(r"[a-z0-9]+", text.lower())
    if not words:
        raise EmptyQuestion("question contains no tokens")
    ids = []
    for word in words:
        if word in _WORD_TO_ID:
            ids.append(_WORD_TO_ID[word])
        else:
            ids.append(_UNKNOWN_BASE + zlib.crc32(word.encode()) % 100_000)
    return ids


@dataclass(frozen=True)
class TextEmbedding:
    """Per-token question states, shape (length, d_text)."""

    vectors: np.ndarray
    source: str = "surrogate"

    def __post_init__(self):
        arr = freeze(self.vectors)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch(f"embedding must be (length, dim), got {arr.shape}")
        if self.source not in ("surrogate", "external"):
            raise InputError(f"unknown embedding source {self.source!r}")
        object.__setattr__(self, "vectors", arr)

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ControllerParams:
    """Controller weights.

    ``desc_map`` projects the pooled text state to the descriptor space;
    ``hidden_w/hidden_b`` and ``logit_w/logit_b`` form the MLP head emitting
    one logit per profile.
    """

    desc_map: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    logit_w: np.ndarray
    logit_b: np.ndarray
    profiles: tuple = DEFAULT_PROFILES

    def __post_init__(self):
        for name in ("desc_map", "hidden_w", "hidden_b", "logit_w", "logit_b"):
            object.__setattr__(self, name, freeze(getattr(self, name)))
        profiles = tuple(self.profiles)
        if len(profiles) < 2:
            raise InputError(f"need at least 2 profiles, got {len(profiles)}")
        object.__setattr__(self, "profiles", profiles)
        d_desc, _ = self.desc_map.shape
        d_hidden, d_in = self.hidden_w.shape
        n, d_h2 = self.logit_w.shape
        if d_in != d_desc or d_h2 != d_hidden:
            raise DimensionMismatch("controller weight shapes are inconsistent")
        if self.hidden_b.shape != (d_hidden,) or self.logit_b.shape != (n,):
            raise DimensionMismatch("controller bias shapes are inconsistent")
        if n != len(profiles):
            raise DimensionMismatch(
                f"{n} logits for {len(profiles)} profiles"
            )

    @property
    def n_profiles(self) -> int:
        return len(self.profiles)

    @property
    def d_text(self) -> int:
        return self.desc_map.shape[1]

    @property
    def d_desc(self) -> int:
        return self.desc_map.shape[0]


@dataclass(frozen=True)
class GranularityDistribution:
    probs: np.ndarray
    profiles: tuple

    def __post_init__(self):
        probs = freeze(self.probs)
        profiles = tuple(self.profiles)
        if probs.ndim != 1 or probs.size != len(profiles):
            raise DimensionMismatch(
                f"{probs.size} probabilities for {len(profiles)} profiles"
            )
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > PROB_TOL:
            raise InputError("probabilities must be a simplex point")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "profiles", profiles)


@dataclass(frozen=True)
class GranularityCorpus:
    """Question token-id lists with soft profile labels."""

    items: tuple

    def __post_init__(self):
        items = []
        for ids, label in self.items:
            ids = tuple(int(i) for i in ids)
            if not ids:
                raise EmptyQuestion("corpus item has no tokens")
            label = freeze(label)
            if np.any(label < 0) or abs(float(label.sum()) - 1.0) > PROB_TOL:
                raise InputError("corpus label must be a simplex point")
            items.append((ids, label))
        object.__setattr__(self, "items", tuple(items))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def n_classes(self) -> int:
        return int(self.items[0][1].size) if self.items else 0


def encode_text_surrogate(token_ids, d_text: int = 64, seed: int = 0) -> TextEmbedding:
    """Deterministic stand-in for a language-model encoder.

    Each token id maps to a fixed pseudo-random unit vector (seeded by the
    id itself), scaled by a positional decay of 1/(1+i).
    """
    ids = [int(t) for t in token_ids]
    if not ids:
        raise EmptyQuestion("cannot encode an empty question")
    if any(t < 0 for t in ids):
        raise InputError("token ids must be non-negative")
    vectors = np.empty((len(ids), d_text))
    for i, token in enumerate(ids):
        rng = np.random.default_rng([seed, token])
        v = rng.standard_normal(d_text)
        vectors[i] = v / np.linalg.norm(v) / (1.0 + i)
    return TextEmbedding(vectors=vectors, source="surrogate")


def aggregate(embedding: TextEmbedding, params: ControllerParams) -> np.ndarray:
    """Compact descriptor: project the tanh of the mean token state."""
    if embedding.dim != params.d_text:
        raise DimensionMismatch(
            f"embedding dim {embedding.dim} != controller d_text {params.d_text}"
        )
    pooled = np.tanh(embedding.vectors.mean(axis=0))
    return params.desc_map @ pooled


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def distribution_from_logits(logits, profiles) -> GranularityDistribution:
    return GranularityDistribution(
        probs=_softmax(np.asarray(logits, dtype=float)), profiles=tuple(profiles)
    )


def predict(descriptor: np.ndarray, params: ControllerParams) -> GranularityDistribution:
    """MLP head: logits = W2 relu(W1 h + b1) + b2, softmax normalized."""
    descriptor = np.asarray(descriptor, dtype=float)
    if descriptor.shape != (params.d_desc,):
        raise DimensionMismatch(
            f"descriptor shape {descriptor.shape} != ({params.d_desc},)"
        )
    hidden = np.maximum(params.hidden_w @ descriptor + params.hidden_b, 0.0)
    logits = params.logit_w @ hidden + params.logit_b
    return distribution_from_logits(logits, params.profiles)


def select(dist: GranularityDistribution) -> GranularityProfile:
    """Most probable profile; ties resolve to the lowest index."""
    return dist.profiles[int(np.argmax(dist.probs))]


def expected_profile(dist: GranularityDistribution) -> np.ndarray:
    """Probability-weighted mean of (pool_factor, cluster_count, projector_index)."""
    table = np.array(
        [
            [p.pool_factor, p.cluster_count, p.projector_index]
            for p in dist.profiles
        ],
        dtype=float,
    )
    return dist.probs @ table


def init_controller_params(
    profiles=DEFAULT_PROFILES,
    d_text: int = 64,
    d_desc: int = 32,
    d_hidden: int = 64,
    seed: int = 0,
) -> ControllerParams:
    """Seeded scaled-normal initialization, biases at zero.

    Mean pooling over unit-norm token vectors attenuates the text state to a
    norm around 1/sqrt(d_text); the descriptor projection initializes at gain
    sqrt(d_text) to undo that, otherwise gradient descent at the default rate
    spends most of its budget growing weights.
    """
    rng = np.random.default_rng(seed)
    n = len(profiles)
    return ControllerParams(
        desc_map=rng.standard_normal((d_desc, d_text)) * np.sqrt(d_text),
        hidden_w=rng.standard_normal((d_hidden, d_desc)) / np.sqrt(d_desc),
        hidden_b=np.zeros(d_hidden),
        logit_w=rng.standard_normal((n, d_hidden)) / np.sqrt(d_hidden),
        logit_b=np.zeros(n),
        profiles=tuple(profiles),
    )


def _keyword_pools(n_classes: int) -> list:
    if n_classes < 2:
        raise InputError(f"need at least 2 classes, got {n_classes}")
    if n_classes == 2:
        return [list(COARSE_WORDS), list(FINE_WORDS)]
    pools = [list(COARSE_WORDS), list(MEDIUM_WORDS), list(FINE_WORDS)]
    for extra in range(3, n_classes):
        pools.append([f"scale{extra}mark{i}" for i in range(12)])
    return pools


def make_synthetic_corpus(
    n_profiles: int = 3, items_per_class: int = 200, seed: int = 0
) -> GranularityCorpus:
    """Generate labeled questions from class-specific keyword pools.

    Labels put 0.8 on the true class and spread the remainder uniformly.
    Replaces an external annotation pipeline; fully deterministic per seed.
    """
    if items_per_class < 1:
        raise InputError(f"items_per_class must be >= 1, got {items_per_class}")
    pools = _keyword_pools(n_profiles)
    rng = np.random.default_rng(seed)
    # Keywords go right after the opener, mirroring natural question shape
    # ("what color ...", "what animals ..."); the positional decay would bury
    # them behind a long shared prefix otherwise. Filler bigrams and an
    # occasional out-of-vocabulary entity word are interleaved so the trained
    # model learns to discount non-keyword directions wherever they appear.
    openers = ("what", "which", "how")
    fillers = (("is", "the"), ("are", "the"), ("is", "a"), ("of", "the"))
    closers = (
        ("in", "the", "image"),
        ("of", "this", "picture"),
        ("does", "it", "see"),
        ("are", "there"),
    )
    items = []
    for cls in range(n_profiles):
        label = np.full(n_profiles, 0.2 / (n_profiles - 1))
        label[cls] = 0.8
        for _ in range(items_per_class):
            opener = openers[int(rng.integers(len(openers)))]
            closer = closers[int(rng.integers(len(closers)))]
            n_keywords = int(rng.integers(2, 5))
            keywords = list(rng.choice(pools[cls], size=n_keywords, replace=False))
            words = [opener, keywords[0]]
            if rng.random() < 0.5:
                words += list(fillers[int(rng.integers(len(fillers)))])
            if rng.random() < 0.3:
                words.append(f"entity{int(rng.integers(400))}")
            words += keywords[1:]
            words += list(closer)
            items.append((tuple(words_to_ids(" ".join(words))), label.copy()))
    return GranularityCorpus(items=tuple(items))


# -- training -----------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.05
    epochs: int = 2000
    embed_seed: int = 1


@dataclass(frozen=True)
class ControllerFit:
    params: ControllerParams
    loss_trace: tuple


def corpus_inputs(corpus: GranularityCorpus, d_text: int, embed_seed: int):
    """Precompute (pooled tanh states, label matrix) for the whole corpus.

    The embeddings are fixed inputs during training, so this runs once."""
    if len(corpus) == 0:
        raise EmptyCorpus("corpus has no items")
    pooled = np.empty((len(corpus), d_text))
    labels = np.empty((len(corpus), corpus.n_classes))
    for b, (ids, label) in enumerate(corpus.items):
        emb = encode_text_surrogate(ids, d_text=d_text, seed=embed_seed)
        pooled[b] = np.tanh(emb.vectors.mean(axis=0))
        labels[b] = label
    return pooled, labels


def _forward(params: ControllerParams, pooled: np.ndarray):
    desc = pooled @ params.desc_map.T
    pre = desc @ params.hidden_w.T + params.hidden_b
    act = np.maximum(pre, 0.0)
    logits = act @ params.logit_w.T + params.logit_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return desc, pre, act, logits, probs


def corpus_loss(params: ControllerParams, corpus: GranularityCorpus, embed_seed: int) -> float:
    pooled, labels = corpus_inputs(corpus, params.d_text, embed_seed)
    *_, probs = _forward(params, pooled)
    return float(-np.mean(np.sum(labels * np.log(probs), axis=1)))


def _loss_and_grads(params: ControllerParams, pooled: np.ndarray, labels: np.ndarray):
    batch = pooled.shape[0]
    desc, pre, act, _, probs = _forward(params, pooled)
    loss = float(-np.mean(np.sum(labels * np.log(probs), axis=1)))
    d_logits = (probs - labels) / batch
    grads = {
        "logit_w": d_logits.T @ act,
        "logit_b": d_logits.sum(axis=0),
    }
    d_act = d_logits @ params.logit_w
    d_pre = d_act * (pre > 0)
    grads["hidden_w"] = d_pre.T @ desc
    grads["hidden_b"] = d_pre.sum(axis=0)
    d_desc = d_pre @ params.hidden_w
    grads["desc_map"] = d_desc.T @ pooled
    return loss, grads


def corpus_gradients(
    params: ControllerParams, corpus: GranularityCorpus, embed_seed: int
):
    """Analytic cross-entropy gradients for every parameter group."""
    pooled, labels = corpus_inputs(corpus, params.d_text, embed_seed)
    return _loss_and_grads(params, pooled, labels)


def train(
    corpus: GranularityCorpus,
    init: ControllerParams,
    settings: TrainSettings = TrainSettings(),
) -> ControllerFit:
    """Full-batch gradient descent on soft-label cross-entropy.

    Records the loss once per epoch (measured before the step). A zero
    learning rate leaves the parameters untouched, bitwise.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("cannot train on an empty corpus")
    if settings.lr < 0:
        raise InputError(f"lr must be >= 0, got {settings.lr}")
    if corpus.n_classes != init.n_profiles:
        raise DimensionMismatch(
            f"corpus has {corpus.n_classes}-way labels for "
            f"{init.n_profiles} profiles"
        )
    pooled, labels = corpus_inputs(corpus, init.d_text, settings.embed_seed)
    weights = {
        "desc_map": init.desc_map.copy(),
        "hidden_w": init.hidden_w.copy(),
        "hidden_b": init.hidden_b.copy(),
        "logit_w": init.logit_w.copy(),
        "logit_b": init.logit_b.copy(),
    }
    trace = []
    for _ in range(settings.epochs):
        current = ControllerParams(profiles=init.profiles, **weights)
        loss, grads = _loss_and_grads(current, pooled, labels)
        trace.append(loss)
        if settings.lr != 0:
            for name in weights:
                weights[name] = weights[name] - settings.lr * grads[name]
    final = ControllerParams(profiles=init.profiles, **weights)
    return ControllerFit(params=final, loss_trace=tuple(trace))


def holdout_accuracy(
    params: ControllerParams, corpus: GranularityCorpus, embed_seed: int
) -> float:
    """Argmax accuracy against the argmax of the soft labels."""
    pooled, labels = corpus_inputs(corpus, params.d_text, embed_seed)
    *_, probs = _forward(params, pooled)
    return float(np.mean(probs.argmax(axis=1) == labels.argmax(axis=1)))
