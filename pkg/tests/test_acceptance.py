"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.
"""

import io
import itertools
import json
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from adata.cli import main as cli_main
from adata.clustering import TokenDescriptor, cluster, cluster_descriptors
from adata.config import load_config
from adata.controller import (
    GranularityCorpus,
    ControllerParams,
    TrainSettings,
    aggregate,
    corpus_gradients,
    corpus_loss,
    distribution_from_logits,
    encode_text_surrogate,
    holdout_accuracy,
    init_controller_params,
    make_synthetic_corpus,
    predict,
    select,
    train,
    words_to_ids,
)
from adata.fileio import TensorContainer, read_tensor, write_tensor
from adata.fusion import LinearMap
from adata.grids import FeatureMap, normalize_saliency
from adata.metrics import adjusted_rand_index
from adata.objective import (
    ConfidenceHead,
    HeadTrainConfig,
    LinearClassifier,
    LossWeights,
    batch_gradients,
    batch_loss,
    contribution_objective,
    total_loss,
    train_heads,
)
from adata.pipeline import run_pipeline, sweep, train_default_controller
from adata.pooling import build_kernel, pool_features, pool_saliency
from adata.scenes import generate_classed_scenes, generate_scene
from adata.selection import composite_score, select_topk


def _report(number, name, started):
    elapsed = time.perf_counter() - started
    print(f"ACCEPTANCE {number} {name}: PASS ({elapsed:.2f}s)")
    return elapsed


@pytest.fixture(scope="module")
def config():
    return load_config()


@pytest.fixture(scope="module")
def default_controller(config):
    return train_default_controller(config).params


def test_criterion_1_pooling_identity(rng):
    started = time.perf_counter()
    fm = FeatureMap(rng.normal(size=(16, 16, 8)))
    sal = normalize_saliency(rng.uniform(0.01, 1.0, size=(16, 16)))

    identity = build_kernel(16, 1)
    assert np.array_equal(pool_features(fm, identity).values, fm.values)
    assert np.array_equal(pool_saliency(sal, identity).values, sal.values)

    coarse = pool_features(fm, build_kernel(16, 4))
    assert coarse.side == 4

    twice = pool_features(pool_features(fm, build_kernel(16, 2)), build_kernel(8, 2))
    once = pool_features(fm, build_kernel(16, 4))
    assert np.max(np.abs(twice.values - once.values)) <= 1e-9

    elapsed = _report(1, "pooling-identity", started)
    assert elapsed < 1.0


def _random_descriptors(rng, n, channels):
    return [
        TokenDescriptor(
            coord=(float(rng.uniform()), float(rng.uniform())),
            saliency=float(rng.uniform(0, 1)),
            feature=rng.normal(size=channels),
        )
        for _ in range(n)
    ]


def _brute_force_optimum(descriptors, n_clusters, feature_weight, assignment_cache={}):
    attention = np.array([d.attention_vector() for d in descriptors])
    features = np.array([d.feature for d in descriptors])
    n = len(descriptors)
    key = (n, n_clusters)
    if key not in assignment_cache:
        assignment_cache[key] = np.array(
            list(itertools.product(range(n_clusters), repeat=n))
        )
    assignments = assignment_cache[key]
    onehot = np.eye(n_clusters)[assignments]
    counts = np.maximum(onehot.sum(axis=1), 1.0)[:, :, None]
    mean_a = np.einsum("tnm,na->tma", onehot, attention) / counts
    mean_f = np.einsum("tnm,nc->tmc", onehot, features) / counts
    tok_a = np.einsum("tnm,tma->tna", onehot, mean_a)
    tok_f = np.einsum("tnm,tmc->tnc", onehot, mean_f)
    cost = ((attention[None] - tok_a) ** 2).sum(-1)
    cost += feature_weight * ((features[None] - tok_f) ** 2).sum(-1)
    return float(cost.sum(axis=1).min())


def test_criterion_2_clustering_correctness():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)

    # 1,000 random instances: objective trace never increases
    for trial in range(1000):
        n = int(rng.integers(4, 26))
        m = int(rng.integers(1, min(n, 6)))
        descs = _random_descriptors(rng, n, channels=3)
        fw = float(rng.uniform(0, 1.5))
        result = cluster_descriptors(descs, m, feature_weight=fw, seed=trial, max_iter=30)
        trace = result.objective_trace
        assert all(
            trace[i] - trace[i + 1] >= -1e-9 for i in range(len(trace) - 1)
        ), f"trace increased on trial {trial}"

    # 100 small instances: best of 20 restarts hits the exhaustive optimum
    for trial in range(100):
        n = int(rng.integers(5, 9))
        m = int(rng.integers(2, 4))
        descs = _random_descriptors(rng, n, channels=2)
        fw = 0.5
        result = cluster_descriptors(
            descs, m, feature_weight=fw, seed=trial, restarts=20
        )
        best = _brute_force_optimum(descs, m, fw)
        assert result.final_objective <= best + 1e-6, (
            f"trial {trial}: {result.final_objective} vs optimum {best}"
        )

    # planted 3-blob scenes over 50 seeds recover the labels
    for seed in range(50):
        scene = generate_scene(3, 16, 8, seed=seed)
        result = cluster(scene.features, scene.saliency, 3, seed=seed)
        ari = adjusted_rand_index(result.assignments, scene.labels)
        assert ari >= 0.99, f"seed {seed}: ARI {ari}"

    elapsed = _report(2, "clustering-correctness", started)
    assert elapsed < 60.0


def test_criterion_3_selection_properties():
    started = time.perf_counter()
    rng = np.random.default_rng(33)
    for trial in range(1000):
        n = int(rng.integers(1, 12))
        k = int(rng.integers(1, 8))
        scores = np.round(rng.normal(size=n), 1)  # coarse grid forces ties
        first = select_topk(scores, k)
        second = select_topk(scores.copy(), k)
        assert first == second
        assert len(first) == min(k, n)
        assert len(set(first)) == len(first)
        values = [scores[i] for i in first]
        assert all(values[i] >= values[i + 1] for i in range(len(values) - 1))
        for a, b in zip(first, first[1:]):
            if scores[a] == scores[b]:
                assert a < b  # tie rule: ascending index
        # monotonicity: boosting a selected score keeps it selected
        target = first[int(rng.integers(len(first)))]
        boosted = scores.copy()
        boosted[target] += 1.0
        assert target in select_topk(boosted, k)

    for trial in range(200):
        size, coh, disp = rng.uniform(0, 1, size=3)
        w1, w2, w3 = rng.uniform(0, 3, size=3)
        base = composite_score((size, coh, disp), w1, w2, w3)
        assert abs(
            composite_score((size, coh, disp), 2 * w1, w2, w3) - base - w1 * size
        ) <= 1e-12
        assert abs(
            composite_score((size, coh, disp), w1, 2 * w2, w3) - base - w2 * coh
        ) <= 1e-12
        assert abs(
            composite_score((size, coh, disp), w1, w2, 2 * w3) - base + w3 * disp
        ) <= 1e-12

    elapsed = _report(3, "selection-properties", started)
    assert elapsed < 30.0


def test_criterion_4_controller(config):
    started = time.perf_counter()
    rng = np.random.default_rng(44)
    profiles = config.profiles

    # simplex + argmax invariance on 1,000 random logit vectors
    for _ in range(1000):
        logits = rng.normal(0, float(rng.uniform(0.5, 20)), size=3)
        dist = distribution_from_logits(logits, profiles)
        assert np.all(dist.probs >= 0)
        assert abs(float(dist.probs.sum()) - 1.0) <= 1e-9
        shift = float(rng.normal(0, 50))
        scale = float(rng.uniform(0.05, 20))
        assert select(dist) == select(
            distribution_from_logits(logits + shift, profiles)
        )
        assert select(dist) == select(
            distribution_from_logits(logits * scale, profiles)
        )

    # analytic gradient vs central finite differences at 20 coordinates
    small = make_synthetic_corpus(3, 8, seed=1)
    params = init_controller_params(d_text=12, d_desc=6, d_hidden=8, seed=2)
    _, grads = corpus_gradients(params, small, embed_seed=1)
    names = ("desc_map", "hidden_w", "hidden_b", "logit_w", "logit_b")
    step = 1e-5
    for _ in range(20):
        name = names[rng.integers(len(names))]
        arr = getattr(params, name)
        idx = tuple(rng.integers(s) for s in arr.shape)

        def perturbed(delta):
            fields = {n: getattr(params, n).copy() for n in names}
            fields[name][idx] += delta
            return ControllerParams(profiles=params.profiles, **fields)

        fd = (
            corpus_loss(perturbed(step), small, 1)
            - corpus_loss(perturbed(-step), small, 1)
        ) / (2 * step)
        analytic = grads[name][idx]
        assert abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8) <= 1e-4

    # 3-class corpus, 200 items per class, held-out argmax accuracy
    corpus = make_synthetic_corpus(3, 200, seed=config.seeds.corpus)
    train_items = tuple(it for i, it in enumerate(corpus.items) if i % 4 != 0)
    held_out = tuple(it for i, it in enumerate(corpus.items) if i % 4 == 0)
    fit = train(
        GranularityCorpus(train_items),
        init_controller_params(seed=config.seeds.controller),
        TrainSettings(
            lr=config.controller_lr,
            epochs=config.controller_epochs,
            embed_seed=config.seeds.embed,
        ),
    )
    accuracy = holdout_accuracy(fit.params, GranularityCorpus(held_out), config.seeds.embed)
    assert accuracy >= 0.95, f"held-out accuracy {accuracy}"

    # coarse / fine keyword questions route to the matching profiles
    def routed(question):
        ids = words_to_ids(question)
        emb = encode_text_surrogate(ids, config.dims.d_text, config.seeds.embed)
        return select(predict(aggregate(emb, fit.params), fit.params))

    for question in (
        "What animals are in the image?",
        "How many objects are in the whole scene?",
    ):
        profile = routed(question)
        assert (profile.pool_factor, profile.cluster_count) == (4, 5), question
    for question in (
        "What color is the dog's ear?",
        "What texture is the tiny pattern?",
    ):
        profile = routed(question)
        assert (profile.pool_factor, profile.cluster_count) == (1, 50), question

    elapsed = _report(4, "controller", started)
    assert elapsed < 30.0


def test_criterion_5_token_budget(config, default_controller):
    started = time.perf_counter()
    scene = generate_scene(3, 16, 8, seed=0)

    fine = run_pipeline(
        config, scene.features, scene.saliency,
        words_to_ids("what shade is the tiny stripe"), default_controller,
    )
    budget = fine.report["token_budget"]
    assert fine.report["selected_profile"]["cluster_count"] == 50
    assert budget["n_pixel"] == 256
    assert budget["n_semantic"] == 25
    assert budget["overhead_ratio"] == 25 / 256
    assert budget["overhead_ratio"] == pytest.approx(0.098, abs=1e-3)

    for question in (
        "what animals are in the scene",
        "what is the person holding",
        "what color is the edge",
        [7, 70, 700],
    ):
        ids = question if isinstance(question, list) else words_to_ids(question)
        result = run_pipeline(
            config, scene.features, scene.saliency, ids, default_controller
        )
        b = result.report["token_budget"]
        assert b["total"] == b["n_pixel"] + b["n_semantic"] + b["n_text"]
        assert b["total"] == len(result.mix)

    elapsed = _report(5, "token-budget", started)
    assert elapsed < 30.0


def test_criterion_6_objective(config, default_controller):
    started = time.perf_counter()
    rng = np.random.default_rng(66)

    # zero stream weights reduce the total to the task loss exactly
    for _ in range(50):
        task = float(rng.uniform(0, 3))
        breakdown = total_loss(task, float(-rng.uniform(0, 2)), float(-rng.uniform(0, 2)), 0.0, 0.0)
        assert breakdown.total == task

    # contribution objective stays non-positive and rises with any likelihood
    dim = 8
    for _ in range(100):
        pix = rng.normal(size=(4, dim))
        sem = rng.normal(size=(2, dim))
        cond = rng.normal(size=dim)
        ph = ConfidenceHead(w=rng.normal(0, 0.5, dim), b=float(rng.normal()))
        sh = ConfidenceHead(w=rng.normal(0, 0.5, dim), b=float(rng.normal()))
        value = contribution_objective(pix, sem, cond, ph, sh, 1.0)
        assert value <= 0.0
        up = contribution_objective(pix, sem, cond, ConfidenceHead(w=ph.w, b=ph.b + 0.1), sh, 1.0)
        assert up > value

    # gradient check across every trainable group, projector included
    from adata.objective import TrainingExample

    def toy_examples(rng, n, dim=6, channels=3):
        out = []
        for i in range(n):
            raw_pix = rng.normal(size=(5, channels))
            raw_sem = rng.normal(size=(2, channels))
            lift = rng.normal(size=(dim, channels))
            out.append(
                TrainingExample(
                    pixel_tokens=raw_pix @ lift.T,
                    semantic_tokens=raw_sem @ lift.T,
                    text_tokens=rng.normal(size=(2, dim)),
                    conditioner=rng.normal(size=dim),
                    label=i % 2,
                    raw_pixel=raw_pix,
                    raw_semantic=raw_sem,
                )
            )
        return out

    examples = toy_examples(rng, n=3, dim=6)
    weights = LossWeights(pixel=0.2, semantic=0.3)
    ph = ConfidenceHead(w=rng.normal(0, 0.3, 6), b=0.05)
    sh = ConfidenceHead(w=rng.normal(0, 0.3, 6), b=-0.05)
    clf = LinearClassifier(weight=rng.normal(0, 0.3, (2, 6)), bias=rng.normal(0, 0.3, 2))
    proj = LinearMap(weight=rng.normal(0, 0.3, (6, 3)), bias=rng.normal(0, 0.1, 6))
    _, grads = batch_gradients(examples, ph, sh, clf, weights, projector=proj, train_projector=True)

    def loss(ph=ph, sh=sh, clf=clf, proj=proj):
        return batch_loss(examples, ph, sh, clf, weights, projector=proj).total

    step = 1e-5
    specs = []
    specs += [("pixel_w", (i,)) for i in range(3)]
    specs += [("sema_w", (i,)) for i in range(3)]
    specs += [("clf_w", (int(rng.integers(2)), int(rng.integers(6)))) for _ in range(4)]
    specs += [("clf_b", (i,)) for i in range(2)]
    specs += [("proj_w", (int(rng.integers(6)), int(rng.integers(3)))) for _ in range(4)]
    specs += [("proj_b", (int(rng.integers(6)),)) for _ in range(2)]
    specs += [("pixel_b", ()), ("sema_b", ())]
    for name, idx in specs:
        def apply(delta):
            if name == "pixel_w":
                return loss(ph=ConfidenceHead(ph.w + delta * np.eye(6)[idx[0]], ph.b))
            if name == "sema_w":
                return loss(sh=ConfidenceHead(sh.w + delta * np.eye(6)[idx[0]], sh.b))
            if name == "pixel_b":
                return loss(ph=ConfidenceHead(ph.w, ph.b + delta))
            if name == "sema_b":
                return loss(sh=ConfidenceHead(sh.w, sh.b + delta))
            if name == "clf_w":
                w = clf.weight.copy(); w[idx] += delta
                return loss(clf=LinearClassifier(w, clf.bias))
            if name == "clf_b":
                b = clf.bias.copy(); b[idx] += delta
                return loss(clf=LinearClassifier(clf.weight, b))
            if name == "proj_w":
                w = proj.weight.copy(); w[idx] += delta
                return loss(proj=LinearMap(w, proj.bias))
            b = proj.bias.copy(); b[idx] += delta
            return loss(proj=LinearMap(proj.weight, b))

        fd = (apply(step) - apply(-step)) / (2 * step)
        analytic = grads[name][idx] if idx else grads[name]
        assert abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8) <= 1e-4, name

    # 2-class separable scenes: total loss halves within 500 steps
    from adata.pipeline import build_training_examples

    scenes = generate_classed_scenes(2, 4, 2, 16, 8, seed=config.seeds.scene)
    bundle = build_training_examples(
        scenes, config, default_controller, config.profiles[1]
    )
    fit = train_heads(
        bundle,
        HeadTrainConfig(lr=0.1, steps=500),
        LossWeights(pixel=config.pixel_loss_weight, semantic=config.semantic_loss_weight),
        n_classes=2,
    )
    first, last = fit.loss_trace[0].total, fit.loss_trace[-1].total
    assert last <= 0.5 * first, f"loss {first} -> {last}"

    elapsed = _report(6, "objective", started)
    assert elapsed < 60.0


def _run_cli(argv):
    buffer = io.StringIO()
    with redirect_stdout(buffer):
        code = cli_main([str(a) for a in argv])
    assert code == 0, argv
    return buffer.getvalue()


def test_criterion_7_determinism_and_io(tmp_path):
    started = time.perf_counter()

    # byte-identical artifacts for every subcommand, run twice
    def run_all(base: Path):
        base.mkdir()
        s = base / "scene"
        _run_cli(["gen-scene", "--blobs", 3, "--side", 16, "--channels", 8,
                  "--seed", 5, "--out", s])
        _run_cli(["pool", "--features", f"{s}.features.bin",
                  "--saliency", f"{s}.saliency.bin", "--pool-factor", 2,
                  "--out-features", base / "pooled.bin",
                  "--out-saliency", base / "pooledA.bin"])
        _run_cli(["cluster", "--features", base / "pooled.bin",
                  "--saliency", base / "pooledA.bin", "--clusters", 4,
                  "--out", base / "clust.json"])
        _run_cli(["aggregate", "--features", f"{s}.features.bin",
                  "--saliency", f"{s}.saliency.bin", "--pool-factor", 2,
                  "--clusters", 8, "--out-tokens", base / "sem.bin",
                  "--out-scores", base / "scores.json"])
        _run_cli(["controller-train", "--items-per-class", 8, "--epochs", 40,
                  "--out", base / "params.json", "--save-corpus", base / "corpus.txt"])
        _run_cli(["controller-predict", "--params", base / "params.json",
                  "--question", "what color is the spot",
                  "--out", base / "pred.json"])
        _run_cli(["pipeline", "--features", f"{s}.features.bin",
                  "--saliency", f"{s}.saliency.bin",
                  "--question", "how many animals overall",
                  "--params", base / "params.json",
                  "--out-report", base / "report.json",
                  "--out-tokens", base / "mix.bin"])
        _run_cli(["sweep", "--pool-factors", "1,4", "--cluster-counts", "3,6",
                  "--scene-seeds", "0,1", "--jobs", 2, "--out", base / "sweep.csv"])
        _run_cli(["train", "--classes", 2, "--scenes-per-class", 2, "--steps", 25,
                  "--out", base / "heads.json", "--trace", base / "trace.csv"])
        return _run_cli(["report", "--report", base / "report.json"])

    stdout_a = run_all(tmp_path / "a")
    stdout_b = run_all(tmp_path / "b")
    assert stdout_a == stdout_b
    files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert files_a == files_b and files_a
    for name in files_a:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"

    # container round trip over 200 random shapes, bitwise
    rng = np.random.default_rng(77)
    rt = tmp_path / "roundtrip"
    rt.mkdir()
    for trial in range(200):
        rank = int(rng.integers(1, 5))
        shape = tuple(int(rng.integers(1, 7)) for _ in range(rank))
        values = rng.normal(size=shape).astype(np.float32)
        path = rt / f"t{trial}.bin"
        write_tensor(TensorContainer(values=values, meta={"seed": trial}), path)
        back = read_tensor(path)
        assert back.values.dtype == np.float32
        assert back.values.shape == shape
        assert np.array_equal(back.values, values)
        assert back.meta == {"seed": trial}

    elapsed = _report(7, "determinism-io", started)
    assert elapsed < 120.0


def test_criterion_8_sweep_trend(config, tmp_path):
    started = time.perf_counter()
    scenes = [generate_scene(3, 16, 8, seed=s) for s in (0, 1, 2)]
    # 3x3 grid; cluster_count 16 equals the token count at pool_factor 4
    rows = sweep(config, [1, 2, 4], [3, 8, 16], scenes, jobs=2)
    assert len(rows) == 9
    table = {(r["pool_factor"], r["cluster_count"]): r["mean_ari"] for r in rows}
    for factor in (1, 2, 4):
        matched = table[(factor, 3)]
        assert matched == max(table[(factor, b)] for b in (3, 8, 16)), (
            f"pool_factor {factor}: matched cluster count is not the best"
        )
    # over-fragmentation: every token its own cluster wrecks recovery
    assert table[(4, 16)] < table[(4, 3)] - 0.2

    out = tmp_path / "sweep.csv"
    _run_cli(["sweep", "--pool-factors", "1,2,4", "--cluster-counts", "3,8,16",
              "--scene-seeds", "0,1,2", "--jobs", 2, "--out", out])
    lines = out.read_text().splitlines()
    assert len(lines) == 10

    elapsed = _report(8, "sweep-trend", started)
    assert elapsed < 120.0
