"""Command-line interface.

Subcommands: pool, cluster, aggregate, controller-train, controller-predict,
pipeline, sweep, train, gen-scene, report. All artifacts are byte-identical
across repeated runs with the same inputs and seeds; wall-clock timings stay
off the artifacts unless --timings is passed. ADATA_SEED sets the default
base seed. Exit codes: 0 success, 2 input error, 3 config error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import controller as ctrl
from .config import (
    SEED_ENV_VAR,
    PipelineConfig,
    load_config,
)
from .errors import InputError, PipelineError
from .fileio import (
    TensorContainer,
    read_corpus,
    read_tensor,
    write_corpus,
    write_tensor,
)
from .fusion import token_budget
from .grids import FeatureMap, GranularityProfile, SaliencyMap, normalize_saliency
from .objective import HeadTrainConfig, LossWeights, train_heads
from .clustering import cluster
from .pipeline import (
    SWEEP_COLUMNS,
    aggregate_tokens,
    build_training_examples,
    projector_bank,
    run_pipeline,
    sweep,
    train_default_controller,
)
from .pooling import build_kernel, pool_features, pool_saliency
from .scenes import generate_classed_scenes, generate_scene


def _dump_json(data, path=None) -> None:
    text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_feature_map(path) -> FeatureMap:
    container = read_tensor(path)
    values = container.values.astype(float)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise InputError(f"{path}: expected a rank-3 feature tensor")
    return FeatureMap(values)


def _load_saliency(path) -> SaliencyMap:
    container = read_tensor(path)
    if container.values.ndim != 2:
        raise InputError(f"{path}: expected a rank-2 saliency tensor")
    return normalize_saliency(container.values.astype(float))


def _int_list(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


def _question_ids(args) -> list:
    if getattr(args, "question_ids", None):
        return _int_list(args.question_ids)
    if getattr(args, "question", None):
        return ctrl.words_to_ids(args.question)
    raise InputError("provide --question or --question-ids")


def _config(args, **extra) -> PipelineConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    overrides.update(extra)
    return load_config(getattr(args, "config", None), overrides)


def _params_dict(params: ctrl.ControllerParams, config: PipelineConfig) -> dict:
    return {
        "desc_map": params.desc_map.tolist(),
        "hidden_w": params.hidden_w.tolist(),
        "hidden_b": params.hidden_b.tolist(),
        "logit_w": params.logit_w.tolist(),
        "logit_b": params.logit_b.tolist(),
        "profiles": [p.as_dict() for p in params.profiles],
        "embed_seed": config.seeds.embed,
    }


def _params_from_file(path) -> tuple:
    path = Path(path)
    if not path.exists():
        raise InputError(f"controller params not found: {path}")
    data = json.loads(path.read_text())
    params = ctrl.ControllerParams(
        desc_map=np.array(data["desc_map"]),
        hidden_w=np.array(data["hidden_w"]),
        hidden_b=np.array(data["hidden_b"]),
        logit_w=np.array(data["logit_w"]),
        logit_b=np.array(data["logit_b"]),
        profiles=tuple(GranularityProfile(**p) for p in data["profiles"]),
    )
    return params, int(data.get("embed_seed", 1))


def _scene_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get(SEED_ENV_VAR, 0))


def cmd_gen_scene(args) -> int:
    meta_seed = _scene_seed(args)
    scene = generate_scene(
        n_blobs=args.blobs,
        side=args.side,
        channels=args.channels,
        separation=args.separation,
        seed=meta_seed,
    )
    write_tensor(
        TensorContainer(
            values=scene.features.values,
            meta={"name": "scene", "role": "features", "seed": meta_seed},
        ),
        f"{args.out}.features.bin",
    )
    write_tensor(
        TensorContainer(
            values=scene.saliency.values,
            meta={"name": "scene", "role": "saliency", "seed": meta_seed},
        ),
        f"{args.out}.saliency.bin",
    )
    _dump_json(
        {
            "labels": [int(v) for v in scene.labels],
            "class_label": scene.class_label,
            "n_blobs": scene.n_blobs,
            "side": scene.features.side,
        },
        f"{args.out}.labels.json",
    )
    return 0


def cmd_pool(args) -> int:
    features = _load_feature_map(args.features)
    kernel = build_kernel(features.side, args.pool_factor)
    pooled = pool_features(features, kernel)
    write_tensor(
        TensorContainer(values=pooled.values, meta={"name": "pooled", "role": "features"}),
        args.out_features,
    )
    if args.saliency:
        saliency = _load_saliency(args.saliency)
        pooled_a = pool_saliency(saliency, kernel)
        out = args.out_saliency or str(args.out_features) + ".saliency"
        write_tensor(
            TensorContainer(values=pooled_a.values, meta={"name": "pooled", "role": "saliency"}),
            out,
        )
    return 0


def cmd_cluster(args) -> int:
    config = _config(
        args,
        feature_weight=args.feature_weight,
        max_iter=args.max_iter,
        tol=args.tol,
        restarts=args.restarts,
    )
    features = _load_feature_map(args.features)
    saliency = _load_saliency(args.saliency)
    result = cluster(
        features,
        saliency,
        args.clusters,
        feature_weight=config.feature_weight,
        seed=config.seeds.cluster,
        max_iter=config.max_iter,
        tol=config.tol,
        restarts=config.restarts,
        saliency_scale=config.saliency_scale,
    )
    _dump_json(
        {
            "assignments": [int(v) for v in result.assignments],
            "objective_trace": list(result.objective_trace),
            "centroids": [
                {
                    "a_center": [float(v) for v in c.a_center],
                    "f_center": [float(v) for v in c.f_center],
                    "members": list(c.members),
                }
                for c in result.centroids
            ],
            "seed": config.seeds.cluster,
            "feature_weight": config.feature_weight,
        },
        args.out,
    )
    return 0


def cmd_aggregate(args) -> int:
    config = _config(args)
    features = _load_feature_map(args.features)
    saliency = _load_saliency(args.saliency)
    agg = aggregate_tokens(
        features,
        saliency,
        args.pool_factor,
        args.clusters,
        config,
        seed=config.seeds.cluster,
        top_k=args.top_k,
    )
    write_tensor(
        TensorContainer(
            values=agg.semantic.tokens,
            meta={"name": "semantic", "role": "tokens", "seed": config.seeds.cluster},
        ),
        args.out_tokens,
    )
    if args.out_scores:
        _dump_json(
            {
                "scores": [s.as_dict() for s in agg.scores],
                "selected": list(agg.selected),
                "objective_trace": list(agg.clustering.objective_trace),
            },
            args.out_scores,
        )
    return 0


def cmd_controller_train(args) -> int:
    config = _config(
        args,
        items_per_class=args.items_per_class,
        controller_epochs=args.epochs,
        controller_lr=args.lr,
    )
    if args.corpus:
        corpus = read_corpus(args.corpus)
    else:
        corpus = ctrl.make_synthetic_corpus(
            n_profiles=len(config.profiles),
            items_per_class=config.items_per_class,
            seed=config.seeds.corpus,
        )
    if args.save_corpus:
        write_corpus(corpus, args.save_corpus)
    fit = train_default_controller(config, corpus=corpus)
    _dump_json(_params_dict(fit.params, config), args.out)
    print(
        f"trained on {len(corpus)} items, "
        f"loss {fit.loss_trace[0]:.4f} -> {fit.loss_trace[-1]:.4f}",
        file=sys.stderr,
    )
    return 0


def cmd_controller_predict(args) -> int:
    params, embed_seed = _params_from_file(args.params)
    ids = _question_ids(args)
    embedding = ctrl.encode_text_surrogate(ids, d_text=params.d_text, seed=embed_seed)
    dist = ctrl.predict(ctrl.aggregate(embedding, params), params)
    profile = ctrl.select(dist)
    _dump_json(
        {
            "question_ids": ids,
            "distribution": [float(p) for p in dist.probs],
            "expected_profile": [float(v) for v in ctrl.expected_profile(dist)],
            "selected_profile": profile.as_dict(),
        },
        args.out,
    )
    return 0


def cmd_pipeline(args) -> int:
    config = _config(args, pool_pixel_stream=args.pool_pixel_stream or None)
    features = _load_feature_map(args.features)
    saliency = _load_saliency(args.saliency)
    if args.params:
        params, _ = _params_from_file(args.params)
    else:
        params = None
    result = run_pipeline(config, features, saliency, _question_ids(args), params)
    report = dict(result.report)
    timings = report.pop("timings")
    if args.timings:
        report["timings"] = timings
    else:
        print(
            "timings(s): "
            + " ".join(f"{k}={v:.4f}" for k, v in sorted(timings.items())),
            file=sys.stderr,
        )
    _dump_json(report, args.out_report)
    if args.out_tokens:
        write_tensor(
            TensorContainer(
                values=result.mix.tokens,
                meta={"name": "mixed_stream", "role": "tokens", "seed": config.seeds.base},
            ),
            args.out_tokens,
        )
    return 0


def cmd_sweep(args) -> int:
    config = _config(args)
    scene_seeds = _int_list(args.scene_seeds)
    scenes = [
        generate_scene(
            n_blobs=args.blobs,
            side=args.side,
            channels=args.channels,
            separation=args.separation,
            seed=s,
        )
        for s in scene_seeds
    ]
    rows = sweep(
        config,
        _int_list(args.pool_factors),
        _int_list(args.cluster_counts),
        scenes,
        jobs=args.jobs,
    )
    columns = list(SWEEP_COLUMNS) + (["runtime_s"] if args.timings else [])
    with open(args.out, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    scenes = generate_classed_scenes(
        n_classes=args.classes,
        scenes_per_class=args.scenes_per_class,
        n_blobs=args.blobs,
        side=args.side,
        channels=args.channels,
        seed=config.seeds.scene,
    )
    params = ctrl.init_controller_params(
        profiles=config.profiles,
        d_text=config.dims.d_text,
        d_desc=config.dims.d_desc,
        d_hidden=config.dims.d_hidden,
        seed=config.seeds.controller,
    )
    profile = config.profiles[args.profile_index]
    if args.lr is None:
        # the projector path sees raw feature magnitudes, so it needs a
        # far smaller step than the heads alone
        args.lr = 0.001 if args.train_projector else 0.1
    examples = build_training_examples(scenes, config, params, profile)
    weights = LossWeights(
        pixel=config.pixel_loss_weight,
        semantic=config.semantic_loss_weight,
        mix=config.semantic_mix,
    )
    projector = None
    if args.train_projector:
        projector = projector_bank(config, scenes[0].features.channels).maps[
            profile.projector_index
        ]
    fit = train_heads(
        examples,
        config=HeadTrainConfig(
            lr=args.lr, steps=args.steps, train_projector=args.train_projector
        ),
        weights=weights,
        n_classes=args.classes,
        projector=projector,
    )
    out = {
        "pixel_head": {"w": fit.pixel_head.w.tolist(), "b": fit.pixel_head.b},
        "sema_head": {"w": fit.sema_head.w.tolist(), "b": fit.sema_head.b},
        "classifier": {
            "weight": fit.classifier.weight.tolist(),
            "bias": fit.classifier.bias.tolist(),
        },
        "final_loss": fit.loss_trace[-1].total,
        "initial_loss": fit.loss_trace[0].total,
    }
    if fit.projector is not None:
        out["projector"] = {
            "weight": fit.projector.weight.tolist(),
            "bias": fit.projector.bias.tolist(),
        }
    _dump_json(out, args.out)
    if args.trace:
        with open(args.trace, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", "task", "pixel", "sema", "total"])
            for i, item in enumerate(fit.loss_trace):
                writer.writerow(
                    [i, repr(item.task), repr(item.pixel), repr(item.sema), repr(item.total)]
                )
    return 0


def cmd_report(args) -> int:
    path = Path(args.report)
    if not path.exists():
        raise InputError(f"report not found: {path}")
    report = json.loads(path.read_text())
    budget = report.get("token_budget", {})
    expected = budget.get("n_pixel", 0) + budget.get("n_semantic", 0) + budget.get("n_text", 0)
    if budget and budget.get("total") != expected:
        raise InputError(
            f"token budget identity violated: total {budget.get('total')} != {expected}"
        )
    profile = report.get("selected_profile", {})
    print(f"selected profile: {profile}")
    print(f"distribution:     {report.get('distribution')}")
    print(f"token budget:     {budget}")
    trace = report.get("objective_trace", [])
    if trace:
        print(f"cluster objective: {trace[0]:.6g} -> {trace[-1]:.6g} in {len(trace)} sweeps")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adata",
        description="Adaptive-granularity visual token aggregation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="base seed (or ADATA_SEED)")

    p = sub.add_parser("gen-scene", help="generate a planted synthetic scene")
    common(p)
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("pool", help="pool a feature grid (and optional saliency)")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--saliency")
    p.add_argument("--pool-factor", type=int, required=True)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-saliency")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("cluster", help="cluster a feature/saliency grid")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--saliency", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--feature-weight", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("aggregate", help="pool + cluster + select semantic tokens")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--saliency", required=True)
    p.add_argument("--pool-factor", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--out-tokens", required=True)
    p.add_argument("--out-scores")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("controller-train", help="train the granularity controller")
    common(p)
    p.add_argument("--corpus", help="corpus file; generated synthetically if omitted")
    p.add_argument("--items-per-class", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--save-corpus", help="also write the training corpus here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_controller_train)

    p = sub.add_parser("controller-predict", help="predict a granularity profile")
    p.add_argument("--params", required=True)
    p.add_argument("--question")
    p.add_argument("--question-ids")
    p.add_argument("--out")
    p.set_defaults(func=cmd_controller_predict)

    p = sub.add_parser("pipeline", help="full question-conditioned run")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--saliency", required=True)
    p.add_argument("--question")
    p.add_argument("--question-ids")
    p.add_argument("--params", help="trained controller params JSON")
    p.add_argument("--pool-pixel-stream", action="store_true")
    p.add_argument("--timings", action="store_true", help="embed timings in the report")
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-tokens")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="multi-scale sweep over planted scenes")
    common(p)
    p.add_argument("--pool-factors", required=True, help="comma-separated")
    p.add_argument("--cluster-counts", required=True, help="comma-separated")
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--scene-seeds", default="0,1,2")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timings", action="store_true", help="add a runtime column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train confidence heads on synthetic scenes")
    common(p)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--scenes-per-class", type=int, default=4)
    p.add_argument("--blobs", type=int, default=2)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--profile-index", type=int, default=1)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=None, help="0.1 for heads, 0.001 with --train-projector")
    p.add_argument("--train-projector", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the loss trace CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="summarize and check a pipeline report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
