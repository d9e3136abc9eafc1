"""Train the confidence heads (and optionally the projector) on synthetic
two-class scenes and print the loss trajectory.

Usage: python scripts/train_objective.py [--steps 500] [--train-projector]
"""

import argparse

from adata.config import load_config
from adata.controller import init_controller_params
from adata.objective import HeadTrainConfig, LossWeights, train_heads
from adata.pipeline import build_training_examples, projector_bank
from adata.scenes import generate_classed_scenes


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--scenes-per-class", type=int, default=4)
    parser.add_argument("--train-projector", action="store_true")
    args = parser.parse_args()

    config = load_config()
    scenes = generate_classed_scenes(
        2, args.scenes_per_class, 2, config.grid_side, config.dims.channels,
        seed=config.seeds.scene,
    )
    params = init_controller_params(
        profiles=config.profiles,
        d_text=config.dims.d_text,
        d_desc=config.dims.d_desc,
        d_hidden=config.dims.d_hidden,
        seed=config.seeds.controller,
    )
    profile = config.profiles[1]
    examples = build_training_examples(scenes, config, params, profile)

    projector = None
    lr = 0.1
    if args.train_projector:
        projector = projector_bank(config, config.dims.channels).maps[
            profile.projector_index
        ]
        lr = 0.001

    fit = train_heads(
        examples,
        HeadTrainConfig(lr=lr, steps=args.steps, train_projector=args.train_projector),
        LossWeights(
            pixel=config.pixel_loss_weight,
            semantic=config.semantic_loss_weight,
            mix=config.semantic_mix,
        ),
        n_classes=2,
        projector=projector,
    )
    for step in range(0, len(fit.loss_trace), max(1, args.steps // 10)):
        item = fit.loss_trace[step]
        print(
            f"step {step:>4}: total {item.total:.4f} "
            f"(task {item.task:.4f}, pixel {item.pixel:.4f}, sema {item.sema:.4f})"
        )
    first, last = fit.loss_trace[0].total, fit.loss_trace[-1].total
    print(f"\ntotal loss {first:.4f} -> {last:.4f} ({(1 - last / first) * 100:.1f}% lower)")


if __name__ == "__main__":
    main()
