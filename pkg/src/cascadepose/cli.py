"""Command-line surface: train, eval, infer, visualize.

Structured outputs are line-delimited JSON with a ``schema`` field. Exit
codes: 0 ok, 1 usage error, 2 runtime error. The ``CASCADEPOSE_WORKERS``
environment variable sets per-image parallelism for eval/infer.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np
import yaml
from PIL import Image

from . import cascade, train as train_mod, visualize as vis_mod
from .checkpoint import restore_model
from .cascade import CascadeModel
from .data import COCO_SWAP, SYNTH_SWAP
from .errors import ConfigError
from .render import save_overlay
from .train import RunConfig, Trainer, evaluate, sweep_eval_flags


def _workers():
    return max(1, int(os.environ.get("CASCADEPOSE_WORKERS", "1")))


def _load_model(ckpt_path):
    return restore_model(ckpt_path, lambda cfg: CascadeModel(cfg))


def _load_dataset_arg(data_arg):
    """Dataset argument: 'synthetic[:n[:seed]]' or a COCO annotation file path."""
    from . import data as data_lib
    if data_arg.startswith("synthetic"):
        parts = data_arg.split(":")
        n = int(parts[1]) if len(parts) > 1 else 64
        seed = int(parts[2]) if len(parts) > 2 else 7
        return data_lib.synth_stickfigures(n, seed)
    if not os.path.exists(data_arg):
        raise click.UsageError(f"dataset {data_arg!r} not found")
    root = os.path.join(os.path.dirname(data_arg), "images")
    return data_lib.load_coco_keypoints(data_arg, root)


@click.group()
@click.option("--seed", type=int, default=0, show_default=True,
              help="Global seed for reproducibility.")
@click.pass_context
def cli(ctx, seed):
    """Cascade-transformer pose recognition toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.pass_context
def cmd_train(ctx, config_path):
    """Train a model from a YAML run config; writes checkpoints and a log."""
    with open(config_path) as f:
        raw = yaml.safe_load(f) or {}
    cfg = RunConfig.from_dict(raw)
    if ctx.obj["seed"]:
        cfg.seed = ctx.obj["seed"]
    trainer = Trainer(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "train_log.jsonl"), "w") as log:
        history = trainer.train(log_file=log)
    click.echo(f"final loss {history[-1]:.6f}; checkpoints in {cfg.out_dir}")


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_arg", required=True)
@click.option("--flip", is_flag=True, help="Flip-test averaging.")
@click.option("--gt-box", is_flag=True, help="Ground-truth box oracle mode.")
@click.option("--include-bg-logit", is_flag=True,
              help="Keep the background logit when normalizing readout probabilities.")
@click.option("--sweep-flags", "sweep", is_flag=True,
              help="Evaluate all 8 flag combinations in one run.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_eval(ckpt, data_arg, flip, gt_box, include_bg_logit, sweep, out_path):
    """Evaluate a checkpoint on a dataset; writes a metrics report."""
    model, config = _load_model(ckpt)
    dataset = _load_dataset_arg(data_arg)
    lines = [{"schema": "metrics-report/1", "checkpoint": ckpt}]
    if sweep:
        lines.extend(sweep_eval_flags(model, dataset, workers=_workers()))
    else:
        report = evaluate(model, dataset, flip_test=flip, gt_box=gt_box,
                          exclude_background=not include_bg_logit, workers=_workers())
        lines.append({"gt_box": gt_box, "include_bg_logit": include_bg_logit,
                      "flip_test": flip, **report})
    text = "\n".join(json.dumps(l) for l in lines) + "\n"
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    click.echo(text, nl=False)


@cli.command("infer")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.argument("images", nargs=-1, required=True)
@click.option("--overlay", "overlay_dir", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--flip", is_flag=True)
def cmd_infer(ckpt, images, overlay_dir, out_path, flip):
    """Run pose inference on image files; one JSON line per image."""
    model, config = _load_model(ckpt)
    swap = SYNTH_SWAP if config.n_joints == 5 else COCO_SWAP
    lines = [{"schema": "pose/1", "checkpoint": ckpt}]
    failures = 0
    for path in images:
        try:
            pil = Image.open(path).convert("RGB")
        except Exception as e:
            lines.append({"image": path, "error": str(e)})
            failures += 1
            continue
        ow, oh = pil.size
        resized = pil.resize((config.image_size, config.image_size), Image.BILINEAR)
        arr = np.asarray(resized, dtype=np.float64).transpose(2, 0, 1) / 255.0
        if flip:
            instances = cascade.flip_test_average(
                arr, lambda im: cascade.full_pipeline(model, im), swap)
        else:
            instances = cascade.full_pipeline(model, arr)
        lines.append({
            "image": path,
            "instances": [{
                "box": [inst.box.x_left * ow, inst.box.x_right * ow,
                        inst.box.y_top * oh, inst.box.y_down * oh],
                "person_score": inst.person_score,
                "keypoints": [[x * ow, y * oh, float(s)]
                              for (x, y), s in zip(inst.keypoints, inst.scores)],
            } for inst in instances],
        })
        if overlay_dir:
            os.makedirs(overlay_dir, exist_ok=True)
            save_overlay(arr, instances,
                         os.path.join(overlay_dir, os.path.basename(path)))
    text = "\n".join(json.dumps(l) for l in lines) + "\n"
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    click.echo(text, nl=False)
    if failures:
        click.echo(f"{failures} image(s) failed", err=True)


@cli.command("visualize")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--person", "person_index", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--sigma", type=float, default=None,
              help="Gaussian sigma in pixels (default 2 at 64px, scaled).")
@click.option("--stack", type=click.Choice(["max", "sum"]), default="max", show_default=True)
def cmd_visualize(ckpt, image_path, person_index, out_dir, sigma, stack):
    """Per-decoder-layer artifacts: query records, probability maps, trajectory."""
    model, config = _load_model(ckpt)
    pil = Image.open(image_path).convert("RGB")
    resized = pil.resize((config.image_size, config.image_size), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float64).transpose(2, 0, 1) / 255.0
    snapshots, transform = vis_mod.layer_snapshots(model, arr, person_index)
    os.makedirs(out_dir, exist_ok=True)
    size = config.image_size
    if sigma is None:
        sigma = 2.0 * size / 64.0
    with open(os.path.join(out_dir, "layers.jsonl"), "w") as f:
        f.write(json.dumps({"schema": "layer-snapshots/1", "n_layers": len(snapshots)}) + "\n")
        for snap in snapshots:
            f.write(json.dumps({"layer": snap["layer"],
                                "probs": snap["probs"].tolist(),
                                "coords": snap["coords"].tolist()}) + "\n")
    for snap in snapshots:
        coords_img = transform.apply(snap["coords"])
        coords_px = coords_img * size
        for j in range(config.n_joints):
            heat = vis_mod.gaussian_map(snap["probs"][:, j], coords_px, (size, size),
                                        sigma, stack=stack)
            vis_mod.render_heatmap(
                heat, os.path.join(out_dir, f"layer{snap['layer']}_class{j}.png"))
    traj = vis_mod.keypoint_trajectory(
        snapshots, transform,
        exclude_background=config.exclude_background_at_readout,
        class_specific=config.class_specific_queries)
    with open(os.path.join(out_dir, "trajectory.jsonl"), "w") as f:
        f.write(json.dumps({"schema": "trajectory/1"}) + "\n")
        for row in traj:
            f.write(json.dumps(row) + "\n")
    click.echo(f"wrote {len(snapshots)} layer snapshots to {out_dir}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
        return 0
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 2
    except (click.Abort, KeyboardInterrupt):
        return 2
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        return 1
    except Exception as e:  # runtime failure
        click.echo(f"error: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
