"""Command line interface: synthetic data generation, training, rollout
evaluation with rendered reports, gradient checking, and tensor-pack
inspection.

Exit codes: 0 success, 1 validation/configuration error, 2 I/O or file
format error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import modalities as mod
from .config import ModelConfig, TrainConfig
from .dataset import Dataset, DatasetError
from .packs import TensorPackError, inspect_tensor_pack


@click.group()
def cli():
    """Multimodal task-specification policy toolkit."""


@cli.command("gen-synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--tasks", default=8, show_default=True)
@click.option("--demos", default=16, show_default=True)
@click.option("--horizon", default=40, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_synth(out_dir, tasks, demos, horizon, seed):
    """Generate the synthetic point-and-press benchmark suite."""
    from .synthetic import SyntheticSuiteConfig, generate_synthetic_suite

    cfg = SyntheticSuiteConfig(n_tasks=tasks, demos_per_task=demos,
                               horizon=horizon, seed=seed)
    generate_synthetic_suite(cfg, out_dir)
    click.echo(f"wrote synthetic suite to {out_dir} "
               f"({tasks} tasks x {demos} demos x {horizon} steps)")


@cli.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--mode", default="mutex", show_default=True,
              type=click.Choice(TrainConfig.MODES))
@click.option("--modality", default=None,
              type=click.Choice(mod.MODALITIES),
              help="Required for modality_specific mode.")
@click.option("--stage", default="all", show_default=True,
              type=click.Choice(["1", "2", "all"]))
@click.option("--stage1-epochs", default=50, show_default=True)
@click.option("--stage2-epochs", default=20, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--window", default=10, show_default=True,
              help="Observation history length.")
@click.option("--resume-from", default=None, type=click.Path(),
              help="Checkpoint directory to restore before training.")
def train(data_dir, out_dir, mode, modality, stage, stage1_epochs,
          stage2_epochs, batch_size, seed, window, resume_from):
    """Train a policy on a generated suite; writes metrics and checkpoints."""
    from .training import Trainer, restore_into_trainer

    dataset = Dataset(data_dir)
    cfg = TrainConfig(
        stage1_epochs=stage1_epochs, stage2_epochs=stage2_epochs,
        batch_size=batch_size, seed=seed, mode=mode, modality=modality,
        model=ModelConfig(obs_window=window,
                          d_feat=dataset.meta["d_feat"],
                          obs_dim=dataset.meta["obs_dim"],
                          action_dim=dataset.meta["action_dim"]))
    trainer = Trainer(cfg, dataset)
    if resume_from is not None:
        restore_into_trainer(trainer, resume_from)
    final = trainer.train(out_dir, stage=stage)
    click.echo(f"final checkpoint: {final}")


def _parse_sets(text: str | None) -> list[tuple[str, ...]]:
    from .evaluation import default_modality_sets

    if not text:
        return default_modality_sets()
    sets = []
    for part in text.split(","):
        names = tuple(n.strip() for n in part.split("+") if n.strip())
        if not names:
            raise click.BadParameter("empty modality set")
        for n in names:
            if n not in mod.MODALITIES:
                raise click.BadParameter(
                    f"unknown modality {n!r}; choose from "
                    f"{', '.join(mod.MODALITIES)}")
        sets.append(names)
    return sets


@cli.command("eval")
@click.option("--checkpoint", "ckpt", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--sets", default=None,
              help="Comma-separated modality sets, '+' within a set, e.g. "
                   "'text_goal,image_goal+speech_goal'. Default: each "
                   "modality alone.")
@click.option("--trials", default=20, show_default=True)
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated evaluation seeds.")
@click.option("--split", default="eval", show_default=True,
              type=click.Choice(["eval", "train"]))
@click.option("--allow-train-specs", is_flag=True,
              help="Permit evaluating on training-split specifications.")
@click.option("--dump-trajectories", is_flag=True,
              help="Also write per-step trajectories as CSV.")
def eval_cmd(ckpt, data_dir, out_dir, sets, trials, seeds, split,
             allow_train_specs, dump_trajectories):
    """Roll out a checkpoint and render JSON/text/CSV reports and figures."""
    from .evaluation import (PolicyRunner, batched_rollout, evaluate,
                             write_report)
    from .synthetic import PointPressEnv
    from .training import load_checkpoint

    model, _ = load_checkpoint(ckpt)
    dataset = Dataset(data_dir)
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    report = evaluate(model, dataset, _parse_sets(sets), trials, seed_list,
                      split=split, allow_train_specs=allow_train_specs)
    trajectories = None
    if dump_trajectories:
        horizon = dataset.meta["horizon"]
        runner = PolicyRunner(model)
        envs, specs = [], {mod.TEXT_GOAL: []}
        from .rng import RngStream
        start_rng = RngStream(seed_list[0]).split("eval_starts")
        for task in range(dataset.n_tasks):
            env = PointPressEnv(task, horizon,
                                dataset.meta.get("n_targets", 4),
                                dataset.meta["obs_dim"])
            env.reset(start_rng.uniform((2,)))
            envs.append(env)
            specs[mod.TEXT_GOAL].append(
                dataset.spec(task, mod.TEXT_GOAL,
                             dataset.split()[split][0]))
        results = batched_rollout(runner, envs, specs, horizon,
                                  window=model.cfg.obs_window)
        trajectories = [r["trajectory"] for r in results]
    out = write_report(report, out_dir, dump_trajectories=trajectories)
    click.echo((out / "report.txt").read_text(), nl=False)
    click.echo(f"report written to {out}")


@cli.command("gradcheck")
@click.option("--samples", default=2, show_default=True,
              help="Coordinates checked per parameter.")
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
def gradcheck_cmd(samples, seed, tolerance):
    """Finite-difference check of every parameter group on a small model."""
    from .gradcheck import full_model_gradcheck

    errors = full_model_gradcheck(samples_per_param=samples, seed=seed)
    width = max(len(k) for k in errors)
    for tag in sorted(errors):
        status = "ok" if errors[tag] < tolerance else "FAIL"
        click.echo(f"{tag:<{width}}  {errors[tag]:.3e}  {status}")
    worst = max(errors.values())
    click.echo(f"max relative error: {worst:.3e} (tolerance {tolerance:g})")
    if worst >= tolerance:
        raise click.ClickException("gradient check failed")


@cli.command("inspect-pack")
@click.argument("path", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of a table.")
def inspect_pack(path, as_json):
    """Print the contents of a tensor-pack file."""
    report = inspect_tensor_pack(path)
    if as_json:
        click.echo(json.dumps(report, indent=2))
        return
    name_w = max([len(r["name"]) for r in report] + [4])
    click.echo(f"{'name':<{name_w}}  {'dtype':<5}  {'shape':<16}  "
               f"{'min':>12}  {'max':>12}  finite")
    for r in report:
        shape = "x".join(str(s) for s in r["shape"])
        click.echo(f"{r['name']:<{name_w}}  {r['dtype']:<5}  {shape:<16}  "
                   f"{r['min']:>12.5g}  {r['max']:>12.5g}  "
                   f"{'yes' if r['finite'] else 'NO'}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except (TensorPackError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except (DatasetError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
