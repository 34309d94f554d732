"""Closed-loop rollout evaluation and report rendering (JSON, text table,
CSV, and a success-rate figure)."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import modalities as mod
from .autodiff import no_grad
from .dataset import Dataset, build_window
from .policy import PolicyModel, select_action
from .rng import RngStream
from .synthetic import PointPressEnv, sample_free_start


class PolicyRunner:
    """Frozen-checkpoint action selection for a batch of parallel episodes."""

    def __init__(self, model: PolicyModel, mode: str = "deterministic"):
        self.model = model
        self.mode = mode
        self._rng = RngStream(0).split("rollout_sampling")

    def act_batch(self, obs_windows: np.ndarray, pad_mask: np.ndarray,
                  spec_tokens: dict) -> np.ndarray:
        with no_grad():
            out = self.model.forward(obs_windows, pad_mask, spec_tokens,
                                     stage=2, rng=RngStream(0).split("eval_fwd"),
                                     training=False)
        return select_action(out.gmm[0], self.mode, self._rng)


def _tensorize_specs(specs_per_modality: dict[str, list], d_feat: int):
    """modality -> list of per-episode TaskSpecification -> forward input."""
    out = {}
    for m, specs in specs_per_modality.items():
        n_max = max(s.n_tokens for s in specs)
        B = len(specs)
        tokens = np.zeros((B, n_max, d_feat), dtype=np.float32)
        pad = np.zeros((B, n_max), dtype=bool)
        for i, s in enumerate(specs):
            tokens[i, :s.n_tokens] = s.tokens
            pad[i, s.n_tokens:] = True
        out[m] = (tokens, pad if pad.any() else None)
    return out


def rollout(policy_fn, env: PointPressEnv, horizon: int,
            window: int = 10) -> dict:
    """Run one closed-loop episode.

    policy_fn(obs_window [T, obs_dim], pad_mask [T]) -> action. Returns
    {success, wrong_target, trajectory} where trajectory stacks the raw
    observations.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    history = [env.observe()]
    for _ in range(horizon):
        obs_seq = np.stack(history)
        w, p = build_window(obs_seq, len(history) - 1, window)
        action = policy_fn(w, p)
        history.append(env.step(action))
    return {"success": env.success(),
            "wrong_target": env.nearest_other_target(),
            "trajectory": np.stack(history)}


def batched_rollout(runner: PolicyRunner, envs: list[PointPressEnv],
                    specs_per_modality: dict[str, list], horizon: int,
                    window: int = 10) -> list[dict]:
    """Roll all episodes in lockstep with batched policy forwards."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    d_feat = runner.model.cfg.d_feat
    spec_tokens = _tensorize_specs(specs_per_modality, d_feat)
    histories = [[env.observe()] for env in envs]
    for _ in range(horizon):
        windows, pads = [], []
        for h in histories:
            w, p = build_window(np.stack(h), len(h) - 1, window)
            windows.append(w)
            pads.append(p)
        actions = runner.act_batch(np.stack(windows), np.stack(pads), spec_tokens)
        for env, h, a in zip(envs, histories, actions):
            h.append(env.step(a))
    return [{"success": env.success(),
             "wrong_target": env.nearest_other_target(),
             "trajectory": np.stack(h)}
            for env, h in zip(envs, histories)]


@dataclass
class EvalReport:
    rows: list[dict]          # per (modality_set, task, seed)
    aggregates: list[dict]    # per modality_set
    config: dict
    wall_s: float

    def to_dict(self) -> dict:
        return {"rows": self.rows, "aggregates": self.aggregates,
                "config": self.config, "wall_s": self.wall_s}


def evaluate(model: PolicyModel, dataset: Dataset,
             modality_sets: list[tuple[str, ...]], trials_per_task: int,
             seeds: list[int], split: str = "eval",
             allow_train_specs: bool = False) -> EvalReport:
    """Success rates per modality set and task, averaged over seeds.

    Initial positions are drawn per seed; specification variants cycle
    through the active split's variants per trial.
    """
    t0 = time.monotonic()
    for ms in modality_sets:
        for m in ms:
            if m not in mod.MODALITIES:
                raise ValueError(f"unknown modality name {m!r}")
    if split == "train" and not allow_train_specs:
        raise ValueError("train-split specs require allow_train_specs")
    variants = dataset.split()[split]
    horizon = dataset.meta["horizon"]
    n_targets = dataset.meta.get("n_targets", 4)
    obs_dim = dataset.meta["obs_dim"]
    runner = PolicyRunner(model)

    rows = []
    for ms in modality_sets:
        for seed in seeds:
            start_rng = RngStream(seed).split("eval_starts")
            if trials_per_task == 0:
                for task in range(dataset.n_tasks):
                    rows.append({"modality_set": list(ms), "task": task,
                                 "seed": seed, "trials": 0, "successes": 0,
                                 "wrong_target": 0, "success_rate": None,
                                 "zero_trials": True})
                continue
            envs, specs = [], {m: [] for m in ms}
            task_of = []
            for task in range(dataset.n_tasks):
                for trial in range(trials_per_task):
                    env = PointPressEnv(task, horizon, n_targets, obs_dim)
                    env.reset(sample_free_start(start_rng, n_targets))
                    envs.append(env)
                    task_of.append(task)
                    v = variants[trial % len(variants)]
                    for m in ms:
                        specs[m].append(dataset.spec(task, m, v))
            results = batched_rollout(runner, envs, specs, horizon,
                                      window=model.cfg.obs_window)
            for task in range(dataset.n_tasks):
                rs = [r for r, t in zip(results, task_of) if t == task]
                succ = int(sum(bool(r["success"]) for r in rs))
                rows.append({"modality_set": list(ms), "task": task,
                             "seed": seed, "trials": len(rs),
                             "successes": succ,
                             "wrong_target": int(sum(bool(r["wrong_target"])
                                                     for r in rs)),
                             "success_rate": succ / len(rs),
                             "zero_trials": False})

    aggregates = []
    for ms in modality_sets:
        sub = [r for r in rows if r["modality_set"] == list(ms)]
        rates = [r["success_rate"] for r in sub if r["success_rate"] is not None]
        aggregates.append({
            "modality_set": list(ms),
            "trials": sum(r["trials"] for r in sub),
            "successes": sum(r["successes"] for r in sub),
            "wrong_target": sum(r["wrong_target"] for r in sub),
            "mean_success_rate": float(np.mean(rates)) if rates else None,
            "zero_trials": not rates,
        })
    config = {"modality_sets": [list(ms) for ms in modality_sets],
              "trials_per_task": trials_per_task, "seeds": seeds,
              "split": split, "n_tasks": dataset.n_tasks}
    return EvalReport(rows, aggregates, config, time.monotonic() - t0)


def default_modality_sets() -> list[tuple[str, ...]]:
    return [(m,) for m in mod.MODALITIES]


def write_report(report: EvalReport, out_dir: str | Path,
                 dump_trajectories: list | None = None) -> Path:
    """Render report.json, report.txt, report.csv, and a bar-chart figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))

    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "modality_set", "task", "seed", "trials", "successes",
            "wrong_target", "success_rate"])
        writer.writeheader()
        for r in report.rows:
            row = dict(r)
            row["modality_set"] = "+".join(r["modality_set"])
            row.pop("zero_trials", None)
            writer.writerow(row)

    lines = [f"{'modality set':<42} {'trials':>7} {'success':>8} {'rate':>7}"]
    for agg in report.aggregates:
        rate = ("  n/a" if agg["mean_success_rate"] is None
                else f"{agg['mean_success_rate']:7.3f}")
        lines.append(f"{'+'.join(agg['modality_set']):<42} "
                     f"{agg['trials']:>7} {agg['successes']:>8} {rate}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")

    _render_figure(report, out / "figures" / "success_rates.png")

    if dump_trajectories:
        with open(out / "trajectories.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "step", "x", "y", "time_frac"])
            for i, traj in enumerate(dump_trajectories):
                for t, row in enumerate(traj):
                    writer.writerow([i, t] + [f"{v:.6f}" for v in row])
    return out


def _render_figure(report: EvalReport, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path.parent.mkdir(parents=True, exist_ok=True)
    labels = ["+".join(a["modality_set"]) for a in report.aggregates]
    rates = [a["mean_success_rate"] or 0.0 for a in report.aggregates]
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), rates, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("mean success rate")
    ax.set_title("Success rate by task-specification modality set")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
