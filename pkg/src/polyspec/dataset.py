"""Dataset layout on disk: meta.json + vocab.json + per-task TensorPacks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import modalities as mod
from .modalities import TaskSpecification, Vocabulary
from .packs import read_tensor_pack
from .rng import RngStream


class DatasetError(ValueError):
    pass


@dataclass
class Batch:
    obs_windows: np.ndarray   # [B, T, obs_dim]
    pad_mask: np.ndarray      # [B, T] bool, True where left-padded
    actions: np.ndarray       # [B, action_dim]
    task_ids: np.ndarray      # [B] int


class Dataset:
    """Read access to a dataset tree; specs and demos are cached in memory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        try:
            self.meta = json.loads((self.root / "meta.json").read_text())
            self.vocab = Vocabulary.from_dict(
                json.loads((self.root / "vocab.json").read_text()))
        except FileNotFoundError as e:
            raise DatasetError(f"not a dataset root: {e}") from e
        self._demo_cache: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self._spec_cache: dict[tuple, TaskSpecification] = {}

    @property
    def n_tasks(self) -> int:
        return self.meta["n_tasks"]

    def _task_dir(self, task_id: int) -> Path:
        return self.root / "tasks" / f"task_{task_id:03d}"

    def demos(self, task_id: int) -> list[tuple[np.ndarray, np.ndarray]]:
        if task_id not in self._demo_cache:
            pack = read_tensor_pack(self._task_dir(task_id) / "demos.tpk")
            out = []
            d = 0
            while f"demo_{d:03d}/obs" in pack:
                out.append((pack[f"demo_{d:03d}/obs"], pack[f"demo_{d:03d}/actions"]))
                d += 1
            if not out:
                raise DatasetError(f"no demos for task {task_id}")
            self._demo_cache[task_id] = out
        return self._demo_cache[task_id]

    def spec(self, task_id: int, modality: str, variant: int) -> TaskSpecification:
        key = (task_id, modality, variant)
        if key not in self._spec_cache:
            path = self._task_dir(task_id) / "specs" / modality / f"{variant:02d}.tpk"
            if not path.exists():
                raise DatasetError(f"missing specification file: {path}")
            pack = read_tensor_pack(path)
            ids = pack.get("token_ids")
            split = "train" if variant in self.split()["train"] else "eval"
            self._spec_cache[key] = TaskSpecification(
                modality=modality, tokens=pack["tokens"], task_id=task_id,
                variant_index=variant, split=split,
                token_ids=ids.astype(np.int64) if ids is not None else None)
        return self._spec_cache[key]

    def split(self) -> dict[str, list[int]]:
        return self.meta["split"]


def split_specs(dataset: Dataset) -> dict[str, list[int]]:
    """Deterministic variant split: 0-7 train, 8-10 eval. Validates k=11."""
    k = dataset.meta.get("k_variants")
    if k != mod.N_VARIANTS:
        raise DatasetError(f"expected k={mod.N_VARIANTS} variants, meta says {k}")
    for task in range(dataset.n_tasks):
        for modality in mod.MODALITIES:
            spec_dir = dataset._task_dir(task) / "specs" / modality
            have = sorted(p.stem for p in spec_dir.glob("*.tpk")) if spec_dir.exists() else []
            if len(have) != mod.N_VARIANTS:
                raise DatasetError(
                    f"task {task} modality {modality}: expected "
                    f"{mod.N_VARIANTS} variants, found {len(have)}")
    return {"train": list(mod.TRAIN_VARIANTS), "eval": list(mod.EVAL_VARIANTS)}


def validate_spec_shapes(dataset: Dataset):
    """Check every specification tensor against the modality shape table."""
    d_feat = dataset.meta["d_feat"]
    for task in range(dataset.n_tasks):
        for modality in mod.MODALITIES:
            for v in range(mod.N_VARIANTS):
                spec = dataset.spec(task, modality, v)
                if spec.tokens.shape[1] != d_feat:
                    raise DatasetError(
                        f"{modality} task {task} variant {v}: feature dim "
                        f"{spec.tokens.shape[1]} != {d_feat}")
                mod.validate_token_count(modality, spec.tokens.shape[0])


def build_window(obs_seq: np.ndarray, t: int, window: int = 10):
    """Window of the `window` most recent observations ending at step t,
    left-padded with zeros; returns (obs [window, obs_dim], pad_mask [window])."""
    obs_dim = obs_seq.shape[1]
    out = np.zeros((window, obs_dim), dtype=np.float32)
    pad = np.ones(window, dtype=bool)
    lo = max(0, t - window + 1)
    chunk = obs_seq[lo:t + 1]
    out[window - len(chunk):] = chunk
    pad[window - len(chunk):] = False
    return out, pad


def sample_index(dataset: Dataset) -> list[tuple[int, int, int]]:
    """Every (task, demo, timestep) triple, in canonical order."""
    triples = []
    for task in range(dataset.n_tasks):
        for d, (obs, actions) in enumerate(dataset.demos(task)):
            for t in range(len(actions)):
                triples.append((task, d, t))
    return triples


def load_batches(dataset: Dataset, batch_size: int, rng: RngStream,
                 window: int = 10):
    """One epoch of shuffled batches; the final short batch is kept."""
    triples = sample_index(dataset)
    order = rng.permutation(len(triples))
    for start in range(0, len(triples), batch_size):
        idx = order[start:start + batch_size]
        obs_w, pads, acts, tasks = [], [], [], []
        for i in idx:
            task, d, t = triples[i]
            obs_seq, actions = dataset.demos(task)[d]
            w, p = build_window(obs_seq, t, window)
            obs_w.append(w)
            pads.append(p)
            acts.append(actions[t])
            tasks.append(task)
        yield Batch(np.stack(obs_w), np.stack(pads), np.stack(acts),
                    np.array(tasks, dtype=np.int64))
