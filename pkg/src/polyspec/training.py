"""Two-stage training: joint behavior cloning + masked modeling, then
cross-modal matching with everything frozen except the non-video projection
and matching blocks. Ablation modes cover the modality-specific, joint,
no-masked-modeling, and no-matching baselines."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import modalities as mod
from .autodiff import Tensor, as_tensor
from .config import ModelConfig, TrainConfig
from .dataset import Dataset, load_batches
from .encoders import compute_matching_loss, mask_any_specification
from .modalities import MaskRecord
from .optim import AdamW, clip_global_norm, cosine_lr
from .ops import cross_entropy, l1_loss
from .packs import read_tensor_pack, write_tensor_pack
from .params import STAGE2_TRAINABLE, ParameterStore
from .policy import PolicyModel, gmm_nll
from .rng import RngStream


def sample_modality_subset(rng: RngStream) -> tuple[str, ...]:
    """k uniform in {1..6}, then a uniform k-subset, in canonical order."""
    k = 1 + rng.randint(6)
    idxs = sorted(rng.choice_without_replacement(6, k))
    return tuple(mod.MODALITIES[i] for i in idxs)


@dataclass
class SpecBatch:
    """Tensorized specifications of one modality for a batch of samples."""
    modality: str
    tokens: np.ndarray                 # [B, n_max, d_feat]
    token_pad: np.ndarray | None       # [B, n_max] bool or None
    token_ids: np.ndarray | None       # [B, n_max] int, -1 where padded
    records: list[MaskRecord] = field(default_factory=list)
    mask_positions: np.ndarray | None = None   # [B, n_masked]
    target_ids: np.ndarray | None = None       # [B, n_masked]
    target_features: np.ndarray | None = None  # [B, n_masked, d_feat]


@dataclass
class LossReport:
    bc: float
    masked: float = 0.0
    matching: float = 0.0
    total: float = 0.0
    masked_per_modality: dict = field(default_factory=dict)
    grad_norm: float = 0.0


def freeze_for_stage2(store: ParameterStore):
    """Returns (trainable, frozen) parameter lists for the matching stage."""
    trainable = [p for p in store if p.group_tag in STAGE2_TRAINABLE]
    frozen = [p for p in store if p.group_tag not in STAGE2_TRAINABLE]
    return trainable, frozen


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset: Dataset):
        self.cfg = cfg
        self.dataset = dataset
        self.root_rng = RngStream(cfg.seed)
        self.model = PolicyModel(cfg.model, self.root_rng.split("init"))
        self.train_variants = dataset.split()["train"]

    # -- batch assembly -------------------------------------------------------

    def build_spec_batch(self, modality: str, task_ids: np.ndarray,
                         variants: np.ndarray, mask_rng: RngStream | None) -> SpecBatch:
        specs = [self.dataset.spec(int(t), modality, int(v))
                 for t, v in zip(task_ids, variants)]
        n_max = max(s.n_tokens for s in specs)
        B = len(specs)
        d = self.cfg.model.d_feat
        tokens = np.zeros((B, n_max, d), dtype=np.float32)
        variable = any(s.n_tokens != n_max for s in specs)
        token_pad = np.zeros((B, n_max), dtype=bool) if variable else None
        is_text = modality in mod.TEXT_MODALITIES
        token_ids = np.full((B, n_max), -1, dtype=np.int64) if is_text else None
        for i, s in enumerate(specs):
            tokens[i, :s.n_tokens] = s.tokens
            if token_pad is not None:
                token_pad[i, s.n_tokens:] = True
            if is_text:
                token_ids[i, :s.n_tokens] = s.token_ids
        sb = SpecBatch(modality, tokens, token_pad, token_ids)
        if mask_rng is not None:
            records = [mask_any_specification(s, self.dataset.vocab, mask_rng)
                       for s in specs]
            sb.records = records
            sb.mask_positions = np.array([r.positions for r in records])
            if is_text:
                sb.target_ids = np.stack([r.target_ids for r in records])
            else:
                sb.target_features = np.stack([r.target_features for r in records])
        return sb

    def _spec_tokens_for_forward(self, spec_batches: dict[str, SpecBatch],
                                 masked: bool):
        out = {}
        for m, sb in spec_batches.items():
            tokens = as_tensor(sb.tokens)
            if masked and sb.mask_positions is not None:
                tokens = self.model.spec_encoders.apply_mask(
                    m, tokens, sb.mask_positions)
            out[m] = (tokens, sb.token_pad)
        return out

    # -- steps ----------------------------------------------------------------

    def stage1_step(self, batch, subset: tuple[str, ...], opt: AdamW,
                    rng: RngStream) -> LossReport:
        """Masked-modeling stage: BC + weighted masked-prediction losses,
        update all parameter groups."""
        cfg = self.cfg
        apply_masking = len(subset) > 1 and cfg.mode not in (
            "no_masked_modeling", "modality_specific")
        variant_rng = rng.split("variants")
        variants = np.array([self.train_variants[variant_rng.randint(
            len(self.train_variants))] for _ in batch.task_ids])
        mask_rng = rng.split("masking") if apply_masking else None
        spec_batches = {m: self.build_spec_batch(m, batch.task_ids, variants,
                                                 mask_rng)
                        for m in subset}
        masked_queries = ({m: sb.mask_positions
                           for m, sb in spec_batches.items()}
                          if apply_masking else None)
        out = self.model.forward(
            batch.obs_windows, batch.pad_mask,
            self._spec_tokens_for_forward(spec_batches, masked=apply_masking),
            stage=1, rng=rng.split("forward"), training=True,
            masked_queries=masked_queries)

        bc = gmm_nll(out.gmm[0], batch.actions)
        masked_terms = {}
        masked_total = None
        if apply_masking:
            for m, sb in spec_batches.items():
                if m in mod.TEXT_MODALITIES:
                    term = cross_entropy(out.text_logits[m], sb.target_ids)
                else:
                    term = l1_loss(out.feature_preds[m],
                                   Tensor(sb.target_features))
                masked_terms[m] = float(term.data)
                masked_total = term if masked_total is None else masked_total + term
        total = bc * cfg.bc_weight
        if masked_total is not None:
            total = total + masked_total * cfg.masked_weight

        opt.zero_grad()
        total.backward()
        norm = clip_global_norm(opt.params, cfg.grad_clip)
        opt.step()
        masked_val = sum(masked_terms.values())
        return LossReport(bc=float(bc.data), masked=masked_val,
                          total=float(total.data),
                          masked_per_modality=masked_terms, grad_norm=norm)

    def stage2_step(self, batch, subset: tuple[str, ...], opt: AdamW,
                    rng: RngStream) -> LossReport:
        """Matching stage: BC on a sampled subset plus the cross-modal
        matching loss over all six stage-2 embeddings; only the unfrozen
        projection/matching groups update."""
        cfg = self.cfg
        variant_rng = rng.split("variants")
        variants = np.array([self.train_variants[variant_rng.randint(
            len(self.train_variants))] for _ in batch.task_ids])
        spec_batches = {m: self.build_spec_batch(m, batch.task_ids, variants,
                                                 None)
                        for m in mod.MODALITIES}
        bc_tokens = {m: (as_tensor(spec_batches[m].tokens),
                         spec_batches[m].token_pad) for m in subset}
        out = self.model.forward(
            batch.obs_windows, batch.pad_mask, bc_tokens, stage=2,
            rng=rng.split("forward"), training=True)
        bc = gmm_nll(out.gmm[0], batch.actions)

        enc_rng = rng.split("match_encode")
        embeddings = {}
        for m in mod.MODALITIES:
            sb = spec_batches[m]
            embeddings[m] = self.model.spec_encoders.encode(
                m, as_tensor(sb.tokens), stage=2, rng=enc_rng.split(m),
                training=True, token_pad=sb.token_pad)
        matching = compute_matching_loss(embeddings, cfg.matching_metric)
        total = bc * cfg.bc_weight + matching * cfg.matching_weight

        opt.zero_grad()
        self.model.store.zero_grads()
        total.backward()
        norm = clip_global_norm(opt.params, cfg.grad_clip)
        opt.step()
        return LossReport(bc=float(bc.data), matching=float(matching.data),
                          total=float(total.data), grad_norm=norm)

    def joint_step(self, batch, subset, opt, rng) -> LossReport:
        """Both auxiliary objectives in a single update (joint ablation)."""
        rep1_rng = rng.split("s1")
        cfg = self.cfg
        apply_masking = len(subset) > 1
        variant_rng = rep1_rng.split("variants")
        variants = np.array([self.train_variants[variant_rng.randint(
            len(self.train_variants))] for _ in batch.task_ids])
        mask_rng = rep1_rng.split("masking") if apply_masking else None
        spec_batches = {m: self.build_spec_batch(m, batch.task_ids, variants,
                                                 mask_rng)
                        for m in mod.MODALITIES}
        bc_tokens = {m: (self._spec_tokens_for_forward(
            {m: spec_batches[m]}, masked=apply_masking and m in subset)[m])
            for m in subset}
        masked_queries = ({m: spec_batches[m].mask_positions for m in subset}
                          if apply_masking else None)
        out = self.model.forward(
            batch.obs_windows, batch.pad_mask, bc_tokens, stage=2,
            rng=rep1_rng.split("forward"), training=True,
            masked_queries=masked_queries)
        bc = gmm_nll(out.gmm[0], batch.actions)
        masked_total = None
        masked_terms = {}
        if apply_masking:
            for m in subset:
                sb = spec_batches[m]
                if m in mod.TEXT_MODALITIES:
                    term = cross_entropy(out.text_logits[m], sb.target_ids)
                else:
                    term = l1_loss(out.feature_preds[m], Tensor(sb.target_features))
                masked_terms[m] = float(term.data)
                masked_total = term if masked_total is None else masked_total + term
        enc_rng = rep1_rng.split("match_encode")
        embeddings = {m: self.model.spec_encoders.encode(
            m, as_tensor(spec_batches[m].tokens), stage=2,
            rng=enc_rng.split(m), training=True,
            token_pad=spec_batches[m].token_pad) for m in mod.MODALITIES}
        matching = compute_matching_loss(embeddings, cfg.matching_metric)
        total = bc * cfg.bc_weight + matching * cfg.matching_weight
        if masked_total is not None:
            total = total + masked_total * cfg.masked_weight
        opt.zero_grad()
        total.backward()
        norm = clip_global_norm(opt.params, cfg.grad_clip)
        opt.step()
        return LossReport(bc=float(bc.data),
                          masked=sum(masked_terms.values()),
                          matching=float(matching.data),
                          total=float(total.data),
                          masked_per_modality=masked_terms, grad_norm=norm)

    # -- epochs ---------------------------------------------------------------

    def _subset_for_batch(self, rng: RngStream) -> tuple[str, ...]:
        if self.cfg.mode == "modality_specific":
            return (self.cfg.modality,)
        return sample_modality_subset(rng)

    def run_stage(self, stage: int, epochs: int, metrics_path: Path | None,
                  log: list | None = None) -> None:
        cfg = self.cfg
        stage_rng = self.root_rng.split(f"stage{stage}")
        if stage == 1 or cfg.mode == "joint":
            opt = AdamW(self.model.store, lr=cfg.lr_max, betas=cfg.betas,
                        weight_decay=cfg.weight_decay)
        else:
            trainable, _ = freeze_for_stage2(self.model.store)
            opt = AdamW(trainable, lr=cfg.lr_max, betas=cfg.betas,
                        weight_decay=cfg.weight_decay)
        for epoch in range(epochs):
            t0 = time.monotonic()
            opt.state.lr = cosine_lr(epoch, epochs, cfg.lr_max, cfg.lr_min)
            epoch_rng = stage_rng.split(f"epoch{epoch}")
            batch_rng = epoch_rng.split("batches")
            subset_rng = epoch_rng.split("subsets")
            step_rng = epoch_rng.split("steps")
            sums = {"bc": 0.0, "masked": 0.0, "matching": 0.0, "total": 0.0}
            max_norm = 0.0
            n = 0
            for i, batch in enumerate(load_batches(
                    self.dataset, cfg.batch_size, batch_rng,
                    window=cfg.model.obs_window)):
                subset = self._subset_for_batch(subset_rng)
                srng = step_rng.split(f"step{i}")
                if cfg.mode == "joint":
                    rep = self.joint_step(batch, subset, opt, srng)
                elif stage == 1:
                    rep = self.stage1_step(batch, subset, opt, srng)
                else:
                    rep = self.stage2_step(batch, subset, opt, srng)
                sums["bc"] += rep.bc
                sums["masked"] += rep.masked
                sums["matching"] += rep.matching
                sums["total"] += rep.total
                max_norm = max(max_norm, rep.grad_norm)
                n += 1
            record = {
                "stage": stage, "epoch": epoch, "lr": opt.state.lr,
                "bc": sums["bc"] / n, "masked": sums["masked"] / n,
                "matching": sums["matching"] / n,
                "total": sums["total"] / n,
                "max_grad_norm": max_norm,
                "wall_ms": (time.monotonic() - t0) * 1e3,
            }
            if log is not None:
                log.append(record)
            if metrics_path is not None:
                with open(metrics_path, "a") as fh:
                    fh.write(json.dumps(record) + "\n")

    def train(self, out_dir: str | Path, stage: str = "all") -> Path:
        """Run the configured stages; writes metrics.jsonl and checkpoints.
        Returns the final checkpoint directory."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.jsonl"
        metrics_path.write_text("")
        cfg = self.cfg

        run_stage1 = stage in ("1", "all")
        run_stage2 = stage in ("2", "all") and cfg.mode in (
            "mutex", "no_masked_modeling")
        if cfg.mode == "joint":
            run_stage2 = False

        if run_stage1:
            self.run_stage(1, cfg.stage1_epochs, metrics_path)
            save_checkpoint(self.model, cfg, out / "checkpoint_stage1")
        if run_stage2:
            self.run_stage(2, cfg.stage2_epochs, metrics_path)
        final = out / "checkpoint"
        save_checkpoint(self.model, cfg, final)
        return final


# -- checkpoints ---------------------------------------------------------------

CKPT_VERSION = 1


def save_checkpoint(model: PolicyModel, cfg: TrainConfig, path: str | Path) -> Path:
    """Checkpoint = TensorPack of parameters keyed by group tag + config echo."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {f"{p.group_tag}::{p.name}": p.value for p in model.store}
    write_tensor_pack(entries, path / "params.tpk")
    (path / "config.json").write_text(json.dumps(
        {"checkpoint_version": CKPT_VERSION, "train_config": cfg.to_dict()},
        indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[PolicyModel, TrainConfig]:
    path = Path(path)
    try:
        meta = json.loads((path / "config.json").read_text())
    except FileNotFoundError as e:
        raise ValueError(f"not a checkpoint directory: {path}") from e
    if meta.get("checkpoint_version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version "
                         f"{meta.get('checkpoint_version')!r}")
    cfg = TrainConfig.from_dict(meta["train_config"])
    model = PolicyModel(cfg.model, RngStream(cfg.seed).split("init"))
    entries = read_tensor_pack(path / "params.tpk")
    state = {}
    for key, arr in entries.items():
        group, name = key.split("::", 1)
        if name not in model.store or model.store[name].group_tag != group:
            raise ValueError(f"checkpoint entry {key!r} does not match the model")
        state[name] = arr
    model.store.load_state_dict(state)
    return model, cfg


def restore_into_trainer(trainer: Trainer, ckpt_path: str | Path):
    model, _ = load_checkpoint(ckpt_path)
    trainer.model.store.load_state_dict(model.store.state_dict())
