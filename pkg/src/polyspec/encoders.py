"""Modality specification encoders: masking, projection stacks, and the
cross-modal matching loss.

Each modality runs through a modality-specific block (plain MLP for
single-embedding modalities, transformer-with-mean-pool otherwise), then an
optional matching block (stage 2, all modalities except video), then one MLP
block shared by all six modalities, yielding a single embedding per modality.
"""

from __future__ import annotations

import numpy as np

from . import modalities as mod
from .autodiff import Tensor, as_tensor
from .config import ModelConfig
from .layers import MLPBlock, MultiHeadAttention, FeedForward, LayerNormParams
from .modalities import MaskRecord, TaskSpecification
from .ops import l1_loss, mse_loss
from .params import ParameterStore
from .rng import RngStream


class TransformerPoolBlock:
    """LN -> self-attention (+res) -> LN -> feed-forward (+res) -> mean pool.

    No positional encoding, so the pooled output is permutation-invariant
    over input tokens.
    """

    def __init__(self, store, prefix, group, d: int, heads: int, inner: int,
                 ffn_hidden: int, rng: RngStream, p_drop: float = 0.1):
        if inner % heads:
            raise ValueError("pool inner dim must divide across heads")
        self.ln1 = LayerNormParams(store, f"{prefix}/ln1", group, d)
        self.attn = MultiHeadAttention(store, f"{prefix}/attn", group, d, d,
                                       heads, inner // heads, d,
                                       rng.split("attn"), p_drop)
        self.ln2 = LayerNormParams(store, f"{prefix}/ln2", group, d)
        self.ffn = FeedForward(store, f"{prefix}/ffn", group, d, ffn_hidden,
                               rng.split("ffn"), p_drop)

    def __call__(self, x: Tensor, rng: RngStream, training: bool,
                 token_pad: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, rng.split("a"), training, kv_pad=token_pad)
        x = x + self.ffn(self.ln2(x), rng.split("f"), training)
        if token_pad is None:
            return x.mean(axis=1)
        keep = (~token_pad).astype(x.dtype)[:, :, None]
        counts = keep.sum(axis=1)
        return (x * Tensor(keep)).sum(axis=1) * Tensor(1.0 / counts)


class ProjectionStack:
    """Per-modality projection: modality block [+ matching block] + shared block."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, modality: str,
                 shared_block: MLPBlock, rng: RngStream):
        self.modality = modality
        self.shared = shared_block
        letter = mod.LETTER[modality]
        group = f"proj_{letter}"
        d = cfg.d_feat
        if modality in mod.SINGLE_EMBEDDING:
            self.block = MLPBlock(store, f"enc/{letter}/mlp", group, d,
                                  cfg.mlp_hidden, rng.split("block"), cfg.dropout)
            self._pooled = False
        else:
            self.block = TransformerPoolBlock(
                store, f"enc/{letter}/pool", group, d, cfg.pool_heads,
                cfg.pool_inner, cfg.pool_ffn, rng.split("block"), cfg.dropout)
            self._pooled = True
        if modality != mod.MATCHING_TARGET:
            # residual MLP with zeroed second linear: identity at init, so
            # stage 2 starts from the stage-1 representation
            self.matching = MLPBlock(store, f"enc/{letter}/match",
                                     f"match_{letter}", d, cfg.mlp_hidden,
                                     rng.split("match"), cfg.dropout, zero_out=True)
        else:
            self.matching = None
        # learned replacement vector for masked positions
        self.mask_emb = store.register(
            f"enc/{letter}/mask_emb",
            rng.split("mask_emb").normal((d,), std=0.02).astype(np.float32),
            group)

    def __call__(self, tokens: Tensor, stage: int, rng: RngStream,
                 training: bool, token_pad: np.ndarray | None = None) -> Tensor:
        if self._pooled:
            f = self.block(tokens, rng.split("b"), training, token_pad=token_pad)
        else:
            f = self.block(tokens.reshape(tokens.shape[0], tokens.shape[2]),
                           rng.split("b"), training)
        if stage == 2 and self.matching is not None:
            f = f + self.matching(f, rng.split("m"), training)
        return self.shared(f, rng.split("s"), training)


class SpecEncoders:
    """All six projection stacks plus the shared block."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, rng: RngStream):
        self.cfg = cfg
        self.shared = MLPBlock(store, "enc/shared/mlp", "proj_shared",
                               cfg.d_feat, cfg.mlp_hidden,
                               rng.split("shared"), cfg.dropout)
        self.stacks = {m: ProjectionStack(store, cfg, m, self.shared,
                                          rng.split(m))
                       for m in mod.MODALITIES}

    def encode(self, modality: str, tokens: Tensor, stage: int,
               rng: RngStream, training: bool,
               token_pad: np.ndarray | None = None) -> Tensor:
        """tokens [B, n_tok, d_feat] -> embedding [B, d_feat]."""
        if stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {stage}")
        return self.stacks[modality](tokens, stage, rng, training, token_pad)

    def apply_mask(self, modality: str, tokens: Tensor,
                   positions: np.ndarray) -> Tensor:
        """Replace masked positions with the learned per-modality vector.

        tokens [B, n_tok, d], positions [B, n_masked] int.
        """
        B, n_tok, _ = tokens.shape
        onehot = np.zeros((B, n_tok, 1), dtype=tokens.dtype)
        rows = np.repeat(np.arange(B), positions.shape[1])
        onehot[rows, positions.reshape(-1), 0] = 1.0
        mask_vec = self.stacks[modality].mask_emb.tensor
        return tokens * Tensor(1.0 - onehot) + mask_vec * Tensor(onehot)


def encode_modality(spec: TaskSpecification, encoders: SpecEncoders,
                    stage: int, rng: RngStream, training: bool = False) -> Tensor:
    """Single-specification convenience wrapper; returns [d_feat]."""
    tokens = as_tensor(spec.tokens[None])
    f = encoders.encode(spec.modality, tokens, stage, rng, training)
    return f.reshape(f.shape[1])


class MaskingError(ValueError):
    pass


def mask_specification(spec: TaskSpecification, rng: RngStream) -> MaskRecord:
    """Choose masked positions and record reconstruction targets.

    Counts per modality: text goal 1 non-stopword, text instructions 2
    non-stopwords, image goal its single feature, video 1 of 16 frames,
    speech 1 of 4 features. Text targets are token ids; the rest keep the
    original feature rows. The video/speech position is the stream's next
    raw draw mod n_tok.
    """
    if spec.split != "train":
        raise MaskingError("masking applies to train-split specifications only")
    m = spec.modality
    if m in mod.TEXT_MODALITIES:
        raise MaskingError("text masking needs a vocabulary; "
                           "use mask_text_specification")
    if m == mod.IMAGE_GOAL:
        positions = [0]
    else:
        positions = [rng.randint(spec.n_tokens)]
    return MaskRecord(modality=m, positions=positions,
                      target_features=spec.tokens[positions].copy())


def mask_text_specification(spec: TaskSpecification, vocab,
                            rng: RngStream) -> MaskRecord:
    n_mask = mod.MASK_COUNTS[spec.modality]
    candidates = [i for i, tid in enumerate(spec.token_ids)
                  if not vocab.is_stopword_id(int(tid))]
    if len(candidates) < n_mask:
        raise MaskingError(
            f"{spec.modality} task {spec.task_id} variant {spec.variant_index}: "
            f"needs {n_mask} maskable non-stopwords, found {len(candidates)}")
    if n_mask == 1:
        chosen = [candidates[rng.randint(len(candidates))]]
    else:
        picks = rng.choice_without_replacement(len(candidates), n_mask)
        chosen = sorted(candidates[i] for i in picks)
    return MaskRecord(modality=spec.modality, positions=list(chosen),
                      target_ids=np.asarray([spec.token_ids[i] for i in chosen],
                                            dtype=np.int64))


def mask_any_specification(spec: TaskSpecification, vocab,
                           rng: RngStream) -> MaskRecord:
    if spec.modality in mod.TEXT_MODALITIES:
        return mask_text_specification(spec, vocab, rng)
    return mask_specification(spec, rng)


def compute_matching_loss(embeddings: dict[str, Tensor],
                          metric: str = "mse") -> Tensor:
    """Sum over non-video modalities of the distance to the detached video
    embedding. Gradients never flow into the video pathway."""
    if mod.MATCHING_TARGET not in embeddings:
        raise ValueError("matching loss requires the video embedding")
    target = embeddings[mod.MATCHING_TARGET].detach()
    loss_fn = mse_loss if metric == "mse" else l1_loss
    total = None
    for m in mod.MODALITIES:
        if m == mod.MATCHING_TARGET or m not in embeddings:
            continue
        term = loss_fn(embeddings[m], target)
        total = term if total is None else total + term
    if total is None:
        total = Tensor(np.zeros(()))
    return total
