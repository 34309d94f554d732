"""The policy network: observation embedder, cross/self-attention policy
encoder, learnable-query decoder, GMM action head, and masked-token
prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import modalities as mod
from .autodiff import Tensor, as_tensor, concat, stack
from .config import ModelConfig
from .encoders import SpecEncoders
from .layers import Linear, TransformerLayer
from .ops import log_softmax, logsumexp, relu, sinusoidal_positions, softmax
from .params import ParameterStore
from .rng import RngStream

QUERY_TYPES = ("action",) + mod.MODALITIES

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class DecoderQuery:
    query_type: str          # "action" or a modality name
    position: int            # timestep index / masked token index

    def __post_init__(self):
        if self.query_type not in QUERY_TYPES:
            raise ValueError(f"unknown query type {self.query_type!r}")
        if self.position < 0:
            raise ValueError("query position must be >= 0")


@dataclass
class GMMParams:
    logits: Tensor      # [B, C]
    means: Tensor       # [B, C, action_dim]
    log_stds: Tensor    # [B, C, action_dim], already clamped

    @property
    def n_components(self) -> int:
        return self.logits.shape[-1]

    def weights(self) -> np.ndarray:
        return softmax(self.logits, axis=-1).data


class ObservationEmbedder:
    """Per-step MLP embedding plus learned temporal position embedding;
    padded slots use a learned pad embedding instead of the MLP output."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, rng: RngStream):
        self.cfg = cfg
        g = "obs_encoder"
        self.fc1 = Linear(store, "obs/fc1", g, cfg.obs_dim, cfg.obs_hidden,
                          rng.split("fc1"))
        self.fc2 = Linear(store, "obs/fc2", g, cfg.obs_hidden, cfg.d_feat,
                          rng.split("fc2"))
        self.pos_emb = store.register(
            "obs/pos_emb",
            rng.split("pos").normal((cfg.obs_window, cfg.d_feat), std=0.02).astype(np.float32),
            g)
        self.pad_emb = store.register(
            "obs/pad_emb",
            rng.split("pad").normal((cfg.d_feat,), std=0.02).astype(np.float32),
            g)

    def __call__(self, obs: np.ndarray, pad_mask: np.ndarray) -> Tensor:
        """obs [B, T, obs_dim], pad_mask [B, T] -> tokens [B, T, d_feat]."""
        x = as_tensor(obs)
        h = self.fc2(relu(self.fc1(x)))
        padded = Tensor(pad_mask[:, :, None].astype(h.dtype))
        h = h * (1.0 - padded) + self.pad_emb.tensor * padded
        return h + self.pos_emb.tensor


class PolicyEncoder:
    """Observation stream queries specification tokens: cross-attention
    layers interleaved with self-attention over the observation stream,
    pattern [cross, self, cross, self, cross, self, cross]."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, rng: RngStream):
        g = "policy_encoder"
        self.adapter = Linear(store, "penc/adapter", g, cfg.d_feat, cfg.enc_dim,
                              rng.split("adapter"))
        self.layers = []
        kinds = _interleave(cfg.enc_cross_layers, cfg.enc_self_layers)
        for i, kind in enumerate(kinds):
            kv_dim = cfg.d_feat if kind == "cross" else None
            self.layers.append((kind, TransformerLayer(
                store, f"penc/{i}_{kind}", g, cfg.enc_dim, cfg.enc_heads,
                cfg.enc_head_dim, rng.split(f"layer{i}"), kv_dim=kv_dim,
                mlp_ratio=cfg.mlp_ratio, p_drop=cfg.dropout)))

    def __call__(self, obs_tokens: Tensor, spec_tokens: Tensor,
                 rng: RngStream, training: bool) -> Tensor:
        """obs [B, T, d_feat], spec [B, M, d_feat] -> hidden [B, T, enc_dim]."""
        if spec_tokens.shape[1] < 1:
            raise ValueError("policy encoder needs at least one spec token")
        x = self.adapter(obs_tokens)
        for i, (kind, layer) in enumerate(self.layers):
            kv = spec_tokens if kind == "cross" else None
            x = layer(x, rng.split(f"l{i}"), training, kv=kv)
        return x


class PolicyDecoder:
    """Learnable-query decoder: [cross, self] x 4 over the encoder hidden."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, rng: RngStream):
        if cfg.enc_dim != cfg.dec_dim:
            raise ValueError("encoder output width must equal decoder width")
        self.cfg = cfg
        self.type_emb = store.register(
            "pdec/query_types",
            rng.split("qtypes").normal((len(QUERY_TYPES), cfg.dec_dim),
                                       std=0.02).astype(np.float32),
            "decoder_queries")
        self._type_index = {t: i for i, t in enumerate(QUERY_TYPES)}
        self._sin_table = sinusoidal_positions(64, cfg.dec_dim)
        self.layers = []
        for i in range(cfg.dec_cross_layers):
            for kind in ("cross", "self"):
                kv_dim = cfg.enc_dim if kind == "cross" else None
                self.layers.append((kind, TransformerLayer(
                    store, f"pdec/{i}_{kind}", "policy_decoder", cfg.dec_dim,
                    cfg.dec_heads, cfg.dec_head_dim,
                    rng.split(f"layer{i}{kind}"), kv_dim=kv_dim,
                    mlp_ratio=cfg.mlp_ratio, p_drop=cfg.dropout)))

    def build_queries(self, queries: list[DecoderQuery], batch: int,
                      positions: np.ndarray | None = None) -> Tensor:
        """Query vectors = learned type embedding + sinusoidal positional
        vector. `positions` [B, Q] overrides per-sample positions (masked
        token indices); otherwise every sample uses query.position."""
        type_ids = np.array([self._type_index[q.query_type] for q in queries])
        type_vecs = self.type_emb.tensor.take_rows(type_ids)  # [Q, d]
        if positions is None:
            positions = np.broadcast_to(
                np.array([q.position for q in queries]), (batch, len(queries)))
        sin = self._sin_table[positions]                      # [B, Q, d]
        return type_vecs + Tensor(sin.astype(type_vecs.dtype))

    def __call__(self, hidden: Tensor, query_vecs: Tensor,
                 rng: RngStream, training: bool) -> Tensor:
        """hidden [B, T, d], query_vecs [B, Q, d] -> features [B, Q, d]."""
        if query_vecs.shape[1] < 1:
            raise ValueError("decoder needs at least one query")
        x = query_vecs
        for i, (kind, layer) in enumerate(self.layers):
            kv = hidden if kind == "cross" else None
            x = layer(x, rng.split(f"l{i}"), training, kv=kv)
        return x


class ActionHead:
    """Two-layer MLP emitting mixture logits, means, and log-stds."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, rng: RngStream):
        self.cfg = cfg
        out = cfg.gmm_components * (1 + 2 * cfg.action_dim)
        hidden = int(round(cfg.dec_dim * cfg.mlp_ratio))
        self.fc1 = Linear(store, "head/action/fc1", "heads", cfg.dec_dim,
                          hidden, rng.split("fc1"))
        self.fc2 = Linear(store, "head/action/fc2", "heads", hidden, out,
                          rng.split("fc2"))

    def __call__(self, feature: Tensor) -> GMMParams:
        """feature [B, dec_dim] -> GMMParams."""
        cfg = self.cfg
        C, A = cfg.gmm_components, cfg.action_dim
        raw = self.fc2(relu(self.fc1(feature)))
        B = raw.shape[0]
        logits = raw[:, :C]
        means = raw[:, C:C + C * A].reshape(B, C, A)
        log_stds = raw[:, C + C * A:].reshape(B, C, A).clamp(
            cfg.log_std_min, cfg.log_std_max)
        return GMMParams(logits, means, log_stds)


class TokenHeads:
    """Masked-token prediction heads: a two-layer MLP to vocabulary logits
    per text modality, a single linear feature regressor per other modality."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig, rng: RngStream):
        self.cfg = cfg
        hidden = int(round(cfg.dec_dim * cfg.mlp_ratio))
        self.text = {}
        self.feature = {}
        for m in mod.MODALITIES:
            key = mod.LETTER[m]
            if m in mod.TEXT_MODALITIES:
                self.text[m] = (
                    Linear(store, f"head/text_{key}/fc1", "heads", cfg.dec_dim,
                           hidden, rng.split(f"t{key}1")),
                    Linear(store, f"head/text_{key}/fc2", "heads", hidden,
                           cfg.vocab_size, rng.split(f"t{key}2")))
            else:
                self.feature[m] = Linear(
                    store, f"head/feat_{key}", "heads", cfg.dec_dim,
                    cfg.d_feat, rng.split(f"f{key}"))

    def text_logits(self, modality: str, feature: Tensor) -> Tensor:
        fc1, fc2 = self.text[modality]
        return fc2(relu(fc1(feature)))

    def feature_prediction(self, modality: str, feature: Tensor) -> Tensor:
        if modality in mod.TEXT_MODALITIES:
            raise ValueError(f"{modality} uses the vocabulary head")
        return self.feature[modality](feature)


def gmm_log_prob(params: GMMParams, actions) -> Tensor:
    """Log density of a diagonal-covariance Gaussian mixture, [B]."""
    a = as_tensor(actions)
    A = a.shape[-1]
    mu = params.means
    log_std = params.log_stds
    z = (a.reshape(a.shape[0], 1, A) - mu) * (-log_std).exp()
    comp_lp = (z * z).sum(axis=-1) * -0.5 - log_std.sum(axis=-1) \
        - 0.5 * A * LOG_2PI                                   # [B, C]
    log_w = log_softmax(params.logits, axis=-1)
    return logsumexp(log_w + comp_lp, axis=-1)


def gmm_nll(params: GMMParams, actions) -> Tensor:
    """Mean negative log-likelihood over the batch."""
    return -gmm_log_prob(params, actions).mean()


def select_action(params: GMMParams, mode: str = "deterministic",
                  rng: RngStream | None = None) -> np.ndarray:
    """Decode actions [B, action_dim] from mixture parameters.

    deterministic: mean of the highest-weight component (ties break to the
    lowest component index). sample: ancestral sampling.
    """
    logits = params.logits.data
    means = params.means.data
    if mode == "deterministic":
        comp = np.argmax(logits, axis=-1)
        return means[np.arange(len(comp)), comp].copy()
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng stream")
        w = softmax(params.logits, axis=-1).data
        stds = np.exp(params.log_stds.data)
        out = np.empty((means.shape[0], means.shape[2]), dtype=means.dtype)
        for b in range(means.shape[0]):
            u = rng.uniform()
            comp = int(np.searchsorted(np.cumsum(w[b]), u))
            comp = min(comp, w.shape[1] - 1)
            eps = rng.normal((means.shape[2],))
            out[b] = means[b, comp] + stds[b, comp] * eps
        return out
    raise ValueError(f"unknown mode {mode!r}")


def _interleave(n_cross: int, n_self: int) -> list[str]:
    """Cross/self pattern starting with cross, e.g. 4+3 -> c s c s c s c."""
    kinds = []
    for i in range(n_cross + n_self):
        kinds.append("cross" if i % 2 == 0 else "self")
    if kinds.count("cross") != n_cross or kinds.count("self") != n_self:
        raise ValueError("cross/self layer counts do not interleave")
    return kinds


@dataclass
class ForwardOutput:
    gmm: list[GMMParams]                       # one per action query
    text_logits: dict[str, Tensor]             # modality -> [B, n_masked, N]
    feature_preds: dict[str, Tensor]           # modality -> [B, n_masked, d_feat]
    embeddings: dict[str, Tensor]              # modality -> [B, d_feat]


class PolicyModel:
    """Everything trainable, wired together."""

    def __init__(self, cfg: ModelConfig, init_rng: RngStream):
        self.cfg = cfg
        self.store = ParameterStore()
        self.spec_encoders = SpecEncoders(self.store, cfg, init_rng.split("spec"))
        self.obs_embedder = ObservationEmbedder(self.store, cfg, init_rng.split("obs"))
        self.encoder = PolicyEncoder(self.store, cfg, init_rng.split("encoder"))
        self.decoder = PolicyDecoder(self.store, cfg, init_rng.split("decoder"))
        self.action_head = ActionHead(self.store, cfg, init_rng.split("action_head"))
        self.token_heads = TokenHeads(self.store, cfg, init_rng.split("token_heads"))

    def forward(self, obs: np.ndarray, pad_mask: np.ndarray,
                spec_tokens: dict[str, tuple],
                stage: int, rng: RngStream, training: bool,
                masked_queries: dict[str, np.ndarray] | None = None) -> ForwardOutput:
        """Run the full policy.

        spec_tokens: modality -> (tokens [B, n, d_feat] Tensor or ndarray,
        token_pad [B, n] or None). masked_queries: modality -> positions
        [B, n_masked] requesting masked-token predictions.
        """
        if not spec_tokens:
            raise ValueError("at least one specification modality required")
        embeddings = {}
        for m in sorted(spec_tokens, key=mod.MODALITIES.index):
            tokens, token_pad = spec_tokens[m]
            embeddings[m] = self.spec_encoders.encode(
                m, as_tensor(tokens), stage, rng.split(f"enc_{m}"), training,
                token_pad=token_pad)
        spec_stream = stack([embeddings[m] for m in
                             sorted(embeddings, key=mod.MODALITIES.index)], axis=1)

        obs_tokens = self.obs_embedder(obs, pad_mask)
        hidden = self.encoder(obs_tokens, spec_stream, rng.split("penc"), training)

        B = obs.shape[0]
        queries = [DecoderQuery("action", i)
                   for i in range(self.cfg.n_action_queries)]
        q_vecs = [self.decoder.build_queries(queries, B)]
        masked_order = []
        if masked_queries:
            for m in sorted(masked_queries, key=mod.MODALITIES.index):
                positions = masked_queries[m]
                masked_order.append((m, positions.shape[1]))
                q_vecs.append(self.decoder.build_queries(
                    [DecoderQuery(m, 0)] * positions.shape[1], B,
                    positions=positions))
        features = self.decoder(hidden, concat(q_vecs, axis=1),
                                rng.split("pdec"), training)

        n_act = self.cfg.n_action_queries
        gmms = [self.action_head(features[:, i]) for i in range(n_act)]
        text_logits, feature_preds = {}, {}
        offset = n_act
        for m, count in masked_order:
            feat = features[:, offset:offset + count]
            offset += count
            flat = feat.reshape(B * count, self.cfg.dec_dim)
            if m in mod.TEXT_MODALITIES:
                out = self.token_heads.text_logits(m, flat)
                text_logits[m] = out.reshape(B, count, self.cfg.vocab_size)
            else:
                out = self.token_heads.feature_prediction(m, flat)
                feature_preds[m] = out.reshape(B, count, self.cfg.d_feat)
        return ForwardOutput(gmms, text_logits, feature_preds, embeddings)
