"""Model and training configuration.

Two named scales: "paper" (768-dim features, 64-dim policy stream) and
"desk" (32-dim features, 16-dim policy stream) used by the synthetic suite
and the test batteries. All counts that the architecture tables fix
(heads, layer counts, mixture components, window length) are shared.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    d_feat: int = 32                 # modality feature dim (768 at paper scale)
    mlp_hidden: int = 21             # MLPBlock hidden (512 at paper scale)
    pool_heads: int = 4
    pool_inner: int = 16             # attention inner dim of the pool block (256 paper)
    pool_ffn: int = 16               # pool feed-forward hidden (256 paper)

    enc_dim: int = 16                # policy encoder stream width (64 paper)
    enc_heads: int = 4               # 6 at paper scale
    enc_head_dim: int = 8            # 64 at paper scale
    enc_cross_layers: int = 4
    enc_self_layers: int = 3

    dec_dim: int = 16                # decoder stream width (64 paper)
    dec_heads: int = 4
    dec_head_dim: int = 4            # 16 at paper scale
    dec_cross_layers: int = 4
    dec_self_layers: int = 4

    mlp_ratio: float = 4.0
    dropout: float = 0.1

    vocab_size: int = 64
    n_video_frames: int = 16
    n_speech_tokens: int = 4
    obs_window: int = 10
    obs_dim: int = 14                # synthetic point-press observation
    obs_hidden: int = 32
    action_dim: int = 3
    n_action_queries: int = 1
    gmm_components: int = 5
    log_std_min: float = -9.210340371976182   # ln 1e-4
    log_std_max: float = 4.605170185988092    # ln 1e2

    @staticmethod
    def desk_scale(**overrides) -> "ModelConfig":
        return ModelConfig(**overrides)

    @staticmethod
    def paper_scale(**overrides) -> "ModelConfig":
        base = dict(
            d_feat=768, mlp_hidden=512, pool_heads=4, pool_inner=256, pool_ffn=256,
            enc_dim=64, enc_heads=6, enc_head_dim=64,
            dec_dim=64, dec_heads=4, dec_head_dim=16,
            vocab_size=49408, obs_dim=9, obs_hidden=128,
            action_dim=7)
        base.update(overrides)
        return ModelConfig(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class TrainConfig:
    stage1_epochs: int = 50
    stage2_epochs: int = 20
    batch_size: int = 64
    bc_weight: float = 1.0
    masked_weight: float = 0.5
    matching_weight: float = 0.5
    grad_clip: float = 100.0
    lr_max: float = 1e-4
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    mode: str = "mutex"              # mutex | modality_specific | joint |
                                     # no_masked_modeling | no_matching
    modality: str | None = None      # required for modality_specific
    matching_metric: str = "mse"     # mse | l1
    model: ModelConfig = field(default_factory=ModelConfig)

    MODES = ("mutex", "modality_specific", "joint", "no_masked_modeling", "no_matching")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "modality_specific" and not self.modality:
            raise ValueError("modality_specific mode requires a modality")
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ValueError("epoch counts must be >= 1")
        for w in (self.bc_weight, self.masked_weight, self.matching_weight):
            if w < 0:
                raise ValueError("loss weights must be >= 0")
        if self.matching_metric not in ("mse", "l1"):
            raise ValueError(f"unknown matching_metric {self.matching_metric!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return TrainConfig(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
