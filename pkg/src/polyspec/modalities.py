"""The six task-specification modalities and their shape table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TEXT_GOAL = "text_goal"                    # l
TEXT_INSTRUCTIONS = "text_instructions"    # L
IMAGE_GOAL = "image_goal"                  # v
VIDEO_DEMONSTRATION = "video_demonstration"  # V
SPEECH_GOAL = "speech_goal"                # s
SPEECH_INSTRUCTIONS = "speech_instructions"  # S

MODALITIES = (TEXT_GOAL, TEXT_INSTRUCTIONS, IMAGE_GOAL,
              VIDEO_DEMONSTRATION, SPEECH_GOAL, SPEECH_INSTRUCTIONS)

# short letter used in parameter group tags
LETTER = {
    TEXT_GOAL: "l",
    TEXT_INSTRUCTIONS: "L",
    IMAGE_GOAL: "v",
    VIDEO_DEMONSTRATION: "V",
    SPEECH_GOAL: "s",
    SPEECH_INSTRUCTIONS: "S",
}

TEXT_MODALITIES = frozenset({TEXT_GOAL, TEXT_INSTRUCTIONS})
MATCHING_TARGET = VIDEO_DEMONSTRATION

# fixed token counts; None means variable (number of instruction sentences)
TOKEN_COUNTS = {
    TEXT_GOAL: 1,
    TEXT_INSTRUCTIONS: None,
    IMAGE_GOAL: 1,
    VIDEO_DEMONSTRATION: 16,
    SPEECH_GOAL: 4,
    SPEECH_INSTRUCTIONS: 4,
}

# modalities whose single pretrained embedding goes through the plain MLP
# projection; the rest pool multiple embeddings with a transformer block
SINGLE_EMBEDDING = frozenset({TEXT_GOAL, IMAGE_GOAL})

N_VARIANTS = 11
TRAIN_VARIANTS = tuple(range(8))
EVAL_VARIANTS = (8, 9, 10)

# masked positions per modality when masking applies
MASK_COUNTS = {
    TEXT_GOAL: 1,
    TEXT_INSTRUCTIONS: 2,
    IMAGE_GOAL: 1,
    VIDEO_DEMONSTRATION: 1,
    SPEECH_GOAL: 1,
    SPEECH_INSTRUCTIONS: 1,
}


def validate_token_count(modality: str, n_tok: int):
    want = TOKEN_COUNTS[modality]
    if want is not None and n_tok != want:
        raise ValueError(f"{modality} expects {want} tokens, got {n_tok}")
    if want is None and n_tok < 1:
        raise ValueError(f"{modality} needs at least one token")


@dataclass
class TaskSpecification:
    """One modality's encoding of one task variant."""

    modality: str
    tokens: np.ndarray                 # [n_tok, d_feat] float32
    task_id: int
    variant_index: int
    split: str                         # train | eval
    token_ids: np.ndarray | None = None  # [n_tok] int, text modalities only

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if not 0 <= self.variant_index < N_VARIANTS:
            raise ValueError(f"variant_index {self.variant_index} out of range")
        validate_token_count(self.modality, self.tokens.shape[0])
        if self.modality in TEXT_MODALITIES and self.token_ids is None:
            raise ValueError(f"{self.modality} requires token_ids")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


@dataclass
class MaskRecord:
    """Which positions of a specification were masked, and their targets."""

    modality: str
    positions: list[int]
    target_ids: np.ndarray | None = None       # text: original token ids
    target_features: np.ndarray | None = None  # visual/speech: original rows

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise ValueError("masked positions must be strictly increasing")


class Vocabulary:
    """Ordered word list with a stopword subset; ids are dense in [0, N)."""

    def __init__(self, words: list[str], stopwords: set[str]):
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        unknown = set(stopwords) - set(words)
        if unknown:
            raise ValueError(f"stopwords not in vocabulary: {sorted(unknown)}")
        self.words = list(words)
        self.stopwords = set(stopwords)
        self._ids = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.words)

    def id_of(self, word: str) -> int:
        return self._ids[word]

    def is_stopword_id(self, token_id: int) -> bool:
        return self.words[token_id] in self.stopwords

    def to_dict(self) -> dict:
        return {"words": self.words, "stopwords": sorted(self.stopwords)}

    @staticmethod
    def from_dict(d: dict) -> "Vocabulary":
        return Vocabulary(d["words"], set(d["stopwords"]))
