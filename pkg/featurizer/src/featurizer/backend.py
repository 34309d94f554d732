"""Deterministic feature backend.

Real deployments would plug pretrained vision-language and speech encoders
in here; this environment has no model-hub access, so the default backend
derives every embedding from a SHA-256 hash of the source content. That
keeps the full export contract testable: fixed output dims, byte-identical
re-export, finite values, and the documented sampling/pooling rules.

Every embedding is ``rng(seed=sha256(namespace || content)).normal(d) /
sqrt(d)`` in float32, so identical content always produces identical bytes
and distinct content is decorrelated.
"""

from __future__ import annotations

import hashlib

import numpy as np

#: number of encoder-sequence rows produced for an audio clip before the
#: contiguous quarter-mean pooling reduces them to 4
SPEECH_ENCODER_ROWS = 32


class HashedBackend:
    """Content-hashed stand-in for pretrained text/image/video/speech
    encoders. ``d_feat`` fixes the embedding width (768 at paper scale)."""

    name = "hashed"
    version = 1

    def __init__(self, d_feat: int = 768):
        if d_feat < 1:
            raise ValueError("d_feat must be positive")
        self.d_feat = d_feat

    def _embed(self, namespace: str, content: bytes) -> np.ndarray:
        digest = hashlib.sha256(namespace.encode() + b"\x00" + content).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
        return (rng.standard_normal(self.d_feat)
                / np.sqrt(self.d_feat)).astype(np.float32)

    # -- text -------------------------------------------------------------

    def embed_word(self, word: str) -> np.ndarray:
        return self._embed("word", word.encode("utf-8"))

    def embed_sentence(self, text: str) -> np.ndarray:
        """Mean of the word embeddings: one pooled row per string."""
        words = text.split()
        if not words:
            raise ValueError("cannot embed an empty string")
        return np.mean([self.embed_word(w) for w in words],
                       axis=0).astype(np.float32)

    # -- image / video ----------------------------------------------------

    def embed_image_bytes(self, data: bytes) -> np.ndarray:
        return self._embed("image", data)

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        arr = np.ascontiguousarray(frame)
        header = f"frame:{arr.dtype.str}:{arr.shape}".encode()
        return self._embed("video", header + arr.tobytes())

    # -- speech -----------------------------------------------------------

    def encode_audio(self, waveform: np.ndarray) -> np.ndarray:
        """Encoder-sequence stand-in: the waveform is cut into
        ``SPEECH_ENCODER_ROWS`` contiguous chunks and each chunk is embedded
        independently. Returns [SPEECH_ENCODER_ROWS, d_feat]."""
        w = np.ascontiguousarray(np.asarray(waveform, dtype=np.float32).ravel())
        if w.size == 0:
            raise ValueError("cannot encode empty audio")
        bounds = np.linspace(0, w.size, SPEECH_ENCODER_ROWS + 1).astype(int)
        rows = []
        for i in range(SPEECH_ENCODER_ROWS):
            chunk = w[bounds[i]:max(bounds[i + 1], bounds[i] + 1)]
            rows.append(self._embed(f"audio:{i}", chunk.tobytes()))
        return np.stack(rows)


def video_frame_indices(n_frames: int, n_samples: int = 16) -> list[int]:
    """Uniform temporal sampling: index i of n_samples maps to source frame
    floor(i * n_frames / n_samples). For n_frames == n_samples this is the
    identity; for 160 frames it is 0, 10, ..., 150."""
    if n_frames < n_samples:
        raise ValueError(f"need at least {n_samples} frames, got {n_frames}")
    return [i * n_frames // n_samples for i in range(n_samples)]


def pool_quarters(sequence: np.ndarray) -> np.ndarray:
    """Contiguous quarter-mean pooling: row q of the result is the mean of
    sequence rows [floor(qT/4), floor((q+1)T/4)). Reduces [T, d] to [4, d]."""
    seq = np.asarray(sequence)
    T = seq.shape[0]
    if T < 4:
        raise ValueError(f"need at least 4 sequence rows, got {T}")
    bounds = [q * T // 4 for q in range(5)]
    return np.stack([seq[bounds[q]:bounds[q + 1]].mean(axis=0)
                     for q in range(4)]).astype(np.float32)
