"""Manifest-driven batch export into the dataset directory layout.

Input manifest (JSON)::

    {
      "format_version": 1,
      "d_feat": 768,                      # optional, default 768
      "vocab": {"words": [...], "stopwords": [...]},   # optional
      "tasks": [
        {"task_id": 0,
         "variants": [
           {"text_goal": "press the red button",
            "text_instructions": ["reach the red button", "press it down"],
            "image_goal": "images/task0_goal.png",
            "video_demonstration": "videos/task0.npy",
            "speech_goal": "audio/task0_goal.npy",
            "speech_instructions": "audio/task0_instr.npy"},
           ...
         ]},
        ...
      ]
    }

Relative source paths resolve against the manifest's directory. Video
sources are ``.npy`` arrays of shape [n_frames, ...] with n_frames >= 16;
audio sources are ``.npy`` waveforms; image sources are arbitrary files.

Output tree (the layout the policy package reads)::

    out/
      meta.json
      vocab.json
      tasks/task_000/specs/<modality>/<variant>.tpk

Each pack holds ``tokens`` [n, d_feat] plus, for the text modalities,
``token_ids`` [n] (per row: the id of its first non-stopword word; words
outside a pinned vocabulary are logged and mapped to the ``<unk>`` id).
Shapes per variant: text goal (1, d), text instructions (n_instr, d),
image goal (1, d), video (16, d), speech (4, d).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import (HashedBackend, pool_quarters, video_frame_indices,
                      SPEECH_ENCODER_ROWS)
from .packs import atomic_write_bytes, tensor_pack_bytes

log = logging.getLogger("featurizer")

MANIFEST_VERSION = 1
UNK = "<unk>"

TEXT_GOAL = "text_goal"
TEXT_INSTRUCTIONS = "text_instructions"
IMAGE_GOAL = "image_goal"
VIDEO_DEMONSTRATION = "video_demonstration"
SPEECH_GOAL = "speech_goal"
SPEECH_INSTRUCTIONS = "speech_instructions"
MODALITIES = (TEXT_GOAL, TEXT_INSTRUCTIONS, IMAGE_GOAL, VIDEO_DEMONSTRATION,
              SPEECH_GOAL, SPEECH_INSTRUCTIONS)

DEFAULT_STOPWORDS = ("a", "an", "and", "at", "by", "down", "for", "in",
                     "it", "now", "of", "on", "please", "the", "then",
                     "to", "up", "with")


class ExportError(ValueError):
    pass


@dataclass
class ExportJob:
    tasks: list[dict]                  # validated manifest task records
    base_dir: Path                     # directory source paths resolve against
    d_feat: int = 768
    vocab_words: list[str] | None = None
    vocab_stopwords: list[str] | None = None
    jobs: int = 1
    backend: HashedBackend = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.backend is None:
            self.backend = HashedBackend(self.d_feat)


def load_manifest(path: str | Path) -> ExportJob:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"unreadable manifest {path}: {e}") from e
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ExportError(
            f"unsupported manifest format_version {doc.get('format_version')!r}")
    tasks = doc.get("tasks")
    if not tasks:
        raise ExportError("manifest has no tasks")
    n_variants = None
    for i, task in enumerate(tasks):
        if task.get("task_id") != i:
            raise ExportError(f"task_id must be dense 0..N-1; "
                              f"entry {i} has {task.get('task_id')!r}")
        variants = task.get("variants")
        if not variants:
            raise ExportError(f"task {i} has no variants")
        if n_variants is None:
            n_variants = len(variants)
        elif len(variants) != n_variants:
            raise ExportError("all tasks must have the same variant count")
        for v, var in enumerate(variants):
            missing = [m for m in MODALITIES if m not in var]
            if missing:
                raise ExportError(f"task {i} variant {v} missing {missing}")
            if not str(var[TEXT_GOAL]).strip():
                raise ExportError(f"task {i} variant {v}: empty text goal")
            instr = var[TEXT_INSTRUCTIONS]
            if (not isinstance(instr, list) or not instr
                    or any(not str(s).strip() for s in instr)):
                raise ExportError(f"task {i} variant {v}: text_instructions "
                                  "must be a non-empty list of non-empty strings")
    vocab = doc.get("vocab") or {}
    return ExportJob(tasks=tasks, base_dir=path.parent,
                     d_feat=int(doc.get("d_feat", 768)),
                     vocab_words=vocab.get("words"),
                     vocab_stopwords=vocab.get("stopwords"))


# -- vocabulary ------------------------------------------------------------------

def build_vocab(job: ExportJob) -> tuple[list[str], list[str]]:
    """Pinned vocabulary if the manifest carries one, else the sorted word
    set of the corpus. ``<unk>`` is always present."""
    if job.vocab_words is not None:
        words = list(job.vocab_words)
        if UNK not in words:
            words.insert(0, UNK)
        stop = sorted(set(job.vocab_stopwords or ()) & set(words))
        return words, stop
    seen = set()
    for task in job.tasks:
        for var in task["variants"]:
            seen.update(str(var[TEXT_GOAL]).lower().split())
            for s in var[TEXT_INSTRUCTIONS]:
                seen.update(str(s).lower().split())
    words = [UNK] + sorted(seen)
    stop = sorted(set(DEFAULT_STOPWORDS) & seen)
    return words, stop


def _row_token_id(text: str, word_ids: dict[str, int],
                  stopwords: set[str]) -> int:
    """Id recorded for a pooled text row: its first non-stopword word
    (first word if everything is a stopword); unknown words map to UNK."""
    words = str(text).lower().split()
    content = [w for w in words if w not in stopwords] or words
    w = content[0]
    if w not in word_ids:
        log.warning("word %r outside vocabulary; mapped to %s", w, UNK)
        return word_ids[UNK]
    return word_ids[w]


# -- per-modality export ops ------------------------------------------------------

def export_text_goal(job: ExportJob, text: str, word_ids, stopwords) -> dict:
    text = str(text)
    if not text.strip():
        raise ExportError("empty text goal")
    tokens = job.backend.embed_sentence(text)[None]          # (1, d)
    ids = np.array([_row_token_id(text, word_ids, stopwords)],
                   dtype=np.float32)
    return {"tokens": tokens, "token_ids": ids}


def export_text_instructions(job: ExportJob, instructions: list[str],
                             word_ids, stopwords) -> dict:
    tokens = np.stack([job.backend.embed_sentence(str(s))
                       for s in instructions])               # (n, d)
    ids = np.array([_row_token_id(s, word_ids, stopwords)
                    for s in instructions], dtype=np.float32)
    return {"tokens": tokens, "token_ids": ids}


def export_image(job: ExportJob, path: Path) -> dict:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ExportError(f"unreadable image {path}: {e}") from e
    return {"tokens": job.backend.embed_image_bytes(data)[None]}  # (1, d)


def export_video(job: ExportJob, path: Path) -> dict:
    frames = _load_npy(path, "video")
    if frames.ndim < 1 or frames.shape[0] < 16:
        raise ExportError(f"{path}: need >= 16 decodable frames, "
                          f"got {frames.shape[0] if frames.ndim else 0}")
    idx = video_frame_indices(frames.shape[0], 16)
    return {"tokens": np.stack([job.backend.embed_frame(frames[i])
                                for i in idx])}              # (16, d)


def export_speech(job: ExportJob, path: Path) -> dict:
    wave = _load_npy(path, "audio")
    seq = job.backend.encode_audio(wave)                     # (T, d)
    return {"tokens": pool_quarters(seq)}                    # (4, d)


def _load_npy(path: Path, kind: str) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ExportError(f"undecodable {kind} file {path}: {e}") from e


# -- layout writer ----------------------------------------------------------------

def _variant_entries(job: ExportJob, var: dict, word_ids, stopwords) -> dict:
    resolve = lambda p: (job.base_dir / p)
    return {
        TEXT_GOAL: export_text_goal(job, var[TEXT_GOAL], word_ids, stopwords),
        TEXT_INSTRUCTIONS: export_text_instructions(
            job, var[TEXT_INSTRUCTIONS], word_ids, stopwords),
        IMAGE_GOAL: export_image(job, resolve(var[IMAGE_GOAL])),
        VIDEO_DEMONSTRATION: export_video(
            job, resolve(var[VIDEO_DEMONSTRATION])),
        SPEECH_GOAL: export_speech(job, resolve(var[SPEECH_GOAL])),
        SPEECH_INSTRUCTIONS: export_speech(
            job, resolve(var[SPEECH_INSTRUCTIONS])),
    }


def run_export(job: ExportJob, out_dir: str | Path) -> list[Path]:
    """Export every (task, variant, modality) pack plus meta.json and
    vocab.json. File writes are atomic; independent files run in parallel
    when job.jobs > 1. Returns the written paths."""
    out = Path(out_dir)
    words, stopwords = build_vocab(job)
    word_ids = {w: i for i, w in enumerate(words)}
    stopset = set(stopwords)
    k = len(job.tasks[0]["variants"])
    # the consumer's 8-train/3-eval split applies at its pinned variant
    # count; other counts export as all-train
    split = ({"train": list(range(8)), "eval": list(range(8, 11))}
             if k == 11 else {"train": list(range(k)), "eval": []})

    file_jobs = []   # (path, entries-producing callable)
    for task in job.tasks:
        tdir = out / "tasks" / f"task_{task['task_id']:03d}" / "specs"
        for v, var in enumerate(task["variants"]):
            def make(var=var):
                return _variant_entries(job, var, word_ids, stopset)
            file_jobs.append((tdir, v, make))

    written: list[Path] = []
    for tdir, v, _ in file_jobs:
        for m in MODALITIES:
            (tdir / m).mkdir(parents=True, exist_ok=True)

    def do(entry):
        tdir, v, make = entry
        paths = []
        per_modality = make()
        for m in MODALITIES:
            path = tdir / m / f"{v:02d}.tpk"
            atomic_write_bytes(tensor_pack_bytes(per_modality[m]), path)
            paths.append(path)
        return paths

    if job.jobs > 1:
        with ThreadPoolExecutor(max_workers=job.jobs) as pool:
            for paths in pool.map(do, file_jobs):
                written.extend(paths)
    else:
        for entry in file_jobs:
            written.extend(do(entry))

    vocab_path = out / "vocab.json"
    atomic_write_bytes(json.dumps({"words": words, "stopwords": stopwords},
                                  indent=2, sort_keys=True).encode(),
                       vocab_path)
    meta = {
        "format_version": 1,
        "kind": "featurized_export",
        "n_tasks": len(job.tasks),
        "k_variants": k,
        "d_feat": job.d_feat,
        "split": split,
        "modalities": list(MODALITIES),
        "backend": {"name": job.backend.name, "version": job.backend.version},
        "rules": {
            "video_sampling":
                "frame i of 16 = source frame floor(i * n_frames / 16)",
            "speech_pooling":
                f"encoder sequence of {SPEECH_ENCODER_ROWS} rows pooled to 4 "
                "contiguous quarter means: row q = mean(seq[floor(qT/4) : "
                "floor((q+1)T/4)])",
            "token_id_rule":
                "per text row: id of its first non-stopword word; "
                "out-of-vocabulary words map to <unk> (logged)",
        },
    }
    meta_path = out / "meta.json"
    atomic_write_bytes(json.dumps(meta, indent=2, sort_keys=True).encode(),
                       meta_path)
    return written + [vocab_path, meta_path]
