"""Deterministic synthetic multimodal task suite.

A 2-D point agent lives in the unit square with four fixed press targets.
Each task means "reach one designated target and press". A scripted
proportional controller provides expert demonstrations; every modality's
specification is a deterministic function of (task, variant, seed), so the
whole dataset tree is reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import modalities as mod
from .modalities import Vocabulary
from .packs import write_tensor_pack
from .rng import RngStream

TARGETS = np.array([[0.2, 0.2], [0.2, 0.8], [0.8, 0.2], [0.8, 0.8]])
SUCCESS_RADIUS = 0.05
MAX_STEP = 0.1
DETENT_RADIUS = 2.4 * SUCCESS_RADIUS   # buttons sit in a shallow recess
DETENT_PULL = 0.5
SWIRL = 0.03                           # tangential desk current per step
# episodes begin in free space: a spawn already inside a button's recess is
# half a press before the first action and measures spawn luck, not control
FREE_START_MARGIN = 2.0 * SUCCESS_RADIUS + 0.05
# the desk's working area: episodes start away from the extreme edges
START_LO, START_HI = 0.08, 0.92
# agent x/y, offset to every target, and a short-range proximity reading
# per target
OBS_DIM = 2 + 3 * len(TARGETS)

STOPWORDS = ["the", "a", "to", "please", "now", "and", "then", "go"]
MOVE_VERBS = ["move", "slide", "reach"]
PRESS_VERBS = ["press", "push", "tap"]
FILLERS = ["button", "marker", "spot", "zone", "point", "carefully"]
TARGET_WORDS = [
    ["red", "crimson", "scarlet", "ruby", "cherry", "rose", "brick",
     "maroon", "garnet", "wine", "blush"],
    ["blue", "azure", "navy", "cobalt", "sapphire", "teal", "indigo",
     "cerulean", "denim", "steel", "arctic"],
    ["green", "lime", "emerald", "jade", "olive", "mint", "forest",
     "fern", "moss", "pine", "basil"],
    ["yellow", "gold", "amber", "lemon", "honey", "mustard", "saffron",
     "canary", "butter", "sand", "maize"],
]


def build_vocabulary() -> Vocabulary:
    words = STOPWORDS + MOVE_VERBS + PRESS_VERBS + FILLERS
    for group in TARGET_WORDS:
        words += group
    return Vocabulary(words, set(STOPWORDS))


@dataclass
class SyntheticSuiteConfig:
    n_tasks: int = 8
    n_targets: int = 4
    demos_per_task: int = 16
    horizon: int = 40
    d_feat: int = 32
    obs_dim: int = OBS_DIM
    action_dim: int = 3
    seed: int = 0
    noise_scales: dict = field(default_factory=lambda: {
        "image_goal": 0.08, "video_demonstration": 0.08,
        "speech_goal": 0.3, "speech_instructions": 0.3,
        "action": 0.2})

    def __post_init__(self):
        if self.n_tasks < 2:
            raise ValueError("need at least 2 tasks")
        if self.horizon < 10:
            raise ValueError("horizon must be >= 10")


class PointPressEnv:
    """Unit-square point agent; action = [dx, dy, press].

    The observation exposes the scene (agent pose, press state, and the
    offset to every target) but not the task: which target to press is
    only specified through the task-specification modalities.
    """

    def __init__(self, task_id: int, horizon: int = 40,
                 n_targets: int = 4, obs_dim: int = OBS_DIM):
        self.task_id = task_id
        self.target = TARGETS[task_id % n_targets]
        self.horizon = horizon
        self.obs_dim = obs_dim
        self.pos = np.zeros(2)
        self.t = 0
        self.last_press = 0.0

    def reset(self, start_pos: np.ndarray) -> np.ndarray:
        self.pos = np.clip(np.asarray(start_pos, dtype=np.float64), 0.0, 1.0)
        self.t = 0
        self.last_press = 0.0
        return self.observe()

    def observe(self) -> np.ndarray:
        # position only, no press state and no step counter: the scripted
        # expert is a pure function of position, so a position observation
        # keeps every rollout state in the demonstration distribution, and
        # an accidental early press cannot become an absorbing "already
        # pressing, stay put" state
        offsets = TARGETS - self.pos
        dists = np.linalg.norm(offsets, axis=1)
        # per-button contact sensor: ~1 on the button, ~0 in open space,
        # crossing 0.5 exactly at the press radius. Contact is then a
        # high-contrast feature of the current position instead of a
        # sliver of the [0, sqrt(2)] distance range
        contact = 1.0 / (1.0 + np.exp((dists - PRESS_RADIUS)
                                      / (0.2 * SUCCESS_RADIUS)))
        return np.concatenate([[self.pos[0], self.pos[1]],
                               offsets.reshape(-1),
                               contact]).astype(np.float32)

    def step(self, action: np.ndarray) -> np.ndarray:
        # dx/dy are commanded in max-step units (a full-speed step is
        # |dx| = 1): expressing actions at O(1) scale keeps the imitation
        # model's learned standard deviations at O(0.1) instead of O(0.01),
        # where Gaussian-likelihood gradients (∝ 1/std per unit error)
        # would dwarf every other loss term and pin training to the
        # gradient-clip ceiling
        delta = MAX_STEP * np.clip(np.asarray(action[:2], dtype=np.float64),
                                   -1.0, 1.0)
        # pressing anchors the agent, but only while over a button: movement
        # is scaled by how far the press channel is from fully engaged, so a
        # held press keeps the agent parked on a button, while pressing in
        # open space (where there is nothing to press) has no effect on
        # motion and cannot stall an approach
        self.last_press = float(action[2])
        over_button = np.linalg.norm(TARGETS - self.pos, axis=1).min() \
            < SUCCESS_RADIUS
        anchor = min(max(self.last_press, 0.0), 1.0) if over_button else 0.0
        pos = self.pos + (1.0 - anchor) * delta
        # every button sits in a shallow recess: within the detent radius
        # the surface funnels the agent toward the button center, so
        # terminal positioning is a basin, not a knife edge
        d_all = np.linalg.norm(TARGETS - pos, axis=1)
        j = int(np.argmin(d_all))
        if d_all[j] < DETENT_RADIUS:
            pos = pos + DETENT_PULL * (TARGETS[j] - pos) \
                * (1.0 - d_all[j] / DETENT_RADIUS)
        # a gentle swirl current around the desk center: free space has no
        # stationary points, so a motionless observation history occurs
        # only while anchored on a button. Without it, "recent positions
        # unchanged" appears in demonstrations solely during the press
        # phase, and an imitator that momentarily undershoots sees a
        # stationary window, imitates the press-phase zero step, and
        # freezes in open space
        # the recess walls shield the current, so the swirl fades to zero
        # approaching a button: there is no orbit equilibrium where the
        # current balances the detent pull just outside press range. It
        # also dies off in a boundary layer along the arena walls, so it
        # cannot press the agent into a corner and hold it against the
        # position clamp (a trap no demonstration ever visits)
        r = pos - 0.5
        shield = min(1.0, float(np.linalg.norm(TARGETS - pos, axis=1).min())
                     / DETENT_RADIUS)
        wall = min(1.0, float(np.minimum(pos, 1.0 - pos).min()) / 0.05)
        self.pos = np.clip(
            pos + (1.0 - anchor) * shield * wall * SWIRL
            * np.array([-r[1], r[0]]),
            0.0, 1.0)
        self.t += 1
        return self.observe()

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def success(self) -> bool:
        return (np.linalg.norm(self.pos - self.target) < SUCCESS_RADIUS
                and self.last_press > 0.5)

    def nearest_other_target(self) -> bool:
        """True if the agent finished pressing at a non-designated target."""
        if self.last_press <= 0.5:
            return False
        for i, tgt in enumerate(TARGETS):
            if np.allclose(tgt, self.target):
                continue
            if np.linalg.norm(self.pos - tgt) < SUCCESS_RADIUS:
                return True
        return False


PRESS_RADIUS = 0.8 * SUCCESS_RADIUS   # press engages inside the success radius
_MIN_SPEED = 0.03


def sample_free_start(rng, n_targets: int = len(TARGETS)) -> np.ndarray:
    """Rejection-sample an episode start in the desk's working area,
    outside every button's recess."""
    while True:
        p = START_LO + (START_HI - START_LO) * rng.uniform((2,))
        if np.linalg.norm(TARGETS[:n_targets] - p, axis=1).min() \
                >= FREE_START_MARGIN:
            return p


def expert_action(pos: np.ndarray, target: np.ndarray,
                  speed_scale: float = 1.0) -> np.ndarray:
    """Proportional controller: decelerating approach, press when close.

    Speed is capped at half the remaining distance (floored at _MIN_SPEED)
    so the approach lays down observations densely on both sides of the
    press boundary instead of jumping across it in one full-speed step.
    `speed_scale` models demonstrator pace: scaled-down controllers take
    proportionally longer to reach the target, so across demonstrations the
    elapsed step count carries no information about whether the controller
    is still approaching or already pressing — only the observed distance
    does.
    """
    offset = target - pos
    dist = float(np.linalg.norm(offset))
    if dist < PRESS_RADIUS:
        return np.array([0.0, 0.0, 1.0], dtype=np.float32)
    speed = min(MAX_STEP, max(0.5 * dist, _MIN_SPEED)) * speed_scale
    delta = offset * (speed / dist) / MAX_STEP
    return np.array([delta[0], delta[1], 0.0], dtype=np.float32)


def run_expert_episode(env: PointPressEnv, start_pos: np.ndarray,
                       settle_steps: int = 8, action_noise: float = 0.0,
                       rng: RngStream | None = None,
                       speed_scale: float = 1.0, dwell_steps: int = 0):
    """Roll the scripted expert; returns (obs [T, obs_dim], actions [T, 3]).

    The episode stops after `settle_steps` consecutive press steps (or at
    the horizon), keeping reaching and pressing comparably represented in
    the demonstration data instead of padding with the held press.

    `dwell_steps` makes the demonstrator hold still (zero action, no press)
    before starting the approach. Stationary-away-from-the-button states
    with "begin moving toward the target" labels teach the policy to escape
    a mid-field hover instead of freezing, and further decouple elapsed
    time from behavior phase.

    `action_noise` adds small Gaussian jitter to the recorded actions. Exact
    0/1 action components would drive the imitation model's learned standard
    deviations to the clamp floor, and the resulting error/std² gradients
    drown every other component after global-norm clipping; a small natural
    action scale keeps the per-dimension gradients comparable. The
    controller closes the loop on the true position, so jitter does not
    accumulate and the expert still satisfies the success predicate.
    """
    obs_list, act_list = [], []
    obs = env.reset(start_pos)
    pressed = 0
    while not env.done and pressed < settle_steps:
        if env.t < dwell_steps:
            a = np.zeros(3, dtype=np.float32)
        else:
            a = expert_action(env.pos, env.target, speed_scale)
        if action_noise > 0.0:
            a = (a + action_noise * rng.normal((3,))).astype(np.float32)
        pressed = pressed + 1 if a[2] > 0.5 else 0
        obs_list.append(obs)
        act_list.append(a)
        obs = env.step(a)
    return np.stack(obs_list), np.stack(act_list)


class SyntheticSuite:
    """Deterministic feature encoders for every modality of every task."""

    def __init__(self, cfg: SyntheticSuiteConfig):
        self.cfg = cfg
        self.vocab = build_vocabulary()
        root = RngStream(cfg.seed).split("synthetic")
        d = cfg.d_feat
        # shared per-target semantic code: real upstream feature extractors
        # (language/vision/speech embedding models) place references to the
        # same physical object near each other regardless of input medium,
        # and every encoder below mixes the designated button's code into
        # its features. Without this alignment each modality would need its
        # own independently learned target-identification map, which the
        # real pipelines this suite stands in for never require
        self.button_codes = root.split("button_codes").normal(
            (cfg.n_targets, d), std=1.0)
        emb_rng = root.split("word_embeddings")
        # word embeddings: synonyms of the same target share the target's
        # semantic code as their concept base, so held-out synonyms land
        # near seen ones
        concept = {}
        for ti, grp in enumerate(TARGET_WORDS):
            for w in grp:
                concept[w] = f"target_{ti}"
        bases = {f"target_{ti}": self.button_codes[ti]
                 for ti in range(cfg.n_targets)}
        self.word_emb = np.zeros((len(self.vocab), d), dtype=np.float32)
        for i, w in enumerate(self.vocab.words):
            key = concept.get(w, f"word_{w}")
            if key not in bases:
                bases[key] = emb_rng.normal((d,), std=1.0)
            self.word_emb[i] = (bases[key] + 0.4 * emb_rng.normal((d,), std=1.0)).astype(np.float32)
        self.state_proj = root.split("state_projection").normal((d, 3), std=1.0)
        self.goal_marker = root.split("goal_marker").normal((d,), std=0.5)
        # task codes embed the designated target's semantic code plus a
        # smaller task-distinct component
        self.task_codes = (
            self.button_codes[np.arange(cfg.n_tasks) % cfg.n_targets]
            + 0.5 * root.split("task_codes").normal((cfg.n_tasks, d), std=1.0)
        ).astype(np.float32)
        self.step_codes = root.split("step_codes").normal((4, d), std=1.0)
        self.row_markers = root.split("row_markers").normal((4, d), std=0.3)
        self.speaker_noise = root.split("speakers").normal((mod.N_VARIANTS, d), std=1.0)
        # recording-session watermark: every modality of the same (task,
        # variant) pair carries the same additive style vector. Masked
        # content is then reconstructible from the surviving modalities
        # (task identity + session style determine the hidden tokens), so
        # the masked-prediction objective has a learnable optimum instead
        # of an irreducible entropy floor. The marks live on a single
        # direction, and the held-out variants' coefficients sit inside the
        # training variants' coefficient range, so unseen sessions are
        # interpolations rather than out-of-distribution points
        mark_dir = root.split("session_marks").normal((d,), std=0.5)
        coeffs = np.array([-1.0, -0.8, -0.6, -0.4, 0.4, 0.6, 0.8, 1.0,
                           -0.2, 0.0, 0.2])[:mod.N_VARIANTS]
        self.session_marks = coeffs[:, None] * mark_dir[None, :]
        self._variant_rng = root.split("variant_noise")
        # per (task, modality, variant) noise vectors, pre-drawn in fixed order
        self._variant_noise = {}
        for task in range(cfg.n_tasks):
            for m in (mod.IMAGE_GOAL, mod.VIDEO_DEMONSTRATION):
                for v in range(mod.N_VARIANTS):
                    self._variant_noise[(task, m, v)] = \
                        self._variant_rng.normal((d,), std=1.0)
        self._video_starts = {}
        vs_rng = root.split("video_starts")
        for task in range(cfg.n_tasks):
            for v in range(mod.N_VARIANTS):
                self._video_starts[(task, v)] = vs_rng.uniform((2,))

    def target_of(self, task_id: int) -> np.ndarray:
        return TARGETS[task_id % self.cfg.n_targets]

    def encode_state(self, pos: np.ndarray) -> np.ndarray:
        # raw scene features plus proximity-gated button identities: a
        # frame showing the agent at a button reads as "at that button"
        # in the same semantic directions every other modality uses
        x = np.array([pos[0], pos[1], 1.0])
        d2 = ((TARGETS[:self.cfg.n_targets] - pos) ** 2).sum(axis=1)
        gate = np.exp(-d2 / (2 * 0.15 ** 2))
        return (np.tanh(self.state_proj @ x)
                + gate @ self.button_codes).astype(np.float32)

    # -- per-modality specification encoders ---------------------------------

    def text_goal_words(self, task_id: int, variant: int) -> list[str]:
        return [TARGET_WORDS[task_id % self.cfg.n_targets][variant]]

    def text_instruction_words(self, task_id: int, variant: int) -> list[str]:
        syn = TARGET_WORDS[task_id % self.cfg.n_targets][variant]
        words = [MOVE_VERBS[variant % 3], "to", syn]
        if variant % 3 != 0:
            words.append("then")
        words.append(PRESS_VERBS[(variant + 1) % 3])
        if variant % 2 == 1:
            words.append(FILLERS[variant % len(FILLERS)])
        return words

    def _text_tokens(self, words: list[str]):
        ids = np.array([self.vocab.id_of(w) for w in words], dtype=np.int64)
        return self.word_emb[ids].copy(), ids

    def encode_image_goal(self, task_id: int, variant: int) -> np.ndarray:
        scale = self.cfg.noise_scales["image_goal"]
        feat = (self.encode_state(self.target_of(task_id)) + self.goal_marker
                + scale * self._variant_noise[(task_id, mod.IMAGE_GOAL, variant)])
        return feat.astype(np.float32)[None, :]

    def encode_video_frame(self, task_id: int, variant: int, frame: int) -> np.ndarray:
        start = self._video_starts[(task_id, variant)]
        goal = self.target_of(task_id)
        # decelerating approach: frames bunch up near the goal, exactly like
        # a filmed demonstration that slows down and dwells at the button.
        # The downstream pooled encoding is permutation-invariant over
        # frames, so the goal end of the trajectory must be identifiable
        # from where frames cluster, not from frame order.
        alpha = 1.0 - 0.5 ** (frame / 1.5)
        pos = (1 - alpha) * start + alpha * goal
        scale = self.cfg.noise_scales["video_demonstration"]
        noise = self._variant_noise[(task_id, mod.VIDEO_DEMONSTRATION, variant)]
        return (self.encode_state(pos) + scale * noise).astype(np.float32)

    @property
    def cfg_frames(self) -> int:
        return mod.TOKEN_COUNTS[mod.VIDEO_DEMONSTRATION]

    def encode_video(self, task_id: int, variant: int) -> np.ndarray:
        return np.stack([self.encode_video_frame(task_id, variant, f)
                         for f in range(self.cfg_frames)])

    def encode_speech_goal(self, task_id: int, variant: int) -> np.ndarray:
        scale = self.cfg.noise_scales["speech_goal"]
        rows = [self.task_codes[task_id] + self.row_markers[i]
                + scale * self.speaker_noise[variant] for i in range(4)]
        return np.stack(rows).astype(np.float32)

    def encode_speech_instructions(self, task_id: int, variant: int) -> np.ndarray:
        scale = self.cfg.noise_scales["speech_instructions"]
        weights = [0.3, 1.0, 1.0, 0.3]
        rows = [self.step_codes[i] + weights[i] * self.task_codes[task_id]
                + scale * self.speaker_noise[variant] for i in range(4)]
        return np.stack(rows).astype(np.float32)

    def encode_spec(self, modality: str, task_id: int, variant: int):
        """Returns (tokens [n, d], token_ids or None); every token carries
        the session watermark of (task-independent) variant `variant`."""
        if modality == mod.TEXT_GOAL:
            tokens, ids = self._text_tokens(self.text_goal_words(task_id, variant))
        elif modality == mod.TEXT_INSTRUCTIONS:
            tokens, ids = self._text_tokens(
                self.text_instruction_words(task_id, variant))
        elif modality == mod.IMAGE_GOAL:
            tokens, ids = self.encode_image_goal(task_id, variant), None
        elif modality == mod.VIDEO_DEMONSTRATION:
            tokens, ids = self.encode_video(task_id, variant), None
        elif modality == mod.SPEECH_GOAL:
            tokens, ids = self.encode_speech_goal(task_id, variant), None
        elif modality == mod.SPEECH_INSTRUCTIONS:
            tokens, ids = self.encode_speech_instructions(task_id, variant), None
        else:
            raise ValueError(f"unknown modality {modality!r}")
        return (tokens + self.session_marks[variant]).astype(np.float32), ids


def generate_synthetic_suite(cfg: SyntheticSuiteConfig, out_dir: str | Path) -> Path:
    """Write the full dataset tree; byte-identical for identical configs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suite = SyntheticSuite(cfg)
    demo_rng = RngStream(cfg.seed).split("synthetic").split("demo_starts")

    (out / "vocab.json").write_text(
        json.dumps(suite.vocab.to_dict(), indent=2, sort_keys=True))
    meta = {
        "format_version": 1,
        "kind": "synthetic_point_press",
        "n_tasks": cfg.n_tasks,
        "n_targets": cfg.n_targets,
        "demos_per_task": cfg.demos_per_task,
        "horizon": cfg.horizon,
        "k_variants": mod.N_VARIANTS,
        "d_feat": cfg.d_feat,
        "obs_dim": cfg.obs_dim,
        "action_dim": cfg.action_dim,
        "seed": cfg.seed,
        "noise_scales": cfg.noise_scales,
        "split": {"train": list(mod.TRAIN_VARIANTS), "eval": list(mod.EVAL_VARIANTS)},
        "targets": TARGETS.tolist(),
        "success_radius": SUCCESS_RADIUS,
        "max_step": MAX_STEP,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    for task in range(cfg.n_tasks):
        task_dir = out / "tasks" / f"task_{task:03d}"
        task_dir.mkdir(parents=True, exist_ok=True)
        entries = {}
        target = suite.target_of(task)
        for d in range(cfg.demos_per_task):
            env = PointPressEnv(task, cfg.horizon, cfg.n_targets, cfg.obs_dim)
            draw = demo_rng.uniform((2,))
            if d % 2 == 0:
                start = START_LO + (START_HI - START_LO) * draw
                while np.linalg.norm(
                        TARGETS[:cfg.n_targets] - start, axis=1).min() \
                        < FREE_START_MARGIN:
                    start = START_LO + (START_HI - START_LO) \
                        * demo_rng.uniform((2,))
            else:
                # start near a button drawn uniformly at random: the press
                # decision then occurs at every episode time (including
                # t = 0), and because the nearby button is unrelated to the
                # designated one, spawn proximity carries no task label —
                # a demonstrator dropped next to the wrong button simply
                # walks away from it
                pick = demo_rng.uniform((1,))
                center = TARGETS[int(pick[0] * cfg.n_targets)
                                 % cfg.n_targets]
                angle = 2.0 * np.pi * draw[0]
                radius = 0.4 * draw[1]
                start = np.clip(
                    center + radius * np.array([np.cos(angle), np.sin(angle)]),
                    START_LO, START_HI)
            # per-demo demonstrator pace in [0.7, 1.0]; the spread varies
            # episode timing without making the conditional action
            # distribution multimodal (a wide unobservable per-demo latent
            # would force the imitator's mixture components apart, and an
            # initial pause of unobservable length makes "stay put" the
            # most likely action at the start state — an absorbing loop
            # under deterministic decoding)
            pace_draw = demo_rng.uniform((2,))
            speed_scale = 0.7 + 0.3 * float(pace_draw[0])
            dwell = 0
            # drop the pause, then the slow pace, if the episode would
            # otherwise overrun the horizon
            for ss, dw in ((speed_scale, dwell), (speed_scale, 0), (1.0, 0)):
                obs, actions = run_expert_episode(
                    env, start, action_noise=cfg.noise_scales.get("action", 0.0),
                    rng=demo_rng.split(f"action_noise/{task}/{d}"),
                    speed_scale=ss, dwell_steps=dw)
                if env.success():
                    break
            assert env.success(), "scripted expert must satisfy its own predicate"
            entries[f"demo_{d:03d}/obs"] = obs
            entries[f"demo_{d:03d}/actions"] = actions
        write_tensor_pack(entries, task_dir / "demos.tpk")

        for modality in mod.MODALITIES:
            spec_dir = task_dir / "specs" / modality
            spec_dir.mkdir(parents=True, exist_ok=True)
            for v in range(mod.N_VARIANTS):
                tokens, ids = suite.encode_spec(modality, task, v)
                pack = {"tokens": tokens}
                if ids is not None:
                    pack["token_ids"] = ids.astype(np.float32)
                write_tensor_pack(pack, spec_dir / f"{v:02d}.tpk")
    return out
