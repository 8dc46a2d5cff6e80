"""TriggerWorld: a synthetic episodic environment with an injectable confounder.

A 40x40 grayscale world shows a beacon glyph in one of four quadrant
anchors. The glyph's shape (its class) is the causal factor: the expert's
correct action equals the beacon class. Beacons persist for 6-12 frames, so
expert actions repeat, which makes the previous action highly predictive of
the current one. The confounded render exposes that shortcut as a 6x6
corner patch whose fill pattern encodes the previous action. A scripted
expert plays optimally, and a synthetic gaze generator looks at the beacon
(or, with configurable probability, at clutter, to break gaze invariance on
purpose).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ContractViolation
from .gaze import GazeSample

N_ACTIONS = 4
GLYPH_SIZE = 5
INDICATOR_SIZE = 6
INDICATOR_ORIGIN = (0, 0)

# Quadrant anchors: top-left corner of the 5x5 glyph, one per quadrant.
ANCHORS = ((8, 8), (8, 28), (28, 8), (28, 28))

_G = GLYPH_SIZE
# Glyph shapes per beacon class: square outline, X, plus, filled block.
GLYPHS = np.zeros((N_ACTIONS, _G, _G))
GLYPHS[0, [0, -1], :] = 1.0
GLYPHS[0, :, [0, -1]] = 1.0
for _i in range(_G):
    GLYPHS[1, _i, _i] = 1.0
    GLYPHS[1, _i, _G - 1 - _i] = 1.0
GLYPHS[2, _G // 2, :] = 1.0
GLYPHS[2, :, _G // 2] = 1.0
GLYPHS[3, :, :] = 1.0

# Indicator fill patterns per previous action: solid, horizontal stripes,
# vertical stripes, checkerboard.
_S = INDICATOR_SIZE
INDICATOR_PATTERNS = np.zeros((N_ACTIONS, _S, _S))
INDICATOR_PATTERNS[0, :, :] = 1.0
INDICATOR_PATTERNS[1, ::2, :] = 1.0
INDICATOR_PATTERNS[2, :, ::2] = 1.0
INDICATOR_PATTERNS[3] = np.indices((_S, _S)).sum(axis=0) % 2


@dataclass(frozen=True)
class RenderConfig:
    height: int = 40
    width: int = 40
    confounded: bool = False
    noise_level: float = 0.0
    n_distractors: int = 4
    n_decoys: int = 5
    # per-frame beacon/decoy brightness is drawn from [contrast_min, 1];
    # values below 1 make some frames genuinely ambiguous under noise,
    # which is what makes the indicator shortcut tempting
    contrast_min: float = 1.0


@dataclass(frozen=True)
class EnvConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    episode_length: int = 64
    ttl_min: int = 6
    ttl_max: int = 12
    distraction_prob: float = 0.0
    gaze_jitter: float = 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        d["render"] = RenderConfig(**d["render"])
        return cls(**d)


@dataclass(eq=False)
class WorldState:
    beacon_pos: int
    beacon_class: int
    beacon_ttl: int
    prev_action: int
    distractor_seed: int
    step_index: int
    episode_length: int
    rng: np.random.Generator

    def key_fields(self):
        return (self.beacon_pos, self.beacon_class, self.beacon_ttl,
                self.prev_action, self.distractor_seed, self.step_index,
                self.episode_length)

    def __eq__(self, other):
        return isinstance(other, WorldState) and self.key_fields() == other.key_fields()


@dataclass
class EpisodeRecord:
    observations: list  # float32 [1,h,w] arrays
    actions: list       # ints
    gaze: list          # GazeSample
    seed: int

    def __len__(self):
        return len(self.actions)


def reset(seed: int, config: EnvConfig) -> WorldState:
    rng = np.random.default_rng(seed)
    return WorldState(
        beacon_pos=int(rng.integers(N_ACTIONS)),
        beacon_class=int(rng.integers(N_ACTIONS)),
        beacon_ttl=int(rng.integers(config.ttl_min, config.ttl_max + 1)),
        prev_action=int(rng.integers(N_ACTIONS)),
        distractor_seed=int(rng.integers(2 ** 31)),
        step_index=0,
        episode_length=config.episode_length,
        rng=rng,
    )


def _clutter(seed: int, cfg: RenderConfig):
    """Class-irrelevant clutter drawn from the distractor seed only.

    Returns (blocks, decoys): dim 2x2 blocks and full-brightness decoy
    glyphs at non-anchor positions. Decoys use the same glyph alphabet as
    the beacon, so position, not shape, identifies the causal one. All
    clutter avoids the indicator patch and the four anchor boxes so
    neither the confounder nor the beacon glyph is ever obscured.
    """
    rng = np.random.default_rng([seed, 9151])
    forbidden = np.zeros((cfg.height, cfg.width), dtype=bool)
    r0, c0 = INDICATOR_ORIGIN
    forbidden[r0:r0 + INDICATOR_SIZE + 2, c0:c0 + INDICATOR_SIZE + 2] = True
    for ar, ac in ANCHORS:
        forbidden[ar - 2:ar + GLYPH_SIZE + 2, ac - 2:ac + GLYPH_SIZE + 2] = True
    blocks = []
    while len(blocks) < cfg.n_distractors:
        r = int(rng.integers(cfg.height - 1))
        c = int(rng.integers(cfg.width - 1))
        if not forbidden[r:r + 2, c:c + 2].any():
            blocks.append((r, c, float(rng.uniform(0.3, 0.6))))
    decoys = []
    while len(decoys) < cfg.n_decoys:
        r = int(rng.integers(cfg.height - GLYPH_SIZE))
        c = int(rng.integers(cfg.width - GLYPH_SIZE))
        if not forbidden[r:r + GLYPH_SIZE, c:c + GLYPH_SIZE].any():
            forbidden[r:r + GLYPH_SIZE, c:c + GLYPH_SIZE] = True
            decoys.append((r, c, int(rng.integers(N_ACTIONS))))
    return blocks, decoys


def render(state: WorldState, cfg: RenderConfig) -> np.ndarray:
    """Deterministic [1,h,w] float image of the state, values in [0,1]."""
    img = np.zeros((cfg.height, cfg.width))
    blocks, decoys = _clutter(state.distractor_seed, cfg)
    contrast_rng = np.random.default_rng(
        [state.distractor_seed, state.step_index, 577])
    for r, c, v in blocks:
        img[r:r + 2, c:c + 2] = v
    for r, c, cls in decoys:
        dc = contrast_rng.uniform(cfg.contrast_min, 1.0)
        img[r:r + GLYPH_SIZE, c:c + GLYPH_SIZE] = dc * GLYPHS[cls]
    ar, ac = ANCHORS[state.beacon_pos]
    gc = contrast_rng.uniform(cfg.contrast_min, 1.0)
    img[ar:ar + GLYPH_SIZE, ac:ac + GLYPH_SIZE] = gc * GLYPHS[state.beacon_class]
    if cfg.confounded:
        r0, c0 = INDICATOR_ORIGIN
        img[r0:r0 + INDICATOR_SIZE, c0:c0 + INDICATOR_SIZE] = \
            INDICATOR_PATTERNS[state.prev_action]
    if cfg.noise_level > 0.0:
        noise_rng = np.random.default_rng(
            [state.distractor_seed, state.step_index, 40813])
        img = img + noise_rng.normal(0.0, cfg.noise_level, img.shape)
        img = np.clip(img, 0.0, 1.0)
    return img[None]


def beacon_center(state: WorldState):
    ar, ac = ANCHORS[state.beacon_pos]
    # (x, y) pixel coordinates of the glyph centre
    return (ac + GLYPH_SIZE // 2, ar + GLYPH_SIZE // 2)


def expert_action(state: WorldState) -> int:
    """The optimal action: read the causal factor, ignore everything else."""
    return state.beacon_class


def expert_gaze(state: WorldState, rng: np.random.Generator,
                distraction_prob: float = 0.0, jitter: float = 2.0,
                cfg: RenderConfig = RenderConfig()) -> GazeSample:
    """Synthetic gaze: beacon centre plus jitter, or (with probability
    ``distraction_prob``) a random clutter block, which breaks the
    invariance of gaze to the confounder's usefulness as supervision."""
    if distraction_prob > 0.0 and rng.random() < distraction_prob:
        blocks, decoys = _clutter(state.distractor_seed, cfg)
        targets = [(r, c) for r, c, _ in blocks] + \
                  [(r + GLYPH_SIZE // 2, c + GLYPH_SIZE // 2) for r, c, _ in decoys]
        r, c = targets[int(rng.integers(len(targets)))]
        x, y = float(c), float(r)
    else:
        bx, by = beacon_center(state)
        dx, dy = rng.normal(0.0, jitter, 2) if jitter > 0.0 else (0.0, 0.0)
        x, y = bx + float(dx), by + float(dy)
    x = float(np.clip(x, 0.0, cfg.width - 1))
    y = float(np.clip(y, 0.0, cfg.height - 1))
    return GazeSample(frame_index=state.step_index, x=x, y=y, valid=True)


def step(state: WorldState, action: int, config: EnvConfig):
    """Advance one frame in place; returns (state, reward, done)."""
    if not 0 <= action < N_ACTIONS:
        raise ContractViolation(f"action {action} out of range [0,{N_ACTIONS})")
    reward = 1.0 if action == state.beacon_class else 0.0
    state.prev_action = action
    state.beacon_ttl -= 1
    if state.beacon_ttl == 0:
        state.beacon_pos = int(state.rng.integers(N_ACTIONS))
        state.beacon_class = int(state.rng.integers(N_ACTIONS))
        state.beacon_ttl = int(state.rng.integers(config.ttl_min, config.ttl_max + 1))
        state.distractor_seed = int(state.rng.integers(2 ** 31))
    state.step_index += 1
    done = state.step_index >= state.episode_length
    return state, reward, done


def intervene(state: WorldState, t: int) -> WorldState:
    """do(T=t): copy the state with only the previous action replaced."""
    if not 0 <= t < N_ACTIONS:
        raise ContractViolation(f"intervention value {t} out of range")
    new = copy.copy(state)
    new.rng = copy.deepcopy(state.rng)
    new.prev_action = t
    return new


def episode_seeds(seed: int, n: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n)


def collect(config: EnvConfig, n_episodes: int, seed: int) -> list[EpisodeRecord]:
    """Run the scripted expert closed-loop and record (o, g, a) triples."""
    if n_episodes < 1:
        raise ContractViolation("n_episodes must be >= 1")
    records = []
    for ep_seed in episode_seeds(seed, n_episodes):
        ep_seed = int(ep_seed)
        state = reset(ep_seed, config)
        gaze_rng = np.random.default_rng([ep_seed, 777])
        obs, acts, gz = [], [], []
        done = False
        while not done:
            obs.append(render(state, config.render).astype(np.float32))
            a = expert_action(state)
            gz.append(expert_gaze(state, gaze_rng, config.distraction_prob,
                                  config.gaze_jitter, config.render))
            acts.append(a)
            state, _, done = step(state, a, config)
        records.append(EpisodeRecord(obs, acts, gz, ep_seed))
    return records


def shortcut_strength(records) -> float:
    """Fraction of frames where the previous expert action predicts the
    current one; this is the trap's strength."""
    hits = total = 0
    for rec in records:
        a = np.asarray(rec.actions)
        hits += int((a[1:] == a[:-1]).sum())
        total += len(a) - 1
    return hits / total if total else 0.0
