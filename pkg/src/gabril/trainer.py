"""Deterministic mini-batch training over demonstration datasets.

The loop is fully reproducible: given (config, dataset), every logged loss
value is identical across runs. Gaze supervision can be thinned to a
deterministic subset of frames; frames without gaze are excluded from the
regularization loss entirely.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .envsim import EnvConfig, EpisodeRecord
from .errors import GabrilError, ContractViolation, NonFiniteError
from .gaze import GazeSample, MaskParams, mask_sequence
from .model import ModelConfig, PolicyModel


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    lam: float = 0.0
    gaze_fraction: float = 1.0
    mask_params: MaskParams = field(default_factory=MaskParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    val_fraction: float = 0.1
    log_interval: int = 50

    def __post_init__(self):
        if not 0.0 <= self.gaze_fraction <= 1.0:
            raise ContractViolation(
                f"gaze_fraction must be in [0,1], got {self.gaze_fraction}")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["mask_params"] = MaskParams(**d["mask_params"])
        m = dict(d["model"])
        m["conv1"] = tuple(m["conv1"])
        m["conv2"] = tuple(m["conv2"])
        d["model"] = ModelConfig(**m)
        d["env"] = EnvConfig.from_dict(d["env"])
        return cls(**d)


@dataclass
class MetricsLog:
    steps: list = field(default_factory=list)   # (step, l_bc, l_gp, l_total)
    evals: list = field(default_factory=list)   # (step, val_l_bc, val_l_gp, val_l_total)

    def record_step(self, step, l_bc, l_gp, l_total):
        self.steps.append((step, l_bc, l_gp, l_total))

    def record_eval(self, step, l_bc, l_gp, l_total):
        self.evals.append((step, l_bc, l_gp, l_total))

    def loss_sequence(self):
        return [s[3] for s in self.steps]


def apply_gaze_fraction(dataset: list[EpisodeRecord], fraction: float,
                        seed: int) -> list[EpisodeRecord]:
    """Keep gaze on exactly round(fraction*N) frames, chosen per-frame by a
    seeded permutation; the rest get the no-gaze sentinel. Observations and
    actions are untouched."""
    if not 0.0 <= fraction <= 1.0:
        raise ContractViolation(f"fraction must be in [0,1], got {fraction}")
    n_total = sum(len(r) for r in dataset)
    n_keep = round(fraction * n_total)
    rng = np.random.default_rng([seed, 5923])
    keep = np.zeros(n_total, dtype=bool)
    keep[rng.permutation(n_total)[:n_keep]] = True
    out = []
    pos = 0
    for rec in dataset:
        gaze = []
        for s in rec.gaze:
            if keep[pos]:
                gaze.append(s)
            else:
                gaze.append(GazeSample(s.frame_index, s.x, s.y, valid=False))
            pos += 1
        out.append(EpisodeRecord(rec.observations, rec.actions, gaze, rec.seed))
    return out


def flatten_dataset(dataset: list[EpisodeRecord], mask_params: MaskParams,
                    dims, with_masks: bool = True):
    """Stack episodes into training arrays.

    Returns (obs [N,1,h,w] f64, actions [N], masks [N,h,w], valid [N]).
    A frame is gaze-valid when its own sample is valid and its mask is not
    all-zero. When ``with_masks`` is false the gaze path is skipped.
    """
    obs = np.concatenate([np.stack(r.observations) for r in dataset]).astype(np.float64)
    actions = np.concatenate([np.asarray(r.actions) for r in dataset])
    n = len(actions)
    h, w = dims
    if not with_masks:
        return obs, actions, np.zeros((n, h, w)), np.zeros(n, dtype=bool)
    masks, valid = [], []
    for rec in dataset:
        seq = mask_sequence(rec.gaze, mask_params, dims)
        for s, m in zip(rec.gaze, seq):
            masks.append(m)
            valid.append(s.valid and m.max() > 0.0)
    return obs, actions, np.stack(masks), np.asarray(valid)


def train(config: TrainConfig, dataset: list[EpisodeRecord],
          checkpoint_path=None, verbose: bool = False):
    """Run the full training loop; returns (model, metrics).

    The best parameters (by validation total loss) are restored into the
    returned model; when ``checkpoint_path`` is given, final and best
    checkpoints are written there (suffix ``.best`` for the best one).
    """
    if not dataset:
        raise ContractViolation("dataset must be non-empty")
    dims = (config.model.height, config.model.width)
    use_gaze = config.lam > 0.0
    data = apply_gaze_fraction(dataset, config.gaze_fraction, config.seed) \
        if config.gaze_fraction < 1.0 else dataset
    obs, actions, masks, valid = flatten_dataset(
        data, config.mask_params, dims, with_masks=use_gaze)

    n = len(actions)
    rng = np.random.default_rng([config.seed, 101])
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx, val_idx = perm, perm[:0]

    model = PolicyModel(config.model, lam=config.lam, seed=config.seed)
    opt = ad.Adam(model.parameters(), lr=config.learning_rate)
    metrics = MetricsLog()
    best_val = np.inf
    best_params = None
    step = 0

    def batch_loss(idx):
        return model.total_loss(obs[idx], actions[idx],
                                masks[idx] if use_gaze else None,
                                valid[idx] if use_gaze else None)

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), config.batch_size):
            idx = train_idx[order[start:start + config.batch_size]]
            try:
                total, bc, gp = batch_loss(idx)
                ad.backward(total)
            except NonFiniteError as e:
                raise GabrilError(
                    f"non-finite loss at step {step} (epoch {epoch}): {e}") from e
            opt.step()
            opt.zero_grad()
            step += 1
            l_gp = gp.item() if gp is not None else 0.0
            metrics.record_step(step, bc.item(), l_gp, total.item())
            if verbose and step % config.log_interval == 0:
                print(f"step={step} epoch={epoch} l_bc={bc.item():.6f} "
                      f"l_gp={l_gp:.6f} l_total={total.item():.6f}")
        if len(val_idx):
            vt, vb, vg = batch_loss(val_idx)
            vgv = vg.item() if vg is not None else 0.0
            metrics.record_eval(step, vb.item(), vgv, vt.item())
            if verbose:
                print(f"step={step} epoch={epoch} val_l_total={vt.item():.6f}")
            if vt.item() < best_val:
                best_val = vt.item()
                best_params = {k: p.data.copy() for k, p in model.params.items()}

    if checkpoint_path is not None:
        from . import io as gio
        gio.save_checkpoint(model, config.to_dict(), str(checkpoint_path))
        if best_params is not None:
            best_model = copy.deepcopy(model)
            for k, p in best_model.params.items():
                p.data = best_params[k].copy()
            gio.save_checkpoint(best_model, config.to_dict(),
                                str(checkpoint_path) + ".best")
    if best_params is not None:
        for k, p in model.params.items():
            p.data = best_params[k]
    return model, metrics
