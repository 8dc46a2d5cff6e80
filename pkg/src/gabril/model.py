"""The gaze-regularized policy: shared conv encoder, action head, and a
parameter-free gaze-predictor head that reads the encoder's activation map.

The gaze head turns the last conv activation z into a spatial probability
field (abs -> channel mean-pool -> spatial softmax -> bilinear upsample)
and is trained to match the recorded gaze mask. Both heads consume the
same z, so the regularizer shapes the representation the action head uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation

N_ACTIONS = 4


@dataclass(frozen=True)
class ModelConfig:
    height: int = 40
    width: int = 40
    temperature: float = 1.0
    # conv stack: (out_channels, kernel, stride, padding)
    conv1: tuple = (16, 5, 2, 0)
    conv2: tuple = (32, 3, 2, 1)
    hidden: int = 128


def _conv_out(size, k, s, p):
    return (size + 2 * p - k) // s + 1


class PolicyModel:
    """Parameters of the encoder and action head, plus gaze-head config."""

    def __init__(self, config: ModelConfig = ModelConfig(), lam: float = 0.0,
                 seed: int = 0, params: dict | None = None):
        if lam < 0:
            raise ContractViolation(f"lambda must be >= 0, got {lam}")
        self.config = config
        self.lam = lam
        c1, k1, s1, p1 = config.conv1
        c2, k2, s2, p2 = config.conv2
        h1 = _conv_out(config.height, k1, s1, p1)
        w1 = _conv_out(config.width, k1, s1, p1)
        self.zh = _conv_out(h1, k2, s2, p2)
        self.zw = _conv_out(w1, k2, s2, p2)
        self.zc = c2
        flat = c2 * self.zh * self.zw
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(seed)

            def he(shape, fan_in):
                return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape),
                              requires_grad=True)

            self.params = {
                "conv1_w": he((c1, 1, k1, k1), k1 * k1),
                "conv1_b": Tensor(np.zeros(c1), requires_grad=True),
                "conv2_w": he((c2, c1, k2, k2), c1 * k2 * k2),
                "conv2_b": Tensor(np.zeros(c2), requires_grad=True),
                "fc1_w": he((flat, config.hidden), flat),
                "fc1_b": Tensor(np.zeros(config.hidden), requires_grad=True),
                "fc2_w": he((config.hidden, N_ACTIONS), config.hidden),
                "fc2_b": Tensor(np.zeros(N_ACTIONS), requires_grad=True),
            }

    def parameters(self):
        return list(self.params.values())

    # ---------------------------------------------------------------- forward

    def encode(self, obs) -> Tensor:
        """[n,1,h,w] observations -> activation map z [n,c',h',w']."""
        x = obs if isinstance(obs, Tensor) else Tensor(obs)
        if x.data.ndim != 4 or x.data.shape[1] != 1 or \
                x.data.shape[2:] != (self.config.height, self.config.width):
            raise ContractViolation(
                f"encode expects [n,1,{self.config.height},{self.config.width}], "
                f"got {x.data.shape}")
        _, k1, s1, p1 = self.config.conv1
        _, k2, s2, p2 = self.config.conv2
        h = ad.conv2d(x, self.params["conv1_w"], stride=s1, padding=p1)
        h = ad.relu(h + reshape_bias(self.params["conv1_b"]))
        h = ad.conv2d(h, self.params["conv2_w"], stride=s2, padding=p2)
        return ad.relu(h + reshape_bias(self.params["conv2_b"]))

    def act(self, z: Tensor) -> Tensor:
        """Action head: z -> logits [n, 4]."""
        n = z.data.shape[0]
        flat = ad.reshape(z, (n, -1))
        h = ad.relu(ad.affine(flat, self.params["fc1_w"], self.params["fc1_b"]))
        return ad.affine(h, self.params["fc2_w"], self.params["fc2_b"])

    def predict_gaze(self, z: Tensor, return_pre: bool = False):
        """Gaze head: |z| -> channel mean -> spatial softmax -> upsample."""
        a = ad.mean_(ad.abs_(z), axis=1)                  # [n, h', w']
        p = ad.spatial_softmax(a, self.config.temperature)
        up = ad.bilinear_upsample(p, (self.config.height, self.config.width))
        return (up, p) if return_pre else up

    # ----------------------------------------------------------------- losses

    def loss_bc(self, logits: Tensor, actions) -> Tensor:
        return ad.cross_entropy(logits, actions)

    def loss_gp(self, pred: Tensor, targets: np.ndarray,
                valid: np.ndarray) -> Tensor:
        """Mean squared Frobenius discrepancy over gaze-bearing frames.

        Frames flagged invalid (no-gaze sentinel) are excluded from both the
        numerator and the divisor.
        """
        targets = np.asarray(targets, dtype=np.float64)
        if pred.data.shape != targets.shape:
            raise ContractViolation(
                f"loss_gp shape mismatch: {pred.data.shape} vs {targets.shape}")
        valid = np.asarray(valid, dtype=bool)
        n_valid = int(valid.sum())
        if n_valid == 0:
            return Tensor(0.0)
        m = targets.shape[-2] * targets.shape[-1]
        weights = valid.astype(np.float64) / (m * n_valid)
        diff = pred + Tensor(-targets)
        return ad.sum_(ad.scale(ad.mul(diff, diff), weights[:, None, None]))

    def total_loss(self, obs, actions, gaze_targets=None, gaze_valid=None):
        """Combined loss on one shared encoder pass.

        Returns (total, bc, gp) tensors; gp is None when lambda == 0, in
        which case the gaze head is never built and total *is* the BC loss.
        """
        z = self.encode(obs)
        logits = self.act(z)
        bc = self.loss_bc(logits, actions)
        if self.lam == 0.0:
            return bc, bc, None
        pred = self.predict_gaze(z)
        gp = self.loss_gp(pred, gaze_targets, gaze_valid)
        return bc + ad.scale(gp, self.lam), bc, gp

    # ------------------------------------------------------------- evaluation

    def action_probs(self, obs_batch: np.ndarray) -> np.ndarray:
        """Softmax action distributions, no gradient bookkeeping kept."""
        z = self.encode(obs_batch)
        logits = self.act(z)
        return ad.softmax_probs(logits.data)

    def greedy_actions(self, obs_batch: np.ndarray) -> np.ndarray:
        return self.action_probs(obs_batch).argmax(axis=-1)

    def attention_map(self, obs: np.ndarray, smoothing_sigma: float = 1.5) -> np.ndarray:
        """Evaluation-time saliency field in [0,1] for one [1,h,w] observation.

        |z| channel mean, upsampled, Gaussian-blurred, max-normalized.
        """
        z = self.encode(obs[None]).data[0]
        a = np.abs(z).mean(axis=0)
        from .autodiff import _resample_matrix
        rh = _resample_matrix(a.shape[0], self.config.height)
        rw = _resample_matrix(a.shape[1], self.config.width)
        up = rh @ a @ rw.T
        if smoothing_sigma > 0:
            up = gaussian_filter(up, smoothing_sigma, mode="nearest")
        peak = up.max()
        return up / peak if peak > 0 else up


def reshape_bias(b: Tensor) -> Tensor:
    """Broadcast a per-channel bias over [n, c, h, w]."""
    return ad.reshape(b, (1, -1, 1, 1))
