"""Gaze mask construction: temporally weighted sums of isotropic Gaussians.

A stream of per-frame gaze coordinates becomes one [0,1] mask per frame.
Each frame's mask accumulates the Gaussian footprints of the gaze samples
in a window around it; neighbours are attenuated and their Gaussians
widened the further they are from the centre frame, so fixations reinforce
and saccades wash out. Frames whose whole window lost tracking yield an
all-zero "no-gaze" mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class GazeSample:
    """One tracked gaze point. ``valid=False`` marks tracker dropout."""
    frame_index: int
    x: float
    y: float
    valid: bool = True


@dataclass(frozen=True)
class MaskParams:
    """Hyperparameters of the multimodal mask.

    alpha: per-step attenuation of neighbouring frames' contribution
    beta:  per-step Gaussian radius expansion factor (sigma scales by 1/beta)
    gamma: base Gaussian sigma in pixels
    k:     temporal window radius in frames
    """
    alpha: float = 0.7
    beta: float = 0.99
    gamma: float = 15.0
    k: int = 7

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ContractViolation(f"alpha must be in (0,1), got {self.alpha}")
        if not (0.0 < self.beta < 1.0):
            raise ContractViolation(f"beta must be in (0,1), got {self.beta}")
        if self.gamma <= 0.0:
            raise ContractViolation(f"gamma must be positive, got {self.gamma}")
        if self.k < 0:
            raise ContractViolation(f"k must be non-negative, got {self.k}")


def raw_mask(samples, center: int, params: MaskParams, dims) -> np.ndarray:
    """Unnormalized mask for the frame at ``samples[center]``.

    ``samples`` is a consecutive run of GazeSample (or None for missing
    frames at sequence boundaries); offsets outside [-k, k] are ignored.
    Each valid sample at offset j contributes
    alpha^|j| * N(pixel; (x,y), gamma^2 * beta^(-2|j|) * I) evaluated at
    integer pixel centres. Returns an all-zero field when no sample in the
    window is valid.
    """
    h, w = dims
    ys, xs = np.mgrid[0:h, 0:w]
    field = np.zeros((h, w))
    for idx, s in enumerate(samples):
        j = idx - center
        if abs(j) > params.k or s is None or not s.valid:
            continue
        var = params.gamma ** 2 * params.beta ** (-2 * abs(j))
        d2 = (xs - s.x) ** 2 + (ys - s.y) ** 2
        field += (params.alpha ** abs(j)) * np.exp(-d2 / (2.0 * var)) / (2.0 * math.pi * var)
    return field


def normalize(raw: np.ndarray) -> np.ndarray:
    """Scale a non-negative field so its maximum is 1; all-zero stays zero."""
    if np.any(raw < 0.0):
        raise ContractViolation("normalize expects a non-negative field")
    peak = raw.max()
    if peak == 0.0:
        return np.zeros_like(raw)
    return raw / peak

def mask_sequence(stream, params: MaskParams, dims) -> list[np.ndarray]:
    """One normalized mask per frame of a gaze stream.

    ``stream`` is a list of GazeSample indexed by frame. Boundary frames
    use truncated windows rather than padded ones.
    """
    n = len(stream)
    masks = []
    for i in range(n):
        lo = max(0, i - params.k)
        hi = min(n, i + params.k + 1)
        masks.append(normalize(raw_mask(stream[lo:hi], i - lo, params, dims)))
    return masks


def gaussian_peak(params: MaskParams) -> float:
    """Peak value of a single j=0 contribution: 1 / (2 pi gamma^2)."""
    return 1.0 / (2.0 * math.pi * params.gamma ** 2)
