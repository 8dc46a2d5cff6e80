"""Gaze-regularized imitation learning lab.

A self-contained desk-scale pipeline: a confounded synthetic environment
with a scripted expert and synthetic gaze, multimodal Gaussian gaze masks,
a convolutional policy with a parameter-free gaze-predictor head trained
with a combined cloning + gaze-regularization loss, and an interventional
evaluation harness that measures robustness to the confounder.
"""

from . import autodiff, envsim, evaluator, gaze, io, model, trainer  # noqa: F401

__version__ = "0.1.0"
