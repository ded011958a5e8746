"""Meta-learning few-shot object detection on synthetic scenes.

A desk-scale detector built on a self-contained float64 autodiff engine:
episodic data construction, feature-reweighting detection across three
scales, group-wise meta losses, double-maximum category determination,
and mAP / class-weighted evaluation.
"""

from .tensor import Tensor, ComputationTape, backward, no_grad
from .gradcheck import grad_check

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "ComputationTape",
    "backward",
    "no_grad",
    "grad_check",
    "__version__",
]
