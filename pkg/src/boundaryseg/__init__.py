"""Boundary-enhanced segmentation of synthetic glass-like scenes.

Everything runs on a small reverse-mode autodiff core (``tensor``),
with the refined differential block (``rdm``), the edge-aware point
graph convolution (``pgm``), the cascade decoder (``blocks``), the
joint loss (``losses``), ground-truth synthesis (``synth``), the
metric suite (``metrics``), and the training drivers (``train``).
"""

from .blocks import CascadeNet, NetConfig, StageOutput
from .synth import Sample, derive_edge_gt, derive_residual_gt, gen_scene
from .tensor import Tensor, backward, grad_check, no_grad
from .train import TrainConfig, ablate, evaluate, poly_lr, train

__all__ = [
    "CascadeNet", "NetConfig", "StageOutput", "Sample", "Tensor",
    "TrainConfig", "ablate", "backward", "derive_edge_gt",
    "derive_residual_gt", "evaluate", "gen_scene", "grad_check", "no_grad",
    "poly_lr", "train",
]

__version__ = "0.1.0"
