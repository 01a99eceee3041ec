"""Network assembly: scratch backbone, prediction head, cascade decoder.

The backbone is four double-conv blocks at strides 2,2,2,1 (dilation 2
in the last), followed by a dilation-2 context block whose output is
the first decoder input.  Each cascade stage runs the refined
differential block, optionally the point graph convolution, and a
prediction head; the refined merge feature becomes the next stage's
input.  The low-level feature feeds every stage; stage 1 taps block 3
as its high-level feature and later stages tap block 4.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import Conv2d, ConvBnRelu, Module, ModuleList, BatchNorm2d
from .pgm import Pgm
from .rdm import Rdm
from .tensor import ShapeError, Tensor, bilinear_resize, no_grad, relu

VARIANTS = ("baseline", "rdm", "rdm_cascade", "full")


@dataclass
class NetConfig:
    stages: int = 3
    channels: int = 64
    low_channels: int = 32
    high_channels: int = 64
    points: int = 96
    thickness: int = 8
    lambda_residual: float = 1.0
    lambda_edge: float = 3.0
    lambda_merge: float = 1.0
    laplacian_variant: bool = False
    use_rdm: bool = True
    use_pgm: bool = True
    fuse_relu: bool = True
    edge_loss_at_full_res: bool = False

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.points < 0:
            raise ValueError("points must be >= 0")
        if min(self.lambda_residual, self.lambda_edge, self.lambda_merge) <= 0:
            raise ValueError("loss weights must be positive")


def apply_variant(cfg, variant):
    """Ablation rows: plain decoder, +RDM, +RDM+cascade, full model."""
    if variant == "baseline":
        return replace(cfg, use_rdm=False, use_pgm=False, stages=1)
    if variant == "rdm":
        return replace(cfg, use_rdm=True, use_pgm=False, stages=1)
    if variant == "rdm_cascade":
        return replace(cfg, use_rdm=True, use_pgm=False)
    if variant == "full":
        return replace(cfg, use_rdm=True, use_pgm=True)
    raise ValueError(f"unknown variant {variant!r}; pick one of {VARIANTS}")


@dataclass
class BackboneFeatures:
    f_low: Tensor        # stride 4
    f_high_taps: list    # two stride-8 taps (stage 1, stages >= 2)
    f_in0: Tensor        # stride 8 context output


@dataclass
class StageOutput:
    f_b: Tensor | None
    f_r: Tensor | None
    f_m: Tensor
    f_merge_refined: Tensor
    f_edge: Tensor | None = None


class Backbone(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        w1 = max(cfg.channels // 4, 2)
        w2, w3 = cfg.low_channels, cfg.high_channels
        self.block1 = ModuleList([ConvBnRelu(3, w1, rng, stride=2),
                                  ConvBnRelu(w1, w1, rng)])
        self.block2 = ModuleList([ConvBnRelu(w1, w2, rng, stride=2),
                                  ConvBnRelu(w2, w2, rng)])
        self.block3 = ModuleList([ConvBnRelu(w2, w3, rng, stride=2),
                                  ConvBnRelu(w3, w3, rng)])
        self.block4 = ModuleList([ConvBnRelu(w3, w3, rng, dilation=2),
                                  ConvBnRelu(w3, w3, rng, dilation=2)])
        self.context = ConvBnRelu(w3, cfg.channels, rng, dilation=2)

    def forward(self, image):
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"backbone expects (N,3,H,W), got {image.shape}")
        h, w = image.shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(
                f"input size {h}x{w} must be a multiple of 8 (output stride)")
        x = image
        for layer in self.block1:
            x = layer(x)
        for layer in self.block2:
            x = layer(x)
        f_low = x
        for layer in self.block3:
            x = layer(x)
        tap1 = x
        for layer in self.block4:
            x = layer(x)
        tap2 = x
        return BackboneFeatures(f_low=f_low, f_high_taps=[tap1, tap2],
                                f_in0=self.context(x))


class PredHead(Module):
    """Three convs with two batch norms and two relus; the final conv
    is zero-initialized so an untrained head predicts uniformly."""

    def __init__(self, channels, rng):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.bn2 = BatchNorm2d(channels)
        self.conv3 = Conv2d(channels, 2, 1, rng, zero_init=True)

    def forward(self, f):
        x = relu(self.bn1(self.conv1(f)))
        x = relu(self.bn2(self.conv2(x)))
        return self.conv3(x)


class CascadeNet(Module):
    def __init__(self, cfg, seed=0):
        super().__init__()
        if not cfg.use_rdm and cfg.stages != 1:
            raise ValueError("the plain decoder has no merge feature to "
                             "chain; use stages=1 without the RDM")
        self.cfg = cfg
        rng = np.random.default_rng(np.uint64(seed))
        self.backbone = Backbone(cfg, rng)
        if cfg.use_rdm:
            self.rdms = ModuleList([
                Rdm(cfg.channels, cfg.low_channels, cfg.high_channels, rng,
                    fuse_relu=cfg.fuse_relu)
                for _ in range(cfg.stages)])
            if cfg.use_pgm and cfg.points > 0:
                self.pgms = ModuleList([
                    Pgm(cfg.channels, cfg.points, rng,
                        laplacian_variant=cfg.laplacian_variant)
                    for _ in range(cfg.stages)])
            else:
                self.pgms = None
        else:
            self.rdms = None
            self.pgms = None
        self.preds = ModuleList([PredHead(cfg.channels, rng)
                                 for _ in range(cfg.stages)])

    def forward(self, image):
        feats = self.backbone(image)
        f_in = feats.f_in0
        outputs = []
        for n in range(self.cfg.stages):
            if self.rdms is None:
                f_m = self.preds[n](f_in)
                outputs.append(StageOutput(f_b=None, f_r=None, f_m=f_m,
                                           f_merge_refined=f_in))
                continue
            f_high = feats.f_high_taps[0 if n == 0 else 1]
            r = self.rdms[n](f_in, feats.f_low, f_high)
            if self.pgms is not None:
                f_merge_ref = self.pgms[n](r.f_b, r.f_merge)
            else:
                f_merge_ref = r.f_merge
            f_m = self.preds[n](f_merge_ref)
            outputs.append(StageOutput(f_b=r.f_b, f_r=r.f_r, f_m=f_m,
                                       f_merge_refined=f_merge_ref,
                                       f_edge=r.f_edge))
            f_in = f_merge_ref
        return outputs

    def predict(self, image):
        """(mask (N,H,W) uint8, fg probability (N,H,W) float32) from the
        last stage's merge logits, bilinearly upsampled to input size."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                stages = self.forward(image)
                h, w = image.shape[2:]
                logits = bilinear_resize(stages[-1].f_m, h, w).data
        finally:
            self.train(was_training)
        diff = logits[:, 1] - logits[:, 0]
        prob_fg = np.empty_like(diff)
        pos = diff >= 0
        prob_fg[pos] = 1.0 / (1.0 + np.exp(-diff[pos]))
        e = np.exp(diff[~pos])
        prob_fg[~pos] = e / (1.0 + e)
        mask = (diff > 0).astype(np.uint8)
        return mask, prob_fg.astype(np.float32)
