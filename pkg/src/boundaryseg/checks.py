"""Finite-difference verification harness for every differentiable op.

Each entry builds small float64 inputs and returns the max relative
error between analytic and central-difference gradients.  Composite
checks (the refined differential block, the point-graph block, the
one-stage network) use sampled coordinates to stay fast; primitive ops
are probed exhaustively.
"""

from __future__ import annotations

import numpy as np

from .blocks import CascadeNet, NetConfig
from .losses import GroundTruthBundle, LossWeights, cross_entropy_ignore, dice_loss, total_loss
from .pgm import Pgm, gather_features, graph_conv, sample_topk, scatter_back
from .rdm import Rdm
from .synth import derive_edge_gt, derive_residual_gt
from .tensor import (Tensor, add, batchnorm2d, bilinear_resize, concat_channels,
                     conv2d, grad_check, matmul, mul, relu, scale, sigmoid,
                     sub, sum_all)

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def check_conv2d(rng):
    x = _t(rng, 1, 2, 5, 5)
    w = _t(rng, 3, 2, 3, 3)
    b = _t(rng, 3)
    return grad_check(lambda x, w, b: sum_all(conv2d(x, w, b, pad=1)), [x, w, b])


def check_conv2d_strided(rng):
    x = _t(rng, 2, 2, 7, 7)
    w = _t(rng, 2, 2, 3, 3)
    b = _t(rng, 2)
    return grad_check(
        lambda x, w, b: sum_all(mul(y := conv2d(x, w, b, stride=2, dilation=2, pad=2), y)),
        [x, w, b])


def check_bilinear_resize(rng):
    x = _t(rng, 1, 2, 5, 7)
    return grad_check(lambda x: sum_all(mul(y := bilinear_resize(x, 9, 4), y)), [x])


def check_concat(rng):
    a = _t(rng, 1, 2, 4, 4)
    b = _t(rng, 1, 3, 4, 4)
    return grad_check(lambda a, b: sum_all(mul(y := concat_channels(a, b), y)), [a, b])


def check_add_sub_mul(rng):
    a = _t(rng, 3, 4)
    b = _t(rng, 3, 4)
    return grad_check(
        lambda a, b: sum_all(mul(add(a, b), sub(a, b))), [a, b])


def check_relu(rng):
    # Resample coordinates near the kink; the subgradient there is not
    # a finite-difference quantity.
    data = rng.uniform(-1, 1, size=(4, 4))
    data[np.abs(data) < 1e-2] += 0.1
    x = Tensor(data, requires_grad=True)
    return grad_check(lambda x: sum_all(mul(y := relu(x), y)), [x])


def check_sigmoid(rng):
    x = _t(rng, 4, 4, lo=-3, hi=3)
    return grad_check(lambda x: sum_all(mul(y := sigmoid(x), y)), [x])


def check_matmul(rng):
    a = _t(rng, 4, 5)
    b = _t(rng, 5, 3)
    return grad_check(lambda a, b: sum_all(mul(y := matmul(a, b), y)), [a, b])


def _bn_stats(c):
    return np.zeros(c), np.ones(c)


def check_batchnorm_train(rng):
    x = _t(rng, 2, 3, 4, 4)
    gamma = _t(rng, 3, lo=0.5, hi=1.5)
    beta = _t(rng, 3)

    def f(x, gamma, beta):
        rm, rv = _bn_stats(3)
        return sum_all(mul(y := batchnorm2d(x, gamma, beta, rm, rv, True), y))

    return grad_check(f, [x, gamma, beta])


def check_batchnorm_eval(rng):
    x = _t(rng, 2, 3, 4, 4)
    gamma = _t(rng, 3, lo=0.5, hi=1.5)
    beta = _t(rng, 3)
    rm = rng.uniform(-0.5, 0.5, size=3)
    rv = rng.uniform(0.5, 1.5, size=3)

    def f(x, gamma, beta):
        return sum_all(mul(y := batchnorm2d(x, gamma, beta, rm, rv, False), y))

    return grad_check(f, [x, gamma, beta])


def check_scale_sum(rng):
    x = _t(rng, 3, 3)
    return grad_check(lambda x: scale(sum_all(mul(x, x)), 0.5), [x])


def check_cross_entropy(rng):
    logits = _t(rng, 1, 2, 4, 4, lo=-2, hi=2)
    target = rng.integers(0, 2, size=(1, 4, 4)).astype(np.uint8)
    target[0, 0, 0] = 255
    return grad_check(lambda l: cross_entropy_ignore(l, target), [logits])


def check_dice(rng):
    pred = _t(rng, 1, 1, 4, 4, lo=0.05, hi=0.95)
    target = rng.integers(0, 2, size=(1, 4, 4)).astype(np.uint8)
    return grad_check(lambda p: dice_loss(p, target), [pred])


def check_gather(rng):
    fm = _t(rng, 1, 3, 4, 4)
    idx = sample_topk(rng.uniform(0, 1, size=(1, 1, 4, 4)), 5)
    return grad_check(
        lambda fm: sum_all(mul(y := gather_features(fm, idx), y)), [fm])


def check_scatter(rng):
    fm = _t(rng, 1, 3, 4, 4)
    nodes = _t(rng, 1, 5, 3)
    idx = sample_topk(rng.uniform(0, 1, size=(1, 1, 4, 4)), 5)
    return grad_check(
        lambda fm, nodes: sum_all(mul(y := scatter_back(fm, nodes, idx), y)),
        [fm, nodes])


def _graph_conv_check(rng, laplacian):
    g = _t(rng, 1, 5, 4)
    w = _t(rng, 4, 4)
    a = _t(rng, 6, 6)
    return grad_check(
        lambda g, w, a: sum_all(mul(
            y := graph_conv(g, w, a, laplacian_variant=laplacian), y)),
        [g, w, a])


def check_graph_conv(rng):
    return _graph_conv_check(rng, False)


def check_graph_conv_laplacian(rng):
    return _graph_conv_check(rng, True)


def _to_f64(module):
    for p in module.parameters():
        p.data = p.data.astype(np.float64)


def check_pgm(rng):
    pgm = Pgm(4, 6, np.random.default_rng(7))
    _to_f64(pgm)
    fm = _t(rng, 1, 4, 4, 4)
    f_b = rng.uniform(0, 1, size=(1, 1, 4, 4))

    def f(fm, w, a):
        out = pgm(Tensor(f_b), fm)
        return sum_all(mul(out, out))

    return grad_check(f, [fm, pgm.w_g, pgm.a_g])


def check_rdm(rng):
    rdm = Rdm(6, 3, 4, np.random.default_rng(11))
    _to_f64(rdm)
    f_in = _t(rng, 1, 6, 4, 4)
    f_low = _t(rng, 1, 3, 8, 8)
    f_high = _t(rng, 1, 4, 4, 4)
    params = [p for _, p in rdm.named_parameters()]

    def f(f_in, f_low, f_high, *params):
        out = rdm(f_in, f_low, f_high)
        return add(sum_all(mul(out.f_merge, out.f_merge)),
                   add(sum_all(mul(out.f_b, out.f_b)),
                       sum_all(mul(out.f_r, out.f_r))))

    return grad_check(f, [f_in, f_low, f_high] + params, max_coords=24)


def check_network(rng):
    """Full one-stage network + joint loss on an 8x8 scene."""
    cfg = NetConfig(stages=1, channels=8, low_channels=4, high_channels=8,
                    points=6)
    net = CascadeNet(cfg, seed=3)
    _to_f64(net)
    net.eval()  # freeze batch statistics: FD perturbations must not shift them
    image = _t(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
    g_m = np.zeros((1, 8, 8), dtype=np.uint8)
    g_m[0, 2:6, 2:6] = 1
    g_e = derive_edge_gt(g_m[0], 2)[None]
    g_r = derive_residual_gt(g_m[0], g_e[0])[None]
    gt = GroundTruthBundle(g_m=g_m, g_e=g_e, g_r=g_r)
    weights = LossWeights()
    params = [p for _, p in net.named_parameters()]

    def f(image, *params):
        return total_loss(net(image), gt, weights)

    return grad_check(f, [image] + params, max_coords=6)


ALL_CHECKS = {
    "conv2d": (check_conv2d, OP_TOL),
    "conv2d_strided": (check_conv2d_strided, OP_TOL),
    "bilinear_resize": (check_bilinear_resize, OP_TOL),
    "concat_channels": (check_concat, OP_TOL),
    "eltwise": (check_add_sub_mul, OP_TOL),
    "relu": (check_relu, OP_TOL),
    "sigmoid": (check_sigmoid, OP_TOL),
    "matmul": (check_matmul, OP_TOL),
    "batchnorm_train": (check_batchnorm_train, OP_TOL),
    "batchnorm_eval": (check_batchnorm_eval, OP_TOL),
    "scale_sum": (check_scale_sum, OP_TOL),
    "cross_entropy": (check_cross_entropy, OP_TOL),
    "dice": (check_dice, OP_TOL),
    "gather": (check_gather, OP_TOL),
    "scatter": (check_scatter, OP_TOL),
    "graph_conv": (check_graph_conv, OP_TOL),
    "graph_conv_laplacian": (check_graph_conv_laplacian, OP_TOL),
    "pgm": (check_pgm, COMPOSITE_TOL),
    "rdm": (check_rdm, COMPOSITE_TOL),
    "network": (check_network, COMPOSITE_TOL),
}


def run_checks(names=None, seed=0):
    """name -> (max rel error, tolerance).  Deterministic given seed."""
    names = list(ALL_CHECKS) if names is None else list(names)
    results = {}
    for name in names:
        if name not in ALL_CHECKS:
            raise KeyError(f"unknown op {name!r}; known: {', '.join(ALL_CHECKS)}")
        fn, tol = ALL_CHECKS[name]
        rng = np.random.default_rng(seed + 1)
        results[name] = (fn(rng), tol)
    return results
