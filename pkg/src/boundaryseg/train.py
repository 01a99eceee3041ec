"""Training, evaluation, and ablation drivers.

Training is deterministic given the config seed: dataset seeds, weight
init, epoch shuffling, and flip augmentation all derive from it, and
there are no unordered reductions anywhere, so two runs with the same
config produce byte-identical checkpoints and reports.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io, metrics, synth
from .blocks import VARIANTS, CascadeNet, NetConfig, apply_variant
from .losses import GroundTruthBundle, LossWeights, total_loss
from .maskops import contour_mask
from .tensor import NumericError, Tensor, backward


@dataclass
class TrainConfig:
    iters: int = 200
    batch_size: int = 4
    base_lr: float = 0.01
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    size: int = 64
    n_objects: int = 2
    train_count: int = 200
    val_count: int = 50
    flip: bool = True
    data_dir: str = ""
    out_dir: str = "runs/default"
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base LR must be positive")
        if self.power <= 0:
            raise ValueError("poly power must be positive")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def poly_lr(it, total, base, power):
    """base * (1 - it/total) ** power, clamped to 0 past the end."""
    if it >= total:
        return 0.0
    return base * (1.0 - it / total) ** power


class Sgd:
    """SGD with momentum and weight decay folded into the velocity:
    v <- m*v + g + wd*p;  p <- p - lr*v."""

    def __init__(self, named_params, momentum=0.9, weight_decay=0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.items = [(name, p, np.zeros_like(p.data))
                      for name, p in named_params]

    def step(self, lr):
        for name, p, v in self.items:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name}")
            v *= self.momentum
            v += g + self.weight_decay * p.data
            p.data -= lr * v

    def zero_grad(self):
        for _, p, _ in self.items:
            p.zero_grad()


# ---------------------------------------------------------------------------
# data plumbing


def make_dataset(seed, count, size, n_objects, thickness, offset=0):
    return [synth.gen_scene(seed * 1_000_000 + offset + i, size=size,
                            n_objects=n_objects, thickness=thickness)
            for i in range(count)]


def _load_or_generate(cfg, split, count, offset):
    if cfg.data_dir:
        return synth.load_dataset(Path(cfg.data_dir) / split,
                                  thickness=cfg.net.thickness)
    return make_dataset(cfg.seed, count, cfg.size, cfg.n_objects,
                        cfg.net.thickness, offset=offset)


def _flip_sample(s):
    return synth.Sample(image=s.image[:, :, ::-1].copy(),
                        mask_m=s.mask_m[:, ::-1].copy(),
                        mask_e=s.mask_e[:, ::-1].copy(),
                        mask_r=s.mask_r[:, ::-1].copy(), seed=s.seed)


def _batch(samples):
    images = Tensor(np.stack([s.image for s in samples]))
    return images, GroundTruthBundle.from_samples(samples)


# ---------------------------------------------------------------------------
# training


def save_model(prefix, model):
    io.save_checkpoint(prefix, model.state_arrays())


def load_model(prefix, cfg_net):
    model = CascadeNet(cfg_net, seed=0)
    model.load_state_arrays(io.load_checkpoint(prefix))
    return model


def train(cfg, train_samples=None, log_path=None):
    """Run the training loop; returns (model, final checkpoint prefix).

    Writes a checkpoint per epoch plus the final one, and a CSV log
    with one row per iteration: iter, lr, total loss, then the
    unweighted edge/residual/merge terms per stage.  A non-finite loss
    aborts after dumping the last good state.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if train_samples is None:
        train_samples = _load_or_generate(cfg, "train", cfg.train_count, 0)
    n_train = len(train_samples)
    epoch_len = max(1, (n_train + cfg.batch_size - 1) // cfg.batch_size)

    model = CascadeNet(cfg.net, seed=cfg.seed)
    weights = LossWeights(residual=cfg.net.lambda_residual,
                          edge=cfg.net.lambda_edge,
                          merge=cfg.net.lambda_merge)
    opt = Sgd(model.named_parameters(), momentum=cfg.momentum,
              weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(np.uint64(cfg.seed) + 1)
    flip_rng = np.random.default_rng(np.uint64(cfg.seed) + 2)

    log_path = Path(log_path) if log_path else out / "train_log.csv"
    stage_cols = [f"{kind}[{n}]" for n in range(cfg.net.stages)
                  for kind in ("L_edge", "L_residual", "L_merge")]
    last_good = None
    order = []

    with open(log_path, "w", encoding="utf-8") as log:
        log.write("iter,lr," + ",".join(["L_total"] + stage_cols) + "\n")
        for it in range(cfg.iters):
            if it % epoch_len == 0:
                order = list(shuffle_rng.permutation(n_train))
            base = (it % epoch_len) * cfg.batch_size
            picked = [train_samples[order[(base + j) % n_train]]
                      for j in range(cfg.batch_size)]
            if cfg.flip:
                picked = [_flip_sample(s) if flip_rng.random() < 0.5 else s
                          for s in picked]
            images, gt = _batch(picked)

            components = []
            stages = model(images)
            loss = total_loss(stages, gt, weights, components,
                              edge_at_full_res=cfg.net.edge_loss_at_full_res)
            loss_val = float(loss.data)
            lr = poly_lr(it, cfg.iters, cfg.base_lr, cfg.power)
            row = [f"{it}", f"{lr:.8f}", f"{loss_val:.6f}"]
            for comp in components:
                row += [f"{comp['edge']:.6f}", f"{comp['residual']:.6f}",
                        f"{comp['merge']:.6f}"]
            log.write(",".join(row) + "\n")

            if not np.isfinite(loss_val):
                if last_good is not None:
                    io.save_checkpoint(out / "ckpt_lastgood", last_good)
                raise NumericError(
                    f"non-finite loss {loss_val} at iteration {it}; "
                    "last good checkpoint dumped")
            last_good = {k: v.copy() for k, v in model.state_arrays().items()}

            opt.zero_grad()
            backward(loss)
            opt.step(lr)

            if (it + 1) % epoch_len == 0:
                save_model(out / f"ckpt_epoch{(it + 1) // epoch_len:03d}", model)

    final_prefix = out / "ckpt_final"
    save_model(final_prefix, model)
    return model, final_prefix


# ---------------------------------------------------------------------------
# evaluation


def predict_samples(model, samples, batch_size=8):
    """(masks, fg probabilities) for a list of same-sized samples."""
    masks, probs = [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        images = Tensor(np.stack([s.image for s in chunk]))
        m, p = model.predict(images)
        masks.extend(m)
        probs.extend(p)
    return masks, probs


def evaluate_predictions(pred_masks, prob_maps, samples, workers=1):
    """Per-image metric reports, reduced in index order."""
    def one(i):
        return metrics.evaluate_pair(pred_masks[i], prob_maps[i],
                                     samples[i].mask_m)
    indices = range(len(samples))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, indices))
    return [one(i) for i in indices]


def _overlay(image, mask):
    """Red mask blend plus green predicted contour, as uint8 HWC."""
    img = np.clip(image * 255.0, 0, 255).astype(np.float32)
    out = img.copy()
    fg = mask.astype(bool)
    out[0][fg] = 0.6 * img[0][fg] + 0.4 * 255.0
    out[1][fg] *= 0.6
    out[2][fg] *= 0.6
    edge = contour_mask(mask)
    out[0][edge] = 0.0
    out[1][edge] = 255.0
    out[2][edge] = 0.0
    return np.clip(out, 0, 255).astype(np.uint8).transpose(1, 2, 0)


REPORT_COLUMNS = ("iou_fg", "iou_bg", "miou", "acc", "mae", "ber", "f_beta",
                  "f1_12px", "f1_9px", "f1_5px", "f1_3px")


def _report_row(r):
    return [r.iou_fg, r.iou_bg, r.miou, r.acc, r.mae, r.ber, r.f_beta,
            r.boundary_f1[12], r.boundary_f1[9], r.boundary_f1[5],
            r.boundary_f1[3]]


def write_reports(reports, out_dir, samples=None, pred_masks=None):
    """Per-image CSV, text summary, and optional prediction overlays.

    Summary averages run over images whose ground truth contains both
    classes; single-class images are skipped (noted in the header).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "per_image.csv", "w", encoding="utf-8") as fp:
        fp.write("index," + ",".join(REPORT_COLUMNS) + "\n")
        for i, r in enumerate(reports):
            fp.write(f"{i}," + ",".join(f"{v:.6f}" for v in _report_row(r)) + "\n")
        summary = metrics.summarize(reports)
        fp.write("summary," + ",".join(f"{v:.6f}" for v in _report_row(summary)) + "\n")
    with open(out / "summary.txt", "w", encoding="utf-8") as fp:
        fp.write("# means over images with both classes present\n")
        fp.write(f"{'mIoU':>8} {'Acc':>8} {'mAE':>8} {'mBER':>8} {'Fbeta':>8} "
                 f"{'F1(12px)':>9} {'F1(9px)':>8} {'F1(5px)':>8} {'F1(3px)':>8}\n")
        fp.write(f"{summary.miou * 100:8.2f} {summary.acc * 100:8.2f} "
                 f"{summary.mae:8.3f} {summary.ber:8.2f} {summary.f_beta:8.3f} "
                 f"{summary.boundary_f1[12] * 100:9.2f} "
                 f"{summary.boundary_f1[9] * 100:8.2f} "
                 f"{summary.boundary_f1[5] * 100:8.2f} "
                 f"{summary.boundary_f1[3] * 100:8.2f}\n")
    if samples is not None and pred_masks is not None:
        for i, (s, m) in enumerate(zip(samples, pred_masks)):
            io.write_ppm(out / f"overlay_{i:05d}.ppm", _overlay(s.image, m))
    return summary


def evaluate(model, samples, out_dir=None, workers=1, overlays=False):
    pred_masks, prob_maps = predict_samples(model, samples)
    reports = evaluate_predictions(pred_masks, prob_maps, samples,
                                   workers=workers)
    if out_dir is not None:
        summary = write_reports(reports, out_dir, samples if overlays else None,
                                pred_masks if overlays else None)
    else:
        summary = metrics.summarize(reports)
    return reports, summary


# ---------------------------------------------------------------------------
# ablation


def ablate(cfg, seeds=(0, 1, 2), out_dir=None, variants=VARIANTS):
    """Train/evaluate every variant on shared data; median over seeds.

    The datasets are fixed by cfg.seed while the per-run seeds vary
    weight init and batch order, so variant columns are comparable.
    """
    out = Path(out_dir) if out_dir else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_samples = _load_or_generate(cfg, "train", cfg.train_count, 0)
    val_samples = _load_or_generate(cfg, "val", cfg.val_count, 10_000_000)

    results = {}
    for variant in variants:
        per_seed = []
        for seed in seeds:
            run_cfg = TrainConfig(
                **{f.name: getattr(cfg, f.name) for f in fields(TrainConfig)
                   if f.name not in ("seed", "out_dir", "net")},
                seed=seed,
                out_dir=str(out / f"{variant}_seed{seed}"),
                net=apply_variant(cfg.net, variant))
            model, _ = train(run_cfg, train_samples=train_samples)
            _, summary = evaluate(model, val_samples)
            per_seed.append(summary)
        results[variant] = {
            "miou": statistics.median(s.miou for s in per_seed),
            "mber": statistics.median(s.ber for s in per_seed),
            "mae": statistics.median(s.mae for s in per_seed),
            **{f"f1_{t}px": statistics.median(s.boundary_f1[t] for s in per_seed)
               for t in metrics.BOUNDARY_THRESHOLDS},
        }

    table = format_ablation_table(results)
    with open(out / "ablation.txt", "w", encoding="utf-8") as fp:
        fp.write(table)
    with open(out / "ablation.csv", "w", encoding="utf-8") as fp:
        cols = ["variant", "miou", "mber", "mae"] + \
            [f"f1_{t}px" for t in metrics.BOUNDARY_THRESHOLDS]
        fp.write(",".join(cols) + "\n")
        for variant in variants:
            r = results[variant]
            fp.write(variant + "," + ",".join(
                f"{r[c]:.6f}" for c in cols[1:]) + "\n")
    return results, table


_VARIANT_LABELS = {"baseline": "baseline", "rdm": "+RDM",
                   "rdm_cascade": "+RDM +cascade",
                   "full": "+RDM +cascade +PGM"}


def format_ablation_table(results):
    lines = [f"{'variant':<20} {'mIoU':>7} {'mBER':>7} {'mAE':>7} "
             f"{'F1(12px)':>9} {'F1(9px)':>8} {'F1(5px)':>8} {'F1(3px)':>8}"]
    for variant, r in results.items():
        lines.append(
            f"{_VARIANT_LABELS.get(variant, variant):<20} "
            f"{r['miou'] * 100:7.2f} {r['mber']:7.2f} {r['mae']:7.3f} "
            f"{r['f1_12px'] * 100:9.2f} {r['f1_9px'] * 100:8.2f} "
            f"{r['f1_5px'] * 100:8.2f} {r['f1_3px'] * 100:8.2f}")
    return "\n".join(lines) + "\n"
