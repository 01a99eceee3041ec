"""Command-line driver.

Subcommands: gen-data, train, eval, ablate, viz, gradcheck.
Exit codes: 0 ok, 1 usage error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checks, io, synth
from .config import config_from_text, config_to_text, load_config
from .rdm import pca_project
from .tensor import NumericError, Tensor, no_grad
from .train import TrainConfig, ablate, evaluate, load_model, train

USAGE_ERROR = 1
NUMERIC_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser():
    parser = _Parser(prog="boundaryseg",
                     description="boundary-enhanced glass segmentation, desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset split")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--thickness", type=int, default=synth.DEFAULT_THICKNESS)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="output directory (overrides config)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset dir")
    p.add_argument("--ckpt", required=True, help="checkpoint prefix")
    p.add_argument("--data", required=True, help="dataset split directory")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ablate", help="run the component ablation")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")

    p = sub.add_parser("viz", help="dump PCA panels of the edge features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True,
                   help="scene seed (int) or a .ppm image path")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("gradcheck", help="finite-difference op verification")
    p.add_argument("--op", help="single op name (default: all)")
    return parser


def _load_train_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "out", None):
        from dataclasses import replace
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _cmd_gen_data(args):
    seeds = [args.seed * 1_000_000 + i for i in range(args.count)]
    out = synth.write_dataset(args.out, args.split, seeds, size=args.size,
                              n_objects=args.objects, thickness=args.thickness)
    print(f"wrote {args.count} samples to {out}")
    return 0


def _cmd_train(args):
    cfg = _load_train_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.txt", "w", encoding="utf-8") as fp:
        fp.write(config_to_text(cfg))
    _, prefix = train(cfg)
    print(f"final checkpoint: {prefix}")
    return 0


def _cmd_eval(args):
    data_dir = Path(args.data)
    ckpt = Path(args.ckpt)
    cfg_path = ckpt.parent / "config.txt"
    if cfg_path.exists():
        with open(cfg_path, "r", encoding="utf-8") as fp:
            cfg = config_from_text(fp.read())
    else:
        cfg = TrainConfig()
    samples = synth.load_dataset(data_dir, thickness=cfg.net.thickness)
    model = load_model(ckpt, cfg.net)
    _, summary = evaluate(model, samples, out_dir=args.out,
                          workers=args.workers, overlays=True)
    print(f"mIoU {summary.miou * 100:.2f}  mBER {summary.ber:.2f}  "
          f"mAE {summary.mae:.3f}  F1(3px) {summary.boundary_f1[3] * 100:.2f}")
    return 0


def _cmd_ablate(args):
    cfg = _load_train_config(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    _, table = ablate(cfg, seeds=seeds, out_dir=args.out)
    print(table, end="")
    return 0


def _cmd_viz(args):
    ckpt = Path(args.ckpt)
    cfg_path = ckpt.parent / "config.txt"
    if cfg_path.exists():
        with open(cfg_path, "r", encoding="utf-8") as fp:
            cfg = config_from_text(fp.read())
    else:
        cfg = TrainConfig()
    model = load_model(ckpt, cfg.net)
    try:
        seed = int(args.sample)
        image = synth.gen_scene(seed, size=args.size).image
    except ValueError:
        image = io.read_ppm(args.sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    with no_grad():
        stages = model(Tensor(image[None]))
    wrote = []
    for n, stage in enumerate(stages):
        if stage.f_edge is None:
            continue
        panel = pca_project(stage.f_edge.data[0])
        path = out / f"edge_pca_stage{n}.ppm"
        io.write_ppm(path, panel)
        wrote.append(str(path))
    if not wrote:
        print("model has no edge features to visualize (plain decoder)")
        return 0
    print("\n".join(wrote))
    return 0


def _cmd_gradcheck(args):
    names = [args.op] if args.op else None
    try:
        results = checks.run_checks(names)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return USAGE_ERROR
    failed = False
    for name, (err, tol) in results.items():
        status = "ok" if err < tol else "FAIL"
        if err >= tol:
            failed = True
        print(f"{name:<22} max rel err {err:.3e}  (tol {tol:.0e})  {status}")
    return NUMERIC_ERROR if failed else 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_ERROR
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "viz": _cmd_viz,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
