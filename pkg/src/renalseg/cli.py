"""renalseg command-line interface."""

from __future__ import annotations

import argparse
import json
import os
import sys

# RENALSEG_THREADS caps numeric-library parallelism; must happen before numpy
# loads its BLAS backend.
if "RENALSEG_THREADS" in os.environ:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, os.environ["RENALSEG_THREADS"])

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .augment import expand_training_set  # noqa: E402
from .dicenet import (TrainConfig, UNet3d, UNet3dSpec, binarize,  # noqa: E402
                      load_checkpoint, predict, save_checkpoint, train)
from .emseg import EmConfig, em_segment  # noqa: E402
from .localizer import LocalizeConfig, localize_and_crop  # noqa: E402
from .metrics import evaluate  # noqa: E402
from .pipeline import (ExperimentConfig, compare_strategies,  # noqa: E402
                       run_strategy)
from .synthkid import PhantomSpec, generate  # noqa: E402
from .volgrid import (read_lab3, read_vol3, write_lab3,  # noqa: E402
                      write_vol3)


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def cmd_synth(args):
    spec_kwargs = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        spec_kwargs["seed"] = args.seed
    spec_kwargs = {k: tuple(v) if isinstance(v, list) else v
                   for k, v in spec_kwargs.items()}
    spec = PhantomSpec(**spec_kwargs)
    os.makedirs(args.outdir, exist_ok=True)
    manifest = {"spec": spec.__dict__, "cases": []}
    for case in generate(spec):
        base = os.path.join(args.outdir, case.case_id)
        write_vol3(case.fa, base + "_fa.vol3")
        write_vol3(case.md, base + "_md.vol3")
        write_lab3(case.truth, base + "_truth.lab3")
        manifest["cases"].append({
            "subject": case.subject_id, "timepoint": case.timepoint,
            "fa": base + "_fa.vol3", "md": base + "_md.vol3",
            "truth": base + "_truth.lab3",
        })
    _dump_json(manifest, os.path.join(args.outdir, "manifest.json"))
    print(f"wrote {len(manifest['cases'])} cases to {args.outdir}")
    return 0


def cmd_emseg(args):
    vol = read_vol3(args.input)
    cfg = EmConfig(num_classes=args.classes, em_iterations=args.iters,
                   mrf_beta=args.beta, kmeans_seed=args.seed)
    result = em_segment(vol, cfg)
    write_lab3(result.labels, args.out)
    if args.diag:
        _dump_json({
            "log_likelihoods": result.log_likelihoods,
            "empty_classes": result.empty_classes,
            "mixture": {
                "means": result.mixture.means.tolist(),
                "variances": result.mixture.variances.tolist(),
                "weights": result.mixture.weights.tolist(),
            },
        }, args.diag)
    print(f"wrote labels to {args.out}")
    return 0


def cmd_localize(args):
    fa = read_vol3(args.fa)
    md = read_vol3(args.md)
    cfg = LocalizeConfig(margin_px=args.margin, class_mode=args.mode,
                         fixed_class=args.fixed_class,
                         projection=args.projection)
    em_cfg = EmConfig(num_classes=args.classes, em_iterations=args.iters,
                      mrf_beta=args.beta)
    cropped, box = localize_and_crop(fa, md, cfg, em_cfg)
    write_vol3(cropped, args.out_crop)
    _dump_json({"x0": box.x0, "x1": box.x1, "y0": box.y0, "y1": box.y1,
                "mode": cfg.projection, "class_mode": cfg.class_mode},
               args.out_box)
    print(f"box ({box.x0}..{box.x1}, {box.y0}..{box.y1}) -> {args.out_crop}")
    return 0


def cmd_augment(args):
    vol = read_vol3(args.input)
    mask = read_lab3(args.mask)
    ref = read_vol3(args.ref)
    os.makedirs(args.outdir, exist_ok=True)
    manifest = []
    for i, aug in enumerate(expand_training_set([(vol, mask)], ref)):
        vpath = os.path.join(args.outdir, f"aug{i:03d}.vol3")
        mpath = os.path.join(args.outdir, f"aug{i:03d}.lab3")
        write_vol3(aug.vol, vpath)
        write_lab3(aug.mask, mpath)
        manifest.append({"vol": vpath, "mask": mpath,
                         "contrast": aug.contrast, "geometry": aug.geometry})
    _dump_json(manifest, os.path.join(args.outdir, "manifest.json"))
    print(f"wrote {len(manifest)} variants to {args.outdir}")
    return 0


def cmd_train(args):
    cfg = _load_json(args.config)
    pairs = [(read_vol3(v), read_lab3(m)) for v, m in cfg["pairs"]]
    dims = pairs[0][0].dims
    unet_kwargs = cfg.get("unet", {})
    unet_kwargs.setdefault("input_dhw", (dims[2], dims[1], dims[0]))
    unet_kwargs["input_dhw"] = tuple(unet_kwargs["input_dhw"])
    net = UNet3d(UNet3dSpec(**unet_kwargs))
    trace = train(net, pairs, TrainConfig(**cfg.get("train", {})))
    save_checkpoint(net, cfg["checkpoint"])
    print(f"final epoch loss {trace.epoch_losses[-1]:.4f} "
          f"-> {cfg['checkpoint']}")
    return 0


def cmd_predict(args):
    net = load_checkpoint(args.checkpoint)
    vol = read_vol3(args.input)
    soft = predict(net, vol)
    write_vol3(soft, args.out)
    if args.out_mask:
        write_lab3(binarize(soft, args.threshold), args.out_mask)
    print(f"wrote prediction to {args.out}")
    return 0


def cmd_eval(args):
    pred = read_lab3(args.pred)
    truth = read_lab3(args.truth)
    m = evaluate(pred, truth, case_id=args.pred)
    out = {"dsc": m.dsc, "vd": m.vd, "ppv": m.ppv}
    if args.out:
        _dump_json(out, args.out)
    print(json.dumps(out))
    return 0


def cmd_run(args):
    cfg = ExperimentConfig.from_dict(_load_json(args.config))
    manifest, report = run_strategy(cfg)
    fold_errors = [e for r in manifest["folds"] for e in r["errors"]]
    if report["summary"]:
        print(json.dumps(report["summary"], indent=2))
    if fold_errors:
        print(f"{len(fold_errors)} fold error(s)", file=sys.stderr)
        return 1
    return 0


def cmd_compare(args):
    reports = [_load_json(p) for p in args.reports]
    merged = compare_strategies(reports)
    if args.out:
        _dump_json(merged, args.out)
    print(json.dumps(merged, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="renalseg",
        description="Kidney segmentation: EM localization + reduced 3D U-Net")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom cases")
    p.add_argument("--config", help="JSON file with PhantomSpec fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("emseg", help="EM segmentation of one volume")
    p.add_argument("--input", required=True)
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--iters", type=int, default=7)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--diag")
    p.set_defaults(func=cmd_emseg)

    p = sub.add_parser("localize", help="detect the kidney box and crop")
    p.add_argument("--fa", required=True)
    p.add_argument("--md", required=True)
    p.add_argument("--margin", type=int, default=5)
    p.add_argument("--mode", default="auto", choices=["auto", "fixed"])
    p.add_argument("--fixed-class", type=int, default=0)
    p.add_argument("--projection", default="max_z",
                   choices=["max_z", "central_slice"])
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--iters", type=int, default=7)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--out-box", required=True)
    p.add_argument("--out-crop", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("augment", help="10x expansion of one training pair")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a U-Net from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run a checkpoint on one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-mask")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="DSC/VD/PPV of a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run one strategy end to end")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="merge strategy reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
