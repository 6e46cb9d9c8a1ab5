"""Experiment orchestration: the five segmentation strategies with
leave-subjects-out evaluation on generated phantoms."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .augment import expand_training_set, upscale_z_5x, upscale_z_5x_labels
from .dicenet import (TrainConfig, UNet3d, UNet3dSpec, binarize, predict,
                      save_checkpoint, train)
from .emseg import EmConfig, em_segment
from .errors import LocalizationError, RenalsegError
from .localizer import (LocalizeConfig, detect_box, largest_component_box,
                        largest_component_mask, select_kidney_class)
from .metrics import CaseMetrics, aggregate, evaluate, format_table
from .synthkid import (PhantomCase, PhantomSpec, generate, mix_seed,
                       reference_volume, split_by_subject)
from .volgrid import (DetectionBox, LabelVolume, Volume3, crop, crop_labels,
                      resize_nearest_labels, resize_trilinear)

STRATEGIES = ("unet_raw", "cc_unet", "em_only", "proposed", "proposed_sr")
EXPECTED_ORDER = ("proposed", "em_only", "cc_unet", "unet_raw")
CROP_DIMS = (64, 64, 16)
CROP_DIMS_SR = (64, 64, 64)


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str
    phantom: PhantomSpec = PhantomSpec()
    em: EmConfig = EmConfig()
    localize: LocalizeConfig = LocalizeConfig()
    # Pipeline-scale training defaults; module-level TrainConfig defaults are
    # heavier than a desk run of 50 folds can afford.
    train: TrainConfig = TrainConfig(epochs=5, learning_rate=0.01)
    out_dir: str = "runs"
    master_seed: int = 0
    n_folds: int = 5
    full_loao: bool = False
    augment_training: bool = False
    reference_seed: int = 7

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, "
                             f"got {self.strategy!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key, cls in (("phantom", PhantomSpec), ("em", EmConfig),
                         ("localize", LocalizeConfig), ("train", TrainConfig)):
            if key in d and isinstance(d[key], dict):
                sub = {k: tuple(v) if isinstance(v, list) else v
                       for k, v in d[key].items()}
                d[key] = cls(**sub)
        return ExperimentConfig(**d)


def config_hash(cfg: ExperimentConfig, include_strategy: bool = False) -> str:
    """Hash of the data-defining parts of the config, for comparability checks."""
    d = cfg.to_dict()
    if not include_strategy:
        d.pop("strategy")
        d.pop("out_dir")
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def otsu_threshold(data: np.ndarray, bins: int = 256) -> float:
    """Classic between-class-variance maximizing threshold."""
    hist, edges = np.histogram(data.ravel(), bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2
    w = hist.astype(np.float64)
    total = w.sum()
    cum_w = np.cumsum(w)
    cum_m = np.cumsum(w * centers)
    mean_all = cum_m[-1] / total
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mean_all * cum_w - cum_m) ** 2 / (cum_w * (total - cum_w))
    between[~np.isfinite(between)] = -1.0
    return float(centers[int(np.argmax(between))])


def fold_subjects(n_subjects: int, n_folds: int, full_loao: bool) -> list[int]:
    if full_loao:
        return list(range(n_subjects))
    n_folds = min(n_folds, n_subjects)
    return [i * n_subjects // n_folds for i in range(n_folds)]


def _binary_label(mask: np.ndarray, spacing) -> LabelVolume:
    return LabelVolume(mask.astype(np.uint8), 2, spacing)


def _uncrop_prediction(pred_crop: LabelVolume, box: DetectionBox,
                       full_dims, spacing) -> LabelVolume:
    """Nearest-resize a crop-grid prediction back into the full grid."""
    nz = full_dims[2]
    back = resize_nearest_labels(pred_crop, (box.shape2d[0], box.shape2d[1], nz))
    full = np.zeros(full_dims, dtype=np.uint8)
    full[box.x0:box.x1 + 1, box.y0:box.y1 + 1, :] = back.labels
    return LabelVolume(full, 2, spacing)


# ---------------------------------------------------------------------------
# Per-strategy case preparation
# ---------------------------------------------------------------------------

def _em_box(case: PhantomCase, cfg: ExperimentConfig):
    result = em_segment(case.fa, cfg.em)
    class_index = select_kidney_class(result.labels, result.mixture, cfg.localize)
    box = detect_box(result.labels, class_index, cfg.localize)
    return box, result, class_index


def _prepare_case(case: PhantomCase, cfg: ExperimentConfig, strategy: str):
    """Returns (net_input: Volume3, net_truth: LabelVolume, context dict)."""
    if strategy == "unet_raw":
        vol = resize_trilinear(case.md, CROP_DIMS)
        truth = resize_nearest_labels(case.truth, CROP_DIMS)
        return vol, truth, {}
    if strategy == "cc_unet":
        thr = otsu_threshold(case.md.data)
        box = largest_component_box(case.md, thr, cfg.localize.margin_px)
        vol = resize_trilinear(crop(case.md, box), CROP_DIMS)
        truth = resize_nearest_labels(crop_labels(case.truth, box), CROP_DIMS)
        return vol, truth, {"box": box}
    if strategy == "proposed":
        box, _, class_index = _em_box(case, cfg)
        vol = resize_trilinear(crop(case.md, box), CROP_DIMS)
        truth = resize_nearest_labels(crop_labels(case.truth, box), CROP_DIMS)
        return vol, truth, {"box": box, "em_class": class_index}
    if strategy == "proposed_sr":
        box, _, class_index = _em_box(case, cfg)
        md_sr = upscale_z_5x(case.md)
        truth_sr = upscale_z_5x_labels(case.truth)
        vol = resize_trilinear(crop(md_sr, box), CROP_DIMS_SR)
        truth = resize_nearest_labels(crop_labels(truth_sr, box), CROP_DIMS_SR)
        return vol, truth, {"box": box, "em_class": class_index,
                            "sr_dims": md_sr.dims}
    raise ValueError(f"strategy {strategy!r} has no network preparation")


def _predict_full(net: UNet3d, case: PhantomCase, ctx: dict,
                  cfg: ExperimentConfig, strategy: str) -> LabelVolume:
    if strategy == "unet_raw":
        soft = predict(net, resize_trilinear(case.md, CROP_DIMS))
        pred_crop = binarize(soft)
        return resize_nearest_labels(pred_crop, case.md.dims)
    box = ctx["box"]
    if strategy == "proposed_sr":
        md_sr = upscale_z_5x(case.md)
        soft = predict(net, resize_trilinear(crop(md_sr, box), CROP_DIMS_SR))
        pred_sr = _uncrop_prediction(binarize(soft), box, md_sr.dims, md_sr.spacing)
        return resize_nearest_labels(pred_sr, case.md.dims)
    soft = predict(net, resize_trilinear(crop(case.md, box), CROP_DIMS))
    return _uncrop_prediction(binarize(soft), box, case.md.dims, case.md.spacing)


def _em_only_prediction(case: PhantomCase, cfg: ExperimentConfig) -> LabelVolume:
    """EM class map restricted to its largest 3D connected component."""
    result = em_segment(case.fa, cfg.em)
    class_index = select_kidney_class(result.labels, result.mixture, cfg.localize)
    mask = largest_component_mask(result.labels, class_index)
    return _binary_label(mask, case.fa.spacing)


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def run_strategy(cfg: ExperimentConfig):
    """Execute one strategy over all folds; returns (manifest, report)."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    t_start = time.time()
    phantom = replace(cfg.phantom, seed=mix_seed(cfg.master_seed, 1))
    cases = generate(phantom)
    holdouts = fold_subjects(phantom.n_subjects, cfg.n_folds, cfg.full_loao)

    needs_net = cfg.strategy != "em_only"
    prepared = {}
    errors = []
    if needs_net:
        for case in cases:
            try:
                prepared[case.case_id] = _prepare_case(case, cfg, cfg.strategy)
            except RenalsegError as e:
                errors.append({"case": case.case_id, "stage": "prepare",
                               "error": str(e)})

    all_metrics: list[CaseMetrics] = []
    fold_records = []
    for fold_idx, held_out in enumerate(holdouts):
        record = {"fold": fold_idx, "held_out_subject": held_out,
                  "train_cases": [], "test_cases": [], "errors": []}
        try:
            train_cases, test_cases = split_by_subject(cases, held_out)
            record["train_cases"] = [c.case_id for c in train_cases]
            record["test_cases"] = [c.case_id for c in test_cases]

            if cfg.strategy == "em_only":
                for case in test_cases:
                    try:
                        pred = _em_only_prediction(case, cfg)
                        all_metrics.append(evaluate(
                            pred, case.truth, case.case_id, cfg.strategy))
                    except RenalsegError as e:
                        record["errors"].append(
                            {"case": case.case_id, "error": str(e)})
            else:
                pairs = [(prepared[c.case_id][0], prepared[c.case_id][1])
                         for c in train_cases if c.case_id in prepared]
                if cfg.augment_training:
                    ref = reference_volume(cfg.reference_seed)
                    ref = resize_trilinear(
                        ref, pairs[0][0].dims) if ref.dims != pairs[0][0].dims else ref
                    pairs = [(a.vol, a.mask)
                             for a in expand_training_set(pairs, ref)]
                input_dhw = (pairs[0][0].dims[2], pairs[0][0].dims[1],
                             pairs[0][0].dims[0])
                net = UNet3d(UNet3dSpec(
                    input_dhw=input_dhw,
                    param_seed=mix_seed(cfg.master_seed, 1000 + fold_idx)))
                fold_train_cfg = replace(
                    cfg.train, seed=mix_seed(cfg.master_seed, 2000 + fold_idx))
                trace = train(net, pairs, fold_train_cfg)
                record["final_train_loss"] = trace.epoch_losses[-1]
                ckpt = os.path.join(
                    cfg.out_dir, f"{cfg.strategy}_fold{fold_idx}.un3d")
                save_checkpoint(net, ckpt)
                record["checkpoint"] = ckpt

                for case in test_cases:
                    if case.case_id not in prepared:
                        record["errors"].append(
                            {"case": case.case_id, "error": "prepare failed"})
                        continue
                    ctx = prepared[case.case_id][2]
                    pred = _predict_full(net, case, ctx, cfg, cfg.strategy)
                    all_metrics.append(evaluate(
                        pred, case.truth, case.case_id, cfg.strategy))
        except RenalsegError as e:
            record["errors"].append({"fold": fold_idx, "error": str(e)})
        fold_records.append(record)

    summary_all = aggregate(all_metrics) if all_metrics else {}
    report = {
        "strategy": cfg.strategy,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "summary": summary_all.get(cfg.strategy, {}),
        "cases": [asdict(m) for m in sorted(
            all_metrics, key=lambda m: m.case_id)],
        "folds": [{"fold": r["fold"], "held_out_subject": r["held_out_subject"],
                   "n_test": len(r["test_cases"]),
                   "errors": r["errors"]} for r in fold_records],
    }
    manifest = {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "strategy": cfg.strategy,
        "prepare_errors": errors,
        "folds": fold_records,
        "elapsed_seconds": time.time() - t_start,
    }
    report_path = os.path.join(cfg.out_dir, f"report_{cfg.strategy}.json")
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(cfg.out_dir, f"report_{cfg.strategy}.txt"), "w") as f:
        if all_metrics:
            f.write(format_table(summary_all) + "\n")
    with open(os.path.join(cfg.out_dir, f"manifest_{cfg.strategy}.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return manifest, report


def compare_strategies(reports: list[dict]) -> dict:
    """Merge per-strategy reports into one DSC-sorted table.

    Reports must come from the same phantom/config family; any mean-DSC
    ordering that contradicts the expected qualitative ranking
    (proposed >= em_only >= cc_unet >= unet_raw) is flagged.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    hashes = {r["config_hash"] for r in reports}
    if len(hashes) != 1:
        raise ValueError(f"reports are not comparable: config hashes {hashes}")
    means = {r["strategy"]: r["summary"]["dsc"]["mean"] for r in reports}
    ordered = sorted(means, key=lambda s: -means[s])
    flags = []
    present = [s for s in EXPECTED_ORDER if s in means]
    for hi, lo in zip(present, present[1:]):
        if means[hi] < means[lo]:
            flags.append(f"mean DSC of {hi} ({means[hi]:.3f}) is below "
                         f"{lo} ({means[lo]:.3f})")
    return {
        "order": ordered,
        "mean_dsc": {s: means[s] for s in ordered},
        "summaries": {r["strategy"]: r["summary"] for r in reports},
        "ordering_flags": flags,
    }
