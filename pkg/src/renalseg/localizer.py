"""Kidney detection: EM class selection, projection, margin expansion, cropping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .emseg import EmConfig, EmResult, GaussianMixture, em_segment
from .errors import LocalizationError
from .volgrid import (DetectionBox, LabelVolume, Volume3, crop, project_max_z,
                      resize_trilinear)

CROP_TARGET = (64, 64, 16)


@dataclass(frozen=True)
class LocalizeConfig:
    margin_px: int = 5
    class_mode: str = "auto"            # "auto" (lowest in-band mean) or "fixed"
    fixed_class: int = 0
    projection: str = "max_z"           # "max_z" or "central_slice"
    volume_band: tuple[float, float] = (0.005, 0.15)
    min_blob_area: int = 1

    def __post_init__(self):
        if self.margin_px < 0:
            raise ValueError("margin_px must be >= 0")
        if self.class_mode not in ("auto", "fixed"):
            raise ValueError(f"unknown class_mode {self.class_mode!r}")
        if self.projection not in ("max_z", "central_slice"):
            raise ValueError(f"unknown projection {self.projection!r}")


def select_kidney_class(labels: LabelVolume, mixture: GaussianMixture,
                        cfg: LocalizeConfig) -> int:
    """Pick the kidney tissue class from a mean-sorted mixture.

    Auto mode walks classes from the lowest mean upward and returns the first
    whose voxel count falls inside the plausibility band; classes that are too
    small (specks) or too large (background) are skipped.
    """
    if cfg.class_mode == "fixed":
        return cfg.fixed_class
    counts = np.bincount(labels.labels.ravel(), minlength=labels.num_classes)
    total = labels.labels.size
    lo, hi = cfg.volume_band
    for k in range(labels.num_classes):
        frac = counts[k] / total
        if lo <= frac <= hi:
            return k
    raise LocalizationError(
        f"no class with volume fraction in [{lo}, {hi}] "
        f"(fractions: {np.round(counts / total, 4).tolist()})")


def _mask_to_box(mask2d: np.ndarray, margin: int, nx: int, ny: int,
                 min_area: int = 1) -> DetectionBox:
    if int(mask2d.sum()) < max(min_area, 1):
        raise LocalizationError("projected mask is empty")
    xs, ys = np.nonzero(mask2d)
    box = DetectionBox(int(xs.min()), int(xs.max()), int(ys.min()), int(ys.max()))
    return box.expanded(margin).clamped(nx, ny)


def detect_box(labels: LabelVolume, class_index: int,
               cfg: LocalizeConfig) -> DetectionBox:
    """Bounding box of the projected class mask, margin-expanded and clamped."""
    nx, ny, nz = labels.dims
    if cfg.projection == "central_slice":
        mask2d = labels.labels[:, :, nz // 2] == class_index
    else:
        mask2d = project_max_z(labels, class_index)
    return _mask_to_box(mask2d, cfg.margin_px, nx, ny, cfg.min_blob_area)


def largest_component_box(vol: Volume3, threshold: float,
                          margin: int) -> DetectionBox:
    """In-plane box around the largest 3D 6-connected component above threshold."""
    fg = vol.data >= threshold
    if not fg.any():
        raise LocalizationError(f"no voxel >= threshold {threshold}")
    comp, n_comp = ndimage.label(fg)
    sizes = np.bincount(comp.ravel())
    sizes[0] = 0
    biggest = comp == int(sizes.argmax())
    nx, ny, _ = vol.dims
    return _mask_to_box(biggest.any(axis=2), margin, nx, ny)


def largest_component_mask(labels: LabelVolume, class_index: int) -> np.ndarray:
    """Boolean mask of the largest 3D 6-connected component of one class."""
    fg = labels.labels == class_index
    if not fg.any():
        raise LocalizationError(f"class {class_index} is empty")
    comp, _ = ndimage.label(fg)
    sizes = np.bincount(comp.ravel())
    sizes[0] = 0
    return comp == int(sizes.argmax())


def localize(fa: Volume3, cfg: LocalizeConfig, em_cfg: EmConfig):
    """EM-segment the FA channel and return (box, em_result, class_index)."""
    result = em_segment(fa, em_cfg)
    class_index = select_kidney_class(result.labels, result.mixture, cfg)
    box = detect_box(result.labels, class_index, cfg)
    return box, result, class_index


def localize_and_crop(fa: Volume3, md: Volume3, cfg: LocalizeConfig,
                      em_cfg: EmConfig,
                      target: tuple[int, int, int] = CROP_TARGET):
    """Full localization chain: EM on FA, box detection, crop+resize of MD.

    Returns the resized MD crop and the box so that truth masks can be cropped
    identically by the caller.
    """
    if fa.dims != md.dims:
        raise ValueError(f"fa dims {fa.dims} != md dims {md.dims}")
    box, _, _ = localize(fa, cfg, em_cfg)
    return resize_trilinear(crop(md, box), target), box
