"""Training-set expansion: histogram matching, flips/rotations, z-upscaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .volgrid import (LabelVolume, Volume3, flip_lr, flip_ud, rot90_xy)

DEFAULT_BINS = 256

# Variant lattice: {original, histogram-matched} x five geometric transforms.
GEOMETRIC_VARIANTS = ("identity", "rot90", "fliplr", "flipud", "rot90_fliplr")
CONTRAST_VARIANTS = ("original", "matched")


def _apply_geometry(obj, name: str):
    if name == "identity":
        return obj
    if name == "rot90":
        return rot90_xy(obj)
    if name == "fliplr":
        return flip_lr(obj)
    if name == "flipud":
        return flip_ud(obj)
    if name == "rot90_fliplr":
        return rot90_xy(flip_lr(obj))
    raise ValueError(f"unknown geometric variant {name!r}")


def histogram_match(src: Volume3, ref: Volume3, bins: int = DEFAULT_BINS) -> Volume3:
    """Map src intensities through CDF_ref^-1 o CDF_src.

    Both CDFs are piecewise-linear over `bins` equal-width bins, so the map is
    monotone and self-matching moves nothing by more than one bin width.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    s = src.data.ravel()
    r = ref.data.ravel()
    if s.min() == s.max() or r.min() == r.max():
        raise DegenerateInputError("histogram matching needs non-constant volumes")

    def cdf_edges(x):
        hist, edges = np.histogram(x, bins=bins, range=(x.min(), x.max()))
        cdf = np.concatenate([[0.0], np.cumsum(hist)]) / x.size
        return cdf, edges

    s_cdf, s_edges = cdf_edges(s)
    r_cdf, r_edges = cdf_edges(r)
    quantiles = np.interp(s, s_edges, s_cdf)
    mapped = np.interp(quantiles, r_cdf, r_edges)
    out = mapped.reshape(src.dims).astype(np.float32)
    return Volume3(out, src.spacing)


@dataclass(frozen=True)
class AugmentedCase:
    vol: Volume3
    mask: LabelVolume
    source_index: int
    contrast: str
    geometry: str


def expand_training_set(cases, ref: Volume3, bins: int = DEFAULT_BINS):
    """10x expansion: 2 contrasts x 5 geometric variants per input case.

    Labels only undergo the geometric transform. Output order is deterministic:
    cases in input order, contrasts then geometries in lattice order.
    """
    if not cases:
        raise ValueError("no cases to expand")
    out = []
    for idx, (vol, mask) in enumerate(cases):
        contrasts = {
            "original": vol,
            "matched": histogram_match(vol, ref, bins),
        }
        for cname in CONTRAST_VARIANTS:
            cvol = contrasts[cname]
            for gname in GEOMETRIC_VARIANTS:
                out.append(AugmentedCase(
                    vol=_apply_geometry(cvol, gname),
                    mask=_apply_geometry(mask, gname),
                    source_index=idx,
                    contrast=cname,
                    geometry=gname,
                ))
    return out


def upscale_z_5x(vol: Volume3) -> Volume3:
    """5x through-plane upscaling by corner-aligned linear interpolation.

    Interpolation stand-in for learned super resolution; in-plane dims are
    untouched and the z spacing shrinks 5x.
    """
    nx, ny, nz = vol.dims
    if nz < 2:
        raise DegenerateInputError("upscale_z_5x needs at least 2 slices")
    target_nz = 5 * nz
    pos = np.arange(target_nz) * (nz - 1) / (target_nz - 1)
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, nz - 1)
    i1 = np.minimum(i0 + 1, nz - 1)
    frac = (pos - i0).astype(np.float32)
    data = vol.data[:, :, i0] * (1.0 - frac) + vol.data[:, :, i1] * frac
    sx, sy, sz = vol.spacing
    return Volume3(data.astype(np.float32), (sx, sy, sz / 5.0))


def upscale_z_5x_labels(lab: LabelVolume) -> LabelVolume:
    """Nearest-neighbor companion of upscale_z_5x for categorical masks."""
    nx, ny, nz = lab.dims
    if nz < 2:
        raise DegenerateInputError("upscale_z_5x needs at least 2 slices")
    target_nz = 5 * nz
    pos = np.arange(target_nz) * (nz - 1) / (target_nz - 1)
    idx = np.clip(np.rint(pos).astype(np.intp), 0, nz - 1)
    sx, sy, sz = lab.spacing
    return LabelVolume(lab.labels[:, :, idx], lab.num_classes, (sx, sy, sz / 5.0))
