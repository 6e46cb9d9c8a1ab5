"""Deterministic kidney-like phantom generator.

Each case is a paired FA-like / MD-like volume plus a binary truth mask.
The FA channel carries a tight low-intensity kidney band against several
brighter tissue bands, so a mixture classifier can isolate the kidney.
The MD channel carries the kidney at a distinct bright mean plus distractor
blobs that share that mean but sit away from the kidneys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PhantomSpecError
from .volgrid import LabelVolume, Volume3

# Intensity design (pre-noise). Kidney FA band is deliberately tight and far
# below the background bands; MD distractors share the kidney MD band.
FA_BASE = 0.45
FA_BASE_GRAD = 0.06
FA_STRUCTURES = (0.58, 0.68, 0.80)
FA_STRUCT_GRAD = 0.05
FA_KIDNEY = 0.06
FA_KIDNEY_GRAD = 0.01

MD_BASE = 0.30
MD_BASE_GRAD = 0.05
MD_STRUCTURE = 0.40
MD_STRUCT_GRAD = 0.03
MD_KIDNEY = 0.85
MD_KIDNEY_GRAD = 0.02


def splitmix64(x: int) -> int:
    """One step of the splitmix64 sequence; used to derive child seeds."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def mix_seed(seed: int, index: int) -> int:
    return splitmix64((seed ^ splitmix64(index)) & 0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    dims: tuple[int, int, int] = (110, 110, 15)
    spacing: tuple[float, float, float] = (0.2, 0.2, 1.0)
    n_subjects: int = 15
    timepoints_per_subject: int = 4
    kidney_volume_range: tuple[int, int] = (1500, 8000)
    noise_sigma: float = 0.05
    distractor_count_range: tuple[int, int] = (2, 4)

    def __post_init__(self):
        if min(self.dims) < 1:
            raise ValueError(f"dims must be positive, got {self.dims}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_subjects < 1 or self.timepoints_per_subject < 1:
            raise ValueError("need at least one subject and one timepoint")


@dataclass(frozen=True)
class PhantomCase:
    subject_id: int
    timepoint: int
    fa: Volume3
    md: Volume3
    truth: LabelVolume

    @property
    def case_id(self) -> str:
        return f"s{self.subject_id:02d}_t{self.timepoint}"


def _coord_grids(dims):
    nx, ny, nz = dims
    x = np.arange(nx, dtype=np.float32)[:, None, None]
    y = np.arange(ny, dtype=np.float32)[None, :, None]
    z = np.arange(nz, dtype=np.float32)[None, None, :]
    return x, y, z


def _ellipsoid_mask(dims, center, axes, theta):
    """Boolean mask of an in-plane-rotated ellipsoid."""
    x, y, z = _coord_grids(dims)
    cx, cy, cz = center
    a, b, c = axes
    ct, st = np.cos(theta), np.sin(theta)
    u = (x - cx) * ct + (y - cy) * st
    v = -(x - cx) * st + (y - cy) * ct
    return (u / a) ** 2 + (v / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0


def _inplane_halfwidths(a, b, theta):
    rx = np.sqrt((a * np.cos(theta)) ** 2 + (b * np.sin(theta)) ** 2)
    ry = np.sqrt((a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2)
    return rx, ry


def _sample_kidney(rng, dims, side):
    nx, ny, nz = dims
    a = rng.uniform(10.0, 15.0)
    b = rng.uniform(7.0, 11.0)
    c = rng.uniform(3.2, min(5.0, max(1.0, nz / 2 - 1.5)))
    theta = rng.uniform(-0.44, 0.44)
    lo, hi = (0.28, 0.36) if side == 0 else (0.64, 0.72)
    cx = rng.uniform(lo * nx, hi * nx)
    cy = rng.uniform(0.42 * ny, 0.58 * ny)
    cz = (nz - 1) / 2 + rng.uniform(-1.0, 1.0)
    rx, ry = _inplane_halfwidths(a, b, theta)
    if cx - rx < 0 or cx + rx > nx - 1 or cy - ry < 0 or cy + ry > ny - 1 \
            or cz - c < 0 or cz + c > nz - 1:
        raise PhantomSpecError(
            f"kidney ellipsoid (axes {a:.1f},{b:.1f},{c:.1f}) does not fit in grid {dims}"
        )
    return (cx, cy, cz), (a, b, c), theta


def _axis_grad(dims, axis):
    n = dims[axis]
    g = (np.arange(n, dtype=np.float32) / max(n - 1, 1))
    shape = [1, 1, 1]
    shape[axis] = n
    return g.reshape(shape)


def _generate_case(spec: PhantomSpec, subject: int, timepoint: int) -> PhantomCase:
    dims = spec.dims
    nx, ny, nz = dims
    case_seed = mix_seed(mix_seed(spec.seed, subject), timepoint)
    rng = np.random.default_rng(case_seed)
    rng_noise = np.random.default_rng(mix_seed(case_seed, 0x5EED))

    gx, gy, gz = (_axis_grad(dims, i) for i in range(3))

    # Kidneys (geometry first, noise last, so a noiseless rerun matches exactly).
    kidneys = [_sample_kidney(rng, dims, side) for side in (0, 1)]
    kid_masks = [_ellipsoid_mask(dims, *k) for k in kidneys]
    truth = kid_masks[0] | kid_masks[1]

    n_truth = int(truth.sum())
    lo, hi = spec.kidney_volume_range
    if not lo <= n_truth <= hi:
        raise PhantomSpecError(
            f"kidney volume {n_truth} outside range {spec.kidney_volume_range}"
        )

    # Background tissue structures, shared by both channels.
    structures = []
    for _ in FA_STRUCTURES:
        a = rng.uniform(8.0, 18.0)
        b = rng.uniform(8.0, 18.0)
        c = rng.uniform(2.0, max(2.0, nz / 2))
        theta = rng.uniform(0, np.pi)
        cx = rng.uniform(0.15 * nx, 0.85 * nx)
        cy = rng.uniform(0.15 * ny, 0.85 * ny)
        cz = rng.uniform(0.3 * nz, 0.7 * nz)
        structures.append(_ellipsoid_mask(dims, (cx, cy, cz), (a, b, c), theta))

    # MD distractors: kidney-like blobs away from both kidneys.
    n_distract = int(rng.integers(spec.distractor_count_range[0],
                                  spec.distractor_count_range[1] + 1))
    kid_centers = [np.array(k[0][:2]) for k in kidneys]
    distractors = []
    for _ in range(n_distract):
        for _attempt in range(200):
            a = rng.uniform(8.0, 13.0)
            b = rng.uniform(6.0, 10.0)
            c = rng.uniform(2.5, max(2.5, nz / 2 - 1))
            theta = rng.uniform(-0.5, 0.5)
            cx = rng.uniform(0.12 * nx, 0.88 * nx)
            cy = rng.uniform(0.12 * ny, 0.88 * ny)
            cz = (nz - 1) / 2 + rng.uniform(-1.5, 1.5)
            center = np.array([cx, cy])
            # Keep distractors clear of the kidney detection area.
            if all(np.linalg.norm(center - kc) > 34.0 for kc in kid_centers):
                distractors.append(
                    _ellipsoid_mask(dims, (cx, cy, cz), (a, b, c), theta))
                break

    # FA channel: kidney band painted last so truth voxels always carry it.
    fa = FA_BASE + FA_BASE_GRAD * gx + np.zeros(dims, dtype=np.float32)
    for mask, level in zip(structures, FA_STRUCTURES):
        fa[mask] = (level + FA_STRUCT_GRAD * np.broadcast_to(gy, dims))[mask]
    fa[truth] = (FA_KIDNEY + FA_KIDNEY_GRAD * np.broadcast_to(gz, dims))[truth]

    # MD channel: distractors share the kidney band.
    md = MD_BASE + MD_BASE_GRAD * gx + np.zeros(dims, dtype=np.float32)
    for mask in structures:
        md[mask] = (MD_STRUCTURE + MD_STRUCT_GRAD * np.broadcast_to(gy, dims))[mask]
    for mask in distractors:
        md[mask] = (MD_KIDNEY + MD_KIDNEY_GRAD * np.broadcast_to(gz, dims))[mask]
    md[truth] = (MD_KIDNEY + MD_KIDNEY_GRAD * np.broadcast_to(gz, dims))[truth]

    if spec.noise_sigma > 0:
        fa = fa + rng_noise.normal(
            0.0, spec.noise_sigma * abs(FA_BASE - FA_KIDNEY), dims).astype(np.float32)
        md = md + rng_noise.normal(
            0.0, spec.noise_sigma * abs(MD_KIDNEY - MD_BASE), dims).astype(np.float32)

    return PhantomCase(
        subject_id=subject,
        timepoint=timepoint,
        fa=Volume3(fa.astype(np.float32), spec.spacing),
        md=Volume3(md.astype(np.float32), spec.spacing),
        truth=LabelVolume(truth.astype(np.uint8), 2, spec.spacing),
    )


def generate(spec: PhantomSpec) -> list[PhantomCase]:
    """All cases, ordered by (subject, timepoint). Bit-identical for a given spec."""
    return [
        _generate_case(spec, s, t)
        for s in range(spec.n_subjects)
        for t in range(spec.timepoints_per_subject)
    ]


def reference_volume(seed: int, dims: tuple[int, int, int] = (110, 110, 15)) -> Volume3:
    """Synthetic other-contrast volume used as the histogram-matching reference."""
    rng = np.random.default_rng(mix_seed(seed, 0x12EF))
    gx, gy, gz = (_axis_grad(dims, i) for i in range(3))
    base = 0.2 + 0.5 * gx * gy + 0.2 * np.sin(6.0 * gz * np.pi)
    data = np.broadcast_to(base, dims) + rng.normal(0.0, 0.05, dims)
    return Volume3(data.astype(np.float32))


def split_by_subject(cases: list[PhantomCase], held_out_subject: int):
    """Animal-wise split: every case of the held-out subject goes to the test half."""
    subjects = {c.subject_id for c in cases}
    if held_out_subject not in subjects:
        raise KeyError(f"unknown subject id {held_out_subject}")
    test = [c for c in cases if c.subject_id == held_out_subject]
    train = [c for c in cases if c.subject_id != held_out_subject]
    return train, test
