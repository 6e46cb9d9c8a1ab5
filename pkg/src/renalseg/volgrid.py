"""Core 3D volume/label types, bit-exact file I/O, and elementary geometry.

Arrays are indexed [x, y, z]. On disk the voxel stream is x-fastest
(Fortran order), little-endian. Spacing is mm per voxel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, FormatError

VOL3_MAGIC = b"V3F1"
LAB3_MAGIC = b"L3U1"


@dataclass(frozen=True)
class Volume3:
    """Dense 3D scalar grid of 32-bit floats with voxel spacing."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"Volume3 needs a 3D array, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Volume3 data must be finite")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        return (
            isinstance(other, Volume3)
            and self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class LabelVolume:
    """Integer class map aligned to a Volume3 grid. Labels live in [0, num_classes)."""

    labels: np.ndarray
    num_classes: int
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if arr.ndim != 3:
            raise ValueError(f"LabelVolume needs a 3D array, got ndim={arr.ndim}")
        if self.num_classes < 1 or self.num_classes > 255:
            raise ValueError(f"num_classes out of range: {self.num_classes}")
        if arr.size and arr.max() >= self.num_classes:
            raise ValueError(
                f"label {int(arr.max())} >= num_classes {self.num_classes}"
            )
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def __eq__(self, other):
        return (
            isinstance(other, LabelVolume)
            and self.dims == other.dims
            and self.num_classes == other.num_classes
            and self.spacing == other.spacing
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class DetectionBox:
    """Axis-aligned in-plane rectangle, inclusive voxel bounds, swept through all slices."""

    x0: int
    x1: int
    y0: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 <= self.x1 and 0 <= self.y0 <= self.y1):
            raise ValueError(f"invalid box {self}")

    def clamped(self, nx: int, ny: int) -> "DetectionBox":
        return DetectionBox(
            max(0, self.x0), min(nx - 1, self.x1),
            max(0, self.y0), min(ny - 1, self.y1),
        )

    def expanded(self, margin: int) -> "DetectionBox":
        return DetectionBox(
            max(0, self.x0 - margin), self.x1 + margin,
            max(0, self.y0 - margin), self.y1 + margin,
        )

    @property
    def shape2d(self) -> tuple[int, int]:
        return (self.x1 - self.x0 + 1, self.y1 - self.y0 + 1)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _read_header(raw: bytes, magic: bytes, path):
    if len(raw) < 4 or raw[:4] != magic:
        raise FormatError(f"bad magic in {path!r}: expected {magic!r}", 0)
    if len(raw) < 28:
        raise FormatError(f"truncated header in {path!r}", len(raw))
    nx, ny, nz = struct.unpack_from("<III", raw, 4)
    sx, sy, sz = struct.unpack_from("<fff", raw, 16)
    if min(nx, ny, nz) < 1:
        raise FormatError(f"non-positive dims ({nx},{ny},{nz}) in {path!r}", 4)
    if not all(np.isfinite([sx, sy, sz])) or min(sx, sy, sz) <= 0:
        raise FormatError(f"bad spacing ({sx},{sy},{sz}) in {path!r}", 16)
    return (nx, ny, nz), (sx, sy, sz)


def write_vol3(vol: Volume3, path) -> None:
    nx, ny, nz = vol.dims
    with open(path, "wb") as f:
        f.write(VOL3_MAGIC)
        f.write(struct.pack("<III", nx, ny, nz))
        f.write(struct.pack("<fff", *vol.spacing))
        f.write(vol.data.astype("<f4").tobytes(order="F"))


def read_vol3(path) -> Volume3:
    with open(path, "rb") as f:
        raw = f.read()
    dims, spacing = _read_header(raw, VOL3_MAGIC, path)
    nx, ny, nz = dims
    n = nx * ny * nz
    if len(raw) != 28 + 4 * n:
        raise FormatError(f"payload truncated in {path!r}: want {4 * n} bytes", len(raw))
    flat = np.frombuffer(raw, dtype="<f4", count=n, offset=28)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError(f"non-finite value in {path!r}", 28 + 4 * int(bad[0]))
    data = flat.reshape((nx, ny, nz), order="F")
    return Volume3(data, spacing)


def write_lab3(lab: LabelVolume, path) -> None:
    nx, ny, nz = lab.dims
    with open(path, "wb") as f:
        f.write(LAB3_MAGIC)
        f.write(struct.pack("<III", nx, ny, nz))
        f.write(struct.pack("<fff", *lab.spacing))
        f.write(struct.pack("<B", lab.num_classes))
        f.write(lab.labels.tobytes(order="F"))


def read_lab3(path) -> LabelVolume:
    with open(path, "rb") as f:
        raw = f.read()
    dims, spacing = _read_header(raw, LAB3_MAGIC, path)
    nx, ny, nz = dims
    if len(raw) < 29:
        raise FormatError(f"truncated header in {path!r}", len(raw))
    num_classes = raw[28]
    n = nx * ny * nz
    if len(raw) != 29 + n:
        raise FormatError(f"payload truncated in {path!r}: want {n} bytes", len(raw))
    flat = np.frombuffer(raw, dtype=np.uint8, count=n, offset=29)
    if flat.size and int(flat.max()) >= num_classes:
        off = 29 + int(np.argmax(flat >= num_classes))
        raise FormatError(f"label out of range in {path!r}", off)
    labels = flat.reshape((nx, ny, nz), order="F")
    return LabelVolume(labels, num_classes, spacing)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def crop(vol: Volume3, box: DetectionBox) -> Volume3:
    """In-plane crop; all z-slices are retained."""
    nx, ny, _ = vol.dims
    if box.x1 >= nx or box.y1 >= ny:
        raise BoundsError(f"box {box} outside {vol.dims}")
    return Volume3(vol.data[box.x0:box.x1 + 1, box.y0:box.y1 + 1, :], vol.spacing)


def crop_labels(lab: LabelVolume, box: DetectionBox) -> LabelVolume:
    nx, ny, _ = lab.dims
    if box.x1 >= nx or box.y1 >= ny:
        raise BoundsError(f"box {box} outside {lab.dims}")
    return LabelVolume(
        lab.labels[box.x0:box.x1 + 1, box.y0:box.y1 + 1, :], lab.num_classes, lab.spacing
    )


def _axis_positions(n_src: int, n_dst: int) -> np.ndarray:
    # Corner-aligned sampling: t * (n-1)/(m-1); a single sample lands mid-axis.
    if n_dst == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_dst) * (n_src - 1) / (n_dst - 1)


def _resized_spacing(dims, spacing, target):
    out = []
    for n, s, m in zip(dims, spacing, target):
        out.append(s * (n - 1) / (m - 1) if m > 1 and n > 1 else s * n / m)
    return tuple(out)


def _interp_axis(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = arr.shape[axis]
    pos = _axis_positions(n_src, n_dst)
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, n_src - 1)
    i1 = np.minimum(i0 + 1, n_src - 1)
    frac = (pos - i0).astype(np.float32)
    lo = np.take(arr, i0, axis=axis)
    hi = np.take(arr, i1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_dst
    f = frac.reshape(shape)
    return lo * (1.0 - f) + hi * f


def resize_trilinear(vol: Volume3, target: tuple[int, int, int]) -> Volume3:
    """Separable linear resampling with corner-aligned sample positions."""
    if min(target) < 1:
        raise ValueError(f"target dims must be >= 1, got {target}")
    out = vol.data
    for axis in range(3):
        out = _interp_axis(out, axis, target[axis])
    return Volume3(out, _resized_spacing(vol.dims, vol.spacing, target))


def resize_nearest_labels(lab: LabelVolume, target: tuple[int, int, int]) -> LabelVolume:
    """Nearest-neighbor resize for categorical maps, same sample grid as trilinear."""
    if min(target) < 1:
        raise ValueError(f"target dims must be >= 1, got {target}")
    out = lab.labels
    for axis in range(3):
        pos = _axis_positions(out.shape[axis], target[axis])
        idx = np.clip(np.rint(pos).astype(np.intp), 0, out.shape[axis] - 1)
        out = np.take(out, idx, axis=axis)
    return LabelVolume(out, lab.num_classes, _resized_spacing(lab.dims, lab.spacing, target))


def _swap_xy(spacing):
    return (spacing[1], spacing[0], spacing[2])


def rot90_xy(obj):
    """90-degree in-plane rotation: voxel (x, y) -> (ny-1-y, x). Dims become (ny, nx, nz)."""
    if isinstance(obj, Volume3):
        return Volume3(np.rot90(obj.data, 1, axes=(0, 1)), _swap_xy(obj.spacing))
    return LabelVolume(np.rot90(obj.labels, 1, axes=(0, 1)), obj.num_classes, _swap_xy(obj.spacing))


def flip_lr(obj):
    """Mirror along the x axis."""
    if isinstance(obj, Volume3):
        return Volume3(obj.data[::-1, :, :], obj.spacing)
    return LabelVolume(obj.labels[::-1, :, :], obj.num_classes, obj.spacing)


def flip_ud(obj):
    """Mirror along the y axis."""
    if isinstance(obj, Volume3):
        return Volume3(obj.data[:, ::-1, :], obj.spacing)
    return LabelVolume(obj.labels[:, ::-1, :], obj.num_classes, obj.spacing)


def project_max_z(lab: LabelVolume, class_index: int) -> np.ndarray:
    """2D mask: pixel (x, y) is set iff any slice carries class_index there."""
    if class_index >= lab.num_classes:
        raise BoundsError(f"class {class_index} >= num_classes {lab.num_classes}")
    return (lab.labels == class_index).any(axis=2)
