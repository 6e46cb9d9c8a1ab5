"""Volumetric kidney segmentation: EM localization + reduced 3D U-Net."""

__version__ = "0.1.0"

from .volgrid import (DetectionBox, LabelVolume, Volume3, crop, crop_labels,
                      flip_lr, flip_ud, project_max_z, read_lab3, read_vol3,
                      resize_nearest_labels, resize_trilinear, rot90_xy,
                      write_lab3, write_vol3)

__all__ = [
    "DetectionBox", "LabelVolume", "Volume3", "crop", "crop_labels",
    "flip_lr", "flip_ud", "project_max_z", "read_lab3", "read_vol3",
    "resize_nearest_labels", "resize_trilinear", "rot90_xy", "write_lab3",
    "write_vol3", "__version__",
]
