from .loss import dice_coefficient, dice_loss, dice_weights, weighted_dice_loss
from .tensor import Param, Tensor5
from .train import TrainConfig, TrainTrace, train
from .unet import (UNet3d, UNet3dSpec, binarize, build_unet, load_checkpoint,
                   predict, save_checkpoint)

__all__ = [
    "Param", "Tensor5", "TrainConfig", "TrainTrace", "UNet3d", "UNet3dSpec",
    "binarize", "build_unet", "dice_coefficient", "dice_loss", "dice_weights",
    "load_checkpoint", "predict", "save_checkpoint", "train",
    "weighted_dice_loss",
]
