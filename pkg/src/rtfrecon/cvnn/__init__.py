"""Complex-valued network: autodiff engine, layers, U-Net, optimizer, training."""

from . import engine, layers, optim, training, unet
from .engine import ComplexTensor, l1_loss, no_grad
from .optim import Adam
from .training import TrainConfig, train
from .unet import UNet, UNetSpec

__all__ = [
    "engine", "layers", "optim", "training", "unet",
    "ComplexTensor", "l1_loss", "no_grad", "Adam",
    "TrainConfig", "train", "UNet", "UNetSpec",
]
