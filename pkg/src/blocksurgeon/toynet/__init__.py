"""Toy U-Net deblurring network, data, metrics and training."""

from .blocks import PRIMITIVES, block_forward, init_block
from .config import (
    ALTERNATIVES,
    BlockKind,
    ConfigError,
    NetworkConfig,
    PRESETS,
    SlotSpec,
    desk_preset,
    paper_shape_preset,
)
from .data import DatasetSpec, PairedDataset, generate_dataset, load_dataset, save_dataset
from .metrics import batch_psnr, psnr, ssim
from .network import Network, build_network
from .train import (
    Adam,
    TrainResult,
    TrainingDivergedError,
    finetune,
    load_network,
    save_network,
    train_base,
    validation_psnr,
)

__all__ = [
    "ALTERNATIVES",
    "Adam",
    "BlockKind",
    "ConfigError",
    "DatasetSpec",
    "Network",
    "NetworkConfig",
    "PRESETS",
    "PRIMITIVES",
    "PairedDataset",
    "SlotSpec",
    "TrainResult",
    "TrainingDivergedError",
    "batch_psnr",
    "block_forward",
    "build_network",
    "desk_preset",
    "finetune",
    "generate_dataset",
    "init_block",
    "load_dataset",
    "load_network",
    "paper_shape_preset",
    "psnr",
    "save_dataset",
    "save_network",
    "ssim",
    "train_base",
    "validation_psnr",
]
