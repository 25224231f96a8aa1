"""Teleconnection-aware, physics-informed subseasonal forecasting at desk scale."""
from .griddata import Dataset, Field, Grid, SynthConfig, make_grid, read_field, synth_dataset, write_field
from .kernels import BACKEND as KERNEL_BACKEND
from .model import ModelConfig, TrainConfig, forward, init_model, load_checkpoint, predict, save_checkpoint, train
from .numerics import make_rng

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Field", "Grid", "SynthConfig", "make_grid", "read_field", "synth_dataset", "write_field",
    "KERNEL_BACKEND", "ModelConfig", "TrainConfig", "forward", "init_model", "load_checkpoint", "predict",
    "save_checkpoint", "train", "make_rng",
]
