"""Zero-shot classification with a four-direction selective-scan image encoder.

Everything runs on a small numpy reverse-mode tape (:mod:`ssmzsl.tensor`).
"""
from .config import TrainConfig, load_config
from .data import (SplitSpec, ZslDataset, gen_synthetic, load_dataset, load_semantic, make_splits,
                   save_dataset)
from .encoder import Encoder, EncoderConfig
from .head import SemanticSpace, ZslHead
from .model import ZslModel
from .train import Metrics, evaluate, load_model, save_run, sweep, train

__version__ = "0.1.0"

__all__ = [
    "Encoder", "EncoderConfig", "Metrics", "SemanticSpace", "SplitSpec", "TrainConfig", "ZslDataset",
    "ZslHead", "ZslModel", "evaluate", "gen_synthetic", "load_config", "load_dataset", "load_model",
    "load_semantic", "make_splits", "save_dataset", "save_run", "sweep", "train",
]
