"""Multi-modal (sensor + network) cyber-attack detector for industrial control systems."""

from .data import PreprocessStats, ingest_csv, prepare_dataset
from .evaluation import EvalReport, confusion, evaluate
from .model import TrainConfig, forward, init_params, load_checkpoint, predict, save_checkpoint, train
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "PreprocessStats", "ingest_csv", "prepare_dataset", "EvalReport", "confusion", "evaluate",
    "TrainConfig", "forward", "init_params", "load_checkpoint", "predict", "save_checkpoint", "train",
    "SyntheticSpec", "generate_synthetic",
]
