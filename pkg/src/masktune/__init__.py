"""Toy-scale integrated masked-LM fine-tuning with a built-in OOD benchmark."""

__version__ = "0.1.0"

from masktune.tensor import Tensor, grad_check
from masktune.trainer import TrainConfig, alpha_grid_search, run_mode

__all__ = ["Tensor", "grad_check", "TrainConfig", "run_mode",
           "alpha_grid_search", "__version__"]
