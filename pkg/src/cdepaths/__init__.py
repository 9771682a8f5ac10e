"""Control paths for neural controlled differential equations on irregular time series."""

__version__ = "0.1.0"

from .control import SCHEMES, ControlPath, build, reparameterise
from .errors import CdePathsError
from .neuralcde import CdeModel, TrainConfig, evaluate, forward, train
from .series import (
    AugmentedSeries,
    Dataset,
    RawSeries,
    augment,
    normalize,
    parse_csv,
    split,
)
from .solver import SolveConfig, integrate
from .synthetic import random_dataset, random_series, spiral_dataset
from .verify import (
    causality_probe,
    nfe_benchmark,
    path_norms,
    reparam_check,
    uniqueness_probe,
)

__all__ = [
    "SCHEMES",
    "AugmentedSeries",
    "CdeModel",
    "CdePathsError",
    "ControlPath",
    "Dataset",
    "RawSeries",
    "SolveConfig",
    "TrainConfig",
    "augment",
    "build",
    "causality_probe",
    "evaluate",
    "forward",
    "integrate",
    "nfe_benchmark",
    "normalize",
    "parse_csv",
    "path_norms",
    "random_dataset",
    "random_series",
    "reparam_check",
    "reparameterise",
    "spiral_dataset",
    "split",
    "train",
    "uniqueness_probe",
]
