"""Deterministic conditional diffusion imputation for tabular data."""

from .data import TabularDataset, Schema, infer_schema, load_dataset, simulate_mcar, split
from .errors import (ConfigurationError, MissDDIMError, NumericError, ParameterError,
                     SchemaError, SchemaMismatchError, StateError)
from .estimator import MeanModeImputer, MissDDIMImputer
from .evaluation import (benchmark_grid, ddpm_median_baseline, evaluate, make_synthetic_gaussian,
                         mean_mode_baseline, rmse, stability)
from .predictor import NoisePredictor, init_parameters
from .sampler import SamplerConfig, impute_dataset
from .schedule import NoiseSchedule, build_schedule, make_subsequence, sigma_eta
from .training import ModelConfig, TrainConfig, load_model, save_model, train

__version__ = "0.1.0"
