"""scikit-learn compatible imputers.

``MissDDIMImputer`` trains the conditional noise predictor in ``fit`` and
fills missing cells with the deterministic sampler in ``transform``. Both
imputers accept numeric arrays (NaN marks missing) or pandas DataFrames with
mixed column types, and return the same container type they were given.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import CATEGORICAL, CONTINUOUS, TabularDataset, decode_matrix, refit_statistics
from .errors import SchemaError
from .evaluation import mean_mode_baseline
from .sampler import SamplerConfig, impute_dataset
from .schedule import build_schedule
from .training import ModelConfig, TrainConfig, train


def _is_frame(X) -> bool:
    return hasattr(X, "columns") and hasattr(X, "iloc")


def _table(X) -> tuple[list[str], list[list]]:
    """Header and rows of ``X``; NaN / None cells become ``None``."""
    if _is_frame(X):
        header = [str(c) for c in X.columns]
        rows = [[None if (v is None or (isinstance(v, float) and np.isnan(v))) else v for v in r]
                for r in X.itertuples(index=False, name=None)]
        return header, rows
    arr = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
    header = [f"x{j}" for j in range(arr.shape[1])]
    return header, [[None if np.isnan(v) else float(v) for v in r] for r in arr]


def _output(X, values: np.ndarray):
    if not _is_frame(X):
        out = np.empty(values.shape, dtype=np.float64)
        for j in range(values.shape[1]):
            out[:, j] = [float(v) for v in values[:, j]]
        return out
    import pandas as pd

    out = pd.DataFrame(values, columns=X.columns, index=X.index)
    for col in X.columns:
        if pd.api.types.is_numeric_dtype(X[col]):
            out[col] = pd.to_numeric(out[col])
    return out


class _TableImputer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    def _dataset(self, X, schema=None) -> TabularDataset:
        header, rows = _table(X)
        if schema is not None and header != schema.names:
            if len(header) != len(schema.names):
                raise ValueError(f"X has {len(header)} features, but {type(self).__name__} "
                                 f"is expecting {len(schema.names)} features as input")
            if _is_frame(X):
                raise SchemaError(f"columns {header} do not match fitted columns {schema.names}")
            header = schema.names
        declared = None if schema is not None else self._declared(header, numeric=not _is_frame(X))
        return TabularDataset.from_rows([header] + rows, schema=schema, declared_types=declared)

    def _declared(self, header, numeric: bool):
        # numeric arrays are continuous unless listed; frames use the inference rule
        cats = set(self.categorical_features or ())
        unknown = cats - set(header)
        if unknown:
            raise SchemaError(f"unknown categorical_features: {sorted(unknown)}")
        declared = {c: CONTINUOUS for c in header} if numeric else {}
        declared.update({c: CATEGORICAL for c in cats})
        return declared

    def _fit_schema(self, X):
        ds = self._dataset(X)
        self.schema_ = ds.schema
        self.n_features_in_ = ds.schema.d_raw
        if _is_frame(X):
            self.feature_names_in_ = np.asarray(ds.schema.names, dtype=object)
        return ds


class MissDDIMImputer(_TableImputer):
    """Diffusion imputer with a self-masked training objective and DDIM sampling.

    Parameters
    ----------
    schedule : {"quadratic", "linear"}, default="quadratic"
    n_timesteps : int, default=100
        Length ``T`` of the diffusion chain.
    beta_min, beta_max : float
        End points of the beta schedule.
    depth, width, time_embed_dim : int
        Residual MLP size.
    epochs, batch_size, learning_rate : training settings (Adam).
    mask_ratio_min, mask_ratio_max : float
        Range of the per-row fraction of observed cells used as pseudo-targets.
    eta : float, default=0.0
        Sampler stochasticity; 0 is fully deterministic.
    sampling_steps : int or None
        Number of sampling steps (``None`` means ``n_timesteps``).
    n_samples : int, default=1
        Samples per row; more than one triggers median aggregation.
    init_seed : int, default=0
        Seed of the initial noise ``x_T``.
    n_jobs : int, default=1
        Threads used for row-level sampling; results do not depend on it.
    random_state : int, default=0
        Seed for initialization and training draws.
    categorical_features : list of str, optional
        Column names forced to be categorical. Numeric arrays use the names
        ``x0, x1, ...`` and are otherwise treated as continuous; DataFrame
        columns follow the schema inference rule.
    """

    def __init__(self, *, schedule="quadratic", n_timesteps=100, beta_min=1e-4, beta_max=0.3,
                 depth=4, width=128, time_embed_dim=32, epochs=200, batch_size=64,
                 learning_rate=1e-3, mask_ratio_min=0.1, mask_ratio_max=0.9, eta=0.0,
                 sampling_steps=None, n_samples=1, init_seed=0, n_jobs=1, random_state=0,
                 categorical_features=None):
        self.schedule = schedule
        self.n_timesteps = n_timesteps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.depth = depth
        self.width = width
        self.time_embed_dim = time_embed_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.mask_ratio_min = mask_ratio_min
        self.mask_ratio_max = mask_ratio_max
        self.eta = eta
        self.sampling_steps = sampling_steps
        self.n_samples = n_samples
        self.init_seed = init_seed
        self.n_jobs = n_jobs
        self.random_state = random_state
        self.categorical_features = categorical_features

    def fit(self, X, y=None):
        ds = self._fit_schema(X)
        self.schedule_ = build_schedule(self.schedule, self.n_timesteps, self.beta_min, self.beta_max)
        config = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate, mask_ratio_min=self.mask_ratio_min,
                             mask_ratio_max=self.mask_ratio_max, seed=self.random_state)
        result = train(ds, self.schedule_, config,
                       ModelConfig(self.depth, self.width, self.time_embed_dim))
        self.model_ = result.model
        self.loss_history_ = result.history
        return self

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(eta=self.eta, steps=self.sampling_steps, n_samples=self.n_samples,
                             aggregation="median" if self.n_samples > 1 else "single",
                             init_seed=self.init_seed, threads=self.n_jobs)

    def transform(self, X):
        check_is_fitted(self, "model_")
        ds = self._dataset(X, self.schema_)
        result = impute_dataset(ds, self.model_, self.schedule_, self.sampler_config(),
                                schema_hash=self.schema_.schema_hash)
        self.last_wall_time_s_ = result.wall_time_s
        return _output(X, result.values)


class MeanModeImputer(_TableImputer):
    """Column mean for continuous features, most frequent category otherwise.

    Statistics come from the visible cells seen in ``fit``.
    """

    def __init__(self, *, categorical_features=None):
        self.categorical_features = categorical_features

    def fit(self, X, y=None):
        ds = self._fit_schema(X)
        self.schema_ = refit_statistics(ds)
        self.reference_ = ds.with_schema(self.schema_)
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        ds = self._dataset(X, self.schema_)
        enc = mean_mode_baseline(ds, reference=self.reference_)
        values = ds.visible_values()
        hidden = ~ds.observed
        values[hidden] = decode_matrix(enc, ds.schema)[hidden]
        return _output(X, values)
