"""Conditional reverse-process samplers and imputation drivers.

Only target positions (``cond_mask == 0``) are ever updated; conditioning
positions are re-clamped to their observed values after every step.

Noise for row ``r`` and sample ``s`` comes from
``default_rng([init_seed, r, s])``: first ``x_T``, then one ``z`` per step.
Results therefore do not depend on how rows are chunked across threads.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import TabularDataset, decode_matrix
from .errors import ConfigurationError, NumericError, ParameterError, SchemaMismatchError
from .schedule import NoiseSchedule, make_subsequence, sigma_eta

AGGREGATIONS = ("single", "median")
METHODS = ("ddim", "ddpm")
RADICAND_TOL = 1e-12


@dataclass
class SamplerConfig:
    """Sampler settings. ``steps=None`` means the full schedule length."""

    eta: float = 0.0
    steps: int | None = None
    n_samples: int = 1
    aggregation: str = "single"
    init_seed: int = 0
    method: str = "ddim"
    threads: int = 1
    chunk_size: int = 256

    def __post_init__(self):
        if self.eta < 0:
            raise ParameterError(f"eta must be >= 0, got {self.eta}")
        if self.n_samples < 1:
            raise ParameterError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.aggregation not in AGGREGATIONS:
            raise ParameterError(f"aggregation must be one of {AGGREGATIONS}")
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}")
        if self.aggregation == "median" and self.n_samples < 2:
            raise ConfigurationError("median aggregation needs n_samples >= 2")
        if self.aggregation == "single" and self.n_samples != 1:
            raise ConfigurationError("aggregation 'single' needs n_samples == 1; use 'median'")
        if self.threads < 1 or self.chunk_size < 1:
            raise ParameterError("threads and chunk_size must be >= 1")

    def subsequence(self, schedule: NoiseSchedule) -> np.ndarray:
        steps = schedule.T if self.steps is None else self.steps
        if self.method == "ddpm" and steps != schedule.T:
            raise ConfigurationError(
                f"the DDPM sampler walks all {schedule.T} steps; got steps={steps}")
        return make_subsequence(schedule.T, steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        d.pop("chunk_size")
        return d


@dataclass
class DiffusionState:
    """Current iterate of a batch of rows.

    ``x`` holds diffused values at target positions and the observed values at
    conditioning positions; ``observed`` is kept to re-clamp after each step.
    """

    x: np.ndarray
    t: int
    cond_mask: np.ndarray
    observed: np.ndarray

    def clamp(self, updated: np.ndarray, t: int) -> "DiffusionState":
        x = np.where(self.cond_mask, self.observed, updated)
        return DiffusionState(x, t, self.cond_mask, self.observed)


def _radicand(value: float) -> float:
    if value < -RADICAND_TOL:
        raise NumericError(f"negative variance term {value:.3e}; schedule is inconsistent")
    return max(value, 0.0)


def ddim_update(x, eps_hat, a_cur: float, a_prev: float, sigma: float, z=None) -> np.ndarray:
    """``sqrt(a_prev) x0_hat + sqrt(1 - a_prev - sigma^2) eps_hat + sigma z``."""
    x0_hat = (x - math.sqrt(1.0 - a_cur) * eps_hat) / math.sqrt(a_cur)
    out = math.sqrt(a_prev) * x0_hat + math.sqrt(_radicand(1.0 - a_prev - sigma * sigma)) * eps_hat
    if sigma > 0:
        out = out + sigma * z
    return out


def ddpm_update(x, eps_hat, beta_t: float, a_cur: float, var: float, z=None) -> np.ndarray:
    """Ancestral step: standard DDPM mean plus ``sqrt(var) z`` (``z`` ignored if var == 0)."""
    mean = (x - beta_t / math.sqrt(1.0 - a_cur) * eps_hat) / math.sqrt(1.0 - beta_t)
    if var > 0:
        mean = mean + math.sqrt(var) * z
    return mean


def _predict(model, state: DiffusionState, t: int) -> np.ndarray:
    return model(state.x, state.cond_mask.astype(np.float64), t)


def ddim_step(state: DiffusionState, t_cur: int, t_prev: int, model, schedule: NoiseSchedule,
              eta: float = 0.0, z=None) -> DiffusionState:
    """One DDIM transition ``t_cur -> t_prev``. ``model`` is any ``f(x, cond_mask, t)``."""
    if state.t != t_cur:
        raise ParameterError(f"state is at t={state.t}, not t_cur={t_cur}")
    sigma = sigma_eta(schedule, t_prev, t_cur, eta)
    if sigma > 0 and z is None:
        raise ParameterError("eta > 0 needs a noise vector z")
    eps_hat = _predict(model, state, t_cur)
    updated = ddim_update(state.x, eps_hat, schedule.alpha_bar[t_cur], schedule.alpha_bar[t_prev], sigma, z)
    return state.clamp(updated, t_prev)


def ddpm_step(state: DiffusionState, t: int, model, schedule: NoiseSchedule, z=None) -> DiffusionState:
    """One ancestral DDPM transition ``t -> t-1``; no noise is added at ``t = 1``."""
    if state.t != t:
        raise ParameterError(f"state is at t={state.t}, not t={t}")
    var = schedule.posterior_variance(t) if t > 1 else 0.0
    if var > 0 and z is None:
        raise ParameterError("t > 1 needs a noise vector z")
    eps_hat = _predict(model, state, t)
    updated = ddpm_update(state.x, eps_hat, schedule.beta_at(t), schedule.alpha_bar[t], var, z)
    return state.clamp(updated, t - 1)


def _noise_block(init_seed: int, row_ids, sample: int, n_draws: int, d: int) -> np.ndarray:
    """``(n_draws, len(row_ids), d)`` standard normals, one independent stream per row."""
    out = np.empty((n_draws, len(row_ids), d))
    for i, r in enumerate(row_ids):
        out[:, i, :] = np.random.default_rng([init_seed, int(r), sample]).standard_normal((n_draws, d))
    return out


def run_chain(observed, cond_mask, row_ids, model, schedule: NoiseSchedule,
              config: SamplerConfig, sample: int = 0) -> np.ndarray:
    """One reverse trajectory for a batch of rows; returns ``x_0`` (targets filled)."""
    observed = np.asarray(observed, dtype=np.float64)
    cond_mask = np.asarray(cond_mask, dtype=bool)
    n, d = observed.shape
    tau = config.subsequence(schedule)
    stochastic = config.method == "ddpm" or config.eta > 0
    n_draws = 1 + (len(tau) if stochastic else 0)
    noise = _noise_block(config.init_seed, row_ids, sample, n_draws, d)

    state = DiffusionState(np.where(cond_mask, observed, noise[0]), schedule.T, cond_mask, observed)
    if config.method == "ddpm":
        for k, t in enumerate(range(schedule.T, 0, -1)):
            state = ddpm_step(state, t, model, schedule, noise[1 + k])
    else:
        steps = [0] + [int(v) for v in tau]
        for k in range(len(tau), 0, -1):
            z = noise[k] if stochastic else None
            state = ddim_step(state, steps[k], steps[k - 1], model, schedule, config.eta, z)
    return state.x


def impute_rows(observed, cond_mask, row_ids, model, schedule: NoiseSchedule,
                config: SamplerConfig) -> np.ndarray:
    """Impute target positions of a batch of encoded rows, aggregating over samples."""
    samples = np.stack([run_chain(observed, cond_mask, row_ids, model, schedule, config, s)
                        for s in range(config.n_samples)])
    if config.aggregation == "median":
        out = np.median(samples, axis=0)
    else:
        out = samples[0]
    return np.where(cond_mask, observed, out)


def impute_row(row, cond_mask, model, schedule: NoiseSchedule, config: SamplerConfig,
               row_index: int = 0) -> np.ndarray:
    """Impute one encoded row; a row without targets is returned as-is."""
    row = np.asarray(row, dtype=np.float64)
    cond_mask = np.asarray(cond_mask, dtype=bool)
    if cond_mask.all():
        return row.copy()
    return impute_rows(row[None], cond_mask[None], [row_index], model, schedule, config)[0]


@dataclass
class ImputationResult:
    """Completed table plus which cells were generated."""

    values: np.ndarray
    encoded: np.ndarray
    generated: np.ndarray
    wall_time_s: float
    config: dict

    def provenance(self, names) -> list[tuple[int, str, str]]:
        n, d = self.generated.shape
        return [(i, names[j], "generated" if self.generated[i, j] else "observed")
                for i in range(n) for j in range(d)]


def impute_encoded(observed, cond_mask, row_ids, model, schedule: NoiseSchedule,
                   config: SamplerConfig) -> np.ndarray:
    """Impute all rows with at least one target position, chunked and optionally threaded."""
    observed = np.asarray(observed, dtype=np.float64)
    cond_mask = np.asarray(cond_mask, dtype=bool)
    row_ids = np.asarray(row_ids)
    out = np.where(cond_mask, observed, 0.0)
    todo = np.flatnonzero(~cond_mask.all(axis=1))
    chunks = [todo[i:i + config.chunk_size] for i in range(0, len(todo), config.chunk_size)]

    def work(idx):
        return idx, impute_rows(observed[idx], cond_mask[idx], row_ids[idx], model, schedule, config)

    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    for idx, filled in results:
        out[idx] = filled
    return out


def impute_dataset(dataset: TabularDataset, model, schedule: NoiseSchedule,
                   config: SamplerConfig | None = None,
                   schema_hash: str | None = None) -> ImputationResult:
    """Fill every hidden cell (native or simulated) of ``dataset``.

    ``schema_hash`` is the hash stored with the model; a mismatch with the
    dataset schema is an error. Timing covers the sampling loop only.
    """
    config = config or SamplerConfig()
    if schema_hash is not None and schema_hash != dataset.schema.schema_hash:
        raise SchemaMismatchError("dataset schema does not match the model checkpoint schema")
    config.subsequence(schedule)
    cond = dataset.observed_encoded.astype(bool)
    start = time.perf_counter()
    encoded = impute_encoded(dataset.encoded, cond, np.arange(dataset.n), model, schedule, config)
    elapsed = time.perf_counter() - start

    generated = ~dataset.observed
    values = dataset.visible_values()
    rows = np.flatnonzero(generated.any(axis=1))
    if len(rows):
        decoded = decode_matrix(encoded[rows], dataset.schema)
        block = values[rows]
        block[generated[rows]] = decoded[generated[rows]]
        values[rows] = block
    return ImputationResult(values, encoded, generated, elapsed, config.to_dict())
