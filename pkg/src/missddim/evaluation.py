"""Reconstruction metrics, baselines, stability and timing harnesses."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import CATEGORICAL, TabularDataset, decode_matrix, format_cell
from .errors import ParameterError, UndefinedMetricError
from .sampler import SamplerConfig, impute_encoded
from .schedule import NoiseSchedule

GRID_COLUMNS = ("eta", "steps", "n_samples", "rmse_mean", "rmse_std", "cat_error", "wall_time_s")


def _spread(values, axis=0) -> np.ndarray:
    """Population std, computed about the first entry so identical runs give exactly 0."""
    values = np.asarray(values, dtype=np.float64)
    return np.std(values - np.take(values, [0], axis=axis), axis=axis)


def rmse(imputed, ground_truth, mask) -> float:
    """Root mean squared error over the cells selected by ``mask``."""
    imputed = np.asarray(imputed, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if imputed.shape != ground_truth.shape or mask.shape != imputed.shape:
        raise ParameterError("imputed, ground truth and mask must share a shape")
    if not mask.any():
        raise UndefinedMetricError("no masked cells to evaluate")
    diff = imputed[mask] - ground_truth[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def continuous_rmse(dataset: TabularDataset, imputed_encoded) -> float:
    """RMSE in standardized units over simulated-missing continuous cells."""
    mask = dataset.schema.expand(dataset.simulated_missing) & dataset.schema.continuous_mask()
    return rmse(imputed_encoded, dataset.complete_encoded, mask)


def categorical_error_rate(dataset: TabularDataset, imputed_encoded) -> float:
    """Fraction of simulated-missing categorical cells decoded to the wrong category."""
    cat_cols = [j for j, c in enumerate(dataset.schema.columns) if c.kind == CATEGORICAL]
    mask = dataset.simulated_missing[:, cat_cols]
    if not mask.any():
        raise UndefinedMetricError("no simulated-missing categorical cells")
    decoded = decode_matrix(imputed_encoded, dataset.schema)[:, cat_cols]
    truth = dataset.values[:, cat_cols]
    return float(np.mean(decoded[mask] != truth[mask]))


@dataclass
class MetricsReport:
    rmse_continuous: float | None
    cat_error_rate: float | None
    wall_time_s: float | None = None
    rmse_runs: list[float] = field(default_factory=list)
    rmse_std_across_runs: float = 0.0
    n_continuous_cells: int = 0
    n_categorical_cells: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(dataset: TabularDataset, runs: Sequence[np.ndarray], wall_time_s: float | None = None,
             config: dict | None = None) -> MetricsReport:
    """Metrics for one or more imputations (encoded matrices) of ``dataset``."""
    if not len(runs):
        raise ParameterError("need at least one imputation")
    schema = dataset.schema
    cont = schema.expand(dataset.simulated_missing) & schema.continuous_mask()
    n_cont = int(dataset.simulated_missing[:, [c.kind != CATEGORICAL for c in schema.columns]].sum())
    n_cat = int(dataset.simulated_missing.sum()) - n_cont
    rmses = [continuous_rmse(dataset, r) for r in runs] if cont.any() else []
    cat = [categorical_error_rate(dataset, r) for r in runs] if n_cat else []
    return MetricsReport(
        rmse_continuous=float(np.mean(rmses)) if rmses else None,
        cat_error_rate=float(np.mean(cat)) if cat else None,
        wall_time_s=wall_time_s,
        rmse_runs=rmses,
        rmse_std_across_runs=float(_spread(rmses)) if rmses else 0.0,
        n_continuous_cells=n_cont,
        n_categorical_cells=n_cat,
        config=dict(config or {}),
    )


def mean_mode_baseline(dataset: TabularDataset, reference: TabularDataset | None = None) -> np.ndarray:
    """Encoded imputation with column means (continuous) and modes (categorical).

    Means come from the schema, which already holds training-fold statistics,
    so continuous imputations are exactly 0 in standardized units. Modes are
    counted over the visible cells of ``reference`` (default: ``dataset``);
    ties go to the earlier category.
    """
    reference = reference if reference is not None else dataset
    schema = dataset.schema
    fill = np.zeros(schema.d_enc)
    obs = reference.observed
    for j, spec in enumerate(schema.columns):
        if spec.kind != CATEGORICAL:
            continue
        counts = [0] * len(spec.categories)
        lookup = {c: k for k, c in enumerate(spec.categories)}
        for v, o in zip(reference.values[:, j], obs[:, j]):
            if o:
                counts[lookup[v]] += 1
        fill[schema.offsets[j] + int(np.argmax(counts))] = 1.0
    hidden = ~dataset.observed_encoded.astype(bool)
    return np.where(hidden, fill, dataset.encoded)


@dataclass
class StabilityReport:
    per_cell_std: np.ndarray
    mean_std: float
    runs: list[np.ndarray]


def stability(imputer: Callable[[TabularDataset, int], np.ndarray], dataset: TabularDataset,
              n_runs: int, seeds: Sequence[int]) -> StabilityReport:
    """Spread of imputed values over repeated runs.

    ``imputer(dataset, seed)`` returns an encoded imputation. The per-cell
    standard deviation is taken over runs at every hidden encoded position.
    """
    if n_runs < 2:
        raise ParameterError("stability needs n_runs >= 2")
    seeds = list(seeds)
    if len(seeds) != n_runs:
        raise ParameterError(f"got {len(seeds)} seeds for {n_runs} runs")
    runs = [np.asarray(imputer(dataset, s), dtype=np.float64) for s in seeds]
    stacked = np.stack(runs)
    hidden = ~dataset.observed_encoded.astype(bool)
    per_cell = _spread(stacked)[hidden]
    return StabilityReport(per_cell, float(per_cell.mean()) if per_cell.size else 0.0, runs)


def ddim_imputer(model, schedule: NoiseSchedule, eta: float = 0.0, steps: int | None = None,
                 n_samples: int = 1, threads: int = 1) -> Callable[[TabularDataset, int], np.ndarray]:
    """Adapter turning the sampler into an ``imputer(dataset, seed)`` callable."""
    def run(dataset: TabularDataset, seed: int) -> np.ndarray:
        cfg = SamplerConfig(eta=eta, steps=steps, n_samples=n_samples,
                            aggregation="median" if n_samples > 1 else "single",
                            init_seed=seed, threads=threads)
        return impute_encoded(dataset.encoded, dataset.observed_encoded.astype(bool),
                              np.arange(dataset.n), model, schedule, cfg)
    return run


def ddpm_median_baseline(dataset: TabularDataset, model, schedule: NoiseSchedule,
                         n_samples: int = 100, init_seed: int = 0, threads: int = 1) -> np.ndarray:
    """Ancestral DDPM sampling over all steps with elementwise median over ``n_samples`` draws."""
    cfg = SamplerConfig(method="ddpm", n_samples=n_samples,
                        aggregation="median" if n_samples > 1 else "single",
                        init_seed=init_seed, threads=threads)
    return impute_encoded(dataset.encoded, dataset.observed_encoded.astype(bool),
                          np.arange(dataset.n), model, schedule, cfg)


def benchmark_grid(dataset: TabularDataset, model, schedule: NoiseSchedule, etas: Sequence[float],
                   step_counts: Sequence[int], n_repeats: int = 1, n_samples: int = 1,
                   init_seed: int = 0, distinct_seeds: bool = True, threads: int = 1) -> list[dict]:
    """Full factorial ``eta x steps`` sweep of RMSE and sampling time.

    Repeat ``r`` uses ``init_seed + r`` when ``distinct_seeds`` is set and
    ``init_seed`` otherwise. ``wall_time_s`` is the mean over repeats.
    """
    if n_repeats < 1:
        raise ParameterError("n_repeats must be >= 1")
    cond = dataset.observed_encoded.astype(bool)
    rows = []
    for eta in etas:
        for steps in step_counts:
            rmses, cats, times = [], [], []
            for r in range(n_repeats):
                cfg = SamplerConfig(eta=float(eta), steps=int(steps), n_samples=n_samples,
                                    aggregation="median" if n_samples > 1 else "single",
                                    init_seed=init_seed + r if distinct_seeds else init_seed,
                                    threads=threads)
                start = time.perf_counter()
                enc = impute_encoded(dataset.encoded, cond, np.arange(dataset.n), model, schedule, cfg)
                times.append(time.perf_counter() - start)
                report = evaluate(dataset, [enc])
                if report.rmse_continuous is not None:
                    rmses.append(report.rmse_continuous)
                if report.cat_error_rate is not None:
                    cats.append(report.cat_error_rate)
            rows.append({
                "eta": float(eta), "steps": int(steps), "n_samples": n_samples,
                "rmse_mean": float(np.mean(rmses)) if rmses else math.nan,
                "rmse_std": float(_spread(rmses)) if rmses else math.nan,
                "cat_error": float(np.mean(cats)) if cats else math.nan,
                "wall_time_s": float(np.mean(times)),
            })
    return rows


def write_grid(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=GRID_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: format_cell(v) for k, v in r.items()})


def make_synthetic_gaussian(n: int, rho: float, seed: int = 0) -> TabularDataset:
    """Fully observed bivariate standard normal table (columns ``x1``, ``x2``) with correlation ``rho``."""
    if not abs(rho) < 1:
        raise ParameterError(f"|rho| must be < 1, got {rho}")
    if n < 2:
        raise ParameterError("need n >= 2")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    x1 = z[:, 0]
    x2 = rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1]
    rows = [["x1", "x2"]] + [[float(a), float(b)] for a, b in zip(x1, x2)]
    return TabularDataset.from_rows(rows, declared_types={"x1": "continuous", "x2": "continuous"})


def gaussian_oracle_rmse(rho: float) -> float:
    """RMSE of the conditional mean ``rho * x1`` as a predictor of ``x2``."""
    return math.sqrt(1.0 - rho * rho)
