"""Self-masked denoising training of the noise predictor."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .data import Schema, TabularDataset
from .errors import ConfigurationError, EmptyTargetError, NumericError, ParameterError, SchemaError
from .predictor import NoisePredictor, init_parameters
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mask_ratio_min: float = 0.1
    mask_ratio_max: float = 0.9
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.mask_ratio_min <= self.mask_ratio_max <= 1.0:
            raise ParameterError("need 0 <= mask_ratio_min <= mask_ratio_max <= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ParameterError("invalid Adam hyperparameters")
        if self.checkpoint_every < 0:
            raise ParameterError("checkpoint_every must be >= 0")


@dataclass(frozen=True)
class SelfMaskSplit:
    """Partition of one row's positions for a single training draw."""

    cond_idx: frozenset
    target_idx: frozenset
    native_missing_idx: frozenset = frozenset()

    @property
    def skipped(self) -> bool:
        return not self.target_idx


def _n_targets(ratio, n_observed):
    # round() guards against 0.3 * 10 -> 3.0000000000000004
    return np.ceil(np.round(np.asarray(ratio) * n_observed, 9)).astype(np.int64)


def self_mask(row_observed_idx, ratio: float, rng: np.random.Generator,
              width: int | None = None) -> SelfMaskSplit:
    """Draw ``ceil(ratio * |observed|)`` observed positions as pseudo-targets.

    ``width``, if given, is the row length; positions outside the observed set
    are reported as natively missing. An empty result (no observed entries or
    ``ratio == 0``) is flagged by :attr:`SelfMaskSplit.skipped`.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ParameterError(f"ratio must be in [0, 1], got {ratio}")
    observed = sorted(set(int(i) for i in row_observed_idx))
    native = frozenset(range(width)) - frozenset(observed) if width is not None else frozenset()
    k = int(_n_targets(ratio, len(observed)))
    chosen = rng.choice(len(observed), size=k, replace=False) if k else []
    target = frozenset(observed[i] for i in chosen)
    return SelfMaskSplit(frozenset(observed) - target, target, native)


def self_mask_batch(observed: np.ndarray, ratios: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`self_mask`: boolean target matrix for a batch of rows."""
    observed = np.asarray(observed, dtype=bool)
    keys = rng.random(observed.shape)
    keys[~observed] = np.inf
    k = _n_targets(ratios, observed.sum(axis=1))
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    return (ranks < k[:, None]) & observed


def forward_corrupt(x0, t: int, schedule: NoiseSchedule, eps) -> np.ndarray:
    """Sample of the forward marginal: ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` may be a scalar or one step per row of ``x0``; ``t = 0`` is the identity.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ParameterError(f"t outside [0, {schedule.T}]")
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ParameterError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = schedule.alpha_bar[t_arr]
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def assemble_training_input(x0, cond, target, t, eps, schedule):
    """Network input for a batch: clean conditioning values, corrupted targets, zeros elsewhere."""
    noisy = forward_corrupt(x0, t, schedule, eps)
    return np.where(cond, x0, 0.0) + np.where(target, noisy, 0.0)


def batch_loss(model: NoisePredictor, x0, cond, target, t, eps, schedule: NoiseSchedule,
               with_grad: bool = True):
    """Mean over rows of the per-row target-only MSE, and its flat parameter gradient.

    Returns ``(loss, per_row_losses, grad)``; ``grad`` is None if not requested.
    """
    cond = np.asarray(cond, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if np.any(cond & target):
        raise ParameterError("conditioning and target positions overlap")
    n_t = target.sum(axis=1)
    if np.any(n_t == 0):
        raise EmptyTargetError(f"{int(np.sum(n_t == 0))} row(s) without targets")
    x_in = assemble_training_input(x0, cond, target, t, eps, schedule)
    if with_grad:
        pred, cache = model.forward_train(x_in, cond.astype(np.float64), t)
    else:
        pred = model.forward(x_in, cond.astype(np.float64), t)
    diff = np.where(target, pred - eps, 0.0)
    per_row = (diff ** 2).sum(axis=1) / n_t
    loss = float(per_row.mean())
    if not with_grad:
        return loss, per_row, None
    grad_out = 2.0 * diff / n_t[:, None] / len(per_row)
    return loss, per_row, model.backward(grad_out, cache)


def loss(model: NoisePredictor, row, split: SelfMaskSplit, t: int, eps, schedule: NoiseSchedule) -> float:
    """Denoising loss of one encoded row under a self-mask split."""
    row = np.asarray(row, dtype=np.float64)
    if split.skipped:
        raise EmptyTargetError("split has no target entries")
    cond = np.zeros(row.shape, dtype=bool)
    target = np.zeros(row.shape, dtype=bool)
    cond[list(split.cond_idx)] = True
    target[list(split.target_idx)] = True
    value, _, _ = batch_loss(model, row[None], cond[None], target[None], np.array([t]),
                             np.asarray(eps, dtype=np.float64)[None], schedule, with_grad=False)
    return value


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(model: NoisePredictor, grads: np.ndarray, state: AdamState,
              config: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update applied in place to ``model.params``."""
    if grads.shape != model.params.shape or state.m.shape != grads.shape:
        raise ParameterError("gradient / optimizer state shape mismatch")
    if not math.isfinite(float(np.sum(grads))):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NumericError(f"non-finite gradient in tensor {model.tensor_of(int(bad[0]))!r}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.step += 1
    scratch = np.multiply(grads, 1.0 - b1)
    state.m *= b1
    state.m += scratch
    np.multiply(grads, grads, out=scratch)
    scratch *= 1.0 - b2
    state.v *= b2
    state.v += scratch
    # lr * m_hat / (sqrt(v_hat) + eps), with the bias corrections folded into scalars
    np.sqrt(state.v, out=scratch)
    scratch *= 1.0 / math.sqrt(1.0 - b2 ** state.step)
    scratch += config.adam_eps
    np.divide(state.m, scratch, out=scratch)
    scratch *= config.learning_rate / (1.0 - b1 ** state.step)
    model.params -= scratch
    model.mark_updated()
    return model.params, state


@dataclass
class ModelConfig:
    depth: int = 4
    width: int = 128
    time_embed_dim: int = 32
    activation: str = "silu"


@dataclass
class TrainResult:
    model: NoisePredictor
    history: list[float]
    adam: AdamState
    epochs_done: int = 0
    checkpoints: list[Path] = field(default_factory=list)


def save_model(path, model: NoisePredictor, schedule: NoiseSchedule, schema: Schema,
               config: TrainConfig | None = None, adam: AdamState | None = None,
               epochs_done: int = 0, history: list[float] | None = None) -> None:
    meta = {
        "format": "MDDIM1",
        "architecture": model.architecture(),
        "schedule": schedule.to_dict(),
        "schema": schema.to_dict(),
        "schema_hash": schema.schema_hash,
        "seed": model.seed,
        "train_config": asdict(config) if config is not None else None,
        "epochs_done": epochs_done,
        "adam_step": adam.step if adam is not None else 0,
        "loss_history": list(history or []),
    }
    tensors = {"params": model.params}
    if adam is not None:
        tensors["adam_m"] = adam.m
        tensors["adam_v"] = adam.v
    write_checkpoint(path, meta, tensors)


@dataclass
class LoadedModel:
    model: NoisePredictor
    schedule: NoiseSchedule
    schema: Schema
    meta: dict
    adam: AdamState | None


def load_model(path) -> LoadedModel:
    meta, tensors = read_checkpoint(path)
    model = NoisePredictor(params=tensors["params"], seed=meta.get("seed"), **meta["architecture"])
    schema = Schema.from_dict(meta["schema"])
    if schema.schema_hash != meta["schema_hash"]:
        raise SchemaError(f"{path}: schema hash does not match embedded schema")
    adam = None
    if "adam_m" in tensors:
        adam = AdamState(tensors["adam_m"].copy(), tensors["adam_v"].copy(), int(meta["adam_step"]))
    return LoadedModel(model, NoiseSchedule.from_dict(meta["schedule"]), schema, meta, adam)


def train(dataset: TabularDataset, schedule: NoiseSchedule, config: TrainConfig | None = None,
          model_config: ModelConfig | None = None, checkpoint_dir=None, resume_from=None,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit a noise predictor on the visible cells of ``dataset``.

    Every epoch draws its randomness from ``default_rng([seed, epoch])``, so a
    run resumed from a checkpoint continues along the same trajectory.
    """
    config = config or TrainConfig()
    model_config = model_config or ModelConfig()
    schema = dataset.schema
    obs_raw = dataset.observed
    obs_enc_count = dataset.observed_encoded.sum(axis=1)
    if not np.any(obs_enc_count >= 2):
        raise ConfigurationError("no row has at least 2 observed encoded entries")
    rows = np.flatnonzero(obs_raw.any(axis=1))
    x0_all = dataset.encoded

    if resume_from is not None:
        loaded = load_model(resume_from)
        if loaded.meta["schema_hash"] != schema.schema_hash:
            raise SchemaError("checkpoint schema differs from the training dataset")
        model = loaded.model
        adam = loaded.adam or AdamState.zeros(model.n_params)
        start = int(loaded.meta["epochs_done"])
        history = list(loaded.meta.get("loss_history", []))
    else:
        model = init_parameters(schema.d_enc, model_config.depth, model_config.width,
                                model_config.time_embed_dim, seed=config.seed,
                                activation=model_config.activation)
        adam = AdamState.zeros(model.n_params)
        start, history = 0, []

    result = TrainResult(model, history, adam, start)
    ckpt_path = Path(checkpoint_dir) / CHECKPOINT_NAME if checkpoint_dir is not None else None
    for epoch in range(start, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rows[rng.permutation(len(rows))]
        total, count = 0.0, 0
        for b0 in range(0, len(order), config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            B = len(idx)
            ratios = rng.uniform(config.mask_ratio_min, config.mask_ratio_max, size=B)
            target_raw = self_mask_batch(obs_raw[idx], ratios, rng)
            t = rng.integers(1, schedule.T + 1, size=B)
            eps = rng.standard_normal((B, schema.d_enc))
            keep = target_raw.any(axis=1)
            if not keep.all():
                idx, target_raw, t, eps = idx[keep], target_raw[keep], t[keep], eps[keep]
                if not len(idx):
                    continue
            cond = schema.expand(obs_raw[idx] & ~target_raw)
            target = schema.expand(target_raw)
            batch_value, per_row, grads = batch_loss(model, x0_all[idx], cond, target, t, eps, schedule)
            adam_step(model, grads, adam, config)
            total += float(per_row.sum())
            count += len(per_row)
        epoch_loss = total / max(count, 1)
        history.append(epoch_loss)
        result.epochs_done = epoch + 1
        log.info("epoch %d loss %.6f", epoch + 1, epoch_loss)
        if callback is not None:
            callback(epoch + 1, epoch_loss)
        if ckpt_path is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_model(ckpt_path, model, schedule, schema, config, adam, epoch + 1, history)
            result.checkpoints.append(ckpt_path)
    return result
