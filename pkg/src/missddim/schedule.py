"""Diffusion noise schedules and accelerated step subsequences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

SCHEDULE_KINDS = ("linear", "quadratic")


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta / cumulative-alpha tables for ``T`` diffusion steps.

    ``beta[t - 1]`` is the corruption variance of step ``t`` (1-based) and
    ``alpha_bar[t]`` the cumulative product of ``1 - beta`` up to step ``t``,
    with ``alpha_bar[0] == 1`` standing for clean data.
    """

    kind: str
    T: int
    beta_min: float
    beta_max: float
    beta: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def beta_at(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ParameterError(f"step {t} outside [1, {self.T}]")
        return float(self.beta[t - 1])

    def posterior_variance(self, t: int) -> float:
        """DDPM posterior variance ``beta_t (1 - abar_{t-1}) / (1 - abar_t)``."""
        b = self.beta_at(t)
        return b * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T,
                "beta_min": self.beta_min, "beta_max": self.beta_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return build_schedule(d["kind"], int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))


def build_schedule(kind: str = "quadratic", T: int = 100, beta_min: float = 1e-4,
                   beta_max: float = 0.3) -> NoiseSchedule:
    """Build a ``linear`` or ``quadratic`` beta schedule.

    ``quadratic`` interpolates ``sqrt(beta)`` linearly, so betas grow slowly
    at first. With ``T == 1`` only ``beta_min`` is used.
    """
    if kind not in SCHEDULE_KINDS:
        raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T}")
    T = int(T)
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError(
            f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}")

    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    else:
        beta = np.linspace(math.sqrt(beta_min), math.sqrt(beta_max), T, dtype=np.float64) ** 2
    # linspace endpoints are exact; squaring may nudge them by an ulp
    beta[0] = beta_min
    if T > 1:
        beta[-1] = beta_max

    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    for t in range(1, T + 1):
        alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t - 1])

    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(kind, T, float(beta_min), float(beta_max), beta, alpha_bar)


def sigma_eta(schedule: NoiseSchedule, t_prev: int, t_cur: int, eta: float) -> float:
    """Per-step noise std of the eta-interpolated DDIM sampler.

    ``eta = 0`` gives the deterministic sampler; ``eta = 1`` on adjacent steps
    recovers the DDPM posterior std.
    """
    if not 0 <= t_prev < t_cur <= schedule.T:
        raise ParameterError(
            f"need 0 <= t_prev < t_cur <= {schedule.T}, got t_prev={t_prev}, t_cur={t_cur}")
    if eta < 0:
        raise ParameterError(f"eta must be >= 0, got {eta}")
    if eta == 0:
        return 0.0
    a_prev = schedule.alpha_bar[t_prev]
    a_cur = schedule.alpha_bar[t_cur]
    return float(eta * math.sqrt((1.0 - a_prev) / (1.0 - a_cur)) * math.sqrt(1.0 - a_cur / a_prev))


def make_subsequence(T: int, S: int) -> np.ndarray:
    """``S`` evenly spaced steps in ``[1, T]`` ending at ``T``.

    Element ``i`` (1-based) is ``i * T / S`` rounded half-up.
    """
    if T < 1 or S < 1:
        raise ParameterError(f"T and S must be >= 1, got T={T}, S={S}")
    if S > T:
        raise ParameterError(f"cannot take {S} steps from a {T}-step schedule")
    raw = [int(math.floor(i * T / S + 0.5)) for i in range(1, S + 1)]
    raw[-1] = T
    tau: list[int] = []
    # keep the last occurrence of any repeated value
    for i, v in enumerate(raw):
        if i + 1 < len(raw) and raw[i + 1] == v:
            continue
        tau.append(v)
    out = np.asarray(tau, dtype=np.int64)
    out.setflags(write=False)
    return out
