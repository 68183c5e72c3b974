"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 6, 8 and 9 share five models trained with default settings on the
synthetic benchmark (n=5000, rho=0.8, 50% MCAR on the second feature); the
training seeds 0..4 define the five seed groups. Expect about 15 minutes on
one CPU core.
"""

import math
import time

import numpy as np
import pytest

from missddim.cli import main
from missddim.data import simulate_mcar, write_masked
from missddim.evaluation import (benchmark_grid, ddim_imputer, evaluate, gaussian_oracle_rmse,
                                 make_synthetic_gaussian, mean_mode_baseline, stability)
from missddim.predictor import init_parameters
from missddim.sampler import DiffusionState, SamplerConfig, ddim_step, ddpm_step, impute_dataset
from missddim.schedule import build_schedule, make_subsequence, sigma_eta
from missddim.training import TrainConfig, forward_corrupt, save_model, self_mask, self_mask_batch, train

pytestmark = pytest.mark.acceptance

N_ROWS, RHO, RATE = 5000, 0.8, 0.5
GROUPS = range(5)


@pytest.fixture(scope="session")
def benchmark():
    ds = make_synthetic_gaussian(N_ROWS, RHO, seed=0)
    return simulate_mcar(ds, RATE, seed=0, columns=["x2"])


@pytest.fixture(scope="session")
def trained(benchmark):
    """Five default-configuration models, one per training seed."""
    schedule = build_schedule()
    models = []
    for seed in GROUPS:
        models.append(train(benchmark, schedule, TrainConfig(seed=seed)).model)
    return schedule, models


def _rmse(dataset, encoded):
    return evaluate(dataset, [encoded]).rmse_continuous


# -- 1 ----------------------------------------------------------------------

@pytest.mark.slow
def test_c01_cli_determinism_across_threads(benchmark, trained, tmp_path, record):
    schedule, models = trained
    paths = write_masked(benchmark, tmp_path / "mask")
    save_model(tmp_path / "model.ckpt", models[0], schedule, benchmark.schema)
    outputs = []
    start = time.perf_counter()
    for run, threads in enumerate([1, 1, 2, 4, 3, 1, 2, 8, 4, 1]):
        out = tmp_path / f"run{run}"
        code = main(["-q", "impute", str(paths["masked"]), "--checkpoint", str(tmp_path / "model.ckpt"),
                     "--eta", "0", "--samples", "1", "--init-seed", "7", "--threads", str(threads),
                     "--out", str(out)])
        assert code == 0
        outputs.append((out / "completed.csv").read_bytes())
    elapsed = time.perf_counter() - start
    identical = all(o == outputs[0] for o in outputs)
    ok = identical and elapsed < 60
    record(1, ok, f"10 impute runs, threads in {{1,2,3,4,8}}: identical={identical}, {elapsed:.1f}s (< 60s)")
    assert ok


# -- 2 ----------------------------------------------------------------------

class _Stub:
    def __init__(self, eps):
        self.eps = eps

    def __call__(self, x, m, t):
        return self.eps


def test_c02_ddim_eta_one_matches_ddpm(record):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        kind = rng.choice(["linear", "quadratic"])
        T = int(rng.integers(2, 501))
        lo = float(rng.uniform(1e-5, 1e-2))
        schedule = build_schedule(kind, T, lo, float(rng.uniform(lo, 0.5)))
        t = int(rng.integers(1, T + 1))
        d = int(rng.integers(1, 9))
        x = rng.normal(size=(1, d)) * rng.uniform(0.1, 10)
        eps, z = rng.normal(size=(2, 1, d))
        cond = np.zeros((1, d), dtype=bool)
        a = ddim_step(DiffusionState(x, t, cond, x), t, t - 1, _Stub(eps), schedule, 1.0, z)
        b = ddpm_step(DiffusionState(x, t, cond, x), t, _Stub(eps), schedule, z)
        worst = max(worst, float(np.max(np.abs(a.x - b.x))))
    ok = worst < 1e-10
    record(2, ok, f"1000 random configurations, max |ddim - ddpm| = {worst:.2e} (< 1e-10)")
    assert ok


# -- 3 ----------------------------------------------------------------------

def test_c03_sigma_eta_one_is_posterior_std(record):
    s = build_schedule()
    worst = 0.0
    for t in range(1, s.T + 1):
        posterior = s.beta[t - 1] * (1 - s.alpha_bar[t - 1]) / (1 - s.alpha_bar[t])
        worst = max(worst, abs(sigma_eta(s, t - 1, t, 1.0) ** 2 - posterior))
    ok = worst < 1e-12
    record(3, ok, f"all t of T=100, max |sigma^2 - posterior variance| = {worst:.2e} (< 1e-12)")
    assert ok


# -- 4 ----------------------------------------------------------------------

def test_c04_analytic_predictor_recovers_point_mass(record):
    s = build_schedule()
    rng = np.random.default_rng(4)
    m = rng.normal(size=6) * 2

    def exact(x, mask, t):
        a = s.alpha_bar[t]
        return (x - math.sqrt(a) * m) / math.sqrt(1 - a)

    worst = 0.0
    for scale in (0.1, 1.0, 10.0, 100.0):
        x = rng.normal(size=(4, 6)) * scale
        state = DiffusionState(x, 100, np.zeros(x.shape, bool), x)
        tau = [0] + make_subsequence(100, 100).tolist()
        for k in range(100, 0, -1):
            state = ddim_step(state, tau[k], tau[k - 1], exact, s, 0.0)
        worst = max(worst, float(np.max(np.abs(state.x - m))))
    ok = worst < 1e-8
    record(4, ok, f"eta=0, 100 steps, x_T scales 0.1..100: max |x_0 - m| = {worst:.2e} (< 1e-8)")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_c05_gradient_matches_finite_differences(record):
    rng = np.random.default_rng(5)
    model = init_parameters(8, depth=2, width=16, time_embed_dim=8, seed=5)
    model.params += rng.normal(scale=0.05, size=model.n_params)
    x, c = rng.normal(size=(4, 8)), rng.integers(0, 2, size=(4, 8)).astype(float)
    t, w = rng.integers(1, 101, size=4), rng.normal(size=(4, 8))
    out, cache = model.forward_train(x, c, t)
    grad = model.backward(w, cache)
    h = 1e-5
    worst = 0.0
    picks = rng.choice(model.n_params, size=200, replace=False)
    for i in picks:
        orig = model.params[i]
        model.params[i] = orig + h
        up = float(np.sum(w * model.forward(x, c, t)))
        model.params[i] = orig - h
        down = float(np.sum(w * model.forward(x, c, t)))
        model.params[i] = orig
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(grad[i] - fd) / max(1.0, abs(grad[i])))
    ok = worst < 1e-4
    record(5, ok, f"{len(picks)} parameters, max relative error = {worst:.2e} (< 1e-4)")
    assert ok


# -- 6 ----------------------------------------------------------------------

@pytest.mark.slow
def test_c06_gaussian_imputation_quality(benchmark, trained, record):
    schedule, models = trained
    baseline = _rmse(benchmark, mean_mode_baseline(benchmark))
    oracle = gaussian_oracle_rmse(RHO)
    limit = min(0.85 * baseline, 1.15 * oracle)
    scores = []
    for model in models:
        res = impute_dataset(benchmark, model, schedule, SamplerConfig(eta=0.0, steps=100))
        scores.append(_rmse(benchmark, res.encoded))
    wins = sum(s <= limit for s in scores)
    ok = wins >= 4
    record(6, ok, f"RMSE per seed {np.round(scores, 4).tolist()}, mean baseline {baseline:.4f}, "
                  f"limit min(0.85*baseline, 1.15*{oracle:.1f}) = {limit:.4f}: {wins}/5 seeds within")
    assert ok


# -- 7 ----------------------------------------------------------------------

@pytest.mark.slow
def test_c07_sampling_time_linear_in_steps(benchmark, trained, record):
    schedule, models = trained

    def best(steps):
        cfg = SamplerConfig(eta=0.0, steps=steps)
        return min(impute_dataset(benchmark, models[0], schedule, cfg).wall_time_s for _ in range(3))

    t20, t100 = best(20), best(100)
    ratio = t20 / t100
    ok = 0.15 <= ratio <= 0.30
    record(7, ok, f"S=20 {t20:.2f}s, S=100 {t100:.2f}s, ratio {ratio:.3f} (in [0.15, 0.30])")
    assert ok


# -- 8 ----------------------------------------------------------------------

@pytest.mark.slow
def test_c08_eta_trend_at_25_steps(benchmark, trained, record):
    schedule, models = trained
    wins, detail = 0, []
    for model in models:
        rows = benchmark_grid(benchmark, model, schedule, [0.0, 1.0], [25, 100], n_repeats=3)
        got = {(r["eta"], r["steps"]): r["rmse_mean"] for r in rows}
        wins += got[(0.0, 25)] < got[(1.0, 25)]
        detail.append(f"S25 {got[(0.0, 25)]:.3f} vs {got[(1.0, 25)]:.3f}, "
                      f"S100 {got[(0.0, 100)]:.3f} vs {got[(1.0, 100)]:.3f}")
    ok = wins >= 4
    record(8, ok, f"RMSE eta=0 vs eta=1 per group [{'; '.join(detail)}]: "
                  f"eta=0 better at S=25 in {wins}/5 groups")
    assert ok


# -- 9 ----------------------------------------------------------------------

@pytest.mark.slow
def test_c09_stability(benchmark, trained, record):
    schedule, models = trained
    wins, zero_fixed, positive, detail = 0, True, True, []
    for model in models:
        fixed = stability(ddim_imputer(model, schedule, eta=0.0), benchmark, 2, [11, 11])
        distinct0 = stability(ddim_imputer(model, schedule, eta=0.0), benchmark, 3, [0, 1, 2])
        distinct1 = stability(ddim_imputer(model, schedule, eta=1.0), benchmark, 3, [0, 1, 2])
        zero_fixed &= fixed.mean_std == 0.0
        positive &= distinct1.mean_std > 0.0
        wins += distinct1.mean_std > distinct0.mean_std
        detail.append(f"{distinct0.mean_std:.3f}/{distinct1.mean_std:.3f}")
    ok = zero_fixed and positive and wins >= 4
    record(9, ok, f"fixed-seed eta=0 std exactly 0: {zero_fixed}; eta=1 std > 0: {positive}; "
                  f"std eta=0/eta=1 per group [{', '.join(detail)}]: eta=1 larger in {wins}/5 groups")
    assert ok


# -- 10 ---------------------------------------------------------------------

def test_c10_self_mask_partition(record):
    rng = np.random.default_rng(10)
    violations = 0
    for _ in range(10_000):
        width = int(rng.integers(1, 16))
        observed = np.flatnonzero(rng.random(width) < rng.uniform(0, 1))
        ratio = float(rng.uniform(0, 1))
        s = self_mask(observed, ratio, rng, width=width)
        violations += bool(s.cond_idx & s.target_idx)
        violations += (s.cond_idx | s.target_idx) != set(observed.tolist())
        violations += bool(s.target_idx & s.native_missing_idx)
        violations += len(s.target_idx) != math.ceil(round(ratio * len(observed), 9))
    observed = rng.random((10_000, 12)) < rng.uniform(0, 1, size=(10_000, 1))
    ratios = rng.uniform(0, 1, size=10_000)
    target = self_mask_batch(observed, ratios, rng)
    violations += int((target & ~observed).any(axis=1).sum())
    violations += int((target.sum(axis=1) != np.ceil(np.round(ratios * observed.sum(axis=1), 9))).sum())
    ok = violations == 0
    record(10, ok, f"10^4 single-row and 10^4 batched draws: {violations} violations (need 0)")
    assert ok


# -- 11 ---------------------------------------------------------------------

def test_c11_forward_marginal_variance(record):
    s = build_schedule()
    rng = np.random.default_rng(11)
    detail, ok = [], True
    for t in (5, 30, 100):
        eps = rng.standard_normal(100_000)
        var = forward_corrupt(np.zeros(100_000), t, s, eps).var()
        target = 1 - s.alpha_bar[t]
        rel = abs(var - target) / target
        ok &= rel <= 0.03
        detail.append(f"t={t}: {var:.4f} vs {target:.4f} ({100 * rel:.2f}%)")
    record(11, ok, "; ".join(detail) + " (within 3%)")
    assert ok
