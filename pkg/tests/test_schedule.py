import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missddim.errors import ParameterError
from missddim.schedule import build_schedule, make_subsequence, sigma_eta

# running product of (1 - beta) for the quadratic schedule, computed with a scalar loop
QUADRATIC_100_ALPHA_BAR_T = 1.2022639600949675e-05


def test_linear_two_steps():
    s = build_schedule("linear", 2, 0.1, 0.2)
    np.testing.assert_allclose(s.beta, [0.1, 0.2])
    np.testing.assert_allclose(s.alpha_bar, [1.0, 0.9, 0.72])


def test_single_step():
    s = build_schedule("linear", 1, 0.1, 0.1)
    np.testing.assert_allclose(s.beta, [0.1])
    np.testing.assert_allclose(s.alpha_bar, [1.0, 0.9])


def test_quadratic_default_terminal_alpha_bar():
    s = build_schedule("quadratic", 100, 1e-4, 0.3)
    assert 0 < s.alpha_bar[100] < 0.01
    assert s.alpha_bar[100] == pytest.approx(QUADRATIC_100_ALPHA_BAR_T, rel=1e-12)


@pytest.mark.parametrize("args", [
    ("cosine", 10, 1e-4, 0.02),
    ("linear", 0, 1e-4, 0.02),
    ("linear", 10, 0.0, 0.02),
    ("linear", 10, 0.1, 0.05),
    ("linear", 10, 1e-4, 1.0),
])
def test_build_schedule_rejects(args):
    with pytest.raises(ParameterError):
        build_schedule(*args)


def test_schedule_is_read_only():
    s = build_schedule()
    with pytest.raises(ValueError):
        s.alpha_bar[1] = 0.5


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["linear", "quadratic"]), T=st.integers(1, 300),
       lo=st.floats(1e-6, 0.2), span=st.floats(0.0, 0.7))
def test_schedule_invariants(kind, T, lo, span):
    hi = min(lo + span, 0.95)
    s = build_schedule(kind, T, lo, hi)
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar <= 1))
    ratio = s.alpha_bar[1:] / s.alpha_bar[:-1]
    np.testing.assert_allclose(ratio, 1 - s.beta, rtol=1e-12)


class _FakeSchedule:
    """Just enough of a schedule to pin alpha_bar values."""

    def __init__(self, alpha_bar):
        self.alpha_bar = np.asarray(alpha_bar)
        self.T = len(alpha_bar) - 1


def test_sigma_eta_hand_values():
    s = _FakeSchedule([1.0, 0.64, 0.25])
    assert sigma_eta(s, 1, 2, 1.0) == pytest.approx(0.540833, abs=1e-6)
    assert sigma_eta(s, 1, 2, 0.5) == pytest.approx(0.270416, abs=1e-6)
    assert sigma_eta(s, 1, 2, 0.0) == 0.0


def test_sigma_eta_zero_eta_everywhere():
    s = build_schedule()
    assert all(sigma_eta(s, a, b, 0.0) == 0.0 for a in range(0, 100, 7) for b in range(a + 1, 101, 9))


def test_sigma_eta_order_checked():
    s = build_schedule()
    with pytest.raises(ParameterError):
        sigma_eta(s, 5, 5, 1.0)
    with pytest.raises(ParameterError):
        sigma_eta(s, 6, 5, 1.0)


@settings(max_examples=100, deadline=None)
@given(a=st.integers(0, 99), gap=st.integers(1, 100), eta=st.floats(0, 3))
def test_sigma_eta_linear_in_eta(a, gap, eta):
    s = build_schedule()
    b = min(a + gap, 100)
    assert sigma_eta(s, a, b, 2 * eta) == pytest.approx(2 * sigma_eta(s, a, b, eta), rel=1e-12, abs=1e-300)


def test_sigma_eta_one_matches_posterior_variance():
    s = build_schedule()
    for t in range(1, 101):
        posterior = s.beta[t - 1] * (1 - s.alpha_bar[t - 1]) / (1 - s.alpha_bar[t])
        assert abs(sigma_eta(s, t - 1, t, 1.0) ** 2 - posterior) < 1e-12


@pytest.mark.parametrize("T,S,expected", [
    (100, 4, [25, 50, 75, 100]),
    (100, 100, list(range(1, 101))),
    (100, 20, list(range(5, 101, 5))),
    (100, 1, [100]),
    (7, 3, [2, 5, 7]),
])
def test_make_subsequence(T, S, expected):
    assert make_subsequence(T, S).tolist() == expected


def test_make_subsequence_rejects_too_many_steps():
    with pytest.raises(ParameterError):
        make_subsequence(10, 11)


@settings(max_examples=200, deadline=None)
@given(T=st.integers(1, 500), data=st.data())
def test_subsequence_invariants(T, data):
    S = data.draw(st.integers(1, T))
    tau = make_subsequence(T, S)
    assert tau[-1] == T and tau[0] >= 1
    assert np.all(np.diff(tau) > 0)
    assert len(tau) == S
