import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cbmp.policies import ConstantBeta, LogarithmicBeta, PosteriorStats, beta_at, random_select, ucb_select


def test_ucb_examples():
    assert ucb_select(PosteriorStats([1, 2], [0, 0]), 1.0) == 1
    assert ucb_select(PosteriorStats([1, 0], [0, 1]), 4.0) == 1
    assert ucb_select(PosteriorStats([3, 1, 3], [0, 0, 0]), 1.0) == 0


def test_ucb_errors():
    with pytest.raises(ValueError):
        ucb_select(PosteriorStats([], []), 1.0)
    with pytest.raises(ValueError):
        ucb_select(PosteriorStats([np.inf, 0.0], [0.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        PosteriorStats([0.0], [-1.0])
    with pytest.raises(ValueError):
        PosteriorStats([0.0, 1.0], [1.0])


def test_beta_schedules():
    assert beta_at(ConstantBeta(2.0), 17, 61) == 2.0
    assert beta_at(LogarithmicBeta(1.0, 0.1), 1, 61) == pytest.approx(math.log(61 * math.pi**2 / 0.6))
    values = [beta_at(LogarithmicBeta(), t, 61) for t in range(1, 200)]
    assert all(b > 0 for b in values) and np.all(np.diff(values) >= 0)
    with pytest.raises(ValueError):
        beta_at(ConstantBeta(), 0, 61)
    with pytest.raises(ValueError):
        ConstantBeta(0.0)
    with pytest.raises(ValueError):
        LogarithmicBeta(delta=1.5)


def test_random_select():
    assert random_select(1, np.random.default_rng(0)) == 0
    assert random_select(61, np.random.default_rng(42)) == random_select(61, np.random.default_rng(42))
    rng = np.random.default_rng(1)
    before = rng.bit_generator.state["state"]["state"]
    random_select(61, rng)
    ref = np.random.default_rng(1)
    ref.random()
    assert rng.bit_generator.state == ref.bit_generator.state and before != ref.bit_generator.state["state"]["state"]
    with pytest.raises(ValueError):
        random_select(0, rng)


def test_random_select_uniform():
    rng = np.random.default_rng(2)
    k, n = 10, 10_000
    counts = np.bincount([random_select(k, rng) for _ in range(n)], minlength=k)
    # binomial(n, 1/k): mean 1000, sd 30
    sd = math.sqrt(n * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - n / k) <= 4 * sd)


# integer-valued means and stds with square beta keep every score exact
ints = st.integers(-1000, 1000).map(float)
stds = st.integers(0, 10).map(float)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=ints), arrays(np.float64, n, elements=stds))),
    st.sampled_from([0.0, 1.0, 4.0, 9.0]), st.integers(-50, 50))
def test_ucb_shift_invariance(ms, beta, c):
    mean, std = ms
    assert ucb_select(PosteriorStats(mean, std), beta) == ucb_select(PosteriorStats(mean + c, std), beta)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=st.floats(0, 10)))))
def test_zero_beta_is_greedy(ms):
    mean, std = ms
    assert ucb_select(PosteriorStats(mean, std), 0.0) == int(np.argmax(mean))
