import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erasure3d.channel import (
    ErasureModel,
    StalledLinkError,
    arq_attempts,
    decode_success,
    erasure_probability,
    success_probability,
)

EXP = ErasureModel.exponential(0.5)
POLY = ErasureModel.polynomial(4.0)


@pytest.mark.parametrize(
    "model, d, want",
    [(EXP, 0.0, 0.0), (EXP, 2.0, 0.75), (POLY, 2.0, 0.9375), (POLY, 0.5, 0.0), (POLY, 1.0, 0.0)],
)
def test_erasure_probability_examples(model, d, want):
    assert erasure_probability(d, model) == pytest.approx(want, abs=1e-15)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0.01, 0.99))
def test_erasure_monotone_in_distance(d1, d2, gamma):
    model = ErasureModel.exponential(gamma)
    lo, hi = sorted((d1, d2))
    assert 0 <= erasure_probability(lo, model) <= erasure_probability(hi, model) <= 1


def test_erasure_vectorised():
    out = erasure_probability(np.array([0.0, 1.0, 2.0]), EXP)
    np.testing.assert_allclose(out, [0, 0.5, 0.75])


def test_d_star():
    assert ErasureModel.exponential(math.exp(-1 / 7)).d_star == pytest.approx(7.0)
    with pytest.raises(AttributeError):
        POLY.d_star


@pytest.mark.parametrize("kw", [dict(family="exponential", gamma=1.0), dict(family="exponential"), dict(family="polynomial", alpha=0)])
def test_invalid_models(kw):
    with pytest.raises(ValueError):
        ErasureModel(**kw)


def test_small_alpha_warns():
    with pytest.warns(UserWarning):
        ErasureModel.polynomial(3.0)


def test_success_probability_examples():
    assert success_probability(1.0, [], EXP) == pytest.approx(0.5)
    assert success_probability(1.0, [1.0, 1.0], EXP) == pytest.approx(0.125)
    assert success_probability(1.0, [0.0], EXP) == 0.0
    assert success_probability(3.0, [0.5], POLY) == 0.0  # interferer with eps = 0


def test_far_interferers_truncated():
    # gamma**d below 1e-9 is dropped, so the product equals the lone-link value
    assert success_probability(1.0, [100.0], EXP) == pytest.approx(0.5, rel=0, abs=0)


def test_decode_trivial_cases():
    rng = np.random.default_rng(0)
    assert all(decode_success(0.0, [], EXP, rng) for _ in range(200))
    assert not any(decode_success(0.0, [0.0], EXP, rng) for _ in range(200))


def test_decode_matches_closed_form():
    rng = np.random.default_rng(1)
    draws = 100_000
    hits = sum(decode_success(1.0, [1.0, 1.0], EXP, rng) for _ in range(draws))
    p = 0.125
    assert abs(hits / draws - p) < 3 * math.sqrt(p * (1 - p) / draws)


def test_arq_attempts():
    rng = np.random.default_rng(2)
    assert arq_attempts(1.0, rng) == 1
    assert np.all(arq_attempts(1.0, rng, size=50) == 1)
    samples = arq_attempts(0.25, rng, size=100_000)
    assert samples.min() >= 1
    assert abs(samples.mean() - 4.0) < 0.05
    with pytest.raises(StalledLinkError):
        arq_attempts(0.0, rng)
    with pytest.raises(ValueError):
        arq_attempts(1.5, rng)
