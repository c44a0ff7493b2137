import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facedyn.dynamic import (
    DynamicImage,
    compute_dynamic_image,
    load_dynamic_image,
    normalize_array,
    normalize_for_display,
    pool_frames,
    rank_pool_coefficients,
    rank_pool_exact,
    rank_pool_fractions,
    save_dynamic_image,
)
from facedyn.errors import DomainError, RankDeficiencyError
from facedyn.imageops import ImageSequence


def harmonic(n):
    return sum((Fraction(1, i) for i in range(1, n + 1)), Fraction(0))


def test_small_T_exact_values():
    assert rank_pool_fractions(1) == [0]
    assert rank_pool_fractions(2) == [Fraction(-1, 2), Fraction(1, 2)]
    assert rank_pool_fractions(3) == [Fraction(-4, 3), Fraction(2, 3), Fraction(2, 3)]
    np.testing.assert_allclose(rank_pool_coefficients(3).alphas, [-4 / 3, 2 / 3, 2 / 3],
                               rtol=0, atol=1e-12)
    assert list(rank_pool_coefficients(2).alphas) == [-0.5, 0.5]


@pytest.mark.parametrize("T", [4, 7, 20])
def test_float_matches_rational(T):
    # Independent rational evaluation straight from harmonic numbers.
    ref = [2 * (T - t + 1) - (T + 1) * (harmonic(T) - harmonic(t - 1)) for t in range(1, T + 1)]
    np.testing.assert_allclose(rank_pool_coefficients(T).alphas, [float(r) for r in ref],
                               rtol=0, atol=1e-12)


def test_coefficients_sum_to_zero():
    for T in (1, 2, 10, 100, 1000):
        assert abs(rank_pool_coefficients(T).alphas.sum()) <= 1e-9


def test_bad_T():
    with pytest.raises(DomainError):
        rank_pool_coefficients(0)


def test_constant_sequence_pools_to_zero():
    frames = np.repeat(np.random.default_rng(0).uniform(size=(1, 5, 5)), 9, axis=0)
    di = compute_dynamic_image(ImageSequence(frames, "cross_domain"))
    assert np.max(np.abs(di.pixels)) <= 1e-12


def test_two_frames_half_difference():
    rng = np.random.default_rng(1)
    v1, v2 = rng.uniform(size=(2, 4, 4))
    np.testing.assert_allclose(pool_frames(np.stack([v1, v2])), 0.5 * (v2 - v1), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_linearity(T, a, b, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.uniform(size=(2, T, 3, 3))
    lhs = pool_frames(a * X + b * Y)
    rhs = a * pool_frames(X) + b * pool_frames(Y)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_exact_oracle_on_ramp_is_positive_multiple():
    A = np.random.default_rng(2).uniform(0.1, 1.0, size=(3, 3))
    frames = np.arange(1, 7)[:, None, None] * A
    u = rank_pool_exact(frames, 1e-3).pixels
    ratio = u / A
    assert np.all(ratio > 0)
    # Proportionality holds up to the ridge shrinkage, which is isotropic here.
    cos = np.sum(u * A) / (np.linalg.norm(u) * np.linalg.norm(A))
    assert cos > 1 - 1e-9


def test_exact_constant_is_zero_and_singular_raises():
    frames = np.ones((5, 2, 2))
    assert np.all(rank_pool_exact(frames, 1e-3).pixels == 0)
    with pytest.raises(RankDeficiencyError):
        rank_pool_exact(frames, 0.0)


def test_sign_agreement_on_binary_sequences():
    for bits in itertools.product([0.0, 1.0], repeat=4):
        seq = np.array(bits)
        approx = pool_frames(seq)
        exact = rank_pool_exact(seq, 1e-3).pixels[0, 0]
        assert np.sign(np.round(approx, 12)) == np.sign(np.round(exact, 12)), bits


def test_display_normalization():
    np.testing.assert_array_equal(normalize_array(np.zeros((3, 3))), 0.5)
    px = np.array([[-1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(normalize_array(px), [[0, 0.5], [1, 0.5]])
    img = normalize_for_display(DynamicImage(np.random.default_rng(3).normal(size=(6, 6)), 4))
    assert img.pixels.min() == 0 and img.pixels.max() == 1


def test_binary_round_trip(tmp_path):
    di = DynamicImage(np.random.default_rng(4).normal(size=(5, 5)), 12)
    save_dynamic_image(di, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    assert len(raw) == 8 + 25 * 4
    back = load_dynamic_image(tmp_path / "d.bin")
    assert back.source_length == 12
    np.testing.assert_array_equal(back.pixels, di.pixels.astype(np.float32))
