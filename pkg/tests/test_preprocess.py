import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from fishergesture.data import SynthConfig, generate_synthetic
from fishergesture.preprocess import (
    ConstantChannelError, moving_average, normalize_amplitude, preprocess_pipeline, resample_spline,
)


def test_moving_average_hand_case():
    npt.assert_allclose(moving_average(np.array([1.0, 2, 3, 4, 5]), 3), [1.5, 2, 3, 4, 4.5], rtol=0, atol=1e-15)


def test_moving_average_identity_and_constant(rng):
    x = rng.normal(size=(30, 4))
    npt.assert_array_equal(moving_average(x, 1), x)
    npt.assert_allclose(moving_average(np.full((25, 2), 3.5), 7), 3.5, rtol=0, atol=1e-14)


@pytest.mark.parametrize("window", [0, 2, 6, -3])
def test_moving_average_rejects_bad_window(window):
    with pytest.raises(ValueError):
        moving_average(np.arange(10.0), window)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([3, 5, 7]), st.integers(1, 6))
def test_moving_average_shift_equivariant(seed, window, shift):
    x = np.random.default_rng(seed).normal(size=40)
    a = moving_average(x, window)
    b = moving_average(np.roll(x, shift), window)
    half = window // 2
    interior = slice(half + shift, 40 - half)
    npt.assert_allclose(b[interior], np.roll(a, shift)[interior], rtol=0, atol=1e-12)


def test_moving_average_attenuates_spike():
    x = np.full(31, 2.0)
    x[15] = 9.0
    y = moving_average(x, 5)
    assert y[15] - 2.0 == pytest.approx(7.0 / 5, abs=1e-14)


def test_normalize_amplitude_cases():
    npt.assert_array_equal(normalize_amplitude(np.array([0.0, 5.0, 10.0])), [0, 0.5, 1])
    npt.assert_array_equal(normalize_amplitude(np.array([-2.0, 0.0, 6.0])), [0, 0.25, 1])
    x = np.array([0.0, 0.3, 1.0, 0.75])
    npt.assert_array_equal(normalize_amplitude(x), x)


def test_normalize_amplitude_constant_channel_reports_index():
    x = np.column_stack([np.arange(5.0), np.ones(5), np.arange(5.0) ** 2])
    with pytest.raises(ConstantChannelError) as err:
        normalize_amplitude(x)
    assert err.value.channel == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e4))
def test_normalize_attains_exact_bounds(seed, scale):
    x = np.random.default_rng(seed).normal(0, scale, size=(17, 6))
    y = normalize_amplitude(x)
    assert np.all(y.min(axis=0) == 0.0)
    assert np.all(y.max(axis=0) == 1.0)


@pytest.mark.parametrize("length", [2, 7, 50, 333])
def test_spline_reproduces_linear(length):
    t = np.arange(23.0)
    y = np.column_stack([1.7 * t - 4.0, -0.2 * t + 9.0])
    q = np.linspace(0, 22, length)
    npt.assert_allclose(resample_spline(y, length), np.column_stack([1.7 * q - 4.0, -0.2 * q + 9.0]),
                        rtol=0, atol=1e-9)


def test_spline_identity_at_knots(rng):
    y = rng.normal(size=(40, 3))
    npt.assert_allclose(resample_spline(y, 40), y, rtol=0, atol=1e-9)


def test_spline_endpoints_exact(rng):
    y = rng.normal(size=(13, 2))
    out = resample_spline(y, 101)
    npt.assert_array_equal(out[0], y[0])
    npt.assert_array_equal(out[-1], y[-1])


def test_spline_matches_scipy_natural_spline(rng):
    y = rng.normal(size=(19, 4))
    q = np.linspace(0, 18, 77)
    expected = CubicSpline(np.arange(19), y, bc_type="natural")(q)
    npt.assert_allclose(resample_spline(y, 77), expected, rtol=0, atol=1e-12)


def test_spline_sine_against_analytic():
    t = np.arange(21.0)
    q = np.linspace(0, 20, 41)
    err = np.abs(resample_spline(np.sin(2 * np.pi * t / 20), 41) - np.sin(2 * np.pi * q / 20))
    assert err.max() <= 1e-3


def test_spline_rejects_short_target():
    with pytest.raises(ValueError):
        resample_spline(np.arange(5.0), 1)
    with pytest.raises(ValueError):
        resample_spline(np.arange(1.0), 10)


def test_pipeline_identity_window_at_knots(rng):
    x = rng.normal(size=(30, 6))
    npt.assert_allclose(preprocess_pipeline(x, 1, 30), normalize_amplitude(x), rtol=0, atol=1e-9)


def test_pipeline_output_range_on_synthetic_corpus():
    ds = generate_synthetic(SynthConfig(samples_per_class=40, seed=5))
    for s in ds.samples:
        out = preprocess_pipeline(s.values, 5, 1000)
        assert out.shape == (1000, 6)
        assert out.min() >= -0.25 and out.max() <= 1.25


def test_pipeline_deterministic(rng):
    x = rng.normal(size=(80, 3))
    npt.assert_array_equal(preprocess_pipeline(x, 5, 50), preprocess_pipeline(x.copy(), 5, 50))
