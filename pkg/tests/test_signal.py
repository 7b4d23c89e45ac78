import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixkit.signal import (
    DegenerateSignalError,
    MixtureBatch,
    mixture_consistency_project,
    rms,
    si_snr,
    thresholded_snr_loss,
    thresholded_snr_loss_grad,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_rms_constant_signal():
    assert rms(np.full(16, -0.7), eps=0.0) == pytest.approx(0.7)


def test_rms_silence_is_sqrt_eps():
    assert rms(np.zeros(8)) == pytest.approx(1e-4)


def test_rms_hand_value():
    assert rms(np.array([3.0, 4.0]), eps=0.0) == pytest.approx(math.sqrt(12.5))
    assert rms(np.array([3.0, 4.0]), eps=0.0) == pytest.approx(3.5355, abs=1e-4)


def test_thresholded_loss_perfect_reconstruction_is_minus_snr_max():
    y = np.random.default_rng(0).standard_normal(100)
    assert thresholded_snr_loss(y, y, 30.0) == -30.0


def test_thresholded_loss_zero_estimate():
    y = np.array([0.3, -1.2, 2.0])
    expected = -10 * math.log10(1 / (1 + 0.001))
    assert thresholded_snr_loss(y, np.zeros(3), 30.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.004341, abs=1e-6)


def test_thresholded_loss_orthogonal_estimate():
    got = thresholded_snr_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 30.0)
    assert got == pytest.approx(-10 * math.log10(1 / 2.001), abs=1e-12)
    assert got == pytest.approx(3.0125, abs=1e-4)


def test_thresholded_loss_rejects_silent_reference():
    with pytest.raises(DegenerateSignalError, match="undefined reference"):
        thresholded_snr_loss(np.zeros(4), np.ones(4))


def test_thresholded_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(32)
    yhat = y + 0.3 * rng.standard_normal(32)
    g = thresholded_snr_loss_grad(y, yhat)
    h = 1e-6
    fd = np.array([
        (thresholded_snr_loss(y, yhat + h * e) - thresholded_snr_loss(y, yhat - h * e)) / (2 * h)
        for e in np.eye(32)
    ])
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 12, elements=finite), arrays(float, 12, elements=finite))
def test_thresholded_loss_lower_bound(y, yhat):
    if np.dot(y, y) == 0.0:
        return
    assert thresholded_snr_loss(y, yhat, 30.0) >= -30.0


def test_si_snr_rescaled_reference_is_infinite():
    ref = np.random.default_rng(1).standard_normal(50)
    assert si_snr(ref, 2.5 * ref) == np.inf


def test_si_snr_orthogonal_is_minus_infinity():
    assert si_snr(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == -np.inf


def test_si_snr_hand_value():
    assert si_snr(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)


def test_si_snr_rejects_silent_reference():
    with pytest.raises(DegenerateSignalError):
        si_snr(np.zeros(3), np.ones(3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_si_snr_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    ref, est = rng.standard_normal((2, 64))
    assert si_snr(ref, c * est) == pytest.approx(si_snr(ref, est), rel=1e-9, abs=1e-9)


def test_projection_keeps_consistent_sources():
    rng = np.random.default_rng(2)
    s = rng.standard_normal((3, 20))
    np.testing.assert_array_equal(mixture_consistency_project(s, s.sum(axis=0)), s)


def test_projection_splits_residual_evenly_from_silence():
    mix = np.random.default_rng(4).standard_normal(10)
    out = mixture_consistency_project(np.zeros((2, 10)), mix)
    np.testing.assert_allclose(out, np.stack([mix / 2, mix / 2]))


def test_projection_residual_share_for_four_sources():
    rng = np.random.default_rng(5)
    s = rng.standard_normal((4, 30))
    r = rng.standard_normal(30)
    mix = s.sum(axis=0) + r
    out = mixture_consistency_project(s, mix)
    np.testing.assert_allclose(out - s, np.tile(r / 4, (4, 1)), atol=1e-12)
    np.testing.assert_allclose(out.sum(axis=0), mix, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9))
def test_projection_idempotent_and_consistent(seed, m):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((m, 40)) * rng.uniform(0.01, 100)
    mix = rng.standard_normal(40)
    once = mixture_consistency_project(s, mix)
    twice = mixture_consistency_project(once, mix)
    np.testing.assert_allclose(twice, once, rtol=1e-10, atol=1e-10 * np.abs(once).max())
    err = np.linalg.norm(once.sum(axis=0) - mix) / np.linalg.norm(mix)
    assert err < 1e-6


def test_mixture_batch_mom_is_sum():
    refs = np.random.default_rng(6).standard_normal((3, 16))
    batch = MixtureBatch(refs)
    np.testing.assert_array_equal(batch.mom, refs[0] + refs[1] + refs[2])
    assert batch.n_references == 3 and batch.length == 16


def test_waveform_validation():
    with pytest.raises(ValueError):
        rms_input = np.array([1.0, np.nan])
        si_snr(rms_input, rms_input)
    with pytest.raises(ValueError):
        MixtureBatch(np.zeros((2, 0)))
