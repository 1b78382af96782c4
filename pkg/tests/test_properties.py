"""Randomised property checks across modules (Hypothesis)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonolab.acquisition import default_pitch
from sonolab.beamform_time import imap_beamform, lateral_selfconv, mv_weights
from sonolab.geometry import (
    ArrayGeometry,
    coba_beam_pattern,
    das_beam_pattern,
    intrinsic_apodization,
    sum_coarray,
)
from sonolab.sparse import soft_threshold
from sonolab.superres import fit_clutter_filter

PITCH = default_pitch()
THETAS = np.linspace(-np.pi / 2, np.pi / 2, 181)

positions = st.lists(st.integers(-40, 40), min_size=1, max_size=24, unique=True)
seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=60, deadline=None)
@given(positions)
def test_coba_pattern_is_squared_das(pos):
    g = ArrayGeometry(tuple(pos), PITCH)
    das = das_beam_pattern(g, theta_grid=THETAS)
    coba = coba_beam_pattern(g, theta_grid=THETAS)
    np.testing.assert_allclose(coba.values, das.values ** 2, rtol=0, atol=1e-12 * len(pos) ** 2)


@settings(max_examples=60, deadline=None)
@given(positions)
def test_coarray_is_symmetric_under_reflection(pos):
    g = ArrayGeometry(tuple(pos), PITCH)
    mirrored = ArrayGeometry(tuple(-p for p in pos), PITCH)
    a = set(sum_coarray(g).positions)
    b = set(sum_coarray(mirrored).positions)
    assert a == {-x for x in b}
    lags, counts = intrinsic_apodization(g)
    assert counts.sum() == len(pos) ** 2
    assert set(np.asarray(lags).tolist()) == a


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 12), st.integers(1, 6))
def test_lateral_selfconv_fft_equals_direct(seed, L, N):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N))
    np.testing.assert_allclose(lateral_selfconv(u, "fft"), lateral_selfconv(u, "direct"),
                               atol=1e-10 * max(1.0, np.abs(u).max() ** 2 * L))


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(2, 10))
def test_mv_weights_are_distortionless(seed, M):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((M, 3 * M)) + 1j * rng.standard_normal((M, 3 * M))
    R = X @ X.conj().T / X.shape[1]
    w = mv_weights(R, 1e-3)
    assert np.sum(w.conj()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(2, 16), st.integers(1, 4))
def test_imap_never_expands(seed, M, iterations):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((M, 20))
    x = imap_beamform(y, iterations)
    # the estimate is a shrunk channel sum: |x| <= |mean|
    assert np.all(np.abs(x) <= np.abs(y.mean(axis=0)) + 1e-12)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.0, 3.0))
def test_soft_threshold_is_nonexpansive(seed, lam):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 30)) + 1j * rng.standard_normal((2, 30))
    d = np.abs(soft_threshold(a, lam) - soft_threshold(b, lam))
    assert np.all(d <= np.abs(a - b) + 1e-12)
    assert np.all(np.abs(soft_threshold(a, lam)) <= np.maximum(np.abs(a) - lam, 0) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(3, 12), st.integers(0, 2))
def test_clutter_filter_is_a_projection(seed, F, n_remove):
    rng = np.random.default_rng(seed)
    stack = rng.standard_normal((F, 5, 6)) + rng.random((1, 5, 6)) * 4
    filt = fit_clutter_filter(stack, n_remove)
    once = filt.apply(stack)
    np.testing.assert_allclose(filt.apply(once), once, atol=1e-10)
    # orthogonal projection: never increases energy
    assert np.sum(once ** 2) <= np.sum(stack ** 2) + 1e-9
