"""Tests for the two-way receive-delay law."""

import numpy as np
import pytest

from sonolab.delays import (
    SPEED_OF_SOUND,
    beam_end_time,
    tau,
    tau_inverse,
    tau_minus_t,
    tau_prime,
)
from sonolab.errors import InvalidArgumentError


def direct_tau(t, a, s):
    """Textbook form, used as an oracle away from cancellation."""
    return 0.5 * (t + np.sqrt(t * t - 4 * a * t * s + 4 * a * a))


class TestTau:
    def test_centre_element_identity(self):
        t = np.linspace(0, 50e-6, 101)
        np.testing.assert_array_equal(tau(t, 0.0, 0.3), t)

    def test_broadside_value(self):
        t, d = 20e-6, 1e-3
        a = d / SPEED_OF_SOUND
        expected = 0.5 * (t + np.sqrt(t ** 2 + 4 * a ** 2))
        assert tau(t, a, 0.0) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(20.02106e-6, rel=1e-6)

    def test_matches_direct_form(self, rng):
        t = rng.uniform(1e-6, 80e-6, 200)
        a = rng.uniform(-5e-6, 5e-6, 200)
        s = 0.4
        np.testing.assert_allclose(tau(t, a, s), direct_tau(t, a, s), rtol=1e-12)

    def test_geometric_meaning(self):
        # Reflector at depth c t / 2 along theta: half the sum of the paths equals tau.
        th, d, t = 0.3, 2e-3, 30e-6
        r = SPEED_OF_SOUND * t / 2
        x, z = r * np.sin(th), r * np.cos(th)
        rt = (r + np.hypot(x - d, z)) / SPEED_OF_SOUND
        assert tau(t, d / SPEED_OF_SOUND, np.sin(th)) == pytest.approx(rt, rel=1e-12)

    def test_minus_t_zero_offset(self):
        assert tau_minus_t(np.array([0.0, 1e-5]), 0.0, 0.5).tolist() == [0.0, 0.0]


class TestDerivativeAndInverse:
    def test_derivative_finite_difference(self):
        t = np.linspace(5e-6, 60e-6, 50)
        a, s, h = 1.3e-6, -0.35, 1e-10
        fd = (tau(t + h, a, s) - tau(t - h, a, s)) / (2 * h)
        np.testing.assert_allclose(tau_prime(t, a, s), fd, rtol=1e-6)

    def test_derivative_lower_bound(self):
        t = np.linspace(0, 60e-6, 500)
        for s in (-0.9, 0.0, 0.9):
            assert np.all(tau_prime(t, 2e-6, s) >= (1 - abs(s)) / 2 - 1e-12)

    def test_inverse(self, rng):
        t = rng.uniform(5e-6, 60e-6, 100)
        a, s = 1.5e-6, 0.2
        np.testing.assert_allclose(tau_inverse(tau(t, a, s), a, s), t, rtol=1e-12)


class TestBeamEndTime:
    def test_not_beyond_record(self):
        a = np.linspace(-3e-6, 3e-6, 16)
        assert beam_end_time(a, 0.2, 64e-6) <= 64e-6

    def test_minimum_over_elements(self):
        a = np.array([-2e-6, 0.0, 2e-6])
        tb = beam_end_time(a, 0.3, 50e-6)
        assert np.max(tau(tb, a, 0.3)) == pytest.approx(50e-6, rel=1e-12)

    def test_bad_angle(self):
        with pytest.raises(InvalidArgumentError):
            beam_end_time([0.0], 1.0, 1e-5)

    def test_aperture_too_long(self):
        with pytest.raises(InvalidArgumentError):
            beam_end_time([2e-5], 0.0, 1e-5)
