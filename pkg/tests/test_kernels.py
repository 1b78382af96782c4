"""Tests for the low-level kernels and the agreement of their backends."""

import numpy as np
import pytest
import scipy.ndimage

from sonolab import kernels
from sonolab.delays import SPEED_OF_SOUND, beam_end_time, tau

BACKENDS = kernels.available_backends()
FS = 16e6


@pytest.fixture(scope="module")
def channel_case():
    rng = np.random.default_rng(7)
    M, N = 9, 700
    samples = rng.standard_normal((M, N))
    a = (np.arange(M) - 4) * 0.3e-3 / SPEED_OF_SOUND
    s = np.sin(0.2)
    t_b = beam_end_time(a, s, N / FS)
    return samples, a, s, t_b


def delay_oracle(samples, a, s, t_b, n_out):
    """Linear interpolation of every channel at its delay, straight from ``tau``."""
    t = np.arange(n_out) / FS
    out = np.zeros((samples.shape[0], n_out))
    for m in range(samples.shape[0]):
        x = tau(t, a[m], s) * FS
        ok = (x >= 0) & (x <= samples.shape[1] - 1) & (t < t_b)
        out[m, ok] = np.interp(x[ok], np.arange(samples.shape[1]), samples[m])
    return out


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS
    assert kernels.get_backend() is kernels.get_backend(kernels.BACKEND)


@pytest.mark.parametrize("backend", BACKENDS)
class TestAgainstOracles:
    def test_delay_channels(self, backend, channel_case):
        samples, a, s, t_b = channel_case
        got = kernels.delay_channels(samples, FS, a, s, t_b, backend=backend)
        np.testing.assert_allclose(got, delay_oracle(samples, a, s, t_b, samples.shape[1]),
                                   atol=1e-12)

    def test_delay_channels_custom_length(self, backend, channel_case):
        samples, a, s, t_b = channel_case
        got = kernels.delay_channels(samples, FS, a, s, t_b, n_out=300, backend=backend)
        np.testing.assert_allclose(got, delay_oracle(samples, a, s, t_b, 300), atol=1e-12)

    def test_zero_offset_is_identity(self, backend):
        x = np.arange(20.0)[None]
        got = kernels.delay_channels(x, FS, np.zeros(1), 0.3, 1.0, backend=backend)
        np.testing.assert_array_equal(got, x)

    def test_das_sum_is_weighted_delay(self, backend, channel_case):
        samples, a, s, t_b = channel_case
        w = np.linspace(0.0, 1.0, samples.shape[0])
        got = kernels.das_sum(samples, FS, a, s, w, t_b, backend=backend)
        np.testing.assert_allclose(got, w @ delay_oracle(samples, a, s, t_b, samples.shape[1]),
                                   atol=1e-12)

    def test_selfconv(self, backend):
        rng = np.random.default_rng(1)
        u = rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5))
        got = kernels.selfconv_direct(u, backend=backend)
        expected = np.stack([np.convolve(u[:, n], u[:, n]) for n in range(5)], axis=1)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_render_gaussians(self, backend):
        frame = np.zeros((20, 30))
        x, z, amp = np.array([4.3, 25.0, -3.0]), np.array([6.7, 18.5, 5.0]), np.ones(3)
        kernels.render_gaussians(frame, x, z, amp, 1.5, 6.0, backend=backend)
        jj, ii = np.indices(frame.shape)
        expected = np.zeros_like(frame)
        for xk, zk in zip(x, z):
            inside = (np.abs(ii - xk) <= 6.0) & (np.abs(jj - zk) <= 6.0)
            expected += inside * np.exp(-((ii - xk) ** 2 + (jj - zk) ** 2) / (2 * 1.5 ** 2))
        np.testing.assert_allclose(frame, expected, atol=1e-14)

    def test_render_requires_contiguous_float(self, backend):
        with pytest.raises(TypeError):
            kernels.render_gaussians(np.zeros((4, 4), np.float32), [1.0], [1.0], [1.0], 1.0,
                                     2.0, backend=backend)

    def test_local_maxima(self, backend):
        rng = np.random.default_rng(3)
        frame = rng.random((40, 50))
        r, c = kernels.local_maxima(frame, 0.5, backend=backend)
        # continuous random values have no ties: plain 8-neighbourhood maxima
        peak = frame == scipy.ndimage.maximum_filter(frame, 3, mode="constant", cval=-np.inf)
        er, ec = np.nonzero(peak & (frame > 0.5))
        assert sorted(zip(r, c)) == sorted(zip(er, ec))

    def test_flat_peak_counted_once(self, backend):
        frame = np.zeros((7, 7))
        frame[2:4, 3:5] = 1.0
        r, c = kernels.local_maxima(frame, 0.5, backend=backend)
        assert len(r) == 1


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
class TestBackendsAgree:
    def test_random_inputs(self, channel_case):
        samples, a, s, t_b = channel_case
        rng = np.random.default_rng(11)
        w = rng.random(samples.shape[0])
        u = rng.standard_normal((16, 40)) + 1j * rng.standard_normal((16, 40))
        frame = rng.random((64, 64))
        xs, zs, amp = rng.uniform(0, 64, 30), rng.uniform(0, 64, 30), rng.random(30)
        outs = {}
        for b in BACKENDS:
            blobs = kernels.render_gaussians(np.zeros((64, 64)), xs, zs, amp, 1.9, 7.6,
                                             backend=b)
            outs[b] = (blobs,
                       kernels.delay_channels(samples, FS, a, s, t_b, backend=b),
                       kernels.das_sum(samples, FS, a, s, w, t_b, backend=b),
                       kernels.selfconv_direct(u, backend=b),
                       np.concatenate(kernels.local_maxima(frame, 0.5, backend=b)))
        ref = outs["python"]
        for b in BACKENDS:
            for x, y in zip(outs[b], ref):
                np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    def test_pure_python_switch(self):
        import subprocess
        import sys

        code = "import sonolab.kernels as k; print(k.BACKEND, k.available_backends())"
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={"SONOLAB_PURE_PYTHON": "1", "PATH": ""}, check=True)
        assert res.stdout.strip() == "python ('python',)"
