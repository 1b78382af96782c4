"""Tests for the B-mode display chain and image-quality metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sonolab.beamform_time import RFLine
from sonolab.errors import DegenerateInputError, InvalidArgumentError
from sonolab.postproc import (
    BModeImage,
    cnr,
    compression_ratio,
    envelope,
    fwhm,
    lines_to_image,
    load_metrics_csv,
    log_compress,
    nrmse,
    read_pgm,
    save_metrics_csv,
    scan_convert,
    to_gray,
    valley_to_peak,
    write_pgm,
    write_png,
)

FS = 50e6
F0 = 3.4e6


def gaussian_burst(n=2000, sigma=0.6e-6, centre=20e-6, sign=1.0):
    t = np.arange(n) / FS
    win = np.exp(-0.5 * ((t - centre) / sigma) ** 2)
    return t, win, sign * win * np.cos(2 * np.pi * F0 * t)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestEnvelope:
    def test_gaussian_burst(self):
        _, win, x = gaussian_burst()
        env = envelope(RFLine(x, FS))
        interior = win > 0.05
        err = np.abs(env[interior] - win[interior]) / win[interior]
        assert err.max() <= 0.02

    def test_zero_line(self):
        np.testing.assert_array_equal(envelope(np.zeros(64)), 0.0)

    def test_constant_amplitude_sinusoid(self):
        n = 4096
        t = np.arange(n) / FS
        env = envelope(2.5 * np.sin(2 * np.pi * 2e6 * t))
        np.testing.assert_allclose(env[200:-200], 2.5, rtol=1e-2)

    def test_complex_input_is_analytic(self):
        z = np.exp(1j * np.linspace(0, 20, 100)) * 3.0
        np.testing.assert_allclose(envelope(z), 3.0)

    def test_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            envelope(np.array([0.0, np.nan, 1.0]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(4, 200), elements=finite))
    def test_non_negative_and_sign_invariant(self, x):
        env = envelope(x)
        assert np.all(env >= 0)
        np.testing.assert_allclose(envelope(-x), env, atol=1e-9)


class TestLogCompress:
    def test_examples(self):
        out = log_compress(np.array([1.0, 0.1, 1e-5, 0.0]), 60.0)
        np.testing.assert_allclose(out, [0.0, -20.0, -60.0, -60.0])

    def test_all_zero(self):
        np.testing.assert_array_equal(log_compress(np.zeros(5), 40.0), -40.0)

    def test_reference_level(self):
        assert log_compress(np.array([0.5]), 60.0, reference=5.0)[0] == pytest.approx(-20.0)

    def test_dynamic_range_validated(self):
        with pytest.raises(InvalidArgumentError):
            log_compress(np.ones(3), 0.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(2, 100), elements=st.floats(0, 1e6)),
           st.floats(1e-3, 1e3), st.floats(1.0, 120.0))
    def test_monotone_and_scale_invariant(self, env, gain, dr):
        out = log_compress(env, dr)
        assert np.all((out >= -dr) & (out <= 0))
        order = np.argsort(env, kind="stable")
        assert np.all(np.diff(out[order]) >= -1e-9)
        np.testing.assert_allclose(log_compress(gain * env, dr), out, atol=1e-9)


def _lines(values, thetas, fs=16e6, t0=10e-6):
    return [RFLine(v, fs, th, t0) for v, th in zip(values, thetas)]


class TestScanConvert:
    def test_too_few_lines(self):
        with pytest.raises(InvalidArgumentError):
            scan_convert(_lines([np.ones(50)], [0.0]))

    def test_angles_must_increase(self):
        with pytest.raises(InvalidArgumentError):
            scan_convert(_lines([np.ones(50)] * 2, [0.1, -0.1]))

    def test_uniform_sector(self):
        thetas = np.linspace(-0.3, 0.3, 11)
        img = scan_convert(_lines([np.full(200, 1 + 0j)] * 11, thetas), (64, 64))
        inside = img.grid > -img.dynamic_range
        assert inside.sum() > 0.3 * img.grid.size
        np.testing.assert_allclose(img.grid[inside], 0.0, atol=1e-9)
        # the corners lie outside the sector
        assert img.grid[0, 0] == -img.dynamic_range

    def test_bright_spot_lands_at_forward_map(self):
        c, fs, t0 = 1540.0, 16e6, 10e-6
        thetas = np.linspace(-0.3, 0.3, 31)
        k, i = 22, 300
        n = np.arange(600)
        # smooth probe around (line k, sample i), narrow compared with the sector
        vals = [np.exp(-0.5 * ((n - i) / 3.0) ** 2 - 0.5 * (j - k) ** 2) + 0j
                for j in range(len(thetas))]
        img = scan_convert(_lines(vals, thetas, fs, t0), (200, 200), c=c)
        r = c * (t0 + i / fs) / 2
        x, z = r * np.sin(thetas[k]), r * np.cos(thetas[k])
        w = 10 ** (img.grid / 20)
        w[img.grid < -20.0] = 0.0
        X, Z = np.meshgrid(img.x_axis, img.z_axis)
        xc, zc = (w * X).sum() / w.sum(), (w * Z).sum() / w.sum()
        dx = img.x_axis[1] - img.x_axis[0]
        dz = img.z_axis[1] - img.z_axis[0]
        assert abs(xc - x) <= dx and abs(zc - z) <= dz
        # a single localized spot
        assert np.count_nonzero(w) < 0.01 * w.size

    def test_lines_to_image(self):
        img = lines_to_image(_lines([np.ones(40) + 0j, 2 * np.ones(40) + 0j], [0.0, 0.1]))
        assert img.grid.shape == (40, 2) and img.lateral_unit == "rad"
        np.testing.assert_allclose(img.grid[:, 1], 0.0)
        np.testing.assert_allclose(img.grid[:, 0], 20 * np.log10(0.5))

    def test_bmode_invariant(self):
        with pytest.raises(InvalidArgumentError):
            BModeImage(np.ones((2, 2)), np.arange(2), np.arange(2))


class TestNrmse:
    def test_examples(self, rng):
        x = rng.standard_normal(50)
        assert nrmse(x, x) == 0.0
        assert nrmse(np.zeros(50), x) == 1.0
        assert nrmse(2 * x, x) == pytest.approx(0.0, abs=1e-15)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            nrmse(np.ones(3), np.zeros(3))
        with pytest.raises(InvalidArgumentError):
            nrmse(np.ones(3), np.ones(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_pseudometric(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.standard_normal((3, 20))
        # nrmse(a, b) * ||b_hat|| = ||a_hat - b_hat||, a pseudometric on peak-normalized inputs
        an, bn, cn = (v / np.abs(v).max() for v in (a, b, c))
        assert nrmse(an, an) == 0.0
        d_ab = nrmse(an, bn) * np.linalg.norm(bn)
        d_ba = nrmse(bn, an) * np.linalg.norm(an)
        assert d_ab == pytest.approx(d_ba, rel=1e-12)
        d_ac = nrmse(an, cn) * np.linalg.norm(cn)
        d_cb = nrmse(cn, bn) * np.linalg.norm(bn)
        assert d_ab <= d_ac + d_cb + 1e-12


class TestFwhm:
    def test_gaussian(self):
        sigma, dx = 3.0, 0.01
        x = np.arange(-30, 30, dx)
        assert fwhm(np.exp(-x ** 2 / (2 * sigma ** 2)), dx) == pytest.approx(
            2.3548 * sigma, rel=0.01)

    def test_triangle(self):
        p = np.array([0, 1, 2, 3, 4, 3, 2, 1, 0], float)
        assert fwhm(p, 0.5) == pytest.approx(2.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            fwhm(np.ones(10))
        with pytest.raises(DegenerateInputError):
            fwhm(np.array([0, 1, 0, 0, 1, 0], float))
        with pytest.raises(DegenerateInputError):
            fwhm(np.array([1.0, 0.8, 0.1]))


class TestOtherMetrics:
    @pytest.mark.parametrize("args, expected, rel", [
        ((3328, 64, 100, 15), 142.0, 0.01),
        ((1920, 64, 230, 64), 8.3, 0.01),
        ((100, 8, 100, 8), 1.0, 0.0),
    ])
    def test_compression_ratio(self, args, expected, rel):
        assert compression_ratio(*args) == pytest.approx(expected, rel=rel)

    def test_compression_ratio_errors(self):
        with pytest.raises(InvalidArgumentError):
            compression_ratio(10, 10, 0, 10)
        with pytest.raises(InvalidArgumentError):
            compression_ratio(-1, 10, 1, 10)

    def test_valley_to_peak(self):
        assert valley_to_peak(np.array([0, 1, 0, 1, 0.0])) == 0.0
        assert valley_to_peak(np.array([0, 1, 0.5, 0.8, 0.0])) == pytest.approx(0.625)
        assert valley_to_peak(np.array([0, 1, 2, 1, 0.0])) == 1.0
        # small ripple is not a second peak
        assert valley_to_peak(np.array([0, 1, 0.05, 0.1, 0.0])) == 1.0

    def test_cnr(self):
        img = np.zeros((10, 10))
        img[:5] = 1.0 + np.tile([0.1, -0.1], 25).reshape(5, 10)
        img[5:] = np.tile([0.1, -0.1], 25).reshape(5, 10)
        t = np.zeros((10, 10), bool)
        t[:5] = True
        assert cnr(img, t, ~t) == pytest.approx(1.0 / np.sqrt(0.02), rel=1e-9)


class TestFiles:
    def test_pgm_round_trip(self, tmp_path, rng):
        for bits in (8, 16):
            vals = rng.random((7, 11))
            path = write_pgm(tmp_path / f"a{bits}.pgm", vals, bits)
            np.testing.assert_array_equal(read_pgm(path), to_gray(vals, bits))

    def test_pgm_is_deterministic(self, tmp_path):
        vals = np.linspace(-60, 0, 30).reshape(5, 6)
        a = write_pgm(tmp_path / "a.pgm", vals).read_bytes()
        b = write_pgm(tmp_path / "b.pgm", vals).read_bytes()
        assert a == b and a.startswith(b"P5\n6 5\n255\n")

    def test_bmode_gray_range(self):
        img = BModeImage(np.array([[-60.0, -30.0, 0.0]]), np.zeros(1), np.arange(3))
        np.testing.assert_array_equal(to_gray(img), [[0, 128, 255]])

    def test_png(self, tmp_path):
        from PIL import Image

        path = write_png(tmp_path / "a.png", np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(np.asarray(Image.open(path)),
                                      to_gray(np.arange(12.0).reshape(3, 4)))

    def test_metrics_csv(self, tmp_path):
        path = save_metrics_csv(tmp_path / "m.csv", [("nrmse", 0.1 + 0.2), ("cr", 142.0)], "abc")
        assert load_metrics_csv(path) == {"nrmse": 0.1 + 0.2, "cr": 142.0}
        assert path.read_text().splitlines()[1].endswith(",abc")
