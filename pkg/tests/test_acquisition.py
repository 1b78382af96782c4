"""Tests for phantoms, pulses, channel-data synthesis and frame sequences."""

import numpy as np
import pytest
from scipy.signal import correlate

from sonolab.acquisition import (
    ChannelData,
    GridSpec,
    Phantom,
    Pulse,
    Scatterer,
    Vessel,
    add_noise,
    amplitude_modulation_pair,
    combine_amplitude_modulation,
    combine_pulse_inversion,
    load_channel_data,
    load_phantom,
    load_vessels,
    mb_frame_sequence,
    n_samples_for,
    pulse_inversion_pair,
    random_phantom,
    save_channel_data,
    save_phantom,
    save_vessels,
    synth_channel_data,
)
from sonolab.delays import SPEED_OF_SOUND
from sonolab.errors import InvalidArgumentError
from sonolab.geometry import make_linear_array, make_ula

FS = 16e6
T = 64e-6


class TestPulse:
    def test_waveform_peak(self, pulse):
        assert pulse.waveform(0.0) == pytest.approx(1.0)

    def test_fourier_coeffs_match_fft(self, pulse):
        # Densely sampled, periodised pulse: DFT / N approximates the Fourier-series coefficient.
        fs, n = 200e6, 4000
        t = (np.arange(n) - n // 2) / fs
        Tp = n / fs
        dft = np.fft.fft(np.fft.ifftshift(pulse.waveform(t))) / n
        k = np.arange(40, 100)
        np.testing.assert_allclose(pulse.fourier_coeffs(k, Tp), dft[k], atol=1e-9)

    def test_bandwidth_round_trip(self):
        p = Pulse.from_bandwidth(3.4e6, 2e6)
        assert p.bandwidth_fwhm == pytest.approx(2e6)

    def test_band_centred(self, pulse):
        band = pulse.band(T)
        assert band[0] < round(pulse.f0 * T) < band[-1]
        assert np.all(np.diff(band) == 1)

    def test_squared_carrier(self, pulse):
        sq = pulse.squared()
        assert sq.f0 == 2 * pulse.f0 and sq.analytic

    @pytest.mark.parametrize("kw", [{"f0": 0.0}, {"sigma": -1.0}, {"support": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            Pulse(**kw)


class TestScatterer:
    @pytest.mark.parametrize("kw", [{"r": 0.0}, {"r": 0.01, "reflectivity": np.inf},
                                    {"r": 0.01, "nonlinearity": 1.5},
                                    {"r": 0.01, "theta": 2.0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            Scatterer(**kw)

    def test_random_phantom_reproducible(self):
        a = random_phantom(10, (0.01, 0.04), 0.0, 0.05, seed=3)
        b = random_phantom(10, (0.01, 0.04), 0.0, 0.05, seed=3)
        assert a == b and len(a) == 10

    def test_min_separation(self):
        ph = random_phantom(8, (0.01, 0.04), 0.0, seed=1, min_separation=2e-3)
        r = np.sort([s.r for s in ph.scatterers])
        assert np.all(np.diff(r) >= 2e-3)


class TestSynthChannelData:
    def test_empty_phantom(self, pulse, array16):
        cd = synth_channel_data(Phantom(), array16, pulse, FS, T)
        assert cd.samples.shape == (16, n_samples_for(T, FS))
        assert not cd.samples.any()

    def test_echo_time_centre_element(self, pulse):
        fs = 16 * pulse.f0
        g = make_ula(8, 2.26e-4)
        r = 0.02
        cd = synth_channel_data(Phantom((Scatterer(r),)), g, pulse, fs, 40e-6)
        centre = cd.samples[g.positions.index(0)]
        t = np.arange(-int(pulse.support * fs), int(pulse.support * fs) + 1) / fs
        mf = correlate(centre, pulse.waveform(t), mode="same")
        t_peak = np.argmax(mf) / fs
        assert 2 * r / SPEED_OF_SOUND == pytest.approx(25.97e-6, abs=5e-9)
        assert abs(t_peak - 2 * r / SPEED_OF_SOUND) <= 1 / fs

    def test_superposition(self, pulse, array16):
        s1, s2 = Scatterer(0.015, 0.02, 0.7), Scatterer(0.03, -0.05, -1.2)
        both = synth_channel_data(Phantom((s1, s2)), array16, pulse, FS, T)
        one = synth_channel_data(Phantom((s1,)), array16, pulse, FS, T)
        two = synth_channel_data(Phantom((s2,)), array16, pulse, FS, T)
        np.testing.assert_allclose(both.samples, one.samples + two.samples, atol=1e-12)

    def test_window_too_short(self, pulse, array16):
        with pytest.raises(InvalidArgumentError):
            synth_channel_data(Phantom((Scatterer(0.05),)), array16, pulse, FS, 20e-6)

    def test_fs_too_low(self, pulse, array16):
        with pytest.raises(InvalidArgumentError):
            synth_channel_data(Phantom(), array16, pulse, 10e6, T)

    def test_sample_count_invariant(self, pulse, array16):
        cd = synth_channel_data(Phantom(), array16, pulse, FS, T)
        with pytest.raises(InvalidArgumentError):
            ChannelData(cd.samples[:, :-1], FS, T, pulse.f0, array16)

    def test_restrict(self, pulse, array16):
        cd = synth_channel_data(Phantom((Scatterer(0.02),)), array16, pulse, FS, T)
        sub = make_ula(3, array16.pitch)
        r = cd.restrict(sub)
        np.testing.assert_array_equal(r.samples, cd.samples[6:11])
        with pytest.raises(InvalidArgumentError):
            cd.restrict(make_ula(10, array16.pitch))


class TestAddNoise:
    @pytest.fixture
    def cd(self, pulse, array16):
        return synth_channel_data(random_phantom(5, (0.01, 0.04), 0.0, seed=0), array16,
                                  pulse, FS, T)

    def test_infinite_snr(self, cd):
        np.testing.assert_array_equal(add_noise(cd, np.inf).samples, cd.samples)

    def test_deterministic(self, cd):
        np.testing.assert_array_equal(add_noise(cd, 10, seed=4).samples,
                                      add_noise(cd, 10, seed=4).samples)

    def test_zero_db(self, pulse):
        g = make_linear_array(1, 1e-4)
        rng = np.random.default_rng(0)
        n = n_samples_for(7e-3, FS)
        cd = ChannelData(rng.standard_normal((1, n)), FS, 7e-3, pulse.f0, g)
        assert n >= 1e5
        noisy = add_noise(cd, 0.0, seed=1)
        noise = noisy.samples - cd.samples
        snr = 10 * np.log10(np.mean(cd.samples ** 2) / np.mean(noise ** 2))
        assert abs(snr) <= 0.5

    def test_zero_signal(self, pulse, array16):
        cd = synth_channel_data(Phantom(), array16, pulse, FS, T)
        with pytest.raises(InvalidArgumentError):
            add_noise(cd, 10.0)


class TestPulseInversion:
    def test_linear_cancels(self, pulse, array16):
        ph = random_phantom(6, (0.01, 0.04), 0.0, 0.05, seed=2)
        a, b = pulse_inversion_pair(ph, array16, pulse, FS, T)
        s = combine_pulse_inversion(a, b).samples
        assert np.linalg.norm(s) <= 1e-12 * np.linalg.norm(a.samples)

    def test_quadratic_residual(self, pulse, array16):
        ph = Phantom((Scatterer(0.02, nonlinearity=1.0),))
        a, b = pulse_inversion_pair(ph, array16, pulse, FS, T)
        s = combine_pulse_inversion(a, b).samples
        linear = synth_channel_data(Phantom((Scatterer(0.02),)), array16, pulse, FS, T).samples
        np.testing.assert_allclose(s, 2 * linear ** 2, atol=1e-12)
        assert np.linalg.norm(s) > 0.1 * np.linalg.norm(a.samples)

    def test_empty(self, pulse, array16):
        a, b = pulse_inversion_pair(Phantom(), array16, pulse, FS, T)
        assert not a.samples.any() and not b.samples.any()

    def test_combine_identities(self, pulse, array16):
        a = synth_channel_data(Phantom((Scatterer(0.02),)), array16, pulse, FS, T)
        neg = a.with_samples(-a.samples)
        zero = a.with_samples(np.zeros_like(a.samples))
        assert not combine_pulse_inversion(a, neg).samples.any()
        np.testing.assert_array_equal(combine_pulse_inversion(a, zero).samples, a.samples)

    def test_shape_mismatch(self, pulse, array16):
        a = synth_channel_data(Phantom(), array16, pulse, FS, T)
        b = synth_channel_data(Phantom(), make_linear_array(8, array16.pitch), pulse, FS, T)
        with pytest.raises(InvalidArgumentError):
            combine_pulse_inversion(a, b)

    def test_amplitude_modulation_cancels_linear(self, pulse, array16):
        ph = random_phantom(4, (0.01, 0.04), 0.0, seed=5)
        full, scaled = amplitude_modulation_pair(ph, array16, pulse, FS, T, ratio=0.5)
        out = combine_amplitude_modulation(full, scaled, 0.5).samples
        assert np.linalg.norm(out) <= 1e-12 * np.linalg.norm(full.samples)


class TestFrameSequence:
    grid = GridSpec(32, 32, 1e-4)

    def test_zero_density_is_background(self):
        bg = np.random.default_rng(0).random(self.grid.shape)
        seq = mb_frame_sequence([Vessel((1e-3, 0.0), (1e-3, 3e-3), 0.01)], 0.0, 2e-4, 5, 100.0,
                                self.grid, background=bg)
        np.testing.assert_array_equal(seq.frames, np.broadcast_to(bg, seq.frames.shape))

    def test_stationary_bubble(self):
        c = 16 * 1e-4
        seq = mb_frame_sequence([Vessel((c, c), (c, c), 0.0, n_initial=1)], 0.0, 1.5e-4, 4,
                                100.0, self.grid)
        for f in seq.frames:
            assert np.unravel_index(np.argmax(f), f.shape) == (16, 16)
            assert f.max() == pytest.approx(1.0)

    def test_displacement_per_frame(self):
        v, rate = 0.02, 1000.0
        seq = mb_frame_sequence([Vessel((1e-3, 0.0), (1e-3, 3e-3), v, n_initial=1)], 0.0,
                                1e-4, 10, rate, self.grid)
        z = np.array([t[t[:, 0] == 0, 2][0] for t in seq.truth])
        np.testing.assert_allclose(np.diff(z), v / rate, atol=1e-12)

    def test_empty_vessels(self):
        with pytest.raises(InvalidArgumentError):
            mb_frame_sequence([], 1.0, 1e-4, 3, 100.0, self.grid)

    def test_deterministic(self):
        args = ([Vessel((1e-3, 0.0), (1e-3, 3e-3), 0.05)], 3.0, 1e-4, 20, 500.0, self.grid)
        a, b = mb_frame_sequence(*args, seed=7), mb_frame_sequence(*args, seed=7)
        np.testing.assert_array_equal(a.frames, b.frames)


class TestFileFormats:
    def test_channel_data_round_trip(self, tmp_path, pulse, array16):
        cd = synth_channel_data(random_phantom(3, (0.01, 0.04), 0.0, seed=0), array16, pulse,
                                FS, T, theta=0.1)
        p = tmp_path / "x.slcd"
        save_channel_data(p, cd)
        assert p.read_bytes()[:4] == b"SLCD"
        back = load_channel_data(p)
        np.testing.assert_array_equal(back.samples, cd.samples)
        assert (back.fs, back.T, back.f0, back.theta) == (cd.fs, cd.T, cd.f0, cd.theta)
        assert back.geometry == cd.geometry

    def test_phantom_round_trip(self, tmp_path):
        ph = Phantom((Scatterer(0.01, 0.1, 0.5, 0.2), Scatterer(0.02)), "two")
        p = tmp_path / "ph.ini"
        save_phantom(p, ph)
        assert load_phantom(p).scatterers == ph.scatterers

    def test_vessel_round_trip(self, tmp_path):
        vs = [Vessel((0.0, 0.0), (1e-3, 2e-3), 0.01), Vessel((1e-3, 0.0), (1e-3, 2e-3), 0.0)]
        p = tmp_path / "v.ini"
        save_vessels(p, vs)
        back = load_vessels(p)
        assert [(tuple(v.start), tuple(v.end), v.speed) for v in back] == \
            [(tuple(v.start), tuple(v.end), v.speed) for v in vs]
