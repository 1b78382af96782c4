r"""Phantoms, pulses and synthetic pulse-echo channel data.

The echo model places every scatterer at range ``r`` along direction
``theta_l`` from the array origin.  The transmitted wavefront reaches it after
``r / c`` and the echo returns to element ``m`` (lateral offset ``delta_m``)
after a further ``d_m / c``, where ``d_m`` is the Euclidean distance between
scatterer and element.  Under this model the dynamic receive delays of
:func:`sonolab.delays.tau` re-align all echoes of a reflector on the beam
axis to the round-trip time ``2 r / c``.

The module also produces microbubble frame sequences used by the
super-resolution tools.
"""

import configparser
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .delays import SPEED_OF_SOUND
from .errors import InvalidArgumentError
from .geometry import ArrayGeometry

__all__ = [
    "Scatterer",
    "Phantom",
    "Pulse",
    "ChannelData",
    "Vessel",
    "GridSpec",
    "FrameSequence",
    "default_pitch",
    "n_samples_for",
    "random_phantom",
    "synth_channel_data",
    "add_noise",
    "pulse_inversion_pair",
    "combine_pulse_inversion",
    "amplitude_modulation_pair",
    "combine_amplitude_modulation",
    "mb_frame_sequence",
    "save_channel_data",
    "load_channel_data",
    "save_phantom",
    "load_phantom",
    "save_vessels",
    "load_vessels",
]


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scatterer:
    """Point reflector.

    Parameters
    ----------
    r : float
        Range from the array origin in metres (``r > 0``).
    theta : float
        Direction in radians.
    reflectivity : float
        Real echo amplitude.
    nonlinearity : float
        Fraction ``eta`` in ``[0, 1]`` of quadratic response; the echo of an
        incident waveform ``p`` is ``reflectivity * ((1 - eta) p + eta p**2)``.
    """

    r: float
    theta: float = 0.0
    reflectivity: float = 1.0
    nonlinearity: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0):
            raise InvalidArgumentError(f"scatterer range must be positive, got {self.r!r}")
        if not np.isfinite(self.reflectivity):
            raise InvalidArgumentError("scatterer reflectivity must be finite")
        if not np.isfinite(self.theta) or abs(self.theta) >= np.pi / 2:
            raise InvalidArgumentError("scatterer angle must lie in (-pi/2, pi/2)")
        if not 0.0 <= self.nonlinearity <= 1.0:
            raise InvalidArgumentError("nonlinearity must lie in [0, 1]")

    @property
    def round_trip(self):
        """Two-way travel time ``2 r / c`` in seconds."""
        return 2.0 * self.r / SPEED_OF_SOUND


@dataclass(frozen=True)
class Phantom:
    """Collection of point scatterers."""

    scatterers: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))

    def __len__(self):
        return len(self.scatterers)

    def __add__(self, other):
        return Phantom(self.scatterers + other.scatterers, self.name or other.name)

    @property
    def is_linear(self):
        return all(s.nonlinearity == 0 for s in self.scatterers)


@dataclass(frozen=True)
class Pulse:
    r"""Gaussian-windowed tone burst.

    ``h(t) = amplitude * exp(-t**2 / (2 sigma**2)) * cos(2 pi f0 t)``.  With
    ``analytic=True`` the cosine is replaced by ``exp(2j pi f0 t)``.

    Parameters
    ----------
    f0 : float
        Carrier frequency in Hz.
    sigma : float
        Envelope standard deviation in seconds.  The default, 0.212 µs,
        gives an amplitude-spectrum full width at half maximum of 1.77 MHz.
    amplitude : float
        Peak amplitude.
    support : float, optional
        Total duration over which the waveform is rendered (default
        ``10 * sigma``).
    analytic : bool
        Complex single-sideband variant.
    """

    f0: float = 3.4e6
    sigma: float = 0.212e-6
    amplitude: float = 1.0
    support: float = None
    analytic: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.f0) and self.f0 > 0):
            raise InvalidArgumentError("pulse carrier must be positive")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidArgumentError("pulse envelope width must be positive")
        if self.support is None:
            object.__setattr__(self, "support", 10.0 * self.sigma)
        elif not self.support > 0:
            raise InvalidArgumentError("pulse support must be positive")

    @classmethod
    def from_bandwidth(cls, f0, fwhm_hz, **kwargs):
        """Pulse whose amplitude spectrum has the given full width at half max."""
        sigma = math.sqrt(math.log(2.0) / 2.0) / (math.pi * fwhm_hz)
        return cls(f0=f0, sigma=sigma, **kwargs)

    @property
    def bandwidth_fwhm(self):
        """Full width at half maximum of the amplitude spectrum (Hz)."""
        return math.sqrt(math.log(2.0) / 2.0) / (math.pi * self.sigma)

    @property
    def sigma_f(self):
        """Standard deviation of the Gaussian amplitude spectrum (Hz)."""
        return 1.0 / (2.0 * math.pi * self.sigma)

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.exp(-0.5 * (t / self.sigma) ** 2)

    def waveform(self, t):
        """Sampled waveform (real, or complex when ``analytic``)."""
        t = np.asarray(t, dtype=float)
        if self.analytic:
            return self.envelope(t) * np.exp(2j * np.pi * self.f0 * t)
        return self.envelope(t) * np.cos(2 * np.pi * self.f0 * t)

    def spectrum(self, f):
        """Continuous Fourier transform ``H(f)``."""
        f = np.asarray(f, dtype=float)
        g = self.amplitude * self.sigma * math.sqrt(2 * math.pi)
        s2 = 2 * (math.pi * self.sigma) ** 2
        if self.analytic:
            return g * np.exp(-s2 * (f - self.f0) ** 2)
        return 0.5 * g * (np.exp(-s2 * (f - self.f0) ** 2) + np.exp(-s2 * (f + self.f0) ** 2))

    def fourier_coeffs(self, k, T):
        """Fourier-series coefficients ``h[k] = H(k / T) / T`` over a period ``T``."""
        return self.spectrum(np.asarray(k, dtype=float) / T) / T + 0j

    def band(self, T, floor_db=-40.0):
        """Consecutive positive-frequency indices whose coefficient exceeds ``floor_db``.

        Returns
        -------
        ndarray of int
        """
        half_width = math.sqrt(-2.0 * math.log(10 ** (floor_db / 20.0))) * self.sigma_f
        lo = max(int(math.ceil((self.f0 - half_width) * T)), 0 if self.analytic else 1)
        hi = int(math.floor((self.f0 + half_width) * T))
        return np.arange(lo, hi + 1)

    def squared(self):
        """Pulse seen by convolutional beamforming.

        The root-magnitude / phase-preserving channel transform followed by
        the square keeps the envelope and doubles the phase, giving an
        analytic pulse at ``2 f0`` with the same envelope width.
        """
        return replace(self, f0=2 * self.f0, analytic=True)


def default_pitch(f0=3.4e6, c=SPEED_OF_SOUND):
    """Half-wavelength element pitch for carrier ``f0``."""
    return c / f0 / 2.0


def n_samples_for(T, fs):
    """Number of samples ``floor(T * fs)`` robust to rounding of the product."""
    return int(math.floor(T * fs + 1e-9))


@dataclass
class ChannelData:
    """Per-element received signals for one transmit line.

    Parameters
    ----------
    samples : ndarray, shape (M, N_s)
        Real channel samples.
    fs : float
        Sampling rate in Hz.
    T : float
        Acquisition window in seconds.
    f0 : float
        Carrier frequency in Hz.
    geometry : ArrayGeometry
        Receive aperture; row ``m`` belongs to ``geometry.positions[m]``.
    theta : float
        Line angle in radians.
    """

    samples: np.ndarray
    fs: float
    T: float
    f0: float
    geometry: ArrayGeometry
    theta: float = 0.0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise InvalidArgumentError("channel samples must be a 2-D array")
        if not self.fs > 0 or not self.T > 0:
            raise InvalidArgumentError("fs and T must be positive")
        if self.samples.shape[0] != self.geometry.n_elements:
            raise InvalidArgumentError(
                f"{self.samples.shape[0]} channels for a "
                f"{self.geometry.n_elements}-element geometry")
        if self.samples.shape[1] != n_samples_for(self.T, self.fs):
            raise InvalidArgumentError("sample count must equal floor(T * fs)")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("channel samples must be finite")

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def a(self):
        """Element offsets divided by the speed of sound (s)."""
        return self.geometry.offsets / SPEED_OF_SOUND

    def with_samples(self, samples):
        """Copy with replaced samples."""
        return replace(self, samples=np.array(samples, dtype=float))

    def restrict(self, geometry):
        """Channels of ``self`` at the element indices of ``geometry``.

        Raises
        ------
        InvalidArgumentError
            If ``geometry`` contains an element not present in ``self``.
        """
        lookup = {p: i for i, p in enumerate(self.geometry.positions)}
        try:
            rows = [lookup[p] for p in geometry.positions]
        except KeyError as exc:
            raise InvalidArgumentError(f"element {exc.args[0]} not in acquisition") from None
        if geometry.pitch != self.geometry.pitch or geometry.center != self.geometry.center:
            raise InvalidArgumentError("geometry pitch/centre differ from the acquisition")
        return replace(self, samples=self.samples[rows].copy(), geometry=geometry)

    def __add__(self, other):
        return combine_pulse_inversion(self, other)


# --------------------------------------------------------------------------
# Channel-data synthesis
# --------------------------------------------------------------------------


def random_phantom(n_scatterers, r_range, theta, theta_spread=0.0, seed=0,
                   reflectivity_range=(0.5, 1.0), min_separation=0.0, name="random"):
    """Random point phantom.

    Parameters
    ----------
    n_scatterers : int
    r_range : (float, float)
        Range interval in metres.
    theta : float
        Centre direction in radians.
    theta_spread : float
        Half-width of the uniform direction distribution.
    seed : int
    reflectivity_range : (float, float)
        Uniform reflectivity interval.
    min_separation : float
        Minimum range difference between any two scatterers (metres);
        drawn by rejection.
    """
    rng = np.random.default_rng(seed)
    rs = []
    attempts = 0
    while len(rs) < n_scatterers:
        attempts += 1
        if attempts > 10000 * max(n_scatterers, 1):
            raise InvalidArgumentError("cannot place scatterers with the requested separation")
        r = rng.uniform(*r_range)
        if all(abs(r - q) >= min_separation for q in rs):
            rs.append(r)
    th = theta + rng.uniform(-theta_spread, theta_spread, size=n_scatterers)
    refl = rng.uniform(*reflectivity_range, size=n_scatterers)
    scat = tuple(Scatterer(float(r), float(t), float(b)) for r, t, b in zip(rs, th, refl))
    return Phantom(scat, name)


def _check_acquisition(phantom, geometry, pulse, fs, T):
    if not fs >= 4 * pulse.f0:
        raise InvalidArgumentError(f"fs={fs} Hz is below 4*f0={4 * pulse.f0} Hz")
    if not T > 0:
        raise InvalidArgumentError("acquisition window must be positive")
    if geometry.n_elements == 0:
        raise InvalidArgumentError("geometry has no elements")
    if phantom.scatterers:
        far = max(abs(o) for o in geometry.offsets)
        latest = max((2 * s.r + far) / SPEED_OF_SOUND for s in phantom.scatterers)
        if latest + pulse.support / 2 > T:
            raise InvalidArgumentError(
                f"window T={T:.3e} s shorter than the last echo "
                f"({latest + pulse.support / 2:.3e} s)")


def _synth(phantom, geometry, pulse, fs, T, theta, drive):
    _check_acquisition(phantom, geometry, pulse, fs, T)
    n_s = n_samples_for(T, fs)
    out = np.zeros((geometry.n_elements, n_s))
    offsets = geometry.offsets
    half = pulse.support / 2
    width = int(math.ceil(pulse.support * fs)) + 2
    rows = np.arange(geometry.n_elements)[:, None]
    for s in phantom.scatterers:
        x, z = s.r * math.sin(s.theta), s.r * math.cos(s.theta)
        arrival = (s.r + np.hypot(x - offsets, z)) / SPEED_OF_SOUND
        first = np.floor((arrival - half) * fs).astype(np.int64)
        idx = first[:, None] + np.arange(width)[None, :]
        p = drive * pulse.waveform(idx / fs - arrival[:, None])
        echo = s.reflectivity * ((1.0 - s.nonlinearity) * p + s.nonlinearity * p * p)
        valid = (idx >= 0) & (idx < n_s)
        np.add.at(out, (np.broadcast_to(rows, idx.shape)[valid], idx[valid]), echo[valid])
    return ChannelData(out, fs, T, pulse.f0, geometry, theta)


def synth_channel_data(phantom, geometry, pulse, fs, T, theta=0.0):
    """Simulate the channel data of one line acquisition.

    Parameters
    ----------
    phantom : Phantom
    geometry : ArrayGeometry
    pulse : Pulse
        Real transmit pulse.
    fs : float
        Sampling rate (Hz), at least ``4 * pulse.f0``.
    T : float
        Acquisition window (s); must contain the last echo.
    theta : float
        Line angle recorded in the output.

    Returns
    -------
    ChannelData

    Raises
    ------
    InvalidArgumentError
        If ``fs`` is too low or ``T`` too short.
    """
    return _synth(phantom, geometry, pulse, fs, T, theta, 1.0)


def add_noise(cd, snr_db, seed=0):
    """Add white Gaussian noise at a per-channel signal-to-noise ratio.

    Channels without signal receive noise at the mean power of the other
    channels.

    Parameters
    ----------
    cd : ChannelData
    snr_db : float
        Target ``10 log10(P_signal / P_noise)``; ``+inf`` returns a copy.
    seed : int

    Raises
    ------
    InvalidArgumentError
        If the data are identically zero and ``snr_db`` is finite.
    """
    if np.isposinf(snr_db):
        return cd.with_samples(cd.samples.copy())
    if not np.isfinite(snr_db):
        raise InvalidArgumentError("snr_db must be finite or +inf")
    power = np.mean(cd.samples ** 2, axis=1)
    if not np.any(power > 0):
        raise InvalidArgumentError("cannot scale noise to an all-zero signal")
    power = np.where(power > 0, power, power[power > 0].mean())
    sigma = np.sqrt(power / 10 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(cd.samples.shape) * sigma[:, None]
    return cd.with_samples(cd.samples + noise)


def pulse_inversion_pair(phantom, geometry, pulse, fs, T, theta=0.0):
    """Two acquisitions transmitted with ``h(t)`` and ``-h(t)``."""
    return (_synth(phantom, geometry, pulse, fs, T, theta, 1.0),
            _synth(phantom, geometry, pulse, fs, T, theta, -1.0))


def _check_compatible(a, b):
    if a.samples.shape != b.samples.shape:
        raise InvalidArgumentError(f"shape mismatch {a.samples.shape} vs {b.samples.shape}")
    if a.fs != b.fs or a.geometry != b.geometry or a.T != b.T:
        raise InvalidArgumentError("acquisitions differ in fs, T or geometry")


def combine_pulse_inversion(a, b):
    """Sample-wise sum of a pulse-inversion pair."""
    _check_compatible(a, b)
    return a.with_samples(a.samples + b.samples)


def amplitude_modulation_pair(phantom, geometry, pulse, fs, T, theta=0.0, ratio=0.5):
    """Full-amplitude and ``ratio``-scaled acquisitions."""
    if not 0 < ratio < 1:
        raise InvalidArgumentError("ratio must lie in (0, 1)")
    return (_synth(phantom, geometry, pulse, fs, T, theta, 1.0),
            _synth(phantom, geometry, pulse, fs, T, theta, ratio))


def combine_amplitude_modulation(full, scaled, ratio=0.5):
    """``full - scaled / ratio``: cancels the linear response."""
    _check_compatible(full, scaled)
    return full.with_samples(full.samples - scaled.samples / ratio)


# --------------------------------------------------------------------------
# Microbubble frame sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Vessel:
    """Straight vessel segment carrying microbubbles.

    Parameters
    ----------
    start, end : (float, float)
        Segment end points ``(x, z)`` in metres; bubbles flow from ``start``
        to ``end``.
    speed : float
        Flow speed in m/s (``>= 0``).
    n_initial : int, optional
        Exact number of bubbles present at the first frame.  By default a
        Poisson number with mean ``mb_density`` is drawn.
    """

    start: tuple
    end: tuple
    speed: float = 0.0
    n_initial: int = None

    def __post_init__(self):
        if self.speed < 0 or not np.isfinite(self.speed):
            raise InvalidArgumentError("vessel speed must be non-negative")

    @property
    def length(self):
        return float(math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    def point(self, s):
        """Coordinates at arc length ``s`` (array) along the vessel."""
        s = np.asarray(s, dtype=float)
        L = self.length
        u = s / L if L > 0 else np.zeros_like(s)
        x = self.start[0] + u * (self.end[0] - self.start[0])
        z = self.start[1] + u * (self.end[1] - self.start[1])
        return x, z


@dataclass(frozen=True)
class GridSpec:
    """Pixel grid: ``nx`` columns, ``nz`` rows; pixel ``(j, i)`` is at ``(i*pitch, j*pitch)``."""

    nx: int
    nz: int
    pitch: float

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1 or not self.pitch > 0:
            raise InvalidArgumentError("grid needs positive dimensions and pitch")

    @property
    def shape(self):
        return (self.nz, self.nx)


@dataclass
class FrameSequence:
    """Stack of intensity frames with ground truth.

    Parameters
    ----------
    frames : ndarray, shape (F, nz, nx)
    frame_rate : float
        Frames per second.
    pixel_pitch : float
        Pixel spacing in metres.
    truth : list of ndarray
        Per frame, an ``(n, 3)`` array of ``(bubble id, x, z)``.
    """

    frames: np.ndarray
    frame_rate: float
    pixel_pitch: float
    truth: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise InvalidArgumentError("frames must be an (F, nz, nx) array")
        if not self.frame_rate > 0:
            raise InvalidArgumentError("frame_rate must be positive")
        if not self.pixel_pitch > 0:
            raise InvalidArgumentError("pixel_pitch must be positive")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    def with_frames(self, frames):
        return replace(self, frames=np.asarray(frames, dtype=float))


def mb_frame_sequence(vessels, mb_density, psf_sigma, n_frames, frame_rate, grid, seed=0,
                      background=None, noise_std=0.0, amplitude=1.0):
    """Simulate microbubbles advected along vessels and imaged with a Gaussian PSF.

    Bubbles enter each vessel as a Poisson process whose rate keeps the mean
    number of bubbles in the vessel at ``mb_density``, move at the vessel
    speed and leave at its end.

    Parameters
    ----------
    vessels : sequence of Vessel
    mb_density : float
        Mean number of bubbles per vessel.
    psf_sigma : float
        PSF standard deviation in metres.
    n_frames : int
    frame_rate : float
        Hz.
    grid : GridSpec
    seed : int
    background : ndarray, optional
        Static tissue image added to every frame.
    noise_std : float
        Standard deviation of additive white noise.
    amplitude : float
        Peak intensity of one bubble.

    Returns
    -------
    FrameSequence
    """
    vessels = list(vessels)
    if not vessels:
        raise InvalidArgumentError("at least one vessel is required")
    if mb_density < 0 or not np.isfinite(mb_density):
        raise InvalidArgumentError("mb_density must be non-negative")
    if not psf_sigma > 0:
        raise InvalidArgumentError("psf_sigma must be positive")
    if int(n_frames) != n_frames or n_frames < 1:
        raise InvalidArgumentError("n_frames must be a positive integer")
    if not frame_rate > 0:
        raise InvalidArgumentError("frame_rate must be positive")
    if background is not None:
        background = np.asarray(background, dtype=float)
        if background.shape != grid.shape:
            raise InvalidArgumentError("background shape does not match the grid")
    rng = np.random.default_rng(seed)
    dt = 1.0 / frame_rate
    state = []  # per vessel: (ids, arc positions)
    next_id = 0
    for v in vessels:
        n0 = v.n_initial if v.n_initial is not None else rng.poisson(mb_density)
        s = np.sort(rng.uniform(0.0, v.length, size=n0)) if v.length > 0 else np.zeros(n0)
        state.append([np.arange(next_id, next_id + n0), s])
        next_id += n0
    frames = np.zeros((int(n_frames),) + grid.shape)
    truth = []
    sigma_px = psf_sigma / grid.pitch
    radius_px = 4.0 * sigma_px
    for f in range(int(n_frames)):
        xs, zs, ids = [], [], []
        for v, (vid, s) in zip(vessels, state):
            x, z = v.point(s)
            xs.append(x), zs.append(z), ids.append(vid)
        xs, zs, ids = np.concatenate(xs), np.concatenate(zs), np.concatenate(ids)
        truth.append(np.column_stack([ids.astype(float), xs, zs]))
        if xs.size:
            kernels.render_gaussians(frames[f], xs / grid.pitch, zs / grid.pitch,
                                     np.full(xs.size, float(amplitude)), sigma_px, radius_px)
        # advance to the next frame
        for k, v in enumerate(vessels):
            vid, s = state[k]
            step = v.speed * dt
            s = s + step
            keep = s <= v.length if v.speed > 0 else np.ones(s.size, bool)
            vid, s = vid[keep], s[keep]
            if v.speed > 0 and v.length > 0 and mb_density > 0:
                rate = mb_density * v.speed / v.length
                n_new = rng.poisson(rate * dt)
                s_new = np.sort(rng.uniform(0.0, step, size=n_new))
                vid = np.concatenate([np.arange(next_id, next_id + n_new), vid])
                s = np.concatenate([s_new, s])
                next_id += n_new
            state[k] = [vid, s]
    if background is not None:
        frames += background[None]
    if noise_std > 0:
        frames += noise_std * rng.standard_normal(frames.shape)
    return FrameSequence(frames, float(frame_rate), float(grid.pitch), truth)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------

_SLCD_MAGIC = b"SLCD"
_SLCD_VERSION = 1
_SLCD_HEADER = struct.Struct("<4sIIIdddddi")


def save_channel_data(path, cd):
    """Write channel data in the little-endian ``SLCD`` binary format.

    Layout: ``magic, version, M, N_s, fs, f0, T, theta, pitch, center``,
    then ``M`` int32 element indices, then the row-major float64 samples.
    """
    header = _SLCD_HEADER.pack(_SLCD_MAGIC, _SLCD_VERSION, cd.n_channels, cd.n_samples,
                               cd.fs, cd.f0, cd.T, cd.theta, cd.geometry.pitch,
                               cd.geometry.center)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(cd.geometry.positions, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(cd.samples, dtype="<f8").tobytes())


def load_channel_data(path):
    """Read a file written by :func:`save_channel_data`."""
    raw = Path(path).read_bytes()
    if len(raw) < _SLCD_HEADER.size:
        raise InvalidArgumentError(f"{path}: truncated header")
    magic, version, M, n_s, fs, f0, T, theta, pitch, center = _SLCD_HEADER.unpack_from(raw)
    if magic != _SLCD_MAGIC:
        raise InvalidArgumentError(f"{path}: not a channel-data file")
    if version != _SLCD_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported version {version}")
    off = _SLCD_HEADER.size
    expected = off + 4 * M + 8 * M * n_s
    if len(raw) != expected:
        raise InvalidArgumentError(f"{path}: size {len(raw)} != expected {expected}")
    positions = np.frombuffer(raw, "<i4", M, off)
    samples = np.frombuffer(raw, "<f8", M * n_s, off + 4 * M).reshape(M, n_s)
    geom = ArrayGeometry(tuple(int(p) for p in positions), pitch, center=center)
    return ChannelData(samples.copy(), fs, T, f0, geom, theta)


def _fmt(x):
    return repr(float(x))


def save_phantom(path, phantom):
    """Write a phantom as key/value sections, one ``[scatterer.N]`` per reflector."""
    cp = configparser.ConfigParser()
    cp["phantom"] = {"name": phantom.name, "count": str(len(phantom))}
    for i, s in enumerate(phantom.scatterers):
        cp[f"scatterer.{i}"] = {"r": _fmt(s.r), "theta": _fmt(s.theta),
                                "reflectivity": _fmt(s.reflectivity),
                                "nonlinearity": _fmt(s.nonlinearity)}
    with open(path, "w") as fh:
        cp.write(fh)


def _sections(cp, prefix):
    found = [s for s in cp.sections() if s.startswith(prefix + ".")]
    return sorted(found, key=lambda s: int(s.split(".", 1)[1]))


def load_phantom(path):
    """Read a phantom written by :func:`save_phantom`."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidArgumentError(f"cannot read phantom file {path}")
    name = cp.get("phantom", "name", fallback="")
    scat = []
    for sec in _sections(cp, "scatterer"):
        d = cp[sec]
        scat.append(Scatterer(float(d["r"]), float(d.get("theta", 0.0)),
                              float(d.get("reflectivity", 1.0)),
                              float(d.get("nonlinearity", 0.0))))
    return Phantom(tuple(scat), name)


def save_vessels(path, vessels):
    """Write vessel segments as ``[vessel.N]`` key/value sections."""
    cp = configparser.ConfigParser()
    for i, v in enumerate(vessels):
        sec = {"x0": _fmt(v.start[0]), "z0": _fmt(v.start[1]),
               "x1": _fmt(v.end[0]), "z1": _fmt(v.end[1]), "speed": _fmt(v.speed)}
        if v.n_initial is not None:
            sec["n_initial"] = str(v.n_initial)
        cp[f"vessel.{i}"] = sec
    with open(path, "w") as fh:
        cp.write(fh)


def vessels_from_config(cp):
    """Vessel list from ``[vessel.N]`` sections of a parsed configuration."""
    out = []
    for sec in _sections(cp, "vessel"):
        d = cp[sec]
        n0 = d.get("n_initial")
        out.append(Vessel((float(d["x0"]), float(d["z0"])), (float(d["x1"]), float(d["z1"])),
                          float(d.get("speed", 0.0)), None if n0 is None else int(n0)))
    return out


def load_vessels(path):
    """Read vessels written by :func:`save_vessels`."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidArgumentError(f"cannot read vessel file {path}")
    return vessels_from_config(cp)
