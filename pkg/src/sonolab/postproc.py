"""B-mode post-processing and image-quality metrics."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage
import scipy.signal

from .beamform_time import RFLine
from .delays import SPEED_OF_SOUND
from .errors import DegenerateInputError, InvalidArgumentError

__all__ = [
    "BModeImage",
    "DEFAULT_DYNAMIC_RANGE",
    "envelope",
    "log_compress",
    "scan_convert",
    "lines_to_image",
    "nrmse",
    "fwhm",
    "cnr",
    "valley_to_peak",
    "compression_ratio",
    "to_gray",
    "write_pgm",
    "read_pgm",
    "write_png",
    "save_metrics_csv",
    "load_metrics_csv",
]

DEFAULT_DYNAMIC_RANGE = 60.0


@dataclass
class BModeImage:
    """Log-compressed image on a rectangular grid.

    Attributes
    ----------
    grid : ndarray, shape (nz, nx)
        Values in dB within ``[-dynamic_range, 0]``.
    z_axis : ndarray, shape (nz,)
        Depth of each row in metres.
    x_axis : ndarray, shape (nx,)
        Lateral coordinate of each column (metres, or radians when
        ``lateral_unit == "rad"``).
    dynamic_range : float
        dB.
    """

    grid: np.ndarray
    z_axis: np.ndarray
    x_axis: np.ndarray
    dynamic_range: float = DEFAULT_DYNAMIC_RANGE
    lateral_unit: str = "m"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.shape != (len(self.z_axis), len(self.x_axis)):
            raise InvalidArgumentError("grid shape does not match the axes")
        if not self.dynamic_range > 0:
            raise InvalidArgumentError("dynamic_range must be positive")
        if self.grid.size and (self.grid.min() < -self.dynamic_range - 1e-9
                               or self.grid.max() > 1e-9):
            raise InvalidArgumentError("image values must lie in [-dynamic_range, 0]")


# --------------------------------------------------------------------------
# Display chain
# --------------------------------------------------------------------------


def envelope(line):
    """Magnitude of the discrete analytic signal of a line.

    Parameters
    ----------
    line : RFLine or array_like
        Complex input is taken to be analytic already.

    Returns
    -------
    ndarray
    """
    x = line.samples if isinstance(line, RFLine) else np.asarray(line)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("samples must be finite")
    if np.iscomplexobj(x):
        return np.abs(x)
    if x.size == 0:
        return np.zeros(0)
    return np.abs(scipy.signal.hilbert(x.astype(float), axis=-1))


def log_compress(env, dynamic_range_db=DEFAULT_DYNAMIC_RANGE, reference=None):
    """``20 log10(env / max(env))`` clipped to ``[-DR, 0]``.

    Parameters
    ----------
    env : array_like
        Non-negative envelope (any shape).
    dynamic_range_db : float
    reference : float, optional
        Normalisation level instead of ``max(env)`` (e.g. a global maximum
        shared by several lines).

    Returns
    -------
    ndarray
        All-zero input maps to ``-DR`` everywhere.
    """
    if not dynamic_range_db > 0:
        raise InvalidArgumentError("dynamic range must be positive")
    env = np.abs(np.asarray(env, dtype=float))
    ref = env.max(initial=0.0) if reference is None else float(reference)
    out = np.full(env.shape, -float(dynamic_range_db))
    if not ref > 0:
        return out
    pos = env > 0
    with np.errstate(divide="ignore"):
        out[pos] = 20.0 * np.log10(env[pos] / ref)
    return np.clip(out, -dynamic_range_db, 0.0)


def scan_convert(lines, output_size=(256, 256), dynamic_range_db=DEFAULT_DYNAMIC_RANGE,
                 c=SPEED_OF_SOUND, r_max=None):
    """Polar-to-Cartesian conversion of per-angle lines into a sector image.

    Each line is envelope-detected and log-compressed against the global
    maximum; sample ``i`` of the line at angle ``theta`` lies at depth
    ``r = c (t0 + i / fs) / 2`` and position ``(r sin theta, r cos theta)``.
    Pixels are filled by bilinear interpolation in (sample, angle) index
    space; pixels outside the sector are ``-DR``.

    Parameters
    ----------
    lines : sequence of RFLine
        At least two lines, sorted by strictly increasing angle, sharing
        ``fs`` and ``t0``.
    output_size : (int, int)
        ``(nz, nx)``.
    r_max : float, optional
        Largest displayed depth (default: end of the longest line).

    Returns
    -------
    BModeImage
    """
    lines = list(lines)
    if len(lines) < 2:
        raise InvalidArgumentError("scan conversion needs at least two lines")
    thetas = np.array([ln.theta for ln in lines], dtype=float)
    if np.any(np.diff(thetas) <= 0):
        raise InvalidArgumentError("line angles must be strictly increasing")
    fs, t0 = lines[0].fs, lines[0].t0
    if any(ln.fs != fs or ln.t0 != t0 for ln in lines):
        raise InvalidArgumentError("lines must share fs and t0")
    n = max(len(ln) for ln in lines)
    env = np.zeros((n, len(lines)))
    for j, ln in enumerate(lines):
        env[:len(ln), j] = envelope(ln)
    db = log_compress(env, dynamic_range_db)
    nz, nx = int(output_size[0]), int(output_size[1])
    dr = c / (2.0 * fs)
    r0 = c * t0 / 2.0
    r_max = r0 + (n - 1) * dr if r_max is None else float(r_max)
    x_half = r_max * max(abs(np.sin(thetas[0])), abs(np.sin(thetas[-1])))
    x_axis = np.linspace(-x_half, x_half, nx)
    z_top = r0 * min(np.cos(thetas[0]), np.cos(thetas[-1]))
    z_axis = np.linspace(max(z_top, 0.0), r_max, nz)
    X, Z = np.meshgrid(x_axis, z_axis)
    R = np.hypot(X, Z)
    TH = np.arctan2(X, Z)
    ri = (R - r0) / dr
    ti = np.interp(TH, thetas, np.arange(len(lines)))
    inside = (TH >= thetas[0] - 1e-12) & (TH <= thetas[-1] + 1e-12) & (ri >= 0) & \
             (ri <= n - 1) & (R <= r_max + 1e-12)
    grid = np.full((nz, nx), -float(dynamic_range_db))
    if np.any(inside):
        vals = scipy.ndimage.map_coordinates(db, [ri[inside], ti[inside]], order=1,
                                             mode="nearest")
        grid[inside] = np.clip(vals, -dynamic_range_db, 0.0)
    return BModeImage(grid, z_axis, x_axis, float(dynamic_range_db), "m",
                      {"theta_min": float(thetas[0]), "theta_max": float(thetas[-1])})


def lines_to_image(lines, dynamic_range_db=DEFAULT_DYNAMIC_RANGE, c=SPEED_OF_SOUND):
    """Log-compressed (depth x angle) image without scan conversion."""
    lines = list(lines)
    if not lines:
        raise InvalidArgumentError("no lines")
    n = max(len(ln) for ln in lines)
    env = np.zeros((n, len(lines)))
    for j, ln in enumerate(lines):
        env[:len(ln), j] = envelope(ln)
    fs, t0 = lines[0].fs, lines[0].t0
    z_axis = c * (t0 + np.arange(n) / fs) / 2.0
    x_axis = np.array([ln.theta for ln in lines], dtype=float)
    return BModeImage(log_compress(env, dynamic_range_db), z_axis, x_axis,
                      float(dynamic_range_db), "rad")


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def nrmse(a, b):
    """Normalised RMS error ``||a - b|| / ||b||`` after scaling both to unit peak.

    Peaks are taken in absolute value; an all-zero ``a`` stays zero.

    Raises
    ------
    InvalidArgumentError
        Shape mismatch or an all-zero reference.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    pb = np.max(np.abs(b), initial=0.0)
    if not pb > 0:
        raise InvalidArgumentError("reference is identically zero")
    pa = np.max(np.abs(a), initial=0.0)
    an = a / pa if pa > 0 else a
    bn = b / pb
    return float(np.linalg.norm(an - bn) / np.linalg.norm(bn))


def fwhm(profile, spacing=1.0):
    """Full width at half maximum of a unimodal profile.

    Crossings of half the peak value are located by linear interpolation
    between samples.

    Raises
    ------
    DegenerateInputError
        Flat profiles, profiles whose above-half region is not a single run
        (multi-modal), or peaks that do not fall below half within the
        profile.
    """
    p = np.asarray(profile, dtype=float).ravel()
    if p.size < 3 or not np.all(np.isfinite(p)):
        raise DegenerateInputError("profile needs at least three finite samples")
    i = int(np.argmax(p))
    peak = p[i]
    if not peak > p.min():
        raise DegenerateInputError("flat profile has no half maximum")
    half = 0.5 * peak
    above = np.flatnonzero(p >= half)
    if above[-1] - above[0] + 1 != above.size:
        raise DegenerateInputError("profile is multi-modal at half maximum")
    lo, hi = above[0], above[-1]
    if lo == 0 or hi == p.size - 1:
        raise DegenerateInputError("profile does not fall to half maximum inside the window")
    left = lo - 1 + (half - p[lo - 1]) / (p[lo] - p[lo - 1])
    right = hi + (p[hi] - half) / (p[hi] - p[hi + 1])
    return float((right - left) * spacing)


def cnr(image, target_mask, background_mask):
    """Contrast-to-noise ratio ``|mu_t - mu_b| / sqrt(var_t + var_b)``."""
    img = np.asarray(image, dtype=float)
    t = img[np.asarray(target_mask, bool)]
    b = img[np.asarray(background_mask, bool)]
    if t.size < 2 or b.size < 2:
        raise InvalidArgumentError("both regions need at least two pixels")
    den = np.sqrt(t.var() + b.var())
    if not den > 0:
        raise DegenerateInputError("zero variance in both regions")
    return float(abs(t.mean() - b.mean()) / den)


def valley_to_peak(profile, min_height=0.25):
    """Depth of the dip between the two strongest peaks of a profile.

    Returns the minimum between the two highest local maxima divided by the
    smaller of the two.  Maxima lower than ``min_height`` times the global
    maximum are ignored, so small tail ripples do not count as a second
    peak.  Profiles with fewer than two such maxima give ``1.0``
    (unresolved); ``0.0`` means the peaks are separated by a zero.
    """
    p = np.asarray(profile, dtype=float).ravel()
    if p.size < 3 or not p.max() > 0:
        return 1.0
    # plateau-aware maxima: collapse runs of equal values
    keep = np.concatenate([[True], np.diff(p) != 0])
    vals = p[keep]
    idx = np.flatnonzero(keep)
    if vals.size < 3:
        return 1.0
    pad = np.concatenate([[-np.inf], vals, [-np.inf]])
    is_max = (pad[1:-1] > pad[:-2]) & (pad[1:-1] > pad[2:]) & (vals >= min_height * p.max())
    peaks = np.flatnonzero(is_max)
    if peaks.size < 2:
        return 1.0
    top = np.sort(peaks[np.argsort(vals[peaks], kind="stable")[::-1][:2]])
    a, b = idx[top[0]], idx[top[1]]
    valley = p[a:b + 1].min()
    return float(valley / min(p[a], p[b]))


def compression_ratio(baseline_samples, baseline_channels, used_samples, used_channels):
    """Data-rate reduction ``(N_base * M_base) / (N_used * M_used)``."""
    vals = [baseline_samples, baseline_channels, used_samples, used_channels]
    for v in vals:
        if not np.isfinite(v) or v < 0:
            raise InvalidArgumentError("sizes must be non-negative and finite")
    if used_samples == 0 or used_channels == 0:
        raise InvalidArgumentError("used sizes must be positive")
    return float(baseline_samples) * float(baseline_channels) / (
        float(used_samples) * float(used_channels))


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def to_gray(values, bits=8, vmin=None, vmax=None):
    """Linear map of ``[vmin, vmax]`` onto ``[0, 2**bits - 1]`` (rounded, clipped).

    For a :class:`BModeImage` the range defaults to ``[-DR, 0]``; for plain
    arrays to the data range.
    """
    if bits not in (8, 16):
        raise InvalidArgumentError("bits must be 8 or 16")
    if isinstance(values, BModeImage):
        vmin = -values.dynamic_range if vmin is None else vmin
        vmax = 0.0 if vmax is None else vmax
        values = values.grid
    v = np.asarray(values, dtype=float)
    vmin = float(v.min(initial=0.0)) if vmin is None else float(vmin)
    vmax = float(v.max(initial=0.0)) if vmax is None else float(vmax)
    top = (1 << bits) - 1
    if vmax > vmin:
        g = np.rint((v - vmin) / (vmax - vmin) * top)
    else:
        g = np.zeros(v.shape)
    return np.clip(g, 0, top).astype(np.uint8 if bits == 8 else np.uint16)


def write_pgm(path, values, bits=8, vmin=None, vmax=None):
    """Write a binary (P5) PGM; 16-bit samples are big-endian."""
    g = to_gray(values, bits, vmin, vmax)
    if g.ndim != 2:
        raise InvalidArgumentError("PGM images must be two-dimensional")
    path = Path(path)
    top = (1 << bits) - 1
    header = f"P5\n{g.shape[1]} {g.shape[0]}\n{top}\n".encode("ascii")
    body = g.astype(">u2").tobytes() if bits == 16 else g.tobytes()
    path.write_bytes(header + body)
    return path


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm`."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise InvalidArgumentError("not a binary PGM file")
    w, h, top = int(parts[1]), int(parts[2]), int(parts[3])
    # header is exactly the four tokens each followed by one whitespace byte
    offset = sum(len(p) + 1 for p in parts[:4])
    dtype = np.dtype(">u2") if top > 255 else np.dtype(np.uint8)
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset)
    return arr.reshape(h, w).astype(np.uint16 if top > 255 else np.uint8)


def write_png(path, values, bits=8, vmin=None, vmax=None):
    """Write a grayscale PNG (8- or 16-bit) via Pillow."""
    from PIL import Image

    g = to_gray(values, bits, vmin, vmax)
    path = Path(path)
    Image.fromarray(g).save(path, format="PNG")
    return path


def save_metrics_csv(path, rows, config_hash=""):
    """Write ``metric,value,config_hash`` rows; values use ``repr`` precision.

    Parameters
    ----------
    rows : iterable of (str, float)
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value", "config_hash"])
        for name, value in rows:
            w.writerow([name, repr(float(value)), config_hash])
    return path


def load_metrics_csv(path):
    """Return ``{metric: value}`` from a metrics CSV."""
    with Path(path).open() as fh:
        return {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)}
