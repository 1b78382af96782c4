r"""Frequency-domain beamforming.

The Fourier-series coefficients of a beamformed line can be obtained directly
from the Fourier coefficients of the individual channels:

.. math::

    c[k] = \frac{1}{M}\sum_{m}\sum_{n=-N_1}^{N_2} c_m[k-n]\,Q_{k,m;\theta}[n],

where the distortion kernel

.. math::

    Q_{k,m;\theta}[n] = \frac{1}{T}\int_0^{T_B(\theta)}
        \exp\!\Big(j\frac{2\pi}{T}\big[(k-n)\tau_m(t;\theta) - k t\big]\Big)\,dt

follows from substituting the Fourier series of channel ``m`` into the
coefficient integral of its delayed version.  The kernel depends only on the
geometry, the line angle and the record length, so it is computed once and
cached.

Only a band of coefficients is needed, and only a subset of those if the
line is later recovered by sparse reconstruction; this is the digital
counterpart of sub-Nyquist (Xampling) acquisition.
"""

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.integrate

from .beamform_time import RFLine
from .delays import beam_end_time, tau, tau_prime
from .errors import InvalidArgumentError
from .delays import SPEED_OF_SOUND

__all__ = [
    "CoeffSet",
    "DistortionKernel",
    "KernelCache",
    "fourier_coeffs",
    "distortion_kernel",
    "kernel_energy",
    "select_window",
    "fdbf_line",
    "frequency_beamform",
    "subsample_coeffs",
    "central_block",
    "ifft_line",
    "save_coeffs_csv",
    "load_coeffs_csv",
]


@dataclass
class CoeffSet:
    """Fourier coefficients of one or more channels on a common index set.

    Parameters
    ----------
    coeffs : ndarray, shape (M, K)
        Complex coefficients; column ``i`` belongs to index ``kappa[i]``.
    kappa : ndarray of int, shape (K,)
        Sorted coefficient indices.
    T : float
        Period (acquisition window) in seconds.
    n_samples : int
        Number of samples of the source signal (sets the Nyquist index).
    real_signal : bool
        Whether the source was real, so ``c[-k] = conj(c[k])``.
    parent_kappa : ndarray, optional
        Index set this one was subsampled from.
    """

    coeffs: np.ndarray
    kappa: np.ndarray
    T: float
    n_samples: int
    real_signal: bool = True
    parent_kappa: np.ndarray = None

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        self.kappa = np.asarray(self.kappa, dtype=np.int64)
        if self.kappa.ndim != 1 or self.coeffs.shape[1] != self.kappa.size:
            raise InvalidArgumentError("coefficient matrix does not match the index set")
        if np.any(np.diff(self.kappa) <= 0):
            raise InvalidArgumentError("kappa must be strictly increasing")

    @property
    def n_channels(self):
        return self.coeffs.shape[0]

    @property
    def K(self):
        return self.kappa.size

    @property
    def fs(self):
        return self.n_samples / self.T

    def channel(self, m=0):
        """Coefficient vector of channel ``m``."""
        return self.coeffs[m]

    def as_dict(self, m=0):
        """Mapping ``k -> c_m[k]``."""
        return dict(zip(self.kappa.tolist(), self.coeffs[m].tolist()))


@dataclass
class DistortionKernel:
    """Tabulated distortion kernel.

    Parameters
    ----------
    Q : ndarray, shape (K, M, N1 + N2 + 1)
        ``Q[i, m, n + N1]`` is the kernel for target index ``k[i]``.
    k : ndarray of int
        Target indices.
    theta : float
    N1, N2 : int
        Window ``n in [-N1, N2]``.
    T : float
    channel_a : ndarray
        Element offsets over the speed of sound, one per channel.
    energy_fraction : ndarray, shape (K, M), optional
        Share of the total kernel energy inside the window.
    """

    Q: np.ndarray
    k: np.ndarray
    theta: float
    N1: int
    N2: int
    T: float
    channel_a: np.ndarray
    energy_fraction: np.ndarray = field(default=None, repr=False)

    @property
    def n_channels(self):
        return self.Q.shape[1]

    @property
    def n(self):
        return np.arange(-self.N1, self.N2 + 1)

    def truncate(self, N1, N2):
        """Kernel restricted to the narrower window ``[-N1, N2]``."""
        if not (0 <= N1 <= self.N1 and 0 <= N2 <= self.N2):
            raise InvalidArgumentError("window must lie inside the tabulated one")
        sl = slice(self.N1 - N1, self.N1 + N2 + 1)
        return DistortionKernel(self.Q[:, :, sl].copy(), self.k, self.theta, N1, N2, self.T,
                                self.channel_a, None)


# --------------------------------------------------------------------------
# Channel coefficients
# --------------------------------------------------------------------------


def _source(data, T):
    from .acquisition import ChannelData

    if isinstance(data, ChannelData):
        return data.samples, data.T, True
    if isinstance(data, RFLine):
        x = data.samples[None]
        return x, (data.samples.size / data.fs if T is None else T), not np.iscomplexobj(x)
    x = np.atleast_2d(np.asarray(data))
    if T is None:
        raise InvalidArgumentError("T is required for raw sample arrays")
    return x, T, not np.iscomplexobj(x)


def fourier_coeffs(data, kappa, T=None):
    """Fourier-series coefficients ``c[k] = (T_s / T) sum_n x[n] exp(-2j pi k n / N_s)``.

    Parameters
    ----------
    data : ChannelData, RFLine or ndarray
        Real or complex samples (rows are channels).
    kappa : array_like of int
        Requested indices; ``|k| <= N_s / 2`` for real data and
        ``-N_s < k < N_s`` for complex data.
    T : float, optional
        Period, required for raw arrays.

    Returns
    -------
    CoeffSet
    """
    x, T, real = _source(data, T)
    n_s = x.shape[1]
    kappa = np.unique(np.asarray(kappa, dtype=np.int64))
    if kappa.size == 0:
        raise InvalidArgumentError("kappa is empty")
    bad = kappa[(np.abs(kappa) > n_s / 2)] if real else kappa[np.abs(kappa) >= n_s]
    if bad.size:
        raise InvalidArgumentError(f"indices out of range for {n_s} samples: {bad[:5].tolist()}")
    X = np.fft.fft(x, axis=1) / n_s
    return CoeffSet(X[:, kappa % n_s], kappa, T, n_s, real)


# --------------------------------------------------------------------------
# Distortion kernel
# --------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _panels(t_b, rate, per_panel_cycles):
    """Composite Gauss-Legendre nodes/weights on ``[0, t_b]`` adapted to ``rate(t)``."""
    edges = [0.0]
    t = 0.0
    while t < t_b:
        h = per_panel_cycles / rate(t)
        h = min(h, per_panel_cycles / rate(min(t + h, t_b)), t_b - t)
        t = t_b if t_b - (t + h) < 1e-3 * h else t + h
        edges.append(t)
    e = np.asarray(edges)
    mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * (e[1:] - e[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_X[None]).ravel()
    weights = (half[:, None] * _GL_W[None]).ravel()
    return nodes, weights


def _kernel_one(a, s, t_b, T, k, n_lo, n_hi, points_per_cycle, chunk=4096):
    """``Q[i, j]`` for target ``k[i]`` and offset ``n = n_lo + j`` of one channel."""
    p_lo, p_hi = k.min() - n_hi, k.max() - n_lo
    p_abs = max(abs(p_lo), abs(p_hi), abs(k).max())
    width = max(abs(n_lo), abs(n_hi))

    def rate(t):
        return (p_abs * abs(1.0 - float(tau_prime(t, a, s))) + width + 1.0) / T

    nodes, weights = _panels(t_b, rate, 8.0 / points_per_cycle)
    p = np.arange(p_lo, p_hi + 1)
    G = np.zeros((p.size, k.size), dtype=complex)
    for i in range(0, nodes.size, chunk):
        tn, wn = nodes[i:i + chunk], weights[i:i + chunk]
        E = np.exp((2j * np.pi / T) * np.outer(p, tau(tn, a, s)))
        F = np.exp((-2j * np.pi / T) * np.outer(tn, k)) * wn[:, None]
        G += E @ F
    G /= T
    n = np.arange(n_lo, n_hi + 1)
    rows = (k[:, None] - n[None, :]) - p_lo
    return G[rows, np.arange(k.size)[:, None]]


def distortion_kernel(geometry, theta, target_k, N1, N2, T, points_per_cycle=16,
                      c=SPEED_OF_SOUND):
    """Tabulate ``Q_{k,m;theta}[n]`` by composite Gauss-Legendre quadrature.

    The integration interval is split into 8-node panels, each covering
    ``8 / points_per_cycle`` cycles of the fastest phase term in the panel,
    so nodes are on average ``2 pi / points_per_cycle`` radians apart.
    Channels with identical delay laws share one evaluation.

    Parameters
    ----------
    geometry : ArrayGeometry
    theta : float
        Line angle (rad).
    target_k : array_like of int
        Indices of the beamformed coefficients to produce.
    N1, N2 : int
        Kernel window ``n in [-N1, N2]``.
    T : float
        Record length (s).
    points_per_cycle : float
        Quadrature density; at least 8.

    Returns
    -------
    DistortionKernel

    Raises
    ------
    InvalidArgumentError
        If the quadrature is too coarse or the window is negative.
    """
    if points_per_cycle < 8:
        raise InvalidArgumentError(
            "quadrature grid too coarse: phase step between nodes exceeds pi/4")
    if int(N1) != N1 or int(N2) != N2 or N1 < 0 or N2 < 0:
        raise InvalidArgumentError("N1 and N2 must be non-negative integers")
    k = np.asarray(target_k, dtype=np.int64)
    if k.ndim != 1 or k.size == 0:
        raise InvalidArgumentError("target index set is empty")
    if not abs(theta) < np.pi / 2:
        raise InvalidArgumentError("line angle must satisfy |theta| < pi/2")
    s = math.sin(theta)
    a_all = geometry.offsets / c
    t_b = beam_end_time(a_all, s, T)
    Q = np.empty((k.size, a_all.size, int(N1) + int(N2) + 1), dtype=complex)
    done = {}
    for m, a in enumerate(a_all):
        key = (a * s + 0.0, a * a)
        if key not in done:
            done[key] = _kernel_one(float(a), s, t_b, T, k, -int(N1), int(N2), points_per_cycle)
        Q[:, m, :] = done[key]
    return DistortionKernel(Q, k, float(theta), int(N1), int(N2), float(T), a_all)


def kernel_energy(geometry, theta, T, c=SPEED_OF_SOUND):
    """Total energy ``sum_n |Q[n]|^2`` per channel (independent of ``k``).

    By Parseval this equals ``(1/T) int_0^{T_B} dt / tau'(t)``.
    """
    s = math.sin(theta)
    a_all = geometry.offsets / c
    t_b = beam_end_time(a_all, s, T)
    out = np.empty(a_all.size)
    for m, a in enumerate(a_all):
        if a == 0:
            out[m] = t_b / T
            continue
        val, _ = scipy.integrate.quad(lambda t: 1.0 / float(tau_prime(t, a, s)), 0.0, t_b,
                                      points=[min(t_b, 2 * abs(a) * q) for q in (1, 4, 16)],
                                      limit=200, epsabs=0, epsrel=1e-12)
        out[m] = val / T
    return out


def select_window(geometry, theta, target_k, T, energy=0.999, max_window=64,
                  points_per_cycle=16, c=SPEED_OF_SOUND):
    """Smallest symmetric window capturing ``energy`` of every kernel row.

    The kernel is tabulated on ``[-max_window, max_window]``; for each
    ``(k, m)`` the smallest ``w`` with
    ``sum_{|n| <= w} |Q[n]|^2 >= energy * total`` is found, where the total
    comes from :func:`kernel_energy`.  Rows that do not reach the target
    inside the cap use the cap.  The returned kernel is truncated to the
    largest selected ``w`` and records the achieved fraction per row in
    ``energy_fraction``.

    Returns
    -------
    DistortionKernel
    """
    if not 0 < energy <= 1:
        raise InvalidArgumentError("energy must lie in (0, 1]")
    full = distortion_kernel(geometry, theta, target_k, max_window, max_window, T,
                             points_per_cycle, c)
    total = kernel_energy(geometry, theta, T, c)[None, :]
    p = np.abs(full.Q) ** 2
    W = max_window
    # energy inside |n| <= w for w = 0..W
    centre = p[:, :, W]
    sym = p[:, :, W + 1:] + p[:, :, :W][:, :, ::-1]
    cum = np.concatenate([centre[..., None], centre[..., None] + np.cumsum(sym, axis=2)], axis=2)
    reached = cum >= energy * total[..., None]
    w_row = np.where(reached.any(axis=2), reached.argmax(axis=2), W)
    w = int(w_row.max())
    kern = full.truncate(w, w)
    kern.energy_fraction = cum[:, :, w] / total
    return kern


def _lookup(coeffs, needed):
    """Column index into ``coeffs`` for every needed index; -1 means zero, -2 conj."""
    n_s = coeffs.n_samples
    pos = {int(k): i for i, k in enumerate(coeffs.kappa)}
    flat = np.unique(needed)
    idx = np.full(flat.shape, -3, dtype=np.int64)
    conj = np.zeros(flat.shape, dtype=bool)
    for j, k in enumerate(flat.tolist()):
        if k in pos:
            idx[j] = pos[k]
        elif coeffs.real_signal and -k in pos:
            idx[j], conj[j] = pos[-k], True
        elif coeffs.real_signal and abs(k) > n_s / 2:
            idx[j] = -1  # beyond Nyquist: identically zero for sampled data
    missing = flat[idx == -3]
    if missing.size:
        show = ", ".join(map(str, missing[:10].tolist()))
        raise InvalidArgumentError(
            f"coefficients missing for {missing.size} required indices (e.g. {show})")
    return flat, idx, conj


def fdbf_line(coeffs, Q):
    """Beamformed Fourier coefficients ``c[k]`` for the kernel's target indices.

    Parameters
    ----------
    coeffs : CoeffSet
        Channel coefficients covering every ``k - n`` the kernel touches.
    Q : DistortionKernel

    Returns
    -------
    CoeffSet
        A single-channel set on ``Q.k``.

    Raises
    ------
    InvalidArgumentError
        On channel-count mismatch or missing coefficients.
    """
    if coeffs.n_channels != Q.n_channels:
        raise InvalidArgumentError(
            f"{coeffs.n_channels} channels but kernel has {Q.n_channels}")
    needed = Q.k[:, None] - Q.n[None, :]
    flat, idx, conj = _lookup(coeffs, needed)
    table = np.zeros((coeffs.n_channels, flat.size), dtype=complex)
    have = idx >= 0
    table[:, have] = coeffs.coeffs[:, idx[have]]
    table[:, conj] = table[:, conj].conj()
    gather = table[:, np.searchsorted(flat, needed)]  # (M, K, W)
    c = np.einsum("mkn,kmn->k", gather, Q.Q) / coeffs.n_channels
    return CoeffSet(c[None], Q.k, coeffs.T, coeffs.n_samples, coeffs.real_signal)


def frequency_beamform(cd, kappa=None, window=None, theta=None, pulse=None,
                       points_per_cycle=16, cache=None, energy=0.999, max_window=64):
    """Full-band frequency-domain beamforming of one acquisition.

    Parameters
    ----------
    cd : ChannelData
    kappa : array_like of int, optional
        Target indices (default: the pulse's -40 dB band).
    window : int, optional
        Symmetric kernel half-width; by default chosen by
        :func:`select_window`.
    pulse : Pulse, optional
        Used for the default band (default: ``Pulse(f0=cd.f0)``).
    cache : KernelCache, optional

    Returns
    -------
    beam : CoeffSet
        Beamformed coefficients on ``kappa``.
    kernel : DistortionKernel
    """
    from .acquisition import Pulse

    theta = cd.theta if theta is None else theta
    if kappa is None:
        kappa = (pulse or Pulse(f0=cd.f0)).band(cd.T)
    kappa = np.asarray(kappa, dtype=np.int64)
    if window is None:
        kern = select_window(cd.geometry, theta, kappa, cd.T, energy, max_window,
                             points_per_cycle)
    elif cache is not None:
        kern = cache.get(cd.geometry, theta, kappa, window, window, cd.T, points_per_cycle)
    else:
        kern = distortion_kernel(cd.geometry, theta, kappa, window, window, cd.T,
                                 points_per_cycle)
    lo, hi = kappa.min() - kern.N2, kappa.max() + kern.N1
    ks = np.arange(max(lo, -(cd.n_samples // 2)), min(hi, cd.n_samples // 2) + 1)
    return fdbf_line(fourier_coeffs(cd, ks), kern), kern


def central_block(kappa, count, center=None):
    """``count`` consecutive entries of ``kappa`` centred on ``center`` (default: middle)."""
    kappa = np.asarray(kappa, dtype=np.int64)
    count = int(count)
    if not 1 <= count <= kappa.size:
        raise InvalidArgumentError(f"cannot keep {count} of {kappa.size} coefficients")
    mid = kappa.size // 2 if center is None else int(np.argmin(np.abs(kappa - center)))
    start = int(np.clip(mid - count // 2, 0, kappa.size - count))
    return kappa[start:start + count]


def subsample_coeffs(coeffs, keep, center=None):
    """Restrict a coefficient set to a subset of its indices.

    Parameters
    ----------
    coeffs : CoeffSet
    keep : int or array_like of int
        Number of consecutive central indices, or an explicit subset.
    center : int, optional
        Index around which a count-based block is centred.

    Returns
    -------
    CoeffSet
        With ``parent_kappa`` recording the original index set.
    """
    if np.isscalar(keep):
        sub = central_block(coeffs.kappa, keep, center)
    else:
        sub = np.unique(np.asarray(keep, dtype=np.int64))
        if sub.size == 0:
            raise InvalidArgumentError("subset is empty")
        extra = np.setdiff1d(sub, coeffs.kappa)
        if extra.size:
            raise InvalidArgumentError(f"indices not in kappa: {extra[:10].tolist()}")
    cols = np.searchsorted(coeffs.kappa, sub)
    parent = coeffs.kappa if coeffs.parent_kappa is None else coeffs.parent_kappa
    return CoeffSet(coeffs.coeffs[:, cols], sub, coeffs.T, coeffs.n_samples,
                    coeffs.real_signal, parent)


def ifft_line(c, n_out=None, theta=0.0, real=None):
    """Samples of the Fourier series with the given coefficients.

    Parameters
    ----------
    c : CoeffSet
        Single-channel coefficients.
    n_out : int, optional
        Number of output samples over the period (default ``c.n_samples``).
    real : bool, optional
        Conjugate-symmetric completion (default ``c.real_signal``).

    Returns
    -------
    RFLine
        Sampled at ``n_out / T``.
    """
    n_out = c.n_samples if n_out is None else int(n_out)
    real = c.real_signal if real is None else real
    k = c.kappa
    v = c.coeffs[0]
    if real:
        if np.any(np.abs(k) > n_out / 2):
            raise InvalidArgumentError("coefficient index beyond +-N_out/2")
    elif np.any(np.abs(k) >= n_out):
        raise InvalidArgumentError("coefficient index beyond N_out")
    X = np.zeros(n_out, dtype=complex)
    if real:
        if np.intersect1d(k[k > 0], -k[k < 0]).size:
            raise InvalidArgumentError("give each frequency once (k or -k)")
        # DC and (for even n_out) Nyquist are their own mirror images
        self_mirror = (k % n_out) == (-k % n_out)
        nz = ~self_mirror
        np.add.at(X, k[nz] % n_out, v[nz])
        np.add.at(X, (-k[nz]) % n_out, v[nz].conj())
        np.add.at(X, k[self_mirror] % n_out, v[self_mirror].real)
        samples = np.fft.ifft(X).real * n_out
    else:
        np.add.at(X, k % n_out, v)
        samples = np.fft.ifft(X) * n_out
    return RFLine(samples, n_out / c.T, theta)


# --------------------------------------------------------------------------
# Kernel cache and CSV export
# --------------------------------------------------------------------------


class KernelCache:
    """Disk cache of distortion kernels.

    Files are named by a SHA-256 digest of ``(geometry, theta, T, k, N1, N2,
    points_per_cycle)`` and hold the table plus its key.

    Parameters
    ----------
    directory : str or Path
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(geometry, theta, k, N1, N2, T, points_per_cycle):
        h = hashlib.sha256()
        h.update(np.asarray(geometry.positions, dtype="<i8").tobytes())
        h.update(np.array([geometry.pitch, theta, T, points_per_cycle], dtype="<f8").tobytes())
        h.update(np.array([geometry.center, N1, N2], dtype="<i8").tobytes())
        h.update(np.asarray(k, dtype="<i8").tobytes())
        return h.hexdigest()

    def path(self, *args):
        return self.directory / f"qkernel_{self.key(*args)[:32]}.npz"

    def get(self, geometry, theta, k, N1, N2, T, points_per_cycle=16):
        """Load the kernel if cached, else compute and store it."""
        args = (geometry, theta, np.asarray(k, dtype=np.int64), int(N1), int(N2), T,
                points_per_cycle)
        path = self.path(*args)
        key = self.key(*args)
        if path.exists():
            with np.load(path) as z:
                if str(z["key"]) == key:
                    return DistortionKernel(z["Q"], z["k"], float(z["theta"]), int(N1), int(N2),
                                            float(z["T"]), z["a"])
        kern = distortion_kernel(geometry, theta, args[2], N1, N2, T, points_per_cycle)
        with open(path, "wb") as fh:
            np.savez(fh, Q=kern.Q, k=kern.k, theta=kern.theta, T=kern.T, a=kern.channel_a,
                     key=key)
        return kern


def save_coeffs_csv(path, coeffs):
    """CSV with columns ``k, channel, re, im``."""
    M, K = coeffs.coeffs.shape
    ch, col = np.meshgrid(np.arange(M), np.arange(K), indexing="ij")
    data = np.column_stack([coeffs.kappa[col.ravel()], ch.ravel(),
                            coeffs.coeffs.real.ravel(), coeffs.coeffs.imag.ravel()])
    header = (f"# T={coeffs.T!r} n_samples={coeffs.n_samples} "
              f"real={int(coeffs.real_signal)}\nk,channel,re,im")
    np.savetxt(path, data, delimiter=",", header=header, comments="",
               fmt=["%d", "%d", "%.17g", "%.17g"])


def load_coeffs_csv(path):
    """Read a file written by :func:`save_coeffs_csv`."""
    with open(path) as fh:
        meta = dict(item.split("=") for item in fh.readline().lstrip("# ").split())
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    k = data[:, 0].astype(np.int64)
    ch = data[:, 1].astype(np.int64)
    kappa = np.unique(k)
    coeffs = np.zeros((ch.max() + 1, kappa.size), dtype=complex)
    coeffs[ch, np.searchsorted(kappa, k)] = data[:, 2] + 1j * data[:, 3]
    return CoeffSet(coeffs, kappa, float(meta["T"]), int(meta["n_samples"]),
                    bool(int(meta["real"])))
