"""End-to-end line pipelines combining the beamformers and recovery stages.

Each pipeline maps one acquisition (:class:`~sonolab.acquisition.ChannelData`)
to a beamformed :class:`~sonolab.beamform_time.RFLine` and reports how many
samples per channel and how many channels it consumed, so data-rate
reductions can be computed uniformly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import beamform_freq as bf
from . import beamform_time as bt
from . import sparse
from .acquisition import Pulse
from .errors import InvalidArgumentError

__all__ = [
    "PIPELINES",
    "LineResult",
    "subnyquist_indices",
    "das_pipeline",
    "mv_pipeline",
    "imap_pipeline",
    "fdbf_pipeline",
    "fdbf_cs_pipeline",
    "coba_pipeline",
    "sparse_coba_pipeline",
    "cfcoba_pipeline",
    "run_pipeline",
]

PIPELINES = ("DAS", "MV", "IMAP", "FDBF", "FDBF+CS", "COBA", "SCOBA", "SCOBAR", "CFCOBA")


@dataclass
class LineResult:
    """Beamformed line plus acquisition bookkeeping.

    Attributes
    ----------
    line : RFLine
    used_samples : int
        Samples (or Fourier coefficients) acquired per channel.
    used_channels : int
    info : dict
        Pipeline-specific diagnostics (kernel window, solver iterations...).
    """

    line: bt.RFLine
    used_samples: int
    used_channels: int
    info: dict = field(default_factory=dict)


def subnyquist_indices(n_samples, T, f0, fraction, window):
    """Channel and target index sets for sub-Nyquist frequency-domain beamforming.

    The channel set is the block of ``round(fraction * n_samples)``
    consecutive indices centred on the carrier index ``round(f0 T)``; the
    beamformed (target) set drops ``window`` indices at either end so every
    kernel tap stays inside the channel set.

    Returns
    -------
    kappa_channel, kappa_target : ndarray of int
    """
    if not 0 < fraction <= 0.5:
        raise InvalidArgumentError("coefficient fraction must lie in (0, 0.5]")
    K = int(round(fraction * n_samples))
    window = int(window)
    if K <= 2 * window:
        raise InvalidArgumentError(
            f"{K} coefficients leave no targets for a kernel half-width of {window}")
    k0 = int(round(f0 * T))
    start = max(k0 - K // 2, 1)
    start = min(start, n_samples // 2 - K + 1)
    if start < 1:
        raise InvalidArgumentError("coefficient block does not fit below Nyquist")
    kch = np.arange(start, start + K)
    return kch, kch[window:K - window]


def das_pipeline(cd, theta=None, apod=None, upsample=1):
    """Delay-and-sum at full rate."""
    return LineResult(bt.das_line(cd, theta, apod, upsample), cd.n_samples, cd.n_channels)


def mv_pipeline(cd, theta=None, upsample=1, **kwargs):
    """Minimum-variance beamforming at full rate."""
    return LineResult(bt.mv_line(cd, theta, upsample=upsample, **kwargs), cd.n_samples,
                      cd.n_channels)


def imap_pipeline(cd, theta=None, iterations=2, upsample=1):
    """iMAP beamforming at full rate."""
    return LineResult(bt.imap_line(cd, theta, iterations, upsample), cd.n_samples,
                      cd.n_channels)


def fdbf_pipeline(cd, pulse=None, theta=None, window=None, energy=0.999, max_window=64,
                  points_per_cycle=16, cache=None):
    """Frequency-domain beamforming over the full pulse band, back to time domain."""
    theta = cd.theta if theta is None else theta
    pulse = pulse or Pulse(f0=cd.f0)
    kappa = pulse.band(cd.T)
    beam, kern = bf.frequency_beamform(cd, kappa, window, theta, pulse, points_per_cycle,
                                       cache, energy, max_window)
    line = bf.ifft_line(beam, cd.n_samples, theta)
    used = int(kappa.max() - kappa.min() + 1 + kern.N1 + kern.N2)
    info = {"window": kern.N1, "n_targets": int(kappa.size),
            "min_energy_fraction": float(np.min(kern.energy_fraction))
            if kern.energy_fraction is not None else float("nan")}
    return LineResult(line, used, cd.n_channels, info)


def fdbf_cs_pipeline(cd, pulse=None, theta=None, fraction=0.12, window=3, solver="l1",
                     epsilon_rel=0.02, lam=None, grid_factor=2, points_per_cycle=16,
                     cache=None):
    """Sub-Nyquist frequency-domain beamforming followed by sparse recovery.

    Only ``round(fraction * N_s)`` channel coefficients around the carrier
    are used; the beamformed coefficients are turned into a line by
    l1 recovery with residual bound ``epsilon_rel * ||c||``.
    """
    theta = cd.theta if theta is None else theta
    pulse = pulse or Pulse(f0=cd.f0)
    kch, kt = subnyquist_indices(cd.n_samples, cd.T, pulse.f0, fraction, window)
    if cache is not None:
        kern = cache.get(cd.geometry, theta, kt, window, window, cd.T, points_per_cycle)
    else:
        kern = bf.distortion_kernel(cd.geometry, theta, kt, window, window, cd.T,
                                    points_per_cycle)
    beam = bf.fdbf_line(bf.fourier_coeffs(cd, kch), kern)
    eps = epsilon_rel * float(np.linalg.norm(beam.coeffs))
    line, sb = sparse.cs_recover_line(beam, pulse, solver, eps, lam, theta=theta,
                                      grid_factor=grid_factor)
    info = {"n_channel_coeffs": int(kch.size), "n_targets": int(kt.size),
            "iterations": int(sb.iterations), "lambda": float(sb.lam),
            "support": int(np.count_nonzero(sb.b))}
    return LineResult(line, int(kch.size), cd.n_channels, info)


def coba_pipeline(cd, theta=None, upsample=1):
    """Convolutional beamforming on a full aperture."""
    return LineResult(bt.coba_line(cd, theta, upsample=upsample), cd.n_samples,
                      cd.n_channels)


def sparse_coba_pipeline(cd, target, mode="SCOBA", theta=None, upsample=1):
    """Convolutional beamforming on a thinned aperture emulating ``target``."""
    return LineResult(bt.sparse_coba_line(cd, target, mode, theta, upsample=upsample),
                      cd.n_samples, cd.n_channels)


def cfcoba_pipeline(cd, pulse=None, theta=None, fraction=0.125, solver="l1", epsilon_rel=0.02,
                    lam=None, grid_factor=2, upsample=1):
    """Compressed Fourier-domain convolutional beamforming.

    The convolutionally beamformed line of a (typically sparse) aperture is
    represented by a block of ``round(fraction * N_s)`` Fourier coefficients
    centred on twice the carrier, from which the line is recovered with the
    squared-pulse sparse model.

    Notes
    -----
    The coefficients are computed here from the full-rate simulated line;
    the sample budget reported is the coefficient count, i.e. what a
    Fourier-domain front end would acquire per channel.
    """
    theta = cd.theta if theta is None else theta
    pulse = pulse or Pulse(f0=cd.f0)
    full = bt.coba_line(cd, theta, upsample=upsample)
    N = cd.n_samples
    K = int(round(fraction * N))
    if not 1 <= K <= N:
        raise InvalidArgumentError("coefficient fraction out of range")
    k0 = int(round(2 * pulse.f0 * cd.T))
    start = int(np.clip(k0 - K // 2, 0, N - K))
    kappa = np.arange(start, start + K)
    coeffs = bf.CoeffSet((np.fft.fft(full.samples)[kappa] / N)[None], kappa, cd.T, N,
                         real_signal=False)
    eps = epsilon_rel * float(np.linalg.norm(coeffs.coeffs))
    line, sb = sparse.cfcoba_recover(coeffs, pulse, solver, eps, lam, theta=theta,
                                     grid_factor=grid_factor)
    info = {"n_coeffs": K, "iterations": int(sb.iterations), "lambda": float(sb.lam),
            "support": int(np.count_nonzero(sb.b))}
    return LineResult(line, K, cd.n_channels, info)


def run_pipeline(kind, cd, pulse=None, theta=None, **params):
    """Dispatch on a pipeline name from :data:`PIPELINES` (case-insensitive)."""
    key = str(kind).upper()
    if key == "DAS":
        return das_pipeline(cd, theta, params.get("apod"), params.get("upsample", 1))
    if key == "MV":
        return mv_pipeline(cd, theta, params.get("upsample", 1))
    if key == "IMAP":
        return imap_pipeline(cd, theta, params.get("iterations", 2), params.get("upsample", 1))
    if key == "FDBF":
        return fdbf_pipeline(cd, pulse, theta, params.get("window"),
                             params.get("energy", 0.999), params.get("max_window", 64),
                             cache=params.get("cache"))
    if key == "FDBF+CS":
        return fdbf_cs_pipeline(cd, pulse, theta, params.get("fraction", 0.12),
                                params.get("window", 3), params.get("solver", "l1"),
                                params.get("epsilon_rel", 0.02), params.get("lam"),
                                params.get("grid_factor", 2), cache=params.get("cache"))
    if key == "COBA":
        return coba_pipeline(cd, theta, params.get("upsample", 1))
    if key in ("SCOBA", "SCOBAR"):
        if params.get("target") is None:
            raise InvalidArgumentError(f"{key} needs a target array")
        return sparse_coba_pipeline(cd, params["target"], key, theta,
                                    params.get("upsample", 1))
    if key == "CFCOBA":
        return cfcoba_pipeline(cd, pulse, theta, params.get("fraction", 0.125),
                               params.get("solver", "l1"), params.get("epsilon_rel", 0.02),
                               params.get("lam"), params.get("grid_factor", 2),
                               params.get("upsample", 1))
    raise InvalidArgumentError(f"unknown pipeline {kind!r}; choose from {PIPELINES}")
