"""Contrast-enhanced super-resolution.

Microbubble (MB) frame stacks are cleaned with an SVD clutter filter, then
either processed by ultrasound localization microscopy (ULM: detection,
isolation, localization, tracking and accumulation on a finer grid) or by
SUSHI, which exploits the temporal fluctuation of the bubbles through
per-pixel second-order statistics.

Coordinates follow :class:`~sonolab.acquisition.GridSpec`: pixel ``(j, i)``
(row, column) sits at ``(x, z) = (i * pitch, j * pitch)``.  A super-resolved
grid with factor ``s`` has node ``(q, r)`` at ``(r * pitch / s, q * pitch / s)``.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage
import scipy.signal
import scipy.spatial

from . import kernels
from .acquisition import FrameSequence
from .errors import DegenerateInputError, InvalidArgumentError, NoConvergenceError

__all__ = [
    "LocalizationSet",
    "SuperResMap",
    "Track",
    "ClutterFilter",
    "fit_clutter_filter",
    "svd_clutter_filter",
    "detect_and_isolate",
    "localize_centroid",
    "localize_candidates",
    "gaussian_psf",
    "estimate_psf",
    "localize_sparse",
    "localize_sparse_sequence",
    "sparse_deconvolve",
    "track_nearest",
    "accumulate_map",
    "max_intensity_image",
    "sushi_g2",
    "sushi_map",
    "save_localizations_csv",
    "load_localizations_csv",
    "save_map_csv",
]


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass
class LocalizationSet:
    """Point estimates of microbubble positions.

    Parameters
    ----------
    frame : ndarray of int, shape (n,)
        Source frame index of every localization.
    x, z : ndarray, shape (n,)
        Positions in metres.
    confidence : ndarray, shape (n,)
        Values in ``[0, 1]``.
    n_frames : int
        Number of frames the set was extracted from.
    extent : (float, float)
        ``(x_max, z_max)``: positions lie in ``[0, x_max] x [0, z_max]``.
    """

    frame: np.ndarray
    x: np.ndarray
    z: np.ndarray
    confidence: np.ndarray
    n_frames: int = 1
    extent: tuple = (np.inf, np.inf)

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=np.int64).reshape(-1)
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        n = self.frame.size
        if not (self.x.size == self.z.size == self.confidence.size == n):
            raise InvalidArgumentError("localization arrays must have equal lengths")
        if n and (self.frame.min() < 0 or self.frame.max() >= self.n_frames):
            raise InvalidArgumentError("frame index out of range")
        if n and (np.any(self.confidence < 0) or np.any(self.confidence > 1)):
            raise InvalidArgumentError("confidence must lie in [0, 1]")
        tol = 1e-9
        if n and (self.x.min() < -tol or self.z.min() < -tol
                  or self.x.max() > self.extent[0] + tol or self.z.max() > self.extent[1] + tol):
            raise InvalidArgumentError("localization outside the frame bounds")

    @classmethod
    def empty(cls, n_frames=1, extent=(np.inf, np.inf)):
        return cls(np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros(0), n_frames, extent)

    @classmethod
    def concatenate(cls, sets, n_frames=None, extent=None):
        """Merge sets that share a frame numbering."""
        sets = list(sets)
        if not sets:
            return cls.empty(n_frames or 1, extent or (np.inf, np.inf))
        n_frames = max(s.n_frames for s in sets) if n_frames is None else n_frames
        extent = sets[0].extent if extent is None else extent
        return cls(np.concatenate([s.frame for s in sets]),
                   np.concatenate([s.x for s in sets]),
                   np.concatenate([s.z for s in sets]),
                   np.concatenate([s.confidence for s in sets]), n_frames, extent)

    def __len__(self):
        return int(self.frame.size)

    def for_frame(self, f):
        """Positions ``(n, 2)`` of frame ``f`` as ``(x, z)`` rows."""
        sel = self.frame == f
        return np.column_stack([self.x[sel], self.z[sel]])

    def select(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return LocalizationSet(self.frame[mask], self.x[mask], self.z[mask],
                               self.confidence[mask], self.n_frames, self.extent)


@dataclass
class Track:
    """A microbubble followed through consecutive frames.

    Attributes
    ----------
    frames : ndarray of int
    x, z : ndarray
        Positions in metres.
    frame_rate : float
    """

    frames: np.ndarray
    x: np.ndarray
    z: np.ndarray
    frame_rate: float

    def __len__(self):
        return int(len(self.frames))

    @property
    def step_velocities(self):
        """Per-step velocity ``(vx, vz)`` in m/s, shape ``(len - 1, 2)``."""
        d = np.column_stack([np.diff(self.x), np.diff(self.z)])
        return d * self.frame_rate / np.diff(self.frames)[:, None]

    @property
    def velocity(self):
        """Mean velocity ``(vx, vz)``: total displacement times the frame rate."""
        if len(self) < 2:
            return np.zeros(2)
        span = self.frames[-1] - self.frames[0]
        return np.array([self.x[-1] - self.x[0], self.z[-1] - self.z[0]]) * self.frame_rate / span


@dataclass
class SuperResMap:
    """Accumulation grid ``grid_factor`` times finer than the native pixels.

    Attributes
    ----------
    values : ndarray, shape (nz * s, nx * s)
        Localization counts (or recovered intensity for SUSHI).
    grid_factor : int
    pixel_pitch : float
        Native pixel pitch; cells are ``pixel_pitch / grid_factor`` wide.
    velocity : ndarray, shape (2, nz * s, nx * s), optional
        Mean ``(vx, vz)`` per cell for track-based maps.
    """

    values: np.ndarray
    grid_factor: int
    pixel_pitch: float
    velocity: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.grid_factor) != self.grid_factor or self.grid_factor < 1:
            raise InvalidArgumentError("grid_factor must be a positive integer")
        self.grid_factor = int(self.grid_factor)

    @property
    def cell(self):
        return self.pixel_pitch / self.grid_factor

    @property
    def total(self):
        return float(self.values.sum())


# --------------------------------------------------------------------------
# Clutter filtering
# --------------------------------------------------------------------------


def _casorati(frames):
    if isinstance(frames, FrameSequence):
        stack = frames.frames
    else:
        stack = np.asarray(frames, dtype=float)
    if stack.ndim != 3:
        raise InvalidArgumentError("expected an (F, nz, nx) stack")
    return stack.reshape(stack.shape[0], -1).T, stack.shape


@dataclass
class ClutterFilter:
    """Fitted SVD clutter filter: an orthogonal projector in the time domain.

    ``apply`` removes the span of the stored temporal singular vectors, so
    applying a fitted filter twice equals applying it once.
    """

    temporal_basis: np.ndarray  # (F, n_remove), orthonormal columns
    singular_values: np.ndarray

    @property
    def n_remove(self):
        return self.temporal_basis.shape[1]

    def apply(self, frames):
        """Project a stack (or FrameSequence) onto the clutter-free subspace."""
        X, shape = _casorati(frames)
        if shape[0] != self.temporal_basis.shape[0]:
            raise InvalidArgumentError("frame count differs from the fitted filter")
        V = self.temporal_basis
        out = (X - (X @ V) @ V.T).T.reshape(shape)
        if isinstance(frames, FrameSequence):
            return frames.with_frames(out)
        return out


def fit_clutter_filter(frames, n_remove):
    """Estimate the tissue subspace from the ``n_remove`` largest singular values.

    Parameters
    ----------
    frames : FrameSequence or ndarray, shape (F, nz, nx)
    n_remove : int

    Returns
    -------
    ClutterFilter
    """
    X, shape = _casorati(frames)
    F = shape[0]
    if F < 2:
        raise InvalidArgumentError("the clutter filter needs at least two frames")
    if int(n_remove) != n_remove or n_remove < 0:
        raise InvalidArgumentError("n_remove must be a non-negative integer")
    if n_remove >= min(F, X.shape[0]):
        raise InvalidArgumentError("n_remove must be smaller than the rank bound min(F, pixels)")
    n_remove = int(n_remove)
    if n_remove == 0:
        return ClutterFilter(np.zeros((F, 0)), np.zeros(0))
    # Temporal singular vectors from the small F x F Gram matrix would lose
    # accuracy for tiny singular values; a thin SVD is affordable here.
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    return ClutterFilter(Vt[:n_remove].T.copy(), s[:n_remove].copy())


def svd_clutter_filter(frames, n_remove):
    """Zero the ``n_remove`` largest singular values of the Casorati matrix.

    Parameters
    ----------
    frames : FrameSequence
        Frames are stacked as columns of a ``(pixels, F)`` matrix.
    n_remove : int
        Number of tissue components to discard, ``0 <= n_remove < F``.

    Returns
    -------
    FrameSequence
        Same metadata, filtered frames.
    """
    filt = fit_clutter_filter(frames, n_remove)
    if filt.n_remove == 0:
        return frames.with_frames(frames.frames.copy()) if isinstance(frames, FrameSequence) \
            else np.array(frames, dtype=float)
    return filt.apply(frames)


# --------------------------------------------------------------------------
# Detection and centroid localization
# --------------------------------------------------------------------------


def _frame_extent(shape, pitch):
    nz, nx = shape
    return ((nx - 1) * pitch, (nz - 1) * pitch)


def detect_and_isolate(frame, threshold, min_separation, pixel_pitch=1.0, frame_index=0,
                       n_frames=None):
    """Local maxima above ``threshold`` that have no other maximum nearby.

    Parameters
    ----------
    frame : ndarray, shape (nz, nx)
    threshold : float
        Detection level, ``> 0``.
    min_separation : float
        Pixels.  Both members of a pair closer than this are rejected.
    pixel_pitch : float
        Metres per pixel for the returned positions.

    Returns
    -------
    LocalizationSet
        Candidates at pixel centres; confidence is the peak value relative
        to the frame maximum.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise InvalidArgumentError("frame must be two-dimensional")
    if not threshold > 0:
        raise InvalidArgumentError("threshold must be positive")
    if min_separation < 0:
        raise InvalidArgumentError("min_separation must be non-negative")
    n_frames = frame_index + 1 if n_frames is None else n_frames
    extent = _frame_extent(frame.shape, pixel_pitch)
    rows, cols = kernels.local_maxima(frame, threshold)
    if rows.size and min_separation > 0:
        pts = np.column_stack([rows, cols]).astype(float)
        pairs = scipy.spatial.cKDTree(pts).query_pairs(min_separation, output_type="ndarray")
        if pairs.size:
            d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
            pairs = pairs[d < min_separation]
        keep = np.ones(rows.size, bool)
        keep[pairs.ravel()] = False
        rows, cols = rows[keep], cols[keep]
    peak = frame.max() if frame.size else 0.0
    conf = np.clip(frame[rows, cols] / peak, 0.0, 1.0) if rows.size else np.zeros(0)
    return LocalizationSet(np.full(rows.size, frame_index), cols * pixel_pitch,
                           rows * pixel_pitch, conf, n_frames, extent)


def localize_centroid(frame, candidate, window, pixel_pitch=1.0):
    """Intensity-weighted centroid in a square window around a candidate.

    Parameters
    ----------
    frame : ndarray, shape (nz, nx)
    candidate : (int, int)
        ``(row, column)`` of the window centre.
    window : int
        Half-width in pixels; the window is ``2 * window + 1`` pixels wide.
    pixel_pitch : float

    Returns
    -------
    (float, float)
        ``(x, z)`` in metres.  Negative intensities are clipped to zero.
    """
    frame = np.asarray(frame, dtype=float)
    j, i = int(candidate[0]), int(candidate[1])
    w = int(window)
    if w < 0:
        raise InvalidArgumentError("window must be non-negative")
    nz, nx = frame.shape
    if j - w < 0 or i - w < 0 or j + w >= nz or i + w >= nx:
        raise InvalidArgumentError("centroid window does not fit inside the frame")
    patch = np.clip(frame[j - w:j + w + 1, i - w:i + w + 1], 0.0, None)
    mass = patch.sum()
    if not mass > 0:
        raise DegenerateInputError("zero intensity inside the centroid window")
    off = np.arange(-w, w + 1)
    dz = (patch.sum(axis=1) @ off) / mass
    dx = (patch.sum(axis=0) @ off) / mass
    return ((i + dx) * pixel_pitch, (j + dz) * pixel_pitch)


def localize_candidates(frame, candidates, window, pixel_pitch=None):
    """Centroid-localize every candidate of a :class:`LocalizationSet`.

    Candidates whose window leaves the frame or has zero mass are dropped.
    """
    frame = np.asarray(frame, dtype=float)
    if pixel_pitch is None:
        pixel_pitch = _infer_pitch(candidates, frame.shape)
    keep, xs, zs = [], [], []
    for n in range(len(candidates)):
        cand = (round(candidates.z[n] / pixel_pitch), round(candidates.x[n] / pixel_pitch))
        try:
            x, z = localize_centroid(frame, cand, window, pixel_pitch)
        except (InvalidArgumentError, DegenerateInputError):
            continue
        keep.append(n), xs.append(x), zs.append(z)
    keep = np.asarray(keep, dtype=int)
    return LocalizationSet(candidates.frame[keep], xs, zs, candidates.confidence[keep],
                           candidates.n_frames, candidates.extent)


def _infer_pitch(locs, shape):
    if np.isfinite(locs.extent[0]) and shape[1] > 1 and locs.extent[0] > 0:
        return locs.extent[0] / (shape[1] - 1)
    return 1.0


# --------------------------------------------------------------------------
# Sparse localization
# --------------------------------------------------------------------------


def gaussian_psf(sigma_px, grid_factor=1, radius_px=None):
    """Unit-peak Gaussian PSF sampled on a grid ``grid_factor`` times finer.

    Parameters
    ----------
    sigma_px : float
        Standard deviation in native pixels.
    grid_factor : int
    radius_px : float, optional
        Half-width of the support in native pixels (default ``4 * sigma``).

    Returns
    -------
    ndarray, shape (2 R + 1, 2 R + 1)
        ``R = ceil(radius_px * grid_factor)``; the centre sample is 1.
    """
    if not sigma_px > 0:
        raise InvalidArgumentError("sigma must be positive")
    s = _check_factor(grid_factor)
    radius_px = 4.0 * sigma_px if radius_px is None else radius_px
    R = int(np.ceil(radius_px * s))
    d = np.arange(-R, R + 1) / s
    g = np.exp(-d * d / (2.0 * sigma_px ** 2))
    return np.outer(g, g)


def estimate_psf(frame, centres, half_width, grid_factor=1):
    """Average PSF from isolated point targets (beads).

    Patches of ``2 * half_width + 1`` pixels around integer ``centres``
    (``(row, col)`` pairs) are averaged, normalised to unit peak and
    resampled (cubic spline) onto a ``grid_factor`` times finer grid.
    """
    frame = np.asarray(frame, dtype=float)
    centres = np.atleast_2d(np.asarray(centres, dtype=int))
    h = int(half_width)
    s = _check_factor(grid_factor)
    patches = []
    for j, i in centres:
        if j - h < 0 or i - h < 0 or j + h >= frame.shape[0] or i + h >= frame.shape[1]:
            continue
        patches.append(frame[j - h:j + h + 1, i - h:i + h + 1])
    if not patches:
        raise DegenerateInputError("no bead patch fits inside the frame")
    mean = np.mean(patches, axis=0)
    if s > 1:
        q = np.arange(-h * s, h * s + 1) / s + h
        jj, ii = np.meshgrid(q, q, indexing="ij")
        mean = scipy.ndimage.map_coordinates(mean, [jj, ii], order=3, mode="nearest")
    peak = mean[mean.shape[0] // 2, mean.shape[1] // 2]
    if not peak > 0:
        raise DegenerateInputError("estimated PSF has a non-positive centre")
    return mean / peak


def _check_factor(s):
    if int(s) != s or s < 1:
        raise InvalidArgumentError("grid_factor must be a positive integer")
    return int(s)


def _check_psf(psf):
    psf = np.asarray(psf, dtype=float)
    if psf.ndim != 2 or psf.shape[0] % 2 == 0 or psf.shape[1] % 2 == 0:
        raise InvalidArgumentError("psf must be a 2-D array with odd dimensions")
    c = psf[psf.shape[0] // 2, psf.shape[1] // 2]
    if not np.isclose(psf.max(), 1.0, rtol=1e-6) or not np.isclose(c, 1.0, rtol=1e-6):
        raise InvalidArgumentError("psf must be normalised to a unit peak at its centre")
    return psf


class _ConvDownsample:
    """``A x = (psf * x)[::s, ::s]`` on a dense grid ``((nz-1)s+1, (nx-1)s+1)``."""

    def __init__(self, psf, shape, s):
        self.psf = psf
        self.s = s
        self.shape = shape
        self.dense = ((shape[0] - 1) * s + 1, (shape[1] - 1) * s + 1)
        self.flipped = psf[::-1, ::-1]

    def forward(self, x):
        full = scipy.signal.fftconvolve(x, self.psf, mode="same")
        return full[::self.s, ::self.s]

    def adjoint(self, y):
        up = np.zeros(self.dense)
        up[::self.s, ::self.s] = y
        return scipy.signal.fftconvolve(up, self.flipped, mode="same")

    def lipschitz(self):
        # Gershgorin bound on A A^T: its entries are the PSF autocorrelation
        # sampled at multiples of s, so the largest row sum bounds ||A||^2.
        ac = scipy.signal.fftconvolve(self.psf, self.flipped, mode="full")
        c0, c1 = ac.shape[0] // 2, ac.shape[1] // 2
        sub = ac[c0 % self.s::self.s, c1 % self.s::self.s]
        return float(np.abs(sub).sum())


def _nonneg_fista(forward, adjoint, y, lam, L, x0, max_iter, tol):
    """Nonnegative l1-penalised least squares by FISTA; returns ``(x, iters, converged)``."""
    mu = 1.0 / L
    x = x0
    v = x.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        grad = adjoint(forward(v) - y)
        x_new = np.maximum(v - mu * grad - mu * lam, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        v = x_new + ((t - 1.0) / t_new) * (x_new - x)
        dx = np.linalg.norm(x_new - x)
        nx_ = np.linalg.norm(x_new)
        x, t = x_new, t_new
        if dx <= tol * max(nx_, 1e-300):
            return x, it, True
    return x, max_iter, False


def sparse_deconvolve(image, psf, grid_factor=4, lam=None, max_iter=2000, tol=1e-6,
                      strict=True):
    """Nonnegative sparse image on the dense grid explaining ``image``.

    Solves ``min_x 0.5 ||A x - y||^2 + lam ||x||_1, x >= 0`` with ``A`` the
    convolution by ``psf`` (sampled on the dense grid) followed by
    ``grid_factor``-fold downsampling.

    Parameters
    ----------
    image : ndarray, shape (nz, nx)
    psf : ndarray
        Unit-peak kernel on the dense grid (odd dimensions).
    grid_factor : int
    lam : float, optional
        Default ``1e-3 * max(A^T y)``.
    strict : bool
        Raise :class:`NoConvergenceError` when ``max_iter`` is reached.

    Returns
    -------
    ndarray, shape ((nz-1)s+1, (nx-1)s+1)
    """
    y = np.asarray(image, dtype=float)
    if y.ndim != 2:
        raise InvalidArgumentError("image must be two-dimensional")
    psf = _check_psf(psf)
    s = _check_factor(grid_factor)
    op = _ConvDownsample(psf, y.shape, s)
    x0 = np.zeros(op.dense)
    if not np.any(y):
        return x0
    aty = op.adjoint(y)
    if lam is None:
        lam = 1e-3 * max(aty.max(), 0.0)
    if lam < 0:
        raise InvalidArgumentError("lam must be non-negative")
    x, it, ok = _nonneg_fista(op.forward, op.adjoint, y, lam, op.lipschitz(), x0, max_iter, tol)
    if not ok and strict:
        res = float(np.linalg.norm(op.forward(x) - y))
        raise NoConvergenceError(f"sparse localization did not converge in {max_iter} "
                                 f"iterations", residual=res)
    return x


def _components(x, rel_threshold):
    """Connected components of ``x > rel_threshold * max(x)``: centroids and masses."""
    peak = x.max() if x.size else 0.0
    if not peak > 0:
        return np.zeros((0, 2)), np.zeros(0)
    mask = x > rel_threshold * peak
    labels, n = scipy.ndimage.label(mask, structure=np.ones((3, 3), bool))
    idx = np.arange(1, n + 1)
    mass = scipy.ndimage.sum_labels(x, labels, idx)
    com = np.asarray(scipy.ndimage.center_of_mass(x, labels, idx), dtype=float).reshape(-1, 2)
    return com, np.asarray(mass, dtype=float)


def localize_sparse(frame, psf, lam=None, grid_factor=4, pixel_pitch=1.0, frame_index=0,
                    n_frames=None, rel_threshold=0.1, max_iter=2000, tol=1e-6, strict=True):
    """Sparse-recovery localization on a ``grid_factor`` times denser grid.

    Dense cells above ``rel_threshold`` of the recovered maximum are grouped
    into 8-connected components; each component yields one localization at
    its amplitude-weighted centre, with confidence equal to its mass
    relative to the heaviest component.

    Parameters
    ----------
    frame : ndarray, shape (nz, nx)
    psf : ndarray
        Unit-peak kernel sampled on the dense grid (see :func:`gaussian_psf`).
    lam : float, optional
        l1 weight; default ``1e-3 * max(A^T y)``.
    grid_factor : int
    strict : bool
        Raise when the solver stops at ``max_iter``; otherwise the last
        iterate is used.

    Returns
    -------
    LocalizationSet

    Raises
    ------
    NoConvergenceError
        When the solver stops at ``max_iter`` and ``strict``; carries the
        residual norm.
    """
    frame = np.asarray(frame, dtype=float)
    s = _check_factor(grid_factor)
    n_frames = frame_index + 1 if n_frames is None else n_frames
    extent = _frame_extent(frame.shape, pixel_pitch)
    x = sparse_deconvolve(frame, psf, s, lam, max_iter, tol, strict)
    com, mass = _components(x, rel_threshold)
    if mass.size == 0:
        return LocalizationSet.empty(n_frames, extent)
    cell = pixel_pitch / s
    return LocalizationSet(np.full(mass.size, frame_index), com[:, 1] * cell, com[:, 0] * cell,
                           mass / mass.max(), n_frames, extent)


def _patch_operator(psf, s, half_patch, half_support):
    """Dense matrix mapping a dense support patch to a native measurement patch."""
    hp, hs = int(half_patch), int(half_support)
    R0, R1 = psf.shape[0] // 2, psf.shape[1] // 2
    meas = np.arange(-hp, hp + 1) * s          # native samples, dense units
    nodes = np.arange(-hs * s, hs * s + 1)     # dense unknowns
    d = meas[:, None] - nodes[None, :]         # (m, n) per axis
    A = np.zeros((meas.size, meas.size, nodes.size, nodes.size))
    dj = d[:, None, :, None] + R0
    di = d[None, :, None, :] + R1
    ok = (dj >= 0) & (dj < psf.shape[0]) & (di >= 0) & (di < psf.shape[1])
    A[ok] = psf[np.broadcast_to(dj, A.shape)[ok], np.broadcast_to(di, A.shape)[ok]]
    return A.reshape(meas.size ** 2, nodes.size ** 2), nodes.size


def localize_sparse_sequence(frames, psf, grid_factor=4, threshold=None, half_patch=4,
                             half_support=2, lam_rel=1e-3, rel_threshold=0.1, max_iter=500,
                             tol=1e-5, strict=False):
    """Batched patch-wise sparse localization over a whole frame stack.

    Every local maximum above ``threshold`` opens a measurement patch of
    ``2 * half_patch + 1`` pixels; the sparse problem is solved on the dense
    grid restricted to ``half_support`` pixels around the maximum, for all
    patches of all frames at once.  Components are attributed to the patch
    whose maximum is nearest, so overlapping patches do not duplicate
    bubbles.

    Parameters
    ----------
    frames : FrameSequence
    psf : ndarray
        Unit-peak dense-grid kernel.
    threshold : float, optional
        Detection level; default 20 % of the stack maximum.
    lam_rel : float
        Per-patch l1 weight relative to ``max(A^T y)``.
    strict : bool
        Raise :class:`NoConvergenceError` when some patch does not converge.

    Returns
    -------
    LocalizationSet
    """
    psf = _check_psf(psf)
    s = _check_factor(grid_factor)
    stack = frames.frames
    F, nz, nx = stack.shape
    pitch = frames.pixel_pitch
    extent = _frame_extent((nz, nx), pitch)
    if threshold is None:
        threshold = 0.2 * stack.max() if stack.max() > 0 else 1.0
    hp, hs = int(half_patch), int(half_support)
    if hs > hp:
        raise InvalidArgumentError("half_support must not exceed half_patch")
    cand_f, cand_j, cand_i = [], [], []
    for f in range(F):
        if stack[f].max() <= threshold:
            continue
        r, c = kernels.local_maxima(stack[f], threshold)
        cand_f.append(np.full(r.size, f)), cand_j.append(r), cand_i.append(c)
    if not cand_f:
        return LocalizationSet.empty(F, extent)
    cand_f = np.concatenate(cand_f)
    cand_j = np.concatenate(cand_j)
    cand_i = np.concatenate(cand_i)
    P = cand_f.size
    padded = np.pad(stack, ((0, 0), (hp, hp), (hp, hp)))
    off = np.arange(-hp, hp + 1)
    Y = padded[cand_f[:, None, None], (cand_j + hp)[:, None, None] + off[None, :, None],
               (cand_i + hp)[:, None, None] + off[None, None, :]].reshape(P, -1)
    A, n_side = _patch_operator(psf, s, hp, hs)
    L = float(np.linalg.norm(A, 2)) ** 2
    aty = Y @ A
    lam = lam_rel * np.maximum(aty.max(axis=1, keepdims=True), 0.0)
    X, it, ok = _nonneg_fista(lambda V: V @ A.T, lambda R: R @ A, Y, lam, L,
                              np.zeros((P, A.shape[1])), max_iter, tol)
    if not ok and strict:
        raise NoConvergenceError("batched sparse localization did not converge",
                                 residual=float(np.linalg.norm(X @ A.T - Y)))
    X = X.reshape(P, n_side, n_side)
    out_f, out_x, out_z, out_m = [], [], [], []
    trees = {}
    starts = np.searchsorted(cand_f, np.arange(F + 1))
    for p in range(P):
        com, mass = _components(X[p], rel_threshold)
        if mass.size == 0:
            continue
        # dense-grid coordinates -> native pixels
        zj = cand_j[p] + (com[:, 0] - hs * s) / s
        xi = cand_i[p] + (com[:, 1] - hs * s) / s
        f = cand_f[p]
        lo, hi = starts[f], starts[f + 1]
        if hi - lo > 1:
            tree = trees.get(f)
            if tree is None:
                tree = trees[f] = scipy.spatial.cKDTree(
                    np.column_stack([cand_j[lo:hi], cand_i[lo:hi]]).astype(float))
            _, owner = tree.query(np.column_stack([zj, xi]))
            mine = owner == p - lo
            zj, xi, mass = zj[mine], xi[mine], mass[mine]
        inside = (zj >= 0) & (zj <= nz - 1) & (xi >= 0) & (xi <= nx - 1)
        zj, xi, mass = zj[inside], xi[inside], mass[inside]
        out_f.append(np.full(mass.size, f)), out_x.append(xi * pitch), out_z.append(zj * pitch)
        out_m.append(mass)
    if not out_f:
        return LocalizationSet.empty(F, extent)
    mass = np.concatenate(out_m)
    conf = mass / mass.max() if mass.size and mass.max() > 0 else mass
    return LocalizationSet(np.concatenate(out_f), np.concatenate(out_x),
                           np.clip(np.concatenate(out_z), 0.0, extent[1]), conf, F, extent)


# --------------------------------------------------------------------------
# Tracking and mapping
# --------------------------------------------------------------------------


def track_nearest(locs, max_displacement, frame_rate=1.0, min_length=1):
    """Greedy mutual-nearest-neighbour linking of consecutive frames.

    A localization in frame ``f + 1`` extends the track ending in frame ``f``
    when each is the other's nearest neighbour and their distance does not
    exceed ``max_displacement`` (metres).  Unlinked localizations start new
    tracks.

    Returns
    -------
    list of Track
        Tracks with at least ``min_length`` points, ordered by first frame.
    """
    if max_displacement < 0:
        raise InvalidArgumentError("max_displacement must be non-negative")
    tracks = []  # list of [frames, xs, zs]
    active = {}  # index in current frame -> track id
    prev = np.zeros((0, 2))
    order = np.argsort(locs.frame, kind="stable")
    frames_sorted = locs.frame[order]
    last_frame = None
    for f in np.unique(frames_sorted):
        sel = order[frames_sorted == f]
        cur = np.column_stack([locs.x[sel], locs.z[sel]])
        new_active = {}
        linked = np.full(len(cur), -1)
        if last_frame is not None and last_frame == f - 1 and len(prev) and len(cur):
            d = scipy.spatial.distance.cdist(prev, cur)
            nn_fwd = d.argmin(axis=1)
            nn_bwd = d.argmin(axis=0)
            for a, b in enumerate(nn_fwd):
                if nn_bwd[b] == a and d[a, b] <= max_displacement:
                    linked[b] = active[a]
        for b in range(len(cur)):
            tid = linked[b]
            if tid < 0:
                tid = len(tracks)
                tracks.append([[], [], []])
            tracks[tid][0].append(int(f))
            tracks[tid][1].append(cur[b, 0])
            tracks[tid][2].append(cur[b, 1])
            new_active[b] = tid
        active, prev, last_frame = new_active, cur, f
    return [Track(np.asarray(t[0]), np.asarray(t[1]), np.asarray(t[2]), float(frame_rate))
            for t in tracks if len(t[0]) >= min_length]


def accumulate_map(locs, grid_factor, shape, pixel_pitch, with_velocity=False):
    """Histogram of localizations on a ``grid_factor`` times finer grid.

    Parameters
    ----------
    locs : LocalizationSet or list of Track
    grid_factor : int
    shape : (int, int)
        Native frame shape ``(nz, nx)``.
    pixel_pitch : float
    with_velocity : bool
        For tracks, also average the step velocities per cell.

    Returns
    -------
    SuperResMap
        ``values`` has shape ``(nz * s, nx * s)``; its total equals the
        number of localizations.
    """
    s = _check_factor(grid_factor)
    nz, nx = int(shape[0]), int(shape[1])
    cell = pixel_pitch / s
    vel = None
    if isinstance(locs, LocalizationSet):
        x, z = locs.x, locs.z
        v = None
    else:
        tracks = list(locs)
        x = np.concatenate([t.x for t in tracks]) if tracks else np.zeros(0)
        z = np.concatenate([t.z for t in tracks]) if tracks else np.zeros(0)
        v = None
        if with_velocity and tracks:
            parts = []
            for t in tracks:
                sv = t.step_velocities
                # attach each step velocity to its arrival point; first point repeats
                parts.append(np.vstack([sv[:1] if len(sv) else np.zeros((1, 2)), sv]))
            v = np.vstack(parts)
    ix = np.clip(np.rint(x / cell).astype(np.int64), 0, nx * s - 1)
    iz = np.clip(np.rint(z / cell).astype(np.int64), 0, nz * s - 1)
    counts = np.zeros((nz * s, nx * s))
    np.add.at(counts, (iz, ix), 1.0)
    if v is not None:
        vel = np.zeros((2, nz * s, nx * s))
        np.add.at(vel[0], (iz, ix), v[:, 0])
        np.add.at(vel[1], (iz, ix), v[:, 1])
        nzc = counts > 0
        vel[:, nzc] /= counts[nzc]
    return SuperResMap(counts, s, float(pixel_pitch), vel)


def max_intensity_image(frames):
    """Per-pixel maximum over time: the diffraction-limited reference image."""
    stack = frames.frames if isinstance(frames, FrameSequence) else np.asarray(frames, float)
    return stack.max(axis=0)


# --------------------------------------------------------------------------
# SUSHI
# --------------------------------------------------------------------------


def sushi_g2(frames, tau_set=(0,)):
    """Per-pixel temporal autocorrelation of the mean-removed intensity.

    Parameters
    ----------
    frames : FrameSequence or ndarray, shape (F, nz, nx)
    tau_set : sequence of int
        Non-negative frame lags.

    Returns
    -------
    ndarray, shape (len(tau_set), nz, nx)
        ``g2[t, p] = 1 / (F - tau_t) * sum_f I_p[f] I_p[f + tau_t]``.
    """
    stack = frames.frames if isinstance(frames, FrameSequence) else np.asarray(frames, float)
    if stack.ndim != 3:
        raise InvalidArgumentError("expected an (F, nz, nx) stack")
    taus = np.atleast_1d(np.asarray(tau_set))
    if taus.size == 0 or np.any(taus < 0) or np.any(taus != np.round(taus)):
        raise InvalidArgumentError("lags must be non-negative integers")
    taus = taus.astype(int)
    F = stack.shape[0]
    if F < taus.max() + 2:
        raise InvalidArgumentError("not enough frames for the requested lags")
    d = stack - stack.mean(axis=0, keepdims=True)
    out = np.empty((taus.size,) + stack.shape[1:])
    for n, tau in enumerate(taus):
        out[n] = np.einsum("fij,fij->ij", d[:F - tau], d[tau:]) / (F - tau)
    return out


def sushi_map(frames, psf, grid_factor=4, tau=0, lam=None, max_iter=2000, tol=1e-6,
              strict=True):
    """SUSHI super-resolved intensity map.

    The ``g2`` map at lag ``tau`` is deconvolved with the squared PSF (the
    effective kernel of second-order statistics) on the dense grid.

    Returns
    -------
    SuperResMap
        Dense-grid intensity, shape ``(nz * s, nx * s)`` (padded with zeros
        beyond the last native row/column).
    """
    s = _check_factor(grid_factor)
    g2 = sushi_g2(frames, (tau,))[0]
    g2 = np.clip(g2, 0.0, None)
    x = sparse_deconvolve(g2, _check_psf(psf) ** 2, s, lam, max_iter, tol, strict)
    nz, nx = g2.shape
    full = np.zeros((nz * s, nx * s))
    full[:x.shape[0], :x.shape[1]] = x
    pitch = frames.pixel_pitch if isinstance(frames, FrameSequence) else 1.0
    return SuperResMap(full, s, pitch)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def save_localizations_csv(path, locs):
    """Write ``frame,x_m,z_m,confidence`` rows (``repr`` precision)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x_m", "z_m", "confidence"])
        for f, x, z, c in zip(locs.frame, locs.x, locs.z, locs.confidence):
            w.writerow([int(f), repr(float(x)), repr(float(z)), repr(float(c))])
    return path


def load_localizations_csv(path, n_frames=None, extent=(np.inf, np.inf)):
    """Inverse of :func:`save_localizations_csv`."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return LocalizationSet.empty(n_frames or 1, extent)
    f = np.array([int(r["frame"]) for r in rows])
    n_frames = int(f.max()) + 1 if n_frames is None else n_frames
    return LocalizationSet(f, [float(r["x_m"]) for r in rows], [float(r["z_m"]) for r in rows],
                           [float(r["confidence"]) for r in rows], n_frames, extent)


def save_map_csv(path, smap):
    """Write the non-zero cells of a map as ``row,col,x_m,z_m,value`` rows."""
    path = Path(path)
    rows, cols = np.nonzero(smap.values)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "x_m", "z_m", "value"])
        for r, c in zip(rows, cols):
            w.writerow([int(r), int(c), repr(float(c * smap.cell)), repr(float(r * smap.cell)),
                        repr(float(smap.values[r, c]))])
    return path
