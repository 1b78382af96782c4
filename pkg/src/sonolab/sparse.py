r"""Finite-rate-of-innovation recovery of beamformed lines.

A line made of pulse replicas at delays quantised to the sampling grid,
``Phi(t) = sum_l b_l h(t - l T_s)``, has Fourier coefficients

.. math::

    c[k] = h[k] \sum_{l=0}^{N-1} b_l\, e^{-j 2\pi k l / N},

i.e. ``c = H D b = A b`` with ``H`` the diagonal of pulse coefficients and
``D`` a row subset of the ``N``-point DFT matrix.  A few coefficients suffice
to recover the sparse vector ``b`` by l1 minimisation, solved here with
(fast) iterative soft thresholding.

The same model, with the pulse replaced by its convolutional-beamforming
counterpart, recovers COBA lines from subsampled coefficients (CFCOBA).
"""

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.special

from .beamform_time import RFLine
from .errors import IllConditionedWarning, InvalidArgumentError, NoConvergenceError

__all__ = [
    "MeasurementModel",
    "DenseOperator",
    "SparseBeam",
    "Layer",
    "build_measurement",
    "estimate_norm_sq",
    "soft_threshold",
    "ista_solve",
    "l1_constrained_solve",
    "default_lambda",
    "ista_layers",
    "unrolled_ista_apply",
    "save_layers",
    "load_layers",
    "reconstruct_beam",
    "cs_recover_line",
    "cfcoba_recover",
    "save_solver_report",
]


class MeasurementModel:
    """Partial-Fourier measurement operator ``A = H D``.

    Parameters
    ----------
    h : array_like, shape (K,)
        Pulse Fourier coefficients on ``kappa``.
    kappa : array_like of int, shape (K,)
        Measured indices.
    N : int
        Length of the unknown vector (delay grid size).
    complex_b : bool
        Treat ``b`` as complex.  By default ``b`` is real and the adjoint
        is taken with respect to the real inner product
        ``<x, y> = Re(x^H y)``.
    """

    def __init__(self, h, kappa, N, complex_b=False):
        self.h = np.asarray(h, dtype=complex)
        self.kappa = np.asarray(kappa, dtype=np.int64)
        self.N = int(N)
        self.complex_b = bool(complex_b)
        if self.h.shape != self.kappa.shape or self.h.ndim != 1:
            raise InvalidArgumentError("h and kappa must be vectors of equal length")
        if self.kappa.size < 1:
            raise InvalidArgumentError("at least one measured coefficient is required")
        if self.N < self.kappa.size:
            raise InvalidArgumentError("N must be at least the number of measurements")
        self._rows = self.kappa % self.N
        g = np.zeros(self.N)
        np.add.at(g, self._rows, np.abs(self.h) ** 2)
        self._gram_spectrum = g

    @property
    def shape(self):
        return (self.kappa.size, self.N)

    @property
    def dtype_b(self):
        return complex if self.complex_b else float

    def forward(self, b):
        """``A b``."""
        b = np.asarray(b)
        return self.h * np.fft.fft(b)[self._rows]

    def adjoint(self, y):
        """``A^H y`` (real part when ``b`` is real)."""
        z = np.zeros(self.N, dtype=complex)
        np.add.at(z, self._rows, self.h.conj() * np.asarray(y))
        r = np.fft.ifft(z) * self.N
        return r if self.complex_b else r.real

    def gram_stencil(self):
        """First column of the circulant ``A^H A`` (real part for real ``b``)."""
        c = np.fft.ifft(self._gram_spectrum) * self.N
        return c if self.complex_b else c.real

    @property
    def norm_sq(self):
        """Exact ``||A||_2^2`` from the circulant Gram spectrum."""
        if self.complex_b:
            return float(self.N * self._gram_spectrum.max())
        # Re(A^H A) is circulant with eigenvalues N (g[k] + g[-k]) / 2
        g = self._gram_spectrum
        return float(self.N * np.max(0.5 * (g + np.roll(g[::-1], 1))))

    def matrix(self):
        """Dense ``K x N`` matrix."""
        l = np.arange(self.N)
        return self.h[:, None] * np.exp(-2j * np.pi * np.outer(self.kappa, l) / self.N)

    @property
    def condition(self):
        """``max |h| / min |h|`` over the measured indices."""
        mag = np.abs(self.h)
        return float(mag.max() / mag.min()) if mag.min() > 0 else float("inf")


class DenseOperator:
    """Matrix wrapper exposing the operator interface used by the solvers."""

    def __init__(self, matrix, complex_b=None):
        self.A = np.atleast_2d(np.asarray(matrix))
        self.complex_b = np.iscomplexobj(self.A) if complex_b is None else bool(complex_b)
        self.N = self.A.shape[1]

    @property
    def shape(self):
        return self.A.shape

    @property
    def dtype_b(self):
        return complex if self.complex_b else float

    def forward(self, b):
        return self.A @ b

    def adjoint(self, y):
        r = self.A.conj().T @ y
        return r if self.complex_b else r.real

    @property
    def norm_sq(self):
        if self.complex_b or not np.iscomplexobj(self.A):
            return float(np.linalg.norm(self.A, 2) ** 2)
        return float(np.linalg.norm(np.vstack([self.A.real, self.A.imag]), 2) ** 2)

    def matrix(self):
        return self.A


@dataclass
class SparseBeam:
    """Sparse amplitudes on the delay grid ``t_l = l * grid_period``.

    Attributes
    ----------
    b : ndarray
    grid_period : float
    iterations : int
    residual : float
        ``||A b - c||_2``.
    lam : float
        Penalty weight of the final solve.
    converged : bool
    objective : list of float
        Per-iteration objective when tracking was requested.
    """

    b: np.ndarray
    grid_period: float = 1.0
    iterations: int = 0
    residual: float = float("nan")
    lam: float = float("nan")
    converged: bool = True
    objective: list = field(default_factory=list, repr=False)

    @property
    def support(self):
        return np.flatnonzero(self.b)


def build_measurement(pulse, kappa_sub, N, T, complex_b=False):
    """Measurement model for a pulse observed on ``kappa_sub``.

    Parameters
    ----------
    pulse : Pulse
    kappa_sub : array_like of int
    N : int
        Delay-grid size (normally ``floor(T * fs)``).
    T : float
        Period (s).
    complex_b : bool

    Warns
    -----
    IllConditionedWarning
        When the pulse is (nearly) zero on some measured index.
    """
    kappa = np.asarray(kappa_sub, dtype=np.int64)
    if kappa.size < 1:
        raise InvalidArgumentError("kappa_sub is empty")
    h = pulse.fourier_coeffs(kappa, T)
    model = MeasurementModel(h, kappa, N, complex_b)
    cond = model.condition
    if not cond < 1e6:
        warnings.warn(f"pulse has negligible energy on the measured band (condition {cond:.3g})",
                      IllConditionedWarning, stacklevel=2)
    return model


def estimate_norm_sq(A, iterations=200, tol=1e-10, seed=0):
    """Power-iteration estimate of ``||A||_2^2``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.N)
    if A.complex_b:
        x = x + 1j * rng.standard_normal(A.N)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(int(iterations)):
        y = A.adjoint(A.forward(x))
        new = float(np.linalg.norm(y))
        if new == 0:
            return 0.0
        x = y / new
        if abs(new - lam) <= tol * new:
            return new
        lam = new
    return lam


def soft_threshold(x, lam, smooth=False):
    """Soft thresholding ``sign(x) max(|x| - lam, 0)`` (complex-aware).

    With ``smooth=True`` the differentiable surrogate
    ``x / (1 + exp(-(|x| - lam)))`` is used instead.
    """
    if lam < 0:
        raise InvalidArgumentError("threshold must be non-negative")
    x = np.asarray(x)
    mag = np.abs(x)
    if smooth:
        return x * scipy.special.expit(mag - lam)
    scale = np.divide(np.maximum(mag - lam, 0.0), mag, out=np.zeros(mag.shape), where=mag > 0)
    return x * scale


def _objective(A, b, c, lam):
    r = A.forward(b) - c
    return 0.5 * float(np.vdot(r, r).real) + lam * float(np.abs(b).sum())


def default_lambda(A, c, fraction=0.05):
    """``fraction * ||A^H c||_inf``."""
    return fraction * float(np.abs(A.adjoint(np.asarray(c))).max())


def ista_solve(A, c, lam, mu=None, max_iter=1000, tol=1e-6, fista=False, smooth=False,
               x0=None, track_objective=False, nonnegative=False, grid_period=1.0):
    r"""Iterative soft thresholding for ``min 0.5 ||A b - c||^2 + lam ||b||_1``.

    Each iteration computes ``b <- S_{mu lam}(mu A^H c + (I - mu A^H A) b)``.

    Parameters
    ----------
    A : MeasurementModel or DenseOperator
    c : ndarray
        Measurements.
    lam : float
        Penalty weight (``>= 0``).
    mu : float, optional
        Step size in ``(0, 1 / ||A||^2]`` (default the upper bound).
    max_iter : int
    tol : float
        Stop at the first iterate whose relative change is ``<= tol``; with
        ``tol=0`` exactly ``max_iter`` iterations are run.
    fista : bool
        Nesterov/FISTA acceleration.
    smooth : bool
        Use the smooth threshold surrogate.
    x0 : ndarray, optional
        Warm start.
    track_objective : bool
        Record the objective after every iteration.
    nonnegative : bool
        Project onto ``b >= 0`` (real ``b`` only).

    Returns
    -------
    SparseBeam

    Raises
    ------
    InvalidArgumentError
        If ``mu`` is outside ``(0, 1/||A||^2]`` or ``lam < 0``.
    """
    if lam < 0 or not np.isfinite(lam):
        raise InvalidArgumentError("lambda must be non-negative")
    if tol < 0:
        raise InvalidArgumentError("tol must be non-negative")
    L = A.norm_sq
    if mu is None:
        mu = 1.0 / L if L > 0 else 1.0
    elif not (0 < mu <= (1.0 / L) * (1 + 1e-12)):
        raise InvalidArgumentError(f"step size {mu!r} outside (0, 1/||A||^2 = {1.0 / L!r}]")
    c = np.asarray(c)
    x = np.zeros(A.N, dtype=A.dtype_b) if x0 is None else np.array(x0, dtype=A.dtype_b)
    drive = mu * A.adjoint(c)
    thr = mu * lam
    y, t = x, 1.0
    history = []
    converged = False
    it = 0
    for it in range(1, int(max_iter) + 1):
        z = drive + y - mu * A.adjoint(A.forward(y))
        x_new = soft_threshold(z, thr, smooth)
        if nonnegative:
            x_new = np.maximum(x_new.real, 0.0)
        if fista:
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            y = x_new + ((t - 1) / t_new) * (x_new - x)
            t = t_new
        else:
            y = x_new
        change = np.linalg.norm(x_new - x)
        scale = max(np.linalg.norm(x_new), np.finfo(float).tiny)
        x = x_new
        if track_objective:
            history.append(_objective(A, x, c, lam))
        if tol > 0 and change <= tol * scale:
            converged = True
            break
    residual = float(np.linalg.norm(A.forward(x) - c))
    return SparseBeam(x, grid_period, it, residual, float(lam), converged, history)


def l1_constrained_solve(A, c, epsilon, lam0=None, shrink=0.5, max_outer=60, inner_iter=2000,
                         tol=1e-9, refine=25, nonnegative=False, grid_period=1.0):
    r"""``min ||b||_1`` subject to ``||A b - c||_2 <= epsilon`` by lambda continuation.

    The penalised problem is solved (FISTA, warm started) for a
    geometrically decreasing ``lambda`` starting below ``||A^H c||_inf``.
    Once an iterate is feasible the last infeasible/feasible bracket is
    bisected in ``log(lambda)`` to return the feasible solution with the
    largest ``lambda`` found, which has the smallest l1 norm along the path.

    Parameters
    ----------
    A : MeasurementModel or DenseOperator
    c : ndarray
    epsilon : float
        Residual bound (``>= 0``).
    lam0 : float, optional
        First penalty (default ``0.5 ||A^H c||_inf``).
    shrink : float
        Geometric factor in ``(0, 1)``.
    max_outer : int
        Maximum number of continuation steps.
    inner_iter : int
        FISTA iterations per penalty value.
    tol : float
        Inner relative-change tolerance.
    refine : int
        Bisection steps once feasibility is reached (0 disables).

    Returns
    -------
    SparseBeam

    Raises
    ------
    NoConvergenceError
        If no feasible iterate is found; ``residual`` holds the best value.
    """
    if epsilon < 0 or not np.isfinite(epsilon):
        raise InvalidArgumentError("epsilon must be non-negative")
    if not 0 < shrink < 1:
        raise InvalidArgumentError("shrink must lie in (0, 1)")
    c = np.asarray(c)
    if np.linalg.norm(c) <= epsilon:
        return SparseBeam(np.zeros(A.N, dtype=A.dtype_b), grid_period, 0,
                          float(np.linalg.norm(c)), float("inf"))
    lam_max = float(np.abs(A.adjoint(c)).max())
    lam = 0.5 * lam_max if lam0 is None else float(lam0)

    def solve(lmb, x0):
        return ista_solve(A, c, lmb, max_iter=inner_iter, tol=tol, fista=True, x0=x0,
                          nonnegative=nonnegative, grid_period=grid_period)

    x = None
    best = float("inf")
    lam_hi = None  # largest lambda known to be infeasible
    total_iter = 0
    for _ in range(int(max_outer)):
        res = solve(lam, x)
        total_iter += res.iterations
        best = min(best, res.residual)
        if res.residual <= epsilon:
            break
        x, lam_hi = res.b, lam
        lam *= shrink
    else:
        raise NoConvergenceError(
            f"residual {best:.3e} never reached epsilon {epsilon:.3e}", best)
    feasible = res
    if lam_hi is not None:
        lo, hi = np.log(lam), np.log(lam_hi)
        x_warm = feasible.b
        for _ in range(int(refine)):
            mid = 0.5 * (lo + hi)
            trial = solve(np.exp(mid), x_warm)
            total_iter += trial.iterations
            if trial.residual <= epsilon:
                feasible, lo, x_warm = trial, mid, trial.b
            else:
                hi = mid
    feasible.iterations = total_iter
    return feasible


def ista_solve_report(beam):
    """One-row dictionary summarising a solve (for CSV reports)."""
    return {"iterations": beam.iterations, "residual": beam.residual, "lambda": beam.lam,
            "converged": int(beam.converged), "nnz": int(np.count_nonzero(beam.b))}


def save_solver_report(path, rows):
    """Write solver summaries (dicts from :func:`ista_solve_report`) as CSV."""
    keys = ["line", "iterations", "residual", "lambda", "converged", "nnz"]
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for i, r in enumerate(rows):
            r = dict(r, line=r.get("line", i))
            fh.write(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k])
                              for k in keys) + "\n")


# --------------------------------------------------------------------------
# Unrolled (fixed-weight) ISTA
# --------------------------------------------------------------------------


@dataclass
class Layer:
    """One unrolled iteration ``x <- S_threshold(W_e c + W_t x)``.

    ``W_e`` is a dense ``N x K`` matrix; ``W_t`` is either a dense
    ``N x N`` matrix or a length-``N`` circulant stencil (its first column).
    For real unknowns only the real part of ``W_e c`` is used.
    """

    W_e: np.ndarray
    W_t: np.ndarray
    threshold: float

    @property
    def n(self):
        return self.W_e.shape[0]

    def apply_t(self, x):
        if self.W_t.ndim == 1:
            out = np.fft.ifft(np.fft.fft(self.W_t) * np.fft.fft(x))
            return out if np.iscomplexobj(x) or np.iscomplexobj(self.W_t) else out.real
        return self.W_t @ x


def ista_layers(A, lam, n_layers, mu=None, stencil=True):
    """Layers reproducing ``n_layers`` ISTA iterations on ``A``.

    Every layer holds ``W_e = mu A^H``, ``W_t = I - mu A^H A`` and the
    threshold ``mu * lam``.
    """
    mu = 1.0 / A.norm_sq if mu is None else mu
    W_e = np.ascontiguousarray(mu * A.matrix().conj().T)
    if stencil and hasattr(A, "gram_stencil"):
        W_t = -mu * A.gram_stencil()
        W_t[0] += 1.0
    else:
        G = A.matrix().conj().T @ A.matrix()
        G = G if A.complex_b else G.real
        W_t = np.eye(A.N) - mu * G
    return [Layer(W_e, W_t.copy(), float(mu * lam)) for _ in range(int(n_layers))]


def unrolled_ista_apply(layers, c, n=None, smooth=True, complex_b=False):
    """Feed-forward application of unrolled layers starting from ``x = 0``.

    Parameters
    ----------
    layers : list of Layer
    c : ndarray, shape (K,)
    n : int, optional
        Output length; required when ``layers`` is empty.
    smooth : bool
        Use the smooth threshold surrogate.
    complex_b : bool

    Returns
    -------
    SparseBeam
    """
    c = np.asarray(c)
    if not layers:
        if n is None:
            raise InvalidArgumentError("output length needed when there are no layers")
        return SparseBeam(np.zeros(int(n), dtype=complex if complex_b else float), iterations=0)
    N = layers[0].n
    x = np.zeros(N, dtype=complex if complex_b else float)
    for i, layer in enumerate(layers):
        if layer.W_e.shape != (N, c.size):
            raise InvalidArgumentError(f"layer {i}: W_e shape {layer.W_e.shape} != {(N, c.size)}")
        if layer.W_t.shape not in ((N,), (N, N)):
            raise InvalidArgumentError(f"layer {i}: W_t shape {layer.W_t.shape} incompatible")
        drive = layer.W_e @ c
        if not complex_b:
            drive = drive.real
        x = soft_threshold(drive + layer.apply_t(x), layer.threshold, smooth)
    return SparseBeam(x, iterations=len(layers))


_LAYER_HEAD = struct.Struct("<4sII")
_LAYER_REC = struct.Struct("<BBIIId")


def save_layers(path, layers):
    """Binary layer file: ``{magic, version, K}`` then per layer a record and arrays.

    Record: ``W_t kind (0 dense, 1 stencil), W_t complex flag, N, K_meas,
    W_t length, threshold``; arrays: ``W_e`` (complex128, ``N x K_meas``)
    then ``W_t`` (float64 or complex128).
    """
    with open(path, "wb") as fh:
        fh.write(_LAYER_HEAD.pack(b"SLLY", 1, len(layers)))
        for L in layers:
            wt_c = np.iscomplexobj(L.W_t)
            fh.write(_LAYER_REC.pack(int(L.W_t.ndim == 1), int(wt_c), L.W_e.shape[0],
                                     L.W_e.shape[1], L.W_t.size, L.threshold))
            fh.write(np.ascontiguousarray(L.W_e, dtype="<c16").tobytes())
            fh.write(np.ascontiguousarray(L.W_t, dtype="<c16" if wt_c else "<f8").tobytes())


def load_layers(path):
    """Read layers written by :func:`save_layers`."""
    raw = Path(path).read_bytes()
    magic, version, K = _LAYER_HEAD.unpack_from(raw)
    if magic != b"SLLY" or version != 1:
        raise InvalidArgumentError(f"{path}: not a layer file")
    off = _LAYER_HEAD.size
    layers = []
    for _ in range(K):
        kind, wt_c, N, Km, size, thr = _LAYER_REC.unpack_from(raw, off)
        off += _LAYER_REC.size
        W_e = np.frombuffer(raw, "<c16", N * Km, off).reshape(N, Km).copy()
        off += 16 * N * Km
        dt = "<c16" if wt_c else "<f8"
        W_t = np.frombuffer(raw, dt, size, off).copy()
        off += np.dtype(dt).itemsize * size
        if kind == 0:
            W_t = W_t.reshape(N, N)
        layers.append(Layer(W_e, W_t, thr))
    if off != len(raw):
        raise InvalidArgumentError(f"{path}: trailing bytes")
    return layers


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------


def reconstruct_beam(beam, pulse, fs, n_samples=None, theta=0.0):
    """Sum of pulse replicas ``sum_l b_l h(t - l / fs)`` sampled at ``fs``.

    Parameters
    ----------
    beam : SparseBeam or ndarray
    pulse : Pulse
        Complex (analytic) pulses give a complex line.
    fs : float
        Output rate; must match the grid period of ``beam``.
    n_samples : int, optional
        Output length (default ``len(b)``).

    Returns
    -------
    RFLine
    """
    if isinstance(beam, SparseBeam):
        b, period = beam.b, beam.grid_period
        if period != 1.0 and abs(period * fs - 1.0) > 1e-9:
            raise InvalidArgumentError("grid period does not match 1/fs")
    else:
        b = np.asarray(beam)
    n = b.size if n_samples is None else int(n_samples)
    D = int(np.ceil(pulse.support / 2 * fs))
    kern = pulse.waveform(np.arange(-D, D + 1) / fs)
    line = np.convolve(b, kern)[D:D + n]
    if line.size < n:
        line = np.concatenate([line, np.zeros(n - line.size, dtype=line.dtype)])
    return RFLine(line, fs, theta)


def _solve(model, c, solver, epsilon, lam, max_iter, grid_period):
    if not np.any(c):
        return SparseBeam(np.zeros(model.N, dtype=model.dtype_b), grid_period, 0, 0.0)
    if solver == "l1":
        eps = 1e-3 * np.linalg.norm(c) if epsilon is None else epsilon
        return l1_constrained_solve(model, c, eps, grid_period=grid_period)
    if solver in ("ista", "fista"):
        lmb = default_lambda(model, c) if lam is None else lam
        return ista_solve(model, c, lmb, max_iter=max_iter, tol=1e-8,
                          fista=solver == "fista", grid_period=grid_period)
    raise InvalidArgumentError(f"unknown solver {solver!r}")


def _recover(model_pulse, coeffs, solver, epsilon, lam, max_iter, theta, grid_factor,
             complex_b):
    if int(grid_factor) != grid_factor or grid_factor < 1:
        raise InvalidArgumentError("grid_factor must be a positive integer")
    s = int(grid_factor)
    N = coeffs.n_samples
    fs = coeffs.fs
    model = build_measurement(model_pulse, coeffs.kappa, N * s, coeffs.T, complex_b=complex_b)
    beam = _solve(model, coeffs.coeffs[0], solver, epsilon, lam, max_iter, 1.0 / (fs * s))
    fine = reconstruct_beam(beam, model_pulse, fs * s, N * s, theta)
    return RFLine(fine.samples[::s].copy(), fs, theta), beam


def cs_recover_line(coeffs, pulse, solver="l1", epsilon=None, lam=None, max_iter=2000,
                    theta=0.0, grid_factor=2):
    """Recover a real beamformed line from a subset of its Fourier coefficients.

    Parameters
    ----------
    coeffs : CoeffSet
        Single-channel beamformed coefficients (e.g. from :func:`fdbf_line`).
    pulse : Pulse
    solver : {"l1", "ista", "fista"}
        ``"l1"`` solves the residual-constrained problem with bound
        ``epsilon`` (default ``1e-3 ||c||``); the others the penalised one.
    grid_factor : int
        The delay grid is ``grid_factor`` times finer than the sampling
        grid, which reduces the error of scatterers lying between samples.
        The returned line is sampled at the original rate.

    Returns
    -------
    line : RFLine
    beam : SparseBeam
        Amplitudes on the fine grid (period ``1 / (fs * grid_factor)``).
    """
    return _recover(pulse, coeffs, solver, epsilon, lam, max_iter, theta, grid_factor, False)


def cfcoba_recover(conv_coeffs, pulse, solver="l1", epsilon=None, lam=None, max_iter=2000,
                   theta=0.0, grid_factor=2):
    """Recover a convolutionally beamformed line from subsampled coefficients.

    The measurement model uses :meth:`Pulse.squared`, the pulse as seen by
    convolutional beamforming, and complex amplitudes.

    Parameters
    ----------
    conv_coeffs : CoeffSet
        Coefficients of a (sparse) COBA line, indices in ``[0, N)``.
    pulse : Pulse
        Transmit pulse.
    grid_factor : int
        Delay-grid refinement, as in :func:`cs_recover_line`.

    Returns
    -------
    line : RFLine
        Complex line.
    beam : SparseBeam
    """
    return _recover(pulse.squared(), conv_coeffs, solver, epsilon, lam, max_iter, theta,
                    grid_factor, True)
