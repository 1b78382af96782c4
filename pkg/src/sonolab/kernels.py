"""Backend selection for the hot inner loops.

The compiled extension :mod:`sonolab._ckernels` is used when it imports
successfully; otherwise (or when the environment variable
``SONOLAB_PURE_PYTHON=1`` is set) the NumPy versions in
:mod:`sonolab._pykernels` are used.  The module attribute :data:`BACKEND`
names the active implementation.

All wrappers validate and normalise their inputs so that both backends
receive C-contiguous float64 (or complex128) arrays.
"""

import os

import numpy as np

from . import _pykernels

__all__ = [
    "BACKEND",
    "available_backends",
    "get_backend",
    "delay_channels",
    "das_sum",
    "selfconv_direct",
    "render_gaussians",
    "local_maxima",
]


def _load_compiled():
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_COMPILED = None if os.environ.get("SONOLAB_PURE_PYTHON", "") == "1" else _load_compiled()
_IMPLS = {"python": _pykernels}
if _COMPILED is not None:
    _IMPLS["cython"] = _COMPILED

#: Name of the backend used by the module-level functions.
BACKEND = "cython" if _COMPILED is not None else "python"


def available_backends():
    """Names of the importable backends."""
    return tuple(_IMPLS)


def get_backend(name=None):
    """Module implementing the kernels for ``name`` (default: active backend)."""
    return _IMPLS[name or BACKEND]


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def delay_channels(samples, fs, a, s, t_b, n_out=None, backend=None):
    """Delay every channel by its dynamic receive delay.

    Parameters
    ----------
    samples : ndarray, shape (M, N_s)
    fs : float
        Sampling rate (Hz).
    a : ndarray, shape (M,)
        Element offsets divided by the speed of sound (s).
    s : float
        Sine of the steering angle.
    t_b : float
        Output samples at times ``>= t_b`` are zero.
    n_out : int, optional
        Output length (default ``N_s``).

    Returns
    -------
    ndarray, shape (M, n_out)
    """
    samples = _f64(samples)
    n_out = samples.shape[1] if n_out is None else int(n_out)
    out = np.empty((samples.shape[0], n_out))
    get_backend(backend).delay_channels(samples, float(fs), _f64(a), float(s), float(t_b), out)
    return out


def das_sum(samples, fs, a, s, weights, t_b, n_out=None, backend=None):
    """Weighted sum of delayed channels (fused, no ``M x N`` temporary)."""
    samples = _f64(samples)
    n_out = samples.shape[1] if n_out is None else int(n_out)
    out = np.empty(n_out)
    get_backend(backend).das_sum(samples, float(fs), _f64(a), float(s), _f64(weights),
                                 float(t_b), out)
    return out


def selfconv_direct(u, backend=None):
    """Direct ``O(L^2)`` lateral self-convolution of ``u`` (shape ``(L, N)``)."""
    u = np.ascontiguousarray(u, dtype=np.complex128)
    out = np.empty((2 * u.shape[0] - 1, u.shape[1]), dtype=np.complex128)
    get_backend(backend).selfconv_direct(u, out)
    return out


def render_gaussians(frame, x, z, amp, sigma, radius, backend=None):
    """Add Gaussian blobs (pixel units) to ``frame`` in place."""
    if frame.dtype != np.float64 or not frame.flags.c_contiguous:
        raise TypeError("frame must be a C-contiguous float64 array")
    get_backend(backend).render_gaussians(frame, _f64(x), _f64(z), _f64(amp),
                                          float(sigma), float(radius))
    return frame


def local_maxima(frame, threshold, backend=None):
    """Row and column indices of local maxima above ``threshold``.

    A pixel qualifies when it exceeds the threshold, is strictly greater than
    the neighbours that precede it in raster order and not smaller than the
    ones that follow, so flat peaks yield exactly one maximum.
    """
    rows, cols = get_backend(backend).local_maxima(_f64(frame), float(threshold))
    return np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)
