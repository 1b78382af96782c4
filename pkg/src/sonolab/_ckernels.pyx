# cython: language_level=3
"""Compiled inner loops.  Semantics mirror :mod:`sonolab._pykernels` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, exp, ceil

cnp.import_array()


cdef inline double _position(Py_ssize_t n, double fs, double a, double s) noexcept nogil:
    """Fractional read index n + fs * (tau(t) - t) for t = n / fs."""
    cdef double t, q
    if a == 0.0:
        return <double>n
    t = n / fs
    q = sqrt(t * t - 4.0 * a * t * s + 4.0 * a * a)
    return n + fs * (2.0 * a * (a - t * s)) / (q + t)


cdef inline double _interp(const double[::1] row, double x) noexcept nogil:
    cdef Py_ssize_t n = row.shape[0]
    cdef Py_ssize_t i0
    cdef double frac
    if x < 0.0 or x > n - 1:
        return 0.0
    i0 = <Py_ssize_t>floor(x)
    if i0 >= n - 1:
        return row[n - 1]
    frac = x - i0
    return (1.0 - frac) * row[i0] + frac * row[i0 + 1]


def delay_channels(const double[:, ::1] samples, double fs, const double[::1] a,
                   double s, double t_b, double[:, ::1] out):
    """Fill ``out[m, n]`` with channel ``m`` read at ``tau_m(n / fs)``."""
    cdef Py_ssize_t M = samples.shape[0]
    cdef Py_ssize_t n_out = out.shape[1]
    cdef Py_ssize_t m, n
    with nogil:
        for m in range(M):
            for n in range(n_out):
                if n / fs >= t_b:
                    out[m, n] = 0.0
                else:
                    out[m, n] = _interp(samples[m], _position(n, fs, a[m], s))


def das_sum(const double[:, ::1] samples, double fs, const double[::1] a, double s,
            const double[::1] weights, double t_b, double[::1] out):
    """Fill ``out[n]`` with the weighted sum of delayed channels."""
    cdef Py_ssize_t M = samples.shape[0]
    cdef Py_ssize_t n_out = out.shape[0]
    cdef Py_ssize_t m, n
    cdef double acc
    with nogil:
        for n in range(n_out):
            out[n] = 0.0
        for m in range(M):
            if weights[m] == 0.0:
                continue
            for n in range(n_out):
                if n / fs < t_b:
                    out[n] += weights[m] * _interp(samples[m], _position(n, fs, a[m], s))


def selfconv_direct(const double complex[:, ::1] u, double complex[:, ::1] out):
    """Lateral self-convolution ``out[p + q, n] = sum u[p, n] u[q, n]``.

    Each unordered pair ``p < q`` is visited once and counted twice; complex
    products are expanded into real arithmetic so the inner loop vectorises.
    """
    cdef Py_ssize_t L = u.shape[0]
    cdef Py_ssize_t N = u.shape[1]
    cdef Py_ssize_t p, q, n
    cdef const double *up
    cdef const double *uq
    cdef double *o
    cdef double ar, ai, br, bi
    with nogil:
        for p in range(out.shape[0]):
            for n in range(N):
                out[p, n] = 0.0
        for p in range(L):
            up = <const double *> &u[p, 0]
            o = <double *> &out[2 * p, 0]
            for n in range(N):
                ar = up[2 * n]
                ai = up[2 * n + 1]
                o[2 * n] += ar * ar - ai * ai
                o[2 * n + 1] += 2.0 * ar * ai
            for q in range(p + 1, L):
                uq = <const double *> &u[q, 0]
                o = <double *> &out[p + q, 0]
                for n in range(N):
                    ar = up[2 * n]
                    ai = up[2 * n + 1]
                    br = uq[2 * n]
                    bi = uq[2 * n + 1]
                    o[2 * n] += 2.0 * (ar * br - ai * bi)
                    o[2 * n + 1] += 2.0 * (ar * bi + ai * br)


def render_gaussians(double[:, ::1] frame, const double[::1] x, const double[::1] z,
                     const double[::1] amp, double sigma, double radius):
    """Accumulate truncated isotropic Gaussians centred at pixel coordinates."""
    cdef Py_ssize_t nz = frame.shape[0]
    cdef Py_ssize_t nx = frame.shape[1]
    cdef Py_ssize_t k, i, j, i0, i1, j0, j1
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef double gz, dx, dz
    with nogil:
        for k in range(x.shape[0]):
            i0 = <Py_ssize_t>ceil(x[k] - radius)
            i1 = <Py_ssize_t>floor(x[k] + radius)
            j0 = <Py_ssize_t>ceil(z[k] - radius)
            j1 = <Py_ssize_t>floor(z[k] + radius)
            if i0 < 0:
                i0 = 0
            if j0 < 0:
                j0 = 0
            if i1 > nx - 1:
                i1 = nx - 1
            if j1 > nz - 1:
                j1 = nz - 1
            for j in range(j0, j1 + 1):
                dz = j - z[k]
                gz = amp[k] * exp(-dz * dz * inv)
                for i in range(i0, i1 + 1):
                    dx = i - x[k]
                    frame[j, i] += gz * exp(-dx * dx * inv)


def local_maxima(const double[:, ::1] frame, double threshold):
    """Raster-order tie-broken 8-neighbour maxima strictly above ``threshold``."""
    cdef Py_ssize_t nz = frame.shape[0]
    cdef Py_ssize_t nx = frame.shape[1]
    cdef Py_ssize_t i, j, di, dj, ii, jj, count = 0
    cdef double v, w
    cdef bint ok
    rows = np.empty(nz * nx, dtype=np.intp)
    cols = np.empty(nz * nx, dtype=np.intp)
    cdef Py_ssize_t[::1] r = rows
    cdef Py_ssize_t[::1] c = cols
    with nogil:
        for j in range(nz):
            for i in range(nx):
                v = frame[j, i]
                if not v > threshold:
                    continue
                ok = True
                for dj in range(-1, 2):
                    jj = j + dj
                    if jj < 0 or jj >= nz:
                        continue
                    for di in range(-1, 2):
                        ii = i + di
                        if (di == 0 and dj == 0) or ii < 0 or ii >= nx:
                            continue
                        w = frame[jj, ii]
                        if dj < 0 or (dj == 0 and di < 0):
                            if w >= v:
                                ok = False
                        elif w > v:
                            ok = False
                if ok:
                    r[count] = j
                    c[count] = i
                    count += 1
    return rows[:count].copy(), cols[:count].copy()
