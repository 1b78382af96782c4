"""Pure NumPy implementations of the compiled kernels.

Every function here has the same signature and semantics as its counterpart
in :mod:`sonolab._ckernels` and is used when the extension is unavailable.
"""

import numpy as np


def _positions(n_out, fs, a, s):
    n = np.arange(n_out, dtype=float)
    if a == 0.0:
        return n
    t = n / fs
    q = np.sqrt(t * t - 4.0 * a * t * s + 4.0 * a * a)
    return n + fs * (2.0 * a * (a - t * s)) / (q + t)


def _interp(row, x):
    n = row.shape[0]
    valid = (x >= 0.0) & (x <= n - 1)
    xc = np.where(valid, x, 0.0)
    i0 = np.minimum(np.floor(xc).astype(np.intp), n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = xc - i0
    val = np.where(i0 >= n - 1, row[n - 1], (1.0 - frac) * row[i0] + frac * row[i1])
    return np.where(valid, val, 0.0)


def delay_channels(samples, fs, a, s, t_b, out):
    n_out = out.shape[1]
    live = np.arange(n_out) / fs < t_b
    for m in range(samples.shape[0]):
        out[m] = np.where(live, _interp(samples[m], _positions(n_out, fs, a[m], s)), 0.0)


def das_sum(samples, fs, a, s, weights, t_b, out):
    n_out = out.shape[0]
    live = np.arange(n_out) / fs < t_b
    out[:] = 0.0
    for m in range(samples.shape[0]):
        if weights[m] == 0.0:
            continue
        vals = _interp(samples[m], _positions(n_out, fs, a[m], s))
        out += np.where(live, weights[m] * vals, 0.0)


def selfconv_direct(u, out):
    L = u.shape[0]
    out[:] = 0.0
    for p in range(L):
        for q in range(L):
            out[p + q] += u[p] * u[q]


def render_gaussians(frame, x, z, amp, sigma, radius):
    nz, nx = frame.shape
    inv = 1.0 / (2.0 * sigma * sigma)
    for k in range(len(x)):
        i0 = max(int(np.ceil(x[k] - radius)), 0)
        i1 = min(int(np.floor(x[k] + radius)), nx - 1)
        j0 = max(int(np.ceil(z[k] - radius)), 0)
        j1 = min(int(np.floor(z[k] + radius)), nz - 1)
        if i1 < i0 or j1 < j0:
            continue
        dz = np.arange(j0, j1 + 1) - z[k]
        dx = np.arange(i0, i1 + 1) - x[k]
        gz = amp[k] * np.exp(-dz * dz * inv)
        gx = np.exp(-dx * dx * inv)
        frame[j0:j1 + 1, i0:i1 + 1] += gz[:, None] * gx[None, :]


def local_maxima(frame, threshold):
    nz, nx = frame.shape
    pad = np.full((nz + 2, nx + 2), -np.inf)
    pad[1:-1, 1:-1] = frame
    ok = frame > threshold
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            w = pad[1 + dj:1 + dj + nz, 1 + di:1 + di + nx]
            if dj < 0 or (dj == 0 and di < 0):
                ok &= frame > w
            else:
                ok &= frame >= w
    rows, cols = np.nonzero(ok)
    return rows.astype(np.intp), cols.astype(np.intp)
