r"""Linear array geometries, sum co-arrays and far-field beam patterns.

Element positions are stored as integer multiples of a common pitch.  A
uniform linear array of order ``N`` uses the symmetric index set
:math:`\{-(N-1),\dots,N-1\}` (``2N - 1`` elements).  Sparse layouts whose
*sum co-array* contains that index set reproduce the two-way response of the
full array when used with convolutional (COBA-type) beamforming.

Examples
--------
>>> from sonolab.geometry import make_ula, scoba_geometry, verify_coarray_covers
>>> u = scoba_geometry(3, 3, pitch=1.0)
>>> u.positions
(-6, -3, -2, -1, 0, 1, 2, 3, 6)
>>> verify_coarray_covers(u, make_ula(9, pitch=1.0))
True
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .delays import SPEED_OF_SOUND
from .errors import InvalidArgumentError, InvalidGeometryError

__all__ = [
    "ArrayGeometry",
    "BeamPattern",
    "make_ula",
    "make_linear_array",
    "sum_coarray",
    "intrinsic_apodization",
    "scoba_geometry",
    "scobar_geometry",
    "fractal_geometry",
    "verify_coarray_covers",
    "default_theta_grid",
    "das_beam_pattern",
    "coba_beam_pattern",
    "save_geometry",
    "load_geometry",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Positions of a linear array on a uniform grid.

    Parameters
    ----------
    positions : sequence of int
        Grid indices of the active elements.  Stored sorted and unique.
    pitch : float
        Grid spacing in metres.
    center : int, optional
        Index treated as the lateral origin (default 0).
    label : str, optional
        Free-form description, e.g. ``"ULA(9)"``.
    """

    positions: tuple
    pitch: float
    center: int = 0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions)
        if pos.ndim != 1:
            raise InvalidGeometryError("positions must be a one-dimensional sequence")
        if pos.size and not np.all(np.equal(np.mod(pos, 1), 0)):
            raise InvalidGeometryError("positions must be integers")
        ints = sorted({int(p) for p in pos.tolist()})
        if len(ints) != pos.size:
            raise InvalidGeometryError("positions must be unique")
        if not (np.isfinite(self.pitch) and self.pitch > 0):
            raise InvalidGeometryError(f"pitch must be positive, got {self.pitch!r}")
        object.__setattr__(self, "positions", tuple(ints))
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "center", int(self.center))

    @property
    def n_elements(self):
        """Number of active elements."""
        return len(self.positions)

    @property
    def indices(self):
        """Element indices relative to ``center`` as an integer array."""
        return np.asarray(self.positions, dtype=np.int64) - self.center

    @property
    def offsets(self):
        """Lateral element offsets in metres."""
        return self.indices * self.pitch

    def __len__(self):
        return self.n_elements

    def __contains__(self, index):
        return index in set(self.positions)


@dataclass(frozen=True)
class BeamPattern:
    """Far-field response of an array sampled on an angle grid.

    Parameters
    ----------
    angles : ndarray
        Steering angles in radians.
    values : ndarray
        Complex response per angle.
    omega0 : float
        Carrier angular frequency in rad/s.
    """

    angles: np.ndarray
    values: np.ndarray
    omega0: float

    def magnitude_db(self, floor_db=-120.0):
        """Magnitude normalised to the peak, in dB, clipped at ``floor_db``."""
        mag = np.abs(self.values)
        peak = mag.max()
        if peak == 0:
            return np.full(mag.shape, floor_db)
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(mag / peak)
        return np.maximum(db, floor_db)


def _check_pitch(pitch):
    if not (np.isfinite(pitch) and pitch > 0):
        raise InvalidArgumentError(f"pitch must be positive, got {pitch!r}")


def _check_positive_int(value, name):
    if int(value) != value or value < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def make_ula(N, pitch):
    """Uniform linear array with indices ``-(N-1), ..., N-1``.

    Parameters
    ----------
    N : int
        Array order; the array has ``2N - 1`` elements.
    pitch : float
        Element spacing in metres.

    Returns
    -------
    ArrayGeometry
    """
    N = _check_positive_int(N, "N")
    _check_pitch(pitch)
    return ArrayGeometry(tuple(range(-(N - 1), N)), pitch, label=f"ULA({N})")


def make_linear_array(n_elements, pitch):
    """Contiguous probe of ``n_elements`` elements centred on index 0.

    Odd counts are symmetric; even counts use ``-n/2, ..., n/2 - 1`` so that
    a 64-element probe spans indices ``-32..31``.
    """
    n = _check_positive_int(n_elements, "n_elements")
    _check_pitch(pitch)
    start = -(n // 2)
    return ArrayGeometry(tuple(range(start, start + n)), pitch, label=f"linear({n})")


def sum_coarray(g):
    """All pairwise sums of element indices.

    Parameters
    ----------
    g : ArrayGeometry

    Returns
    -------
    ArrayGeometry
        Sorted, de-duplicated pair sums with the same pitch.
    """
    if g.n_elements == 0:
        raise InvalidArgumentError("sum co-array of an empty geometry is undefined")
    idx = np.asarray(g.positions, dtype=np.int64)
    sums = np.unique(idx[:, None] + idx[None, :])
    return ArrayGeometry(tuple(sums.tolist()), g.pitch, center=2 * g.center,
                         label=f"S[{g.label}]" if g.label else "")


def intrinsic_apodization(g):
    """Multiplicity of every sum co-array index.

    The multiplicity is the discrete self-convolution of the element
    indicator, i.e. the number of ordered pairs ``(n, m)`` with
    ``n + m = l``.

    Returns
    -------
    lags : ndarray of int
        Co-array indices ``l`` (relative to the doubled centre).
    counts : ndarray of int
        Number of element pairs summing to each index.
    """
    if g.n_elements == 0:
        raise InvalidArgumentError("empty geometry")
    idx = g.indices
    lo, hi = idx.min(), idx.max()
    indicator = np.zeros(hi - lo + 1, dtype=np.int64)
    indicator[idx - lo] = 1
    counts = np.convolve(indicator, indicator)
    lags = np.arange(2 * lo, 2 * hi + 1)
    keep = counts > 0
    return lags[keep], counts[keep]


def scoba_geometry(A, B, pitch):
    """Sparse layout ``U_A ∪ U_B`` whose sum co-array covers ``ULA(A*B)``.

    ``U_A`` is a dense ULA of order ``A`` and ``U_B`` a ULA of order ``B``
    with spacing ``A``.

    Parameters
    ----------
    A, B : int
        Factors of the target order ``N = A * B``.
    pitch : float
        Element spacing in metres.

    Returns
    -------
    ArrayGeometry
        ``2A + 2B - 3`` elements.
    """
    A = _check_positive_int(A, "A")
    B = _check_positive_int(B, "B")
    _check_pitch(pitch)
    ua = set(range(-(A - 1), A))
    ub = {n * A for n in range(-(B - 1), B)}
    return ArrayGeometry(tuple(sorted(ua | ub)), pitch, label=f"SCOBA({A},{B})")


def scobar_geometry(A, B, pitch):
    """SCOBA layout extended by two edge ULAs so its co-array equals the full one.

    The edge sets contain the indices with ``N - A + 1 <= |n| <= N - 1``
    (``A - 1`` elements on each side), where ``N = A * B``.
    """
    A = _check_positive_int(A, "A")
    B = _check_positive_int(B, "B")
    N = A * B
    base = scoba_geometry(A, B, pitch)
    edge = {s * n for n in range(N - A + 1, N) for s in (-1, 1)}
    return ArrayGeometry(tuple(sorted(set(base.positions) | edge)), pitch,
                         label=f"SCOBAR({A},{B})")


def fractal_geometry(generator, order, pitch, symmetrize=False):
    """Fractal array obtained by recursive translation of a generator.

    ``W_0 = {0}`` and ``W_{r+1} = ∪_{n in G} (W_r + n L^r)`` with
    ``L = 2 max(G) + 1``.

    Parameters
    ----------
    generator : iterable of int
        Generator set ``G``; must contain 0 as its minimum.
    order : int
        Recursion depth ``r >= 0``.
    pitch : float
        Element spacing in metres.
    symmetrize : bool, optional
        If true return ``W_r ∪ (-W_r)``, a layout symmetric about index 0.

    Returns
    -------
    ArrayGeometry
    """
    gen = sorted({int(n) for n in generator})
    if not gen:
        raise InvalidArgumentError("generator must be non-empty")
    if gen[0] != 0:
        raise InvalidArgumentError("generator minimum must be 0")
    if int(order) != order or order < 0:
        raise InvalidArgumentError("order must be a non-negative integer")
    _check_pitch(pitch)
    L = 2 * gen[-1] + 1
    w = {0}
    for r in range(int(order)):
        step = L ** r
        w = {p + n * step for n in gen for p in w}
    if symmetrize:
        w = w | {-p for p in w}
    label = f"fractal(G={{{','.join(map(str, gen))}}},r={order}{',sym' if symmetrize else ''})"
    return ArrayGeometry(tuple(sorted(w)), pitch, label=label)


def verify_coarray_covers(sparse, target_ula):
    """Whether every target index appears in the sparse array's sum co-array."""
    if sparse.n_elements == 0 or target_ula.n_elements == 0:
        raise InvalidArgumentError("geometries must be non-empty")
    have = set(sum_coarray(sparse).positions)
    return set(target_ula.positions) <= have


def default_theta_grid(n=721):
    """Uniform angle grid over ``[-pi/2, pi/2]``."""
    return np.linspace(-np.pi / 2, np.pi / 2, int(n))


def _phase_step(g, omega0, theta_grid, c):
    if not (np.isfinite(omega0) and omega0 > 0):
        raise InvalidArgumentError("omega0 must be positive")
    theta = default_theta_grid() if theta_grid is None else np.asarray(theta_grid, dtype=float)
    return theta, omega0 * g.pitch * np.sin(theta) / c


def das_beam_pattern(g, weights=None, omega0=2 * np.pi * 3.4e6, theta_grid=None,
                     c=SPEED_OF_SOUND):
    """Delay-and-sum far-field response ``sum_n w_n exp(-j w0 δ sinθ n / c)``.

    Parameters
    ----------
    g : ArrayGeometry
    weights : array_like, optional
        Real weight per element (default all ones).
    omega0 : float
        Carrier angular frequency (rad/s).
    theta_grid : array_like, optional
        Angles in radians (default: :func:`default_theta_grid`).
    c : float
        Speed of sound (m/s).

    Returns
    -------
    BeamPattern
    """
    w = np.ones(g.n_elements) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (g.n_elements,):
        raise InvalidArgumentError(
            f"expected {g.n_elements} weights, got {w.size}")
    theta, x = _phase_step(g, omega0, theta_grid, c)
    values = np.exp(-1j * np.outer(x, g.indices)) @ w
    return BeamPattern(theta, values, float(omega0))


def coba_beam_pattern(g, omega0=2 * np.pi * 3.4e6, theta_grid=None, c=SPEED_OF_SOUND):
    """Two-way response of convolutional beamforming.

    Evaluated as a sum over the sum co-array weighted by the intrinsic
    apodization, which equals the square of the unit-weight DAS pattern.
    """
    theta, x = _phase_step(g, omega0, theta_grid, c)
    lags, counts = intrinsic_apodization(g)
    values = np.exp(-1j * np.outer(x, lags)) @ counts.astype(float)
    return BeamPattern(theta, values, float(omega0))


def save_geometry(path, g):
    """Write a geometry as text: ``pitch=<m>`` header then one index per line."""
    lines = [f"pitch={g.pitch!r}"] + [str(p) for p in g.positions]
    Path(path).write_text("\n".join(lines) + "\n")


def load_geometry(path, label=""):
    """Read a geometry written by :func:`save_geometry`."""
    text = Path(path).read_text().split("\n")
    rows = [r.strip() for r in text if r.strip() and not r.strip().startswith("#")]
    if not rows or not rows[0].startswith("pitch="):
        raise InvalidGeometryError(f"{path}: missing 'pitch=' header")
    try:
        pitch = float(rows[0].split("=", 1)[1])
        positions = [int(r) for r in rows[1:]]
    except ValueError as exc:
        raise InvalidGeometryError(f"{path}: {exc}") from None
    return ArrayGeometry(tuple(positions), pitch, label=label)
