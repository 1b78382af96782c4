r"""Two-way propagation delays for a steered linear array.

An element located at lateral offset :math:`\delta` (metres) from the array
reference point receives the echo of a point reflector illuminated by a plane
wave steered to angle :math:`\theta`.  For the reflector that sits on the
beam axis at the depth sampled at reference time :math:`t`, the element
receives the echo at

.. math::

    \tau(t) = \tfrac12\left(t + \sqrt{t^2 - 4 a t \sin\theta + 4 a^2}\right),
    \qquad a = \delta / c .

All helpers below operate on ``a`` (the element offset divided by the speed
of sound) and ``s`` (``sin(theta)``) so that they can be shared by the time-
and frequency-domain beamformers.
"""

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "SPEED_OF_SOUND",
    "tau",
    "tau_minus_t",
    "tau_prime",
    "tau_inverse",
    "beam_end_time",
]

#: Speed of sound in soft tissue, m/s.
SPEED_OF_SOUND = 1540.0


def _check_s(s):
    if not -1.0 < s < 1.0:
        raise InvalidArgumentError(f"steering angle must satisfy |theta| < pi/2 (sin={s})")


def tau_minus_t(t, a, s):
    """Extra delay ``tau(t) - t`` evaluated in a cancellation-free form.

    Parameters
    ----------
    t : array_like
        Reference times (s), ``t >= 0``.
    a : float or array_like
        Element offset divided by the speed of sound (s).
    s : float
        Sine of the steering angle.

    Returns
    -------
    ndarray
        ``tau(t) - t``; exactly zero where ``a == 0``.
    """
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    q = np.sqrt(t * t - 4.0 * a * t * s + 4.0 * a * a)
    num = 2.0 * a * (a - t * s)
    den = q + t
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


def tau(t, a, s):
    """Receive time of the echo from the reflector sampled at time ``t``.

    Parameters
    ----------
    t : array_like
        Reference times (s).
    a : float or array_like
        Element offset divided by the speed of sound (s).
    s : float
        Sine of the steering angle.

    Returns
    -------
    ndarray
        Delayed times ``tau(t)``.
    """
    t = np.asarray(t, dtype=float)
    return t + tau_minus_t(t, a, s)


def tau_prime(t, a, s):
    """Derivative ``d tau / d t``.

    The derivative is bounded below by ``(1 - |s|) / 2`` so the mapping is
    strictly increasing for ``|theta| < pi/2``.
    """
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    q = np.sqrt(t * t - 4.0 * a * t * s + 4.0 * a * a)
    num = t - 2.0 * a * s
    ratio = np.divide(num, q, out=np.ones(np.broadcast(num, q).shape), where=q > 0)
    return 0.5 * (1.0 + ratio)


def tau_inverse(u, a, s):
    """Inverse mapping ``t = tau^{-1}(u)`` for ``u >= |a|``."""
    u = np.asarray(u, dtype=float)
    a = np.asarray(a, dtype=float)
    return (u * u - a * a) / (u - a * s)


def beam_end_time(a, s, duration):
    """Latest reference time for which every element still has data.

    Parameters
    ----------
    a : array_like
        Element offsets divided by the speed of sound (s).
    s : float
        Sine of the steering angle.
    duration : float
        Record length ``T`` (s).

    Returns
    -------
    float
        ``min_m tau_m^{-1}(T)``; never larger than ``duration``.
    """
    _check_s(s)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if duration <= 0:
        raise InvalidArgumentError("record duration must be positive")
    if np.any(np.abs(a) >= duration):
        raise InvalidArgumentError("array aperture is longer than the record")
    return float(min(duration, np.min(tau_inverse(duration, a, s))))
