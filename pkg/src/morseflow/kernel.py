"""Closed-form Morse kernel ``W(x) = exp(-|x|) / 2`` and its cell integrals.

Everything here accepts scalars or numpy arrays.  Scalars come back as
Python floats, arrays as float64 arrays of the broadcast shape.

Near-collision gaps make the textbook difference quotient
``[W(b - p) - W(a - p)] / (b - a)`` lose every significant digit, so the
mean slope over a cell is evaluated through ``expm1``-based primitives that
stay accurate for gaps down to the denormal range.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

from morseflow.errors import DomainError, OrderingError

FloatArray = NDArray[np.float64]

# below this |x| the second antiderivative switches to its Taylor series
_SERIES_CUTOFF = 0.5
_SERIES_TERMS = 18


def _finite(x: ArrayLike, name: str) -> FloatArray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _out(arr: FloatArray):
    return float(arr) if arr.ndim == 0 else arr


def morse_w(x: ArrayLike):
    """Morse potential ``exp(-|x|)/2``; even, positive, at most 1/2."""
    arr = _finite(x, "x")
    return _out(0.5 * np.exp(-np.abs(arr)))


def morse_w_prime(x: ArrayLike):
    """Derivative ``-sign(x) exp(-|x|)/2`` with the principal value 0 at the origin."""
    arr = _finite(x, "x")
    return _out(-0.5 * np.sign(arr) * np.exp(-np.abs(arr)))


def one_minus_exp_ratio(d: ArrayLike):
    """``g(d) = (1 - exp(-d)) / d`` for ``d >= 0``, continuously extended by ``g(0) = 1``."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError("g(d) is only defined for d >= 0")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(arr > 0, -np.expm1(-arr) / arr, 1.0)
    return _out(out)


def _mean_slope(a: FloatArray, b: FloatArray, p: FloatArray) -> FloatArray:
    # mean of W'(z - p) over z in [a, b]; assumes a < b elementwise
    d = b - a
    g = np.where(d > 0, -np.expm1(-d) / np.where(d > 0, d, 1.0), 1.0)
    right = a >= p
    left = b <= p
    with np.errstate(over="ignore"):
        r_val = -0.5 * np.exp(-(a - p)) * g
        l_val = 0.5 * np.exp(-(p - b)) * g
        # straddling cell: (exp(-v) - exp(-u)) / (2d) with u = p - a, v = b - p
        u = p - a
        v = b - p
        s_val = np.where(
            u <= v,
            np.exp(-u) * np.expm1(u - v),
            -np.exp(-v) * np.expm1(v - u),
        ) / (2.0 * d)
    return np.where(right, r_val, np.where(left, l_val, s_val))


def interval_mean_slope(a: ArrayLike, b: ArrayLike, p: ArrayLike):
    """Exact mean of ``W'(z - p)`` over ``z`` in ``[a, b]``.

    Equals ``[W(b - p) - W(a - p)] / (b - a)`` but is evaluated without
    cancellation.  The result never exceeds 1/2 in magnitude.

    Raises
    ------
    OrderingError
        If ``a >= b`` anywhere.
    """
    a_ = _finite(a, "a")
    b_ = _finite(b, "b")
    p_ = _finite(p, "p")
    if np.any(a_ >= b_):
        raise OrderingError("interval_mean_slope needs a < b")
    a_, b_, p_ = np.broadcast_arrays(a_, b_, p_)
    return _out(_mean_slope(a_, b_, p_))


def morse_s(x: ArrayLike):
    """Second antiderivative ``S(x) = (exp(-|x|) + |x| - 1) / 2`` with ``S'' = W``.

    Uses a Taylor series near the origin where the closed form cancels.
    """
    return _out(_morse_s(np.abs(_finite(x, "x"))))


def _morse_s(t: FloatArray) -> FloatArray:
    shape = np.shape(t)
    t = np.atleast_1d(t)
    out = 0.5 * (np.expm1(-t) + t)
    small = t < _SERIES_CUTOFF
    if np.any(small):
        ts = t[small]
        # (e^{-t} - 1 + t) / t^2 = sum_k (-t)^k / (k + 2)!
        series = np.zeros_like(ts)
        term = np.full_like(ts, 0.5)
        for k in range(_SERIES_TERMS):
            series += term
            term *= -ts / (k + 3)
        out[small] = 0.5 * ts * ts * series
    return out.reshape(shape)


def cell_pair_integral(a: ArrayLike, b: ArrayLike, c: ArrayLike, d: ArrayLike):
    """``∬ W(x - z) dx dz`` over ``x in [a, b]``, ``z in [c, d]``.

    Disjoint cells use the factorised exponential form; overlapping cells use
    the second antiderivative, whose arguments are then bounded by the cell
    widths so no large terms cancel.
    """
    a_, b_, c_, d_ = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (a, b, c, d))
    )
    wx = b_ - a_
    wz = d_ - c_
    ex = -np.expm1(-wx)
    ez = -np.expm1(-wz)
    right = c_ >= b_
    left = d_ <= a_
    overlap = ~(right | left)
    sep = np.where(right, c_ - b_, a_ - d_)
    out = np.asarray(0.5 * np.exp(-np.where(overlap, 0.0, sep)) * ex * ez)
    if np.any(overlap):
        a_o, b_o, c_o, d_o = a_[overlap], b_[overlap], c_[overlap], d_[overlap]
        out[overlap] = (
            _morse_s(np.abs(b_o - c_o))
            - _morse_s(np.abs(b_o - d_o))
            - _morse_s(np.abs(a_o - c_o))
            + _morse_s(np.abs(a_o - d_o))
        )
    return _out(np.asarray(out, dtype=np.float64))
