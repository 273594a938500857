# cython: language_level=3
"""Compiled kernel sums for piecewise-constant densities.

Every routine takes the breakpoints ``a[0] < ... < a[n]`` of one density and
per-cell data (masses or heights), and evaluates a kernel sum at a list of
points.  The pure-Python twin in ``_pykernels`` has identical signatures.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, fabs

cnp.import_array()


cdef inline Py_ssize_t _count_le(const double[::1] a, double p) noexcept nogil:
    # number of breakpoints <= p
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= p:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _count_lt(const double[::1] a, double p) noexcept nogil:
    # number of breakpoints < p
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < p:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline double _straddle_wprime(double u, double v, double d) noexcept nogil:
    # mean of W'(p - z) over a cell with p - a = u > 0, b - p = v > 0
    if u <= v:
        return -exp(-u) * expm1(u - v) / (2.0 * d)
    return exp(-v) * expm1(v - u) / (2.0 * d)


cdef inline double _straddle_w(double u, double v, double d) noexcept nogil:
    return -(expm1(-u) + expm1(-v)) / (2.0 * d)


def _gfactor(const double[::1] a, const double[::1] m):
    cdef Py_ssize_t n = m.shape[0], k
    cdef double d
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] c = out
    for k in range(n):
        d = a[k + 1] - a[k]
        c[k] = m[k] * (-expm1(-d) / d) if d > 0 else m[k]
    return out


def mean_slope_sums(const double[::1] a, const double[::1] m, const double[::1] pts):
    """``out[j] = sum_k m[k] * mean_{z in [a_k, a_k+1]} W'(z - pts[j])``.

    Direct O(n * len(pts)) summation, one exponential per (point, cell).
    """
    cdef Py_ssize_t n = m.shape[0], npts = pts.shape[0], j, k, r, l
    cdef double p, sl, sr, u, v, d
    wg_arr = _gfactor(a, m)
    cdef const double[::1] wg = wg_arr
    out = np.empty(npts, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for j in range(npts):
            p = pts[j]
            r = _count_le(a, p)
            l = _count_lt(a, p)
            sl = 0.0
            for k in range(r - 1):
                sl = sl + wg[k] * exp(a[k + 1] - p)
            sr = 0.0
            for k in range(l, n):
                sr = sr + wg[k] * exp(p - a[k])
            o[j] = 0.5 * (sl - sr)
            if l == r and 1 <= l <= n:
                k = l - 1
                u = p - a[k]
                v = a[k + 1] - p
                d = a[k + 1] - a[k]
                # mean of W'(z - p) is minus the mean of W'(p - z)
                o[j] = o[j] - m[k] * _straddle_wprime(u, v, d)
    return out


cdef void _exp_conv_core(
    const double[::1] a,
    const double[::1] m,
    const double[::1] wg,
    const double[::1] pts,
    double[::1] acc_l,
    double[::1] acc_r,
    double[::1] wo,
    double[::1] wpo,
) noexcept nogil:
    cdef Py_ssize_t n = m.shape[0], npts = pts.shape[0], j, k, r = 0, l = 0
    cdef double p, left, right, u, v, d
    # acc_l[j]: cells k < j seen from a[j]; acc_r[j]: cells k >= j seen from a[j]
    acc_l[0] = 0.0
    for k in range(n):
        acc_l[k + 1] = acc_l[k] * exp(-(a[k + 1] - a[k])) + wg[k]
    acc_r[n] = 0.0
    for k in range(n - 1, -1, -1):
        acc_r[k] = wg[k] + exp(-(a[k + 1] - a[k])) * acc_r[k + 1]
    for j in range(npts):
        p = pts[j]
        while r <= n and a[r] <= p:
            r += 1
        while l <= n and a[l] < p:
            l += 1
        left = acc_l[r - 1] * exp(-(p - a[r - 1])) if r >= 1 else 0.0
        right = acc_r[l] * exp(-(a[l] - p)) if l <= n else 0.0
        wo[j] = 0.5 * (left + right)
        wpo[j] = 0.5 * (right - left)
        if l == r and 1 <= l <= n:
            k = l - 1
            u = p - a[k]
            v = a[k + 1] - p
            d = a[k + 1] - a[k]
            wo[j] = wo[j] + m[k] * _straddle_w(u, v, d)
            wpo[j] = wpo[j] + m[k] * _straddle_wprime(u, v, d)


def exp_conv(const double[::1] a, const double[::1] m, const double[::1] pts):
    """``(W * f)(p)`` and ``(W' * f)(p)`` for sorted ``pts`` in O(n + len(pts)).

    ``f`` carries mass ``m[k]`` uniformly on cell k.  Cells entirely left or
    right of a point are summed through decaying scan accumulators that only
    ever multiply by ``exp(-distance)``, so nothing overflows.
    """
    cdef Py_ssize_t n = m.shape[0], npts = pts.shape[0]
    wg_arr = _gfactor(a, m)
    acc_l = np.empty(n + 1, dtype=np.float64)
    acc_r = np.empty(n + 1, dtype=np.float64)
    w_out = np.empty(npts, dtype=np.float64)
    wp_out = np.empty(npts, dtype=np.float64)
    _exp_conv_core(a, m, wg_arr, pts, acc_l, acc_r, w_out, wp_out)
    return w_out, wp_out


def velocities(const double[::1] x, const double[::1] y):
    """Difference-quotient velocities of both species with cell masses ``1/N``.

    ``vx = (W' * eta)(x) - (W' * rho)(x)`` and symmetrically for ``vy``; the
    four scans share their work buffers.
    """
    cdef Py_ssize_t n1 = x.shape[0], N = n1 - 1, k
    m_arr = np.full(N, 1.0 / N)
    cdef const double[::1] m = m_arr
    gx = _gfactor(x, m_arr)
    gy = _gfactor(y, m_arr)
    acc_l = np.empty(n1, dtype=np.float64)
    acc_r = np.empty(n1, dtype=np.float64)
    w = np.empty(n1, dtype=np.float64)
    own = np.empty(n1, dtype=np.float64)
    vx = np.empty(n1, dtype=np.float64)
    vy = np.empty(n1, dtype=np.float64)
    cdef const double[::1] gxv = gx
    cdef const double[::1] gyv = gy
    cdef double[::1] al = acc_l
    cdef double[::1] ar = acc_r
    cdef double[::1] wv = w
    cdef double[::1] o = own
    cdef double[::1] bx = vx
    cdef double[::1] by = vy
    with nogil:
        _exp_conv_core(x, m, gxv, x, al, ar, wv, o)
        _exp_conv_core(y, m, gyv, x, al, ar, wv, bx)
        for k in range(n1):
            bx[k] = bx[k] - o[k]
        _exp_conv_core(y, m, gyv, y, al, ar, wv, o)
        _exp_conv_core(x, m, gxv, y, al, ar, wv, by)
        for k in range(n1):
            by[k] = by[k] - o[k]
    return vx, vy


def decay_scan(const double[::1] a, const double[::1] c):
    """``S[0] = 0``, ``S[k+1] = S[k] exp(-(a[k+1] - a[k])) + c[k]``."""
    cdef Py_ssize_t n = c.shape[0], k
    out = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] S = out
    with nogil:
        S[0] = 0.0
        for k in range(n):
            S[k + 1] = S[k] * exp(-(a[k + 1] - a[k])) + c[k]
    return out


def min_gap(const double[::1] z):
    """Smallest consecutive difference and its index."""
    cdef Py_ssize_t k, i = 0
    cdef double g, best = z[1] - z[0]
    for k in range(1, z.shape[0] - 1):
        g = z[k + 1] - z[k]
        if g < best:
            best = g
            i = k
    return best, i


def direct_conv(const double[::1] a, const double[::1] h, const double[::1] pts):
    """``(W * f)(p)`` and ``(W' * f)(p)`` cell by cell from the antiderivatives.

    ``f`` has height ``h[k]`` on cell k.  Uses ``int_a^b W'(p - z) dz =
    W(p - a) - W(p - b)`` and the matching odd primitive of ``W``; O(n) work
    per point with one exponential per breakpoint.
    """
    cdef Py_ssize_t n = h.shape[0], npts = pts.shape[0], j, k, r
    cdef double p, d, sl, sr, swp
    e_arr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] e = e_arr
    w_out = np.empty(npts, dtype=np.float64)
    wp_out = np.empty(npts, dtype=np.float64)
    cdef double[::1] wo = w_out
    cdef double[::1] wpo = wp_out
    with nogil:
        for j in range(npts):
            p = pts[j]
            for k in range(n + 1):
                e[k] = 0.5 * exp(-fabs(p - a[k]))
            swp = 0.0
            for k in range(n):
                swp = swp + h[k] * (e[k] - e[k + 1])
            # the odd primitive sign(x) (1 - e^{-|x|}) / 2 changes branch at the
            # cell containing p; cells [0, r-1) lie left of p, cells >= r right
            r = _count_le(a, p)
            sl = 0.0
            for k in range(r - 1):
                sl = sl + h[k] * (e[k + 1] - e[k])
            sr = 0.0
            for k in range(r, n):
                sr = sr + h[k] * (e[k] - e[k + 1])
            if 1 <= r <= n:
                k = r - 1
                sl = sl + h[k] * (1.0 - e[k] - e[k + 1])
            wo[j] = sl + sr
            wpo[j] = swp
    return w_out, wp_out


def direct_conv_prime(const double[::1] a, const double[::1] h, const double[::1] pts):
    """``(W' * f)(p)`` alone, as in :func:`direct_conv`."""
    cdef Py_ssize_t n = h.shape[0], npts = pts.shape[0], j, k, r
    cdef double p, swp
    e_arr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] e = e_arr
    wp_out = np.empty(npts, dtype=np.float64)
    cdef double[::1] wpo = wp_out
    with nogil:
        for j in range(npts):
            p = pts[j]
            r = _count_le(a, p)
            for k in range(r):
                e[k] = exp(a[k] - p)
            for k in range(r, n + 1):
                e[k] = exp(p - a[k])
            swp = 0.0
            for k in range(n):
                swp = swp + h[k] * (e[k] - e[k + 1])
            wpo[j] = 0.5 * swp
    return wp_out
