"""Pure numpy twin of ``_ckernels``; used when the extension is not built."""

from __future__ import annotations

import numpy as np

from morseflow.kernel import _mean_slope

# bound on the (points x cells) block materialised at once
_BLOCK = 1 << 20


def _gfactor(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    d = np.diff(a)
    safe = np.where(d > 0, d, 1.0)
    return m * np.where(d > 0, -np.expm1(-d) / safe, 1.0)


def _row_blocks(npts: int, ncols: int):
    rows = max(1, _BLOCK // max(ncols, 1))
    for start in range(0, npts, rows):
        yield slice(start, min(start + rows, npts))


def mean_slope_sums(a, m, pts):
    a = np.ascontiguousarray(a, dtype=np.float64)
    m = np.ascontiguousarray(m, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    out = np.empty(pts.shape[0])
    for sl in _row_blocks(pts.shape[0], m.shape[0]):
        p = pts[sl, None]
        out[sl] = (_mean_slope(a[None, :-1], a[None, 1:], p) * m[None, :]).sum(axis=1)
    return out


def exp_conv(a, m, pts):
    a = np.ascontiguousarray(a, dtype=np.float64)
    m = np.ascontiguousarray(m, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n = m.shape[0]
    wg = _gfactor(a, m).tolist()
    decay = np.exp(-np.diff(a)).tolist()
    acc_l = [0.0] * (n + 1)
    for k in range(n):
        acc_l[k + 1] = acc_l[k] * decay[k] + wg[k]
    acc_r = [0.0] * (n + 1)
    for k in range(n - 1, -1, -1):
        acc_r[k] = wg[k] + decay[k] * acc_r[k + 1]
    acc_l_arr = np.array(acc_l)
    acc_r_arr = np.array(acc_r)

    r = np.searchsorted(a, pts, side="right")
    l = np.searchsorted(a, pts, side="left")
    ri = np.maximum(r - 1, 0)
    li = np.minimum(l, n)
    left = np.where(r >= 1, acc_l_arr[ri] * np.exp(-(pts - a[ri])), 0.0)
    right = np.where(l <= n, acc_r_arr[li] * np.exp(-(a[li] - pts)), 0.0)
    w = 0.5 * (left + right)
    wp = 0.5 * (right - left)

    strad = np.nonzero((l == r) & (l >= 1) & (l <= n))[0]
    if strad.size:
        k = l[strad] - 1
        p = pts[strad]
        u = p - a[k]
        v = a[k + 1] - p
        d = a[k + 1] - a[k]
        sw = -(np.expm1(-u) + np.expm1(-v)) / (2.0 * d)
        swp = np.where(
            u <= v, -np.exp(-u) * np.expm1(u - v), np.exp(-v) * np.expm1(v - u)
        ) / (2.0 * d)
        w[strad] += m[k] * sw
        wp[strad] += m[k] * swp
    return w, wp


def direct_conv(a, h, pts):
    a = np.ascontiguousarray(a, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    w = np.empty(pts.shape[0])
    wp = np.empty(pts.shape[0])
    for sl in _row_blocks(pts.shape[0], a.shape[0]):
        x = pts[sl, None] - a[None, :]
        e = 0.5 * np.exp(-np.abs(x))
        s = np.where(x >= 0, 0.5 - e, e - 0.5)
        w[sl] = ((s[:, :-1] - s[:, 1:]) * h[None, :]).sum(axis=1)
        wp[sl] = ((e[:, :-1] - e[:, 1:]) * h[None, :]).sum(axis=1)
    return w, wp


def direct_conv_prime(a, h, pts):
    return direct_conv(a, h, pts)[1]


def velocities(x, y):
    N = x.shape[0] - 1
    m = np.full(N, 1.0 / N)
    _, wpx_x = exp_conv(x, m, x)
    _, wpy_x = exp_conv(y, m, x)
    _, wpy_y = exp_conv(y, m, y)
    _, wpx_y = exp_conv(x, m, y)
    return wpy_x - wpx_x, wpx_y - wpy_y


def decay_scan(a, c):
    decay = np.exp(-np.diff(a)).tolist()
    S = [0.0] * (len(c) + 1)
    for k, ck in enumerate(np.asarray(c, dtype=np.float64).tolist()):
        S[k + 1] = S[k] * decay[k] + ck
    return np.array(S)


def min_gap(z):
    g = np.diff(z)
    i = int(np.argmin(g))
    return float(g[i]), i


__all__ = [
    "mean_slope_sums",
    "exp_conv",
    "direct_conv",
    "direct_conv_prime",
    "velocities",
    "min_gap",
    "decay_scan",
]
