"""Particle configurations, their piecewise-constant densities and 1-D measure tools.

A species is made of ``N + 1`` ordered particles; each of the ``N`` gaps
between consecutive particles carries mass ``1/N`` spread uniformly, which is
the :class:`PiecewiseDensity` obtained with :func:`to_density`.

Wasserstein distances are computed exactly through quantile functions:
the quantile of a piecewise-constant density is piecewise linear in the mass
variable, so the squared difference of two quantiles is piecewise quadratic
and integrates in closed form on the merged mass grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from morseflow import _backend
from morseflow.errors import (
    AtomizationError,
    DimensionError,
    DomainError,
    OrderingError,
    StateError,
)

FloatArray = NDArray[np.float64]

MASS_TOL = 1e-12


def _frozen(x: ArrayLike) -> FloatArray:
    arr = np.array(x, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpeciesConfig:
    """Strictly increasing positions ``x_0 < ... < x_N`` of one species."""

    positions: FloatArray

    def __post_init__(self) -> None:
        pos = _frozen(self.positions)
        if pos.ndim != 1 or pos.size < 2:
            raise StateError("a species needs at least two particles (N >= 1)")
        # strictly increasing with finite ends implies all finite (NaN fails the test)
        if not (math.isfinite(pos[0]) and math.isfinite(pos[-1])):
            raise StateError("particle positions must be finite")
        gaps = pos[1:] - pos[:-1]
        if not (gaps > 0).all():
            if not np.all(np.isfinite(pos)):
                raise StateError("particle positions must be finite")
            i = int(np.argmin(np.where(np.isnan(gaps), -np.inf, gaps)))
            raise StateError(f"positions not strictly increasing at gap {i}")
        object.__setattr__(self, "positions", pos)

    @property
    def N(self) -> int:
        return self.positions.size - 1

    @property
    def gaps(self) -> FloatArray:
        return np.diff(self.positions)

    def translated(self, c: float) -> "SpeciesConfig":
        return SpeciesConfig(self.positions + c)


@dataclass(frozen=True)
class SystemState:
    """Both species at a given simulation time."""

    rho: SpeciesConfig
    eta: SpeciesConfig
    time: float = 0.0

    def __post_init__(self) -> None:
        if self.rho.N != self.eta.N:
            raise DimensionError(
                f"species sizes differ: N={self.rho.N} vs N={self.eta.N}"
            )
        if not (math.isfinite(self.time) and self.time >= 0):
            raise StateError("time must be finite and nonnegative")

    @classmethod
    def from_positions(cls, x: ArrayLike, y: ArrayLike, time: float = 0.0) -> "SystemState":
        return cls(SpeciesConfig(x), SpeciesConfig(y), float(time))

    @property
    def N(self) -> int:
        return self.rho.N

    @property
    def x(self) -> FloatArray:
        return self.rho.positions

    @property
    def y(self) -> FloatArray:
        return self.eta.positions

    def translated(self, c: float) -> "SystemState":
        return SystemState(self.rho.translated(c), self.eta.translated(c), self.time)

    def swapped(self) -> "SystemState":
        """The same state with the roles of the two species exchanged."""
        return SystemState(self.eta, self.rho, self.time)


@dataclass(frozen=True)
class PiecewiseDensity:
    """Density equal to ``heights[k]`` on ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: FloatArray
    heights: FloatArray

    def __post_init__(self) -> None:
        bp = _frozen(self.breakpoints)
        h = _frozen(self.heights)
        if bp.ndim != 1 or h.ndim != 1 or bp.size != h.size + 1 or h.size < 1:
            raise StateError("need len(breakpoints) == len(heights) + 1 >= 2")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(h))):
            raise StateError("density data must be finite")
        if np.any(np.diff(bp) <= 0):
            raise OrderingError("breakpoints must be strictly increasing")
        if np.any(h < 0):
            raise StateError("heights must be nonnegative")
        mass = float(np.sum(h * np.diff(bp)))
        if abs(mass - 1.0) > 1e-9:
            raise StateError(f"density has total mass {mass!r}, expected 1")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "heights", h)

    @property
    def widths(self) -> FloatArray:
        return np.diff(self.breakpoints)

    @property
    def cell_masses(self) -> FloatArray:
        return self.heights * self.widths

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.cell_masses))

    def cdf_nodes(self) -> FloatArray:
        """Cumulative mass at each breakpoint, normalised so the last entry is 1."""
        cum = np.concatenate(([0.0], np.cumsum(self.cell_masses)))
        return cum / cum[-1]

    def translated(self, c: float) -> "PiecewiseDensity":
        return PiecewiseDensity(self.breakpoints + c, self.heights)

    def __call__(self, x: ArrayLike):
        x = np.asarray(x, dtype=np.float64)
        k = np.searchsorted(self.breakpoints, x, side="right") - 1
        inside = (k >= 0) & (k < self.heights.size)
        out = np.where(inside, self.heights[np.clip(k, 0, self.heights.size - 1)], 0.0)
        return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- initial data


@dataclass(frozen=True)
class Uniform:
    """Uniform probability density on ``[a, b]``."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise DomainError("uniform density needs finite a < b")

    def cdf_table(self) -> tuple[FloatArray, FloatArray]:
        return np.array([self.a, self.b]), np.array([0.0, 1.0])


@dataclass(frozen=True)
class TabulatedCDF:
    """CDF given on a grid, interpolated linearly between nodes.

    Linear interpolation of the CDF is the same as a piecewise-constant
    density between the nodes, which keeps atomization exactly invertible.
    """

    x: FloatArray
    F: FloatArray

    def __post_init__(self) -> None:
        x = _frozen(self.x)
        F = _frozen(self.F)
        if x.ndim != 1 or x.shape != F.shape or x.size < 2:
            raise DomainError("CDF table needs two equal-length columns of >= 2 rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(F))):
            raise DomainError("CDF table must be finite")
        if np.any(np.diff(x) <= 0):
            raise DomainError("CDF grid x must be strictly increasing")
        if np.any(np.diff(F) < 0):
            raise DomainError("CDF values must be nondecreasing")
        if F[0] != 0.0 or F[-1] != 1.0:
            raise DomainError("CDF table must start at F=0 and end at F=1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "F", F)

    def cdf_table(self) -> tuple[FloatArray, FloatArray]:
        return self.x, self.F


@dataclass(frozen=True)
class PiecewiseConstant:
    """Piecewise-constant initial density (heights need not be normalised exactly)."""

    breakpoints: FloatArray
    heights: FloatArray

    def __post_init__(self) -> None:
        bp = _frozen(self.breakpoints)
        h = _frozen(self.heights)
        if bp.ndim != 1 or bp.size != h.size + 1 or h.size < 1:
            raise DomainError("need len(breakpoints) == len(heights) + 1 >= 2")
        if np.any(np.diff(bp) <= 0) or np.any(h < 0) or not np.all(np.isfinite(h)):
            raise DomainError("invalid piecewise-constant density")
        if abs(float(np.sum(h * np.diff(bp))) - 1.0) > 1e-9:
            raise DomainError("piecewise-constant density must have mass 1")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "heights", h)

    def cdf_table(self) -> tuple[FloatArray, FloatArray]:
        cum = np.concatenate(([0.0], np.cumsum(self.heights * np.diff(self.breakpoints))))
        return self.breakpoints, cum / cum[-1]


InitialDensity = Union[Uniform, TabulatedCDF, PiecewiseConstant]


def tent(center: float = 0.0, half_width: float = 1.0, nodes: int = 2049) -> TabulatedCDF:
    """Tent (triangular) density tabulated through its exact CDF on a uniform grid."""
    if nodes < 3 or nodes % 2 == 0:
        raise DomainError("tent needs an odd number of nodes >= 3")
    s = np.linspace(-1.0, 1.0, nodes)
    F = np.where(s <= 0, 0.5 * (1 + s) ** 2, 1 - 0.5 * (1 - s) ** 2)
    F[0], F[nodes // 2], F[-1] = 0.0, 0.5, 1.0
    return TabulatedCDF(center + half_width * s, F)


def read_cdf_table(path: str | Path) -> TabulatedCDF:
    """Read a two-column ``x F`` text table; ``#`` starts a comment."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DomainError(f"{path}:{lineno}: expected two columns, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise DomainError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DomainError(f"{path}: empty CDF table")
    arr = np.array(rows)
    return TabulatedCDF(arr[:, 0], arr[:, 1])


def write_density(f: PiecewiseDensity, path: str | Path) -> None:
    """Write ``left right height`` rows, one per cell."""
    bp, h = f.breakpoints, f.heights
    lines = ["# left right height"]
    lines += [f"{bp[k]!r} {bp[k + 1]!r} {h[k]!r}" for k in range(h.size)]
    Path(path).write_text("\n".join(lines) + "\n")


def _support(xs: FloatArray, F: FloatArray) -> tuple[int, int]:
    # last node with F == 0 and first node with F == 1
    lo = int(np.nonzero(F > 0)[0][0]) - 1
    hi = int(np.nonzero(F >= 1)[0][0])
    return max(lo, 0), hi


def _quantiles(xs: FloatArray, F: FloatArray, m: FloatArray) -> FloatArray:
    # inf{x : F(x) >= m} for the piecewise-linear CDF through (xs, F), 0 < m <= 1
    j = np.searchsorted(F, m, side="left")  # first node with F >= m
    j = np.clip(j, 1, xs.size - 1)
    F0, F1 = F[j - 1], F[j]
    x0, x1 = xs[j - 1], xs[j]
    return x0 + (m - F0) / (F1 - F0) * (x1 - x0)


def atomize(rho0: InitialDensity, N: int) -> SpeciesConfig:
    """Place ``N + 1`` particles at the ``0, 1/N, ..., 1`` quantiles of ``rho0``.

    Raises
    ------
    AtomizationError
        If consecutive quantiles coincide, i.e. some mass ``>= 1/N`` sits at a point.
    """
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    N = int(N)
    xs, F = rho0.cdf_table()
    lo, hi = _support(xs, F)
    levels = np.arange(1, N) / N
    inner = _quantiles(xs, F, levels) if N > 1 else np.empty(0)
    pos = np.concatenate(([xs[lo]], inner, [xs[hi]]))
    gaps = np.diff(pos)
    if np.any(gaps <= 0):
        i = int(np.argmin(gaps))
        raise AtomizationError(
            f"quantiles {i} and {i + 1} coincide at x={pos[i]!r}: the density is too "
            f"concentrated for N={N}"
        )
    return SpeciesConfig(pos)


def to_density(cfg: SpeciesConfig) -> PiecewiseDensity:
    """Piecewise-constant density with mass ``1/N`` on each gap."""
    return PiecewiseDensity(cfg.positions, 1.0 / (cfg.N * cfg.gaps))


def lp_norm(f: PiecewiseDensity, p: float) -> float:
    """``L^p`` norm for ``p`` in ``(1, inf]``."""
    if not p > 1:
        raise DomainError("lp_norm needs p > 1 (the L^1 norm of a density is 1)")
    h = f.heights
    if math.isinf(p):
        return float(h.max())
    # factor out the max height so h**p cannot overflow
    hmax = float(h.max())
    if hmax == 0:
        return 0.0
    return hmax * float(np.sum((h / hmax) ** p * f.widths)) ** (1.0 / p)


def second_moment(f: PiecewiseDensity) -> float:
    """``∫ x^2 f(x) dx`` through the cubic antiderivative on each cell."""
    a = f.breakpoints[:-1]
    b = f.breakpoints[1:]
    # (b^3 - a^3)/3 = (b - a)(a^2 + ab + b^2)/3
    return float(np.sum(f.heights * (b - a) * (a * a + a * b + b * b)) / 3.0)


def first_moment(f: PiecewiseDensity) -> float:
    a = f.breakpoints[:-1]
    b = f.breakpoints[1:]
    return float(np.sum(f.heights * (b - a) * (a + b)) / 2.0)


def _eval_quantile(f: PiecewiseDensity, M: FloatArray, cell: np.ndarray, m: FloatArray) -> FloatArray:
    dm = M[cell + 1] - M[cell]
    return f.breakpoints[cell] + (m - M[cell]) / dm * f.widths[cell]


def w2_density(f: PiecewiseDensity, g: PiecewiseDensity) -> float:
    """Exact 2-Wasserstein distance between two piecewise-constant densities."""
    Mf = f.cdf_nodes()
    Mg = g.cdf_nodes()
    grid = np.union1d(Mf, Mg)
    lo, hi = grid[:-1], grid[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)
    # a mid-mass lies strictly inside exactly one positive-mass cell of each density
    cf = np.clip(np.searchsorted(Mf, mid, side="right") - 1, 0, f.heights.size - 1)
    cg = np.clip(np.searchsorted(Mg, mid, side="right") - 1, 0, g.heights.size - 1)
    d0 = _eval_quantile(f, Mf, cf, lo) - _eval_quantile(g, Mg, cg, lo)
    d1 = _eval_quantile(f, Mf, cf, hi) - _eval_quantile(g, Mg, cg, hi)
    total = float(np.sum((hi - lo) * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)
    return math.sqrt(max(total, 0.0))


def _check_same_n(a: SpeciesConfig, b: SpeciesConfig) -> None:
    if a.N != b.N:
        raise DimensionError(f"configurations have N={a.N} and N={b.N}")


def w2_atoms(a: SpeciesConfig, b: SpeciesConfig) -> float:
    """W2 between two configurations under the gap-mass convention.

    Both quantile functions are piecewise linear on the common mass grid
    ``k/N``, so the distance reduces to the P1 mass-matrix quadratic form in
    the position differences.
    """
    _check_same_n(a, b)
    return math.sqrt(max(_gap_mass_sq(a.positions - b.positions, a.N), 0.0))


def _gap_mass_sq(diff: FloatArray, N: int) -> float:
    d0 = diff[:-1]
    d1 = diff[1:]
    return float(np.sum(d0 * d0 + d0 * d1 + d1 * d1)) / (3.0 * N)


def w2_atoms_pairing(a: SpeciesConfig, b: SpeciesConfig) -> float:
    """Approximate W2 treating the ``N + 1`` particles as equal-mass atoms.

    Kept only as a diagnostic; it disagrees with :func:`w2_atoms` at O(1/N).
    """
    _check_same_n(a, b)
    return float(np.sqrt(np.mean((a.positions - b.positions) ** 2)))


def product_w2(s1: SystemState, s2: SystemState) -> float:
    """``sqrt(W2(rho1, rho2)^2 + W2(eta1, eta2)^2)`` on the reconstructed densities."""
    if s1.N != s2.N:
        raise DimensionError(f"states have N={s1.N} and N={s2.N}")
    return math.hypot(
        w2_density(to_density(s1.rho), to_density(s2.rho)),
        w2_density(to_density(s1.eta), to_density(s2.eta)),
    )


def product_w2_mixed(s1: SystemState, s2: SystemState) -> float:
    """Product distance for states with possibly different ``N``."""
    return math.hypot(
        w2_density(to_density(s1.rho), to_density(s2.rho)),
        w2_density(to_density(s1.eta), to_density(s2.eta)),
    )


def _points(x: ArrayLike) -> tuple[FloatArray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("evaluation points must be finite")
    return np.atleast_1d(arr).ravel(), arr.ndim == 0


def convolve_w(f: PiecewiseDensity, x: ArrayLike):
    """``(W * f)(x)`` in closed form, one cell at a time."""
    pts, scalar = _points(x)
    w, _ = _backend.kernels.direct_conv(f.breakpoints, f.heights, pts)
    return float(w[0]) if scalar else w.reshape(np.shape(x))


def convolve_w_prime(f: PiecewiseDensity, x: ArrayLike):
    """``(W' * f)(x) = ∫ W'(x - z) f(z) dz`` in closed form, one cell at a time."""
    pts, scalar = _points(x)
    wp = _backend.kernels.direct_conv_prime(f.breakpoints, f.heights, pts)
    return float(wp[0]) if scalar else wp.reshape(np.shape(x))


def convolve_fast(f: PiecewiseDensity, x: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """``(W * f, W' * f)`` at many points through the linear-time scans."""
    pts, _ = _points(x)
    order = np.argsort(pts, kind="stable")
    w_s, wp_s = _backend.kernels.exp_conv(
        f.breakpoints, np.ascontiguousarray(f.cell_masses), np.ascontiguousarray(pts[order])
    )
    w = np.empty_like(w_s)
    wp = np.empty_like(wp_s)
    w[order] = w_s
    wp[order] = wp_s
    return w, wp


def cdf(f: PiecewiseDensity, x: ArrayLike):
    """Cumulative mass of ``f`` up to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return np.interp(x, f.breakpoints, f.cdf_nodes())
