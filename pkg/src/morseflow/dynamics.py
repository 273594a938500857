"""Particle ODE: velocity evaluation, time stepping and trajectory recording.

Each particle moves with the velocity ``-(W' * rho^N)(p) + (W' * eta^N)(p)``
for species rho (and symmetrically for eta), where ``rho^N, eta^N`` are the
piecewise-constant reconstructions.  Written out, the convolution over a cell
is the cell's mass times the mean slope of ``W`` across the cell, so no
derivative of ``W`` is ever evaluated at a particle collision.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from morseflow import _backend
from morseflow.energy import energy_state
from morseflow.errors import DomainError, StateError, StiffnessError
from morseflow.kernel import cell_pair_integral
from morseflow.state import (
    FloatArray,
    SpeciesConfig,
    SystemState,
    cdf,
    convolve_w,
    lp_norm,
    second_moment,
    to_density,
)


class VelocityMode(str, enum.Enum):
    NAIVE = "difference_quotient_naive"
    FAST = "difference_quotient_fast"
    CLASSICAL = "classical_pointwise"


def _cell_mass(n: int) -> FloatArray:
    return np.full(n, 1.0 / n)


def _ensure_state(s: SystemState) -> None:
    if not isinstance(s, SystemState):
        raise StateError("expected a SystemState")


# ------------------------------------------------------------------ velocities


def _naive_arrays(x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
    k = _backend.kernels
    m = _cell_mass(x.size - 1)
    # mean_slope_sums already carries the sign of the difference quotient
    vx = k.mean_slope_sums(x, m, x) - k.mean_slope_sums(y, m, x)
    vy = k.mean_slope_sums(y, m, y) - k.mean_slope_sums(x, m, y)
    return vx, vy


def _fast_arrays(x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
    # W' * (eta - rho) at both particle sets through four linear-time scans
    return _backend.kernels.velocities(x, y)


def velocity_naive(s: SystemState) -> tuple[FloatArray, FloatArray]:
    """Difference-quotient velocities by direct O(N^2) summation over cells."""
    _ensure_state(s)
    return _naive_arrays(s.x, s.y)


def velocity_fast(s: SystemState) -> tuple[FloatArray, FloatArray]:
    """Same values as :func:`velocity_naive` in O(N) through decaying scans.

    ``exp(-|a - b|) = exp(-|a - c|) exp(-|c - b|)`` for ``a <= c <= b`` lets
    the contribution of all cells to one side of a point be carried from
    breakpoint to breakpoint by a single decay factor.
    """
    _ensure_state(s)
    return _fast_arrays(s.x, s.y)


def classical_velocity_atoms(
    x: ArrayLike, y: ArrayLike, mx: ArrayLike, my: ArrayLike
) -> tuple[FloatArray, FloatArray]:
    """Pointwise-derivative velocities for weighted atoms, with ``W'(0) = 0``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx = np.broadcast_to(np.asarray(mx, dtype=np.float64), x.shape)
    my = np.broadcast_to(np.asarray(my, dtype=np.float64), y.shape)

    def wp(u, v):
        diff = u[:, None] - v[None, :]
        return -0.5 * np.sign(diff) * np.exp(-np.abs(diff))

    # the diagonal of the self term is W'(0) = 0, which skips k = i
    vx = -(wp(x, x) @ mx) + wp(x, y) @ my
    vy = -(wp(y, y) @ my) + wp(y, x) @ mx
    return vx, vy


def classical_masses(N: int, rule: str = "equal") -> FloatArray:
    """Particle masses for the pointwise scheme.

    ``"equal"`` gives every one of the ``N + 1`` particles mass ``1/N``;
    ``"left"`` gives ``1/N`` to particles ``0..N-1`` and nothing to the last.
    """
    if rule == "equal":
        return np.full(N + 1, 1.0 / N)
    if rule == "left":
        m = np.full(N + 1, 1.0 / N)
        m[-1] = 0.0
        return m
    raise DomainError(f"unknown mass rule {rule!r}")


def velocity_classical(s: SystemState, mass_rule: str = "equal") -> tuple[FloatArray, FloatArray]:
    """Velocities of the pointwise-derivative particle scheme (comparison only)."""
    _ensure_state(s)
    m = classical_masses(s.N, mass_rule)
    return classical_velocity_atoms(s.x, s.y, m, m)


def _velocity_arrays(x, y, mode: VelocityMode):
    if mode is VelocityMode.FAST:
        return _fast_arrays(x, y)
    if mode is VelocityMode.NAIVE:
        return _naive_arrays(x, y)
    m = classical_masses(x.size - 1)
    return classical_velocity_atoms(x, y, m, m)


def velocity(s: SystemState, mode: VelocityMode | str = VelocityMode.FAST):
    return _velocity_arrays(s.x, s.y, VelocityMode(mode))


# ---------------------------------------------------------------- integration


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_end: float
    gap_floor: float = 1e-12
    max_step_halvings: int = 40
    mode: VelocityMode = VelocityMode.FAST
    sample_every: int | None = None
    lp_orders: tuple[float, ...] = (2.0, math.inf)
    record_diagnostics: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise DomainError("dt must be positive")
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise DomainError("t_end must be nonnegative")
        if not self.gap_floor > 0:
            raise DomainError("gap_floor must be positive")
        if self.max_step_halvings < 0:
            raise DomainError("max_step_halvings must be >= 0")
        object.__setattr__(self, "mode", VelocityMode(self.mode))


def _min_gap(z: FloatArray) -> tuple[float, int]:
    return _backend.kernels.min_gap(z)


def _rk4(x, y, h, mode, floor):
    # returns the proposal, or None when any stage leaves the ordered cone
    k1x, k1y = _velocity_arrays(x, y, mode)
    x2, y2 = x + 0.5 * h * k1x, y + 0.5 * h * k1y
    if _min_gap(x2)[0] < floor or _min_gap(y2)[0] < floor:
        return None
    k2x, k2y = _velocity_arrays(x2, y2, mode)
    x3, y3 = x + 0.5 * h * k2x, y + 0.5 * h * k2y
    if _min_gap(x3)[0] < floor or _min_gap(y3)[0] < floor:
        return None
    k3x, k3y = _velocity_arrays(x3, y3, mode)
    x4, y4 = x + h * k3x, y + h * k3y
    if _min_gap(x4)[0] < floor or _min_gap(y4)[0] < floor:
        return None
    k4x, k4y = _velocity_arrays(x4, y4, mode)
    xn = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    yn = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    return xn, yn


@dataclass
class StepStats:
    rejections: int = 0


def _advance(x, y, t, h, mode, floor, depth, max_depth, stats):
    prop = _rk4(x, y, h, mode, floor)
    if prop is not None:
        xn, yn = prop
        gx, ix = _min_gap(xn)
        gy, iy = _min_gap(yn)
        if gx >= floor and gy >= floor:
            return xn, yn
    else:
        gx, ix = _min_gap(x)
        gy, iy = _min_gap(y)
    stats.rejections += 1
    if depth >= max_depth:
        species, idx = ("rho", ix) if gx <= gy else ("eta", iy)
        raise StiffnessError(
            f"step halving exhausted at t={t!r}: {species} gap {idx} fell below "
            f"gap_floor={floor!r}",
            species,
            idx,
            t,
        )
    half = 0.5 * h
    x, y = _advance(x, y, t, half, mode, floor, depth + 1, max_depth, stats)
    return _advance(x, y, t + half, half, mode, floor, depth + 1, max_depth, stats)


def step(
    s: SystemState,
    dt: float,
    mode: VelocityMode | str = VelocityMode.FAST,
    gap_floor: float = 1e-12,
    max_step_halvings: int = 40,
    stats: StepStats | None = None,
) -> SystemState:
    """Advance by ``dt`` with classical RK4.

    A proposal (or RK stage) with a same-species gap below ``gap_floor`` is
    rejected and the interval is covered by two half steps instead, at most
    ``max_step_halvings`` levels deep.

    Raises
    ------
    StiffnessError
        When the halving budget is exhausted; carries the offending gap index.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise DomainError("dt must be positive")
    stats = stats if stats is not None else StepStats()
    x, y = _advance(
        s.x, s.y, s.time, dt, VelocityMode(mode), gap_floor, 0, max_step_halvings, stats
    )
    return SystemState(SpeciesConfig(x), SpeciesConfig(y), s.time + dt)


# ----------------------------------------------------------------- trajectory


@dataclass(frozen=True)
class Diagnostics:
    t: float
    lp: dict[str, float]
    energy: float
    m2_rho: float
    m2_eta: float
    min_gap_rho: float
    min_gap_eta: float
    crossings: int


@dataclass(frozen=True)
class CrossingEvent:
    """Sign change of ``y_j - x_i`` between two consecutive steps."""

    time: float
    i: int
    j: int
    direction: int  # +1: y_j moved from left of x_i to its right


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[SystemState] = field(default_factory=list)
    diagnostics: list[Diagnostics] = field(default_factory=list)
    events: list[CrossingEvent] = field(default_factory=list)
    rejections: int = 0
    steps: int = 0
    min_gap: float = math.inf  # smallest same-species gap over every accepted step

    def index_of(self, t: float) -> int:
        from morseflow.errors import SampleLookupError

        for k, tk in enumerate(self.times):
            if tk == t:
                return k
        raise SampleLookupError(f"t={t!r} is not a sample time")

    def positions(self, species: str = "rho") -> FloatArray:
        return np.array([s.x if species == "rho" else s.y for s in self.states])

    def swapped(self) -> "Trajectory":
        return Trajectory(
            list(self.times),
            [s.swapped() for s in self.states],
            [],
            [],
            self.rejections,
            self.steps,
            self.min_gap,
        )


def _lp_key(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def diagnostics(s: SystemState, crossings: int, lp_orders=(2.0, math.inf)) -> Diagnostics:
    f = to_density(s.rho)
    g = to_density(s.eta)
    lp = {}
    for p in lp_orders:
        lp[f"lp{_lp_key(p)}_rho"] = lp_norm(f, p)
        lp[f"lp{_lp_key(p)}_eta"] = lp_norm(g, p)
    return Diagnostics(
        t=s.time,
        lp=lp,
        energy=energy_state(s).total,
        m2_rho=second_moment(f),
        m2_eta=second_moment(g),
        min_gap_rho=float(np.min(s.rho.gaps)),
        min_gap_eta=float(np.min(s.eta.gaps)),
        crossings=crossings,
    )


def _adjacent_pairs(x: FloatArray, y: FloatArray) -> tuple[np.ndarray, np.ndarray]:
    # (i, j) with x_i and y_j neighbours in the merged order
    z = np.concatenate((x, y))
    tag = np.concatenate((np.zeros(x.size, dtype=np.int64), np.ones(y.size, dtype=np.int64)))
    idx = np.concatenate((np.arange(x.size), np.arange(y.size)))
    order = np.lexsort((tag, z))
    t, k = tag[order], idx[order]
    mixed = np.nonzero(t[:-1] != t[1:])[0]
    i = np.where(t[mixed] == 0, k[mixed], k[mixed + 1])
    j = np.where(t[mixed] == 1, k[mixed], k[mixed + 1])
    return i, j


def _detect(prev: SystemState, new: SystemState, pairs) -> list[CrossingEvent]:
    i, j = pairs
    if i.size == 0:
        return []
    before = prev.y[j] - prev.x[i]
    after = new.y[j] - new.x[i]
    hit = np.nonzero((np.sign(before) != np.sign(after)) & (before != 0))[0]
    out = []
    for h in hit:
        b, a = before[h], after[h]
        # linear interpolation of the zero within the step
        frac = b / (b - a) if a != b else 1.0
        t = prev.time + frac * (new.time - prev.time)
        out.append(CrossingEvent(float(t), int(i[h]), int(j[h]), 1 if a > 0 else -1))
    return out


def simulate(s0: SystemState, cfg: IntegratorConfig) -> Trajectory:
    """Integrate on ``[s0.time, s0.time + t_end]`` recording samples and events.

    The number of steps is ``ceil(t_end / dt)`` with the step shortened so
    the run ends exactly at ``t_end``.  Samples are taken every
    ``sample_every`` steps (default: about 512 samples per run) and always at
    the final time.
    """
    traj = Trajectory()
    crossings = 0

    def record(s: SystemState) -> None:
        traj.times.append(s.time)
        traj.states.append(s)
        if cfg.record_diagnostics:
            traj.diagnostics.append(diagnostics(s, crossings, cfg.lp_orders))

    record(s0)
    traj.min_gap = min(_min_gap(s0.x)[0], _min_gap(s0.y)[0])
    if cfg.t_end == 0:
        return traj
    nsteps = max(1, math.ceil(cfg.t_end / cfg.dt - 1e-9))
    h = cfg.t_end / nsteps
    every = cfg.sample_every or max(1, math.ceil(nsteps / 512))
    stats = StepStats()
    s = s0
    t0 = s0.time
    for n in range(1, nsteps + 1):
        pairs = _adjacent_pairs(s.x, s.y)
        x, y = _advance(s.x, s.y, s.time, h, cfg.mode, cfg.gap_floor, 0, cfg.max_step_halvings, stats)
        # pin the clock to the grid so sample times do not drift
        new = SystemState(
            SpeciesConfig(x), SpeciesConfig(y), t0 + n * h if n < nsteps else t0 + cfg.t_end
        )
        ev = _detect(s, new, pairs)
        traj.events.extend(ev)
        crossings += len(ev)
        traj.min_gap = min(traj.min_gap, _min_gap(new.x)[0], _min_gap(new.y)[0])
        s = new
        if n % every == 0 or n == nsteps:
            record(s)
    traj.rejections = stats.rejections
    traj.steps = nsteps
    return traj


# ------------------------------------------------------------ consistency


def _interval_potential(lo: FloatArray, hi: FloatArray, s: SystemState, sign_rho: float) -> FloatArray:
    # ∫_{lo}^{hi} W * (sign_rho * (rho - eta))
    out = np.zeros(lo.size)
    for f, sgn in ((to_density(s.rho), sign_rho), (to_density(s.eta), -sign_rho)):
        K = cell_pair_integral(
            lo[:, None], hi[:, None], f.breakpoints[None, :-1], f.breakpoints[None, 1:]
        )
        out += sgn * (K @ f.heights)
    return out


def spacing_derivative_check(s: SystemState) -> float:
    """Max discrepancy between two evaluations of the gap growth rates.

    (a) differences of consecutive particle velocities; (b) the integral over
    each gap of ``-W'' * rho + W'' * eta`` rewritten with ``W'' = W - delta``
    as ``(own mass - other mass in the gap) - ∫ W * (own - other)``.
    """
    _ensure_state(s)
    vx, vy = velocity_naive(s)
    worst = 0.0
    for pos, vel, own, other, sign in (
        (s.x, vx, s.rho, s.eta, 1.0),
        (s.y, vy, s.eta, s.rho, -1.0),
    ):
        lo, hi = pos[:-1], pos[1:]
        N = own.N
        other_mass = cdf(to_density(other), hi) - cdf(to_density(other), lo)
        rate = (1.0 / N - other_mass) - _interval_potential(lo, hi, s, sign)
        worst = max(worst, float(np.max(np.abs(np.diff(vel) - rate))))
    return worst


def potential_difference(s: SystemState, pts: ArrayLike) -> FloatArray:
    """``W * (rho^N - eta^N)`` at the given points (closed form per cell)."""
    return convolve_w(to_density(s.rho), pts) - convolve_w(to_density(s.eta), pts)


# ----------------------------------------------------------------- export


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "index", "species", "position"])
        for s in traj.states:
            for name, pos in (("rho", s.x), ("eta", s.y)):
                for i, p in enumerate(pos):
                    w.writerow([repr(s.time), i, name, repr(float(p))])


DIAG_COLUMNS = (
    "t",
    "lp2_rho",
    "lp2_eta",
    "lpinf_rho",
    "lpinf_eta",
    "energy",
    "m2_rho",
    "m2_eta",
    "min_gap_rho",
    "min_gap_eta",
    "crossings",
)


def write_diagnostics_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAG_COLUMNS)
        for d in traj.diagnostics:
            row = {
                "t": d.t,
                "energy": d.energy,
                "m2_rho": d.m2_rho,
                "m2_eta": d.m2_eta,
                "min_gap_rho": d.min_gap_rho,
                "min_gap_eta": d.min_gap_eta,
                **d.lp,
            }
            w.writerow(
                [repr(float(row.get(c, math.nan))) for c in DIAG_COLUMNS[:-1]] + [d.crossings]
            )


def write_events_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "i", "j", "direction"])
        for e in traj.events:
            w.writerow([repr(e.time), e.i, e.j, e.direction])
