"""Experiments on trajectories: weak-form consistency, norm growth, convergence, stability."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Mapping

import numpy as np

from morseflow.dynamics import IntegratorConfig, Trajectory, simulate
from morseflow.errors import DegenerateInputError, DimensionError, DomainError, SampleLookupError
from morseflow.state import (
    FloatArray,
    InitialDensity,
    PiecewiseDensity,
    SystemState,
    atomize,
    convolve_fast,
    lp_norm,
    product_w2,
    product_w2_mixed,
    second_moment,
    to_density,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_erf = np.vectorize(math.erf, otypes=[np.float64])


# ----------------------------------------------------------- test functions


@dataclass(frozen=True)
class TestFunction:
    """A C^1 test function with closed-form derivative and sup of ``|phi'|``.

    ``gaussian_bump``: ``exp(-((x - center) / width)^2)``.
    ``sine``: ``sin(frequency * x)`` on ``|x| <= cutoff``, continued by the
    constant end values; the cutoff is snapped to the nearest radius where
    ``cos`` vanishes so the continuation is C^1.
    ``cubic_spline_bump``: the cubic B-spline ``B((x - center) / width)``
    supported on ``[-2, 2]``.
    """

    __test__ = False  # not a pytest class

    kind: Literal["gaussian_bump", "sine", "cubic_spline_bump"]
    center: float = 0.0
    width: float = 1.0
    frequency: float = 1.0
    cutoff: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian_bump", "sine", "cubic_spline_bump"):
            raise DomainError(f"unknown test function kind {self.kind!r}")
        if not (self.width > 0 and self.frequency > 0 and self.cutoff > 0):
            raise DomainError("width, frequency and cutoff must be positive")
        if self.kind == "sine":
            n = max(0, round(self.cutoff * self.frequency / math.pi - 0.5))
            object.__setattr__(self, "cutoff", (n + 0.5) * math.pi / self.frequency)

    @classmethod
    def gaussian_bump(cls, center: float, width: float) -> "TestFunction":
        return cls("gaussian_bump", center=center, width=width)

    @classmethod
    def sine(cls, frequency: float, cutoff: float) -> "TestFunction":
        return cls("sine", frequency=frequency, cutoff=cutoff)

    @classmethod
    def cubic_spline_bump(cls, center: float, width: float) -> "TestFunction":
        return cls("cubic_spline_bump", center=center, width=width)

    @property
    def dphi_sup(self) -> float:
        if self.kind == "gaussian_bump":
            return math.sqrt(2.0) * math.exp(-0.5) / self.width
        if self.kind == "sine":
            return self.frequency
        return 2.0 / (3.0 * self.width)

    def __call__(self, x) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gaussian_bump":
            return np.exp(-(((x - self.center) / self.width) ** 2))
        if self.kind == "sine":
            k, R = self.frequency, self.cutoff
            return np.sin(k * np.clip(x, -R, R))
        u = np.abs((x - self.center) / self.width)
        inner = 2.0 / 3.0 - u**2 + 0.5 * u**3
        outer = (2.0 - np.minimum(u, 2.0)) ** 3 / 6.0
        return np.where(u <= 1.0, inner, outer)

    def derivative(self, x) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gaussian_bump":
            z = (x - self.center) / self.width
            return -2.0 * z / self.width * np.exp(-z * z)
        if self.kind == "sine":
            k, R = self.frequency, self.cutoff
            return np.where(np.abs(x) <= R, k * np.cos(k * x), 0.0)
        z = (x - self.center) / self.width
        u = np.abs(z)
        inner = -2.0 * u + 1.5 * u**2
        outer = -0.5 * (2.0 - np.minimum(u, 2.0)) ** 2
        return np.sign(z) * np.where(u <= 1.0, inner, outer) / self.width

    def integral(self, a, b) -> FloatArray:
        """Exact ``∫_a^b phi`` (elementwise)."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if self.kind == "gaussian_bump":
            c, w = self.center, self.width
            return 0.5 * w * math.sqrt(math.pi) * (_erf((b - c) / w) - _erf((a - c) / w))
        if self.kind == "sine":
            return self._sine_primitive(b) - self._sine_primitive(a)
        # piecewise cubic: split at the knots, two Gauss points are exact
        knots = self.center + self.width * np.arange(-2.0, 3.0)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        edges = np.sort(
            np.concatenate(
                (lo[..., None], np.clip(np.broadcast_to(knots, lo.shape + (5,)), lo[..., None], hi[..., None]), hi[..., None]),
                axis=-1,
            ),
            axis=-1,
        )
        g = 1.0 / math.sqrt(3.0)
        left, right = edges[..., :-1], edges[..., 1:]
        mid, half = 0.5 * (left + right), 0.5 * (right - left)
        total = (half * (self(mid - g * half) + self(mid + g * half))).sum(axis=-1)
        return np.where(b >= a, total, -total)

    def _sine_primitive(self, x: FloatArray) -> FloatArray:
        k, R = self.frequency, self.cutoff
        s = math.sin(k * R)
        inside = -np.cos(k * np.clip(x, -R, R)) / k
        # cos(kR) = 0, so the inner primitive vanishes at both cutoffs
        return inside + s * np.maximum(x - R, 0.0) + s * np.maximum(-R - x, 0.0)


# -------------------------------------------------------- weak-form residual


def _pairing(f: PiecewiseDensity, phi: TestFunction) -> float:
    """``∫ phi f`` for a piecewise-constant ``f``."""
    a, b = f.breakpoints[:-1], f.breakpoints[1:]
    return float(np.sum(f.heights * phi.integral(a, b)))


def _flux_term(s: SystemState, phi: TestFunction) -> float:
    """``∫ rho^N phi' (W' * (rho^N - eta^N))`` with Gauss-Legendre per merged cell."""
    f, g = to_density(s.rho), to_density(s.eta)
    inner = s.y[(s.y > s.x[0]) & (s.y < s.x[-1])]
    edges = np.unique(np.concatenate((s.x, inner)))
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    pts = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    _, wpf = convolve_fast(f, pts)
    _, wpg = convolve_fast(g, pts)
    vals = (f(pts) * phi.derivative(pts) * (wpf - wpg)).reshape(lo.size, -1)
    return float(np.sum(half * (vals @ _GL_WEIGHTS)))


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    bound: float  # 2 |phi'|_inf / N
    time_derivative: float
    flux: float


def weak_form_report(
    traj: Trajectory, phi: TestFunction, t: float, species: Literal["rho", "eta"] = "rho"
) -> ResidualReport:
    if species not in ("rho", "eta"):
        raise DomainError(f"unknown species {species!r}")
    if species == "eta":
        traj = traj.swapped()
    k = traj.index_of(t)
    n = len(traj.times)
    if n < 2:
        raise SampleLookupError("need at least two samples for a time derivative")
    lo, hi = (k - 1, k + 1) if 0 < k < n - 1 else ((k, k + 1) if k == 0 else (k - 1, k))
    A_lo = _pairing(to_density(traj.states[lo].rho), phi)
    A_hi = _pairing(to_density(traj.states[hi].rho), phi)
    dA = (A_hi - A_lo) / (traj.times[hi] - traj.times[lo])
    flux = _flux_term(traj.states[k], phi)
    return ResidualReport(abs(dA + flux), 2.0 * phi.dphi_sup / traj.states[k].N, dA, flux)


def weak_form_residual(
    traj: Trajectory, phi: TestFunction, t: float, species: Literal["rho", "eta"] = "rho"
) -> float:
    """``|d/dt ∫ phi rho^N + ∫ rho^N phi' W' * (rho^N - eta^N)|`` at sample time ``t``.

    The time derivative is a centred difference over the neighbouring samples
    (one-sided at the ends of the record).  ``species="eta"`` evaluates the
    companion identity through the species-swapped trajectory.

    Raises
    ------
    SampleLookupError
        If ``t`` is not a sample time of ``traj``.
    """
    return weak_form_report(traj, phi, t, species).residual


@dataclass(frozen=True)
class ConsistencySplit:
    N: int
    dt: float
    residual_dt: float
    residual_half_dt: float
    n_part: float  # Richardson-extrapolated residual at dt -> 0
    c_int: float
    bound: float


def weak_form_split(
    s0: SystemState,
    phi: TestFunction,
    t: float,
    dt: float,
    mode="difference_quotient_fast",
) -> ConsistencySplit:
    """Separate the O(1/N) consistency part of the residual from the O(dt^2) part.

    Runs to ``t`` with steps ``dt`` and ``dt / 2``; the centred difference has
    an ``O(dt^2)`` error, so ``r(dt) = r_N + C dt^2`` is solved for ``r_N``
    and ``C``.
    """
    res = []
    for h in (dt, 0.5 * dt):
        n = round(t / h)
        if abs(n * h - t) > 1e-9 * max(t, 1.0):
            raise DomainError("dt must divide t")
        traj = simulate(
            s0,
            IntegratorConfig(dt=h, t_end=t + h, mode=mode, sample_every=1, record_diagnostics=False),
        )
        res.append(weak_form_residual(traj, phi, traj.times[n]))
    r1, r2 = res
    c = (r1 - r2) / (0.75 * dt * dt)
    return ConsistencySplit(
        s0.N, dt, r1, r2, (4.0 * r2 - r1) / 3.0, c, 2.0 * phi.dphi_sup / s0.N
    )


# -------------------------------------------------------------- norm growth


def lp_growth_check(traj: Trajectory, p: float) -> float:
    """Worst ``(|rho(t)|_p + |eta(t)|_p) / (e^t (|rho(0)|_p + |eta(0)|_p))`` over samples."""
    if not p > 1:
        raise DomainError("p must exceed 1")
    t0 = traj.times[0]
    s = traj.states[0]
    base = lp_norm(to_density(s.rho), p) + lp_norm(to_density(s.eta), p)
    worst = 0.0
    for t, s in zip(traj.times, traj.states):
        cur = lp_norm(to_density(s.rho), p) + lp_norm(to_density(s.eta), p)
        worst = max(worst, cur / (math.exp(t - t0) * base))
    return worst


def _total_m2(s: SystemState) -> float:
    return second_moment(to_density(s.rho)) + second_moment(to_density(s.eta))


def moment_growth(traj: Trajectory) -> float:
    """Least-squares slope of ``log(m2(t) / m2(0))`` against t (line with intercept)."""
    if len(traj.times) < 3:
        raise DomainError("need at least three samples")
    m0 = _total_m2(traj.states[0])
    if not m0 > 0:
        raise DegenerateInputError("initial second moment is zero")
    t = np.asarray(traj.times) - traj.times[0]
    y = np.log(np.array([_total_m2(s) for s in traj.states]) / m0)
    return float(np.polyfit(t, y, 1)[0])


def moment_bound_holds(traj: Trajectory, C: float) -> bool:
    """``m2(t) <= exp(C' t) m2(0)`` at every sample with ``C' = max(C, 0) + 1e-6``."""
    c = max(C, 0.0) + 1e-6
    m0 = _total_m2(traj.states[0])
    t0 = traj.times[0]
    return all(_total_m2(s) <= math.exp(c * (t - t0)) * m0 for t, s in zip(traj.times, traj.states))


def minimal_moment_rate(traj: Trajectory) -> float:
    """Smallest ``C >= 0`` with ``m2(t) <= exp(C t) m2(0)`` at all samples."""
    m0 = _total_m2(traj.states[0])
    t0 = traj.times[0]
    rates = [
        math.log(_total_m2(s) / m0) / (t - t0) for t, s in zip(traj.times, traj.states) if t > t0
    ]
    return max([0.0, *rates])


# -------------------------------------------------------------- convergence


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    distance: float


def _final_state(s0: SystemState, t_end: float, integrator: IntegratorConfig) -> SystemState:
    if t_end == 0:
        return s0
    cfg = IntegratorConfig(
        dt=integrator.dt,
        t_end=t_end,
        gap_floor=integrator.gap_floor,
        max_step_halvings=integrator.max_step_halvings,
        mode=integrator.mode,
        record_diagnostics=False,
    )
    return simulate(s0, cfg).states[-1]


def convergence_study(
    rho0: InitialDensity,
    eta0: InitialDensity,
    N_list: Iterable[int],
    t_end: float,
    integrator: IntegratorConfig,
) -> list[ConvergenceRow]:
    """Product ``W2`` between the N-particle and 2N-particle states at ``t_end``."""
    Ns = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise DomainError("N_list must be increasing")
    cache: dict[int, SystemState] = {}

    def run(N: int) -> SystemState:
        if N not in cache:
            s0 = SystemState(atomize(rho0, N), atomize(eta0, N))
            cache[N] = _final_state(s0, t_end, integrator)
        return cache[N]

    return [ConvergenceRow(N, product_w2_mixed(run(N), run(2 * N))) for N in Ns]


# ---------------------------------------------------------------- stability


@dataclass(frozen=True)
class StabilityReport:
    worst_ratio: float
    times: tuple[float, ...]
    ratios: tuple[float, ...]


def stability_report(
    s0a: SystemState, s0b: SystemState, t_end: float, integrator: IntegratorConfig
) -> StabilityReport:
    if s0a.N != s0b.N:
        raise DimensionError("states must have the same N")
    d0 = product_w2(s0a, s0b)
    if d0 == 0:
        raise DegenerateInputError("initial distance is zero; the ratio is undefined")
    cfg = IntegratorConfig(
        dt=integrator.dt,
        t_end=t_end,
        gap_floor=integrator.gap_floor,
        max_step_halvings=integrator.max_step_halvings,
        mode=integrator.mode,
        sample_every=integrator.sample_every,
        record_diagnostics=False,
    )
    ta = simulate(s0a, cfg)
    tb = simulate(s0b, cfg)
    t0 = s0a.time
    ratios = tuple(
        product_w2(a, b) / (math.exp(0.5 * (t - t0)) * d0)
        for t, a, b in zip(ta.times, ta.states, tb.states)
    )
    return StabilityReport(max(ratios), tuple(ta.times), ratios)


def stability_experiment(
    s0a: SystemState, s0b: SystemState, t_end: float, integrator: IntegratorConfig
) -> float:
    """Worst ``W2(a(t), b(t)) / (e^{t/2} W2(a(0), b(0)))`` over the samples.

    A particle-level analogue of the continuum contraction estimate; the
    continuum bound is not proved for the particle flow.

    Raises
    ------
    DegenerateInputError
        If the two initial states coincide.
    """
    return stability_report(s0a, s0b, t_end, integrator).worst_ratio


def perturbed(s: SystemState, amplitude: float, rng: np.random.Generator) -> SystemState:
    """Independent uniform perturbation of every position, re-sorted per species."""
    x = np.sort(s.x + rng.uniform(-amplitude, amplitude, s.x.size))
    y = np.sort(s.y + rng.uniform(-amplitude, amplitude, s.y.size))
    return SystemState.from_positions(x, y, s.time)


# ------------------------------------------------------------------ export


def write_table(
    path: str | Path,
    operation: str,
    params: Mapping[str, object],
    header: Iterable[str],
    rows: Iterable[Iterable[object]],
) -> None:
    """CSV with a leading ``# operation ...`` line naming the parameters."""
    desc = " ".join(f"{k}={v}" for k, v in params.items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# {operation} {desc}".rstrip() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_summary(path: str | Path, items: Mapping[str, object]) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            if isinstance(v, bool):
                v = "pass" if v else "fail"
            elif isinstance(v, (float, np.floating)):
                v = repr(float(v))
            fh.write(f"{k}={v}\n")
