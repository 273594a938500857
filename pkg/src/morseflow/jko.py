"""Minimizing-movement reference solver on the equal-mass Lagrangian manifold.

Each step minimizes ``F(z) = W2^2(prev, z) / (2 tau) + E(z)`` over the marker
positions of both species.  With equal gap masses the squared distance to the
previous iterate is the quadratic form ``dz^T M dz`` of the piecewise-linear
quantile mass matrix, so the transport term is smooth and its metric ``M`` is
also the natural preconditioner for the descent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike

from morseflow.dynamics import IntegratorConfig, simulate
from morseflow.energy import energy_atoms, energy_gradient, energy_state, subdifferential_atoms
from morseflow.errors import DomainError, OptimizationError
from morseflow.state import FloatArray, SpeciesConfig, SystemState, product_w2


@dataclass(frozen=True)
class JkoConfig:
    tau: float
    n_steps: int
    inner_tol: float = 1e-10
    inner_max_iters: int = 100_000
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    gap_floor: float = 1e-12

    def __post_init__(self) -> None:
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise DomainError("tau must be positive")
        if self.n_steps < 0:
            raise DomainError("n_steps must be >= 0")
        if not (0 < self.shrink < 1):
            raise DomainError("shrink must lie in (0, 1)")
        if not (0 < self.armijo < 1):
            raise DomainError("armijo constant must lie in (0, 1)")
        if not (self.inner_tol > 0 and self.inner_max_iters >= 1 and self.initial_step > 0):
            raise DomainError("invalid inner solver parameters")


@dataclass
class InnerReport:
    iterations: int
    grad_norm: float
    converged: bool


@dataclass
class JkoResult:
    tau: float
    iterates: list[SystemState] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    transport_costs: list[float] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    @property
    def final(self) -> SystemState:
        return self.iterates[-1]


# -------------------------------------------------------------------- metric


def mass_matrix(N: int) -> FloatArray:
    """``W2^2`` between equal-gap-mass configurations is ``d^T M d``."""
    M = np.zeros((N + 1, N + 1))
    i = np.arange(N)
    M[i, i] += 1.0 / (3 * N)
    M[i + 1, i + 1] += 1.0 / (3 * N)
    M[i, i + 1] = M[i + 1, i] = 1.0 / (6 * N)
    return M


# ------------------------------------------------------------- inner solver


def _minimize(
    z0: FloatArray,
    fun: Callable[[FloatArray], float],
    grad: Callable[[FloatArray], FloatArray],
    precond: Callable[[FloatArray], FloatArray],
    feasible: Callable[[FloatArray], FloatArray | None],
    cfg: JkoConfig,
    scale: float,
) -> tuple[FloatArray, InnerReport]:
    """Preconditioned gradient descent with Armijo backtracking.

    Trial points are ``z - alpha * scale * precond(g)`` with ``alpha`` starting
    at ``cfg.initial_step`` on every iteration.  ``feasible`` maps a trial
    point to its canonical (sorted) form or None.  Once the predicted decrease
    drops below what ``F`` can resolve in floating point, a trial is accepted
    when it lowers the gradient norm instead.
    """
    eps = np.finfo(float).eps
    z = z0.copy()
    f = fun(z)
    g = grad(z)
    successes = 0
    it = 0
    while True:
        d = precond(g)
        gnorm2 = max(float(g @ d), 0.0)
        gnorm = math.sqrt(gnorm2)
        if gnorm <= cfg.inner_tol:
            return z, InnerReport(it, gnorm, True)
        if it >= cfg.inner_max_iters:
            break
        it += 1
        resolution = 64.0 * eps * max(abs(f), 1.0)
        alpha = cfg.initial_step
        accepted = False
        while alpha > 1e-12:
            trial = feasible(z - (alpha * scale) * d)
            if trial is not None:
                ft = fun(trial)
                predicted = alpha * scale * gnorm2
                if predicted > resolution:
                    if ft <= f - cfg.armijo * predicted:
                        gt = grad(trial)
                        accepted = True
                        break
                elif ft <= f + resolution:
                    gt = grad(trial)
                    if float(gt @ precond(gt)) < gnorm2:
                        accepted = True
                        break
            alpha *= cfg.shrink
        if not accepted:
            if successes == 0:
                raise OptimizationError(
                    f"no sufficient decrease from the starting point (gradient norm {gnorm!r})"
                )
            # stalled at the floating-point resolution of F
            return z, InnerReport(it, gnorm, False)
        successes += 1
        z, f, g = trial, ft, gt
    if successes == 0:
        raise OptimizationError("inner_max_iters reached without a sufficient decrease")
    return z, InnerReport(it, gnorm, False)


def _split(z: FloatArray, n: int) -> tuple[FloatArray, FloatArray]:
    return z[:n], z[n:]


def _sorted_or_none(z: FloatArray, n: int, floor: float) -> FloatArray | None:
    if not np.all(np.isfinite(z)):
        return None
    x, y = np.sort(z[:n]), np.sort(z[n:])
    if np.min(np.diff(x)) < floor or np.min(np.diff(y)) < floor:
        return None
    return np.concatenate((x, y))


def transport_cost(a: SystemState, b: SystemState) -> float:
    """Squared product distance between two equal-N states."""
    return product_w2(a, b) ** 2


def jko_step_report(prev: SystemState, cfg: JkoConfig) -> tuple[SystemState, InnerReport]:
    n = prev.N + 1
    M = mass_matrix(prev.N)
    Minv = np.linalg.inv(M)
    z_prev = np.concatenate((prev.x, prev.y))
    tau = cfg.tau

    def state(z: FloatArray) -> SystemState:
        x, y = _split(z, n)
        return SystemState.from_positions(x, y, prev.time + tau)

    def fun(z: FloatArray) -> float:
        dx, dy = _split(z - z_prev, n)
        w = float(dx @ M @ dx + dy @ M @ dy)
        return w / (2 * tau) + energy_state(state(z)).total

    def grad(z: FloatArray) -> FloatArray:
        dx, dy = _split(z - z_prev, n)
        gx, gy = energy_gradient(state(z))
        return np.concatenate((M @ dx / tau + gx, M @ dy / tau + gy))

    def precond(g: FloatArray) -> FloatArray:
        gx, gy = _split(g, n)
        return np.concatenate((Minv @ gx, Minv @ gy))

    z, rep = _minimize(
        z_prev, fun, grad, precond, lambda t: _sorted_or_none(t, n, cfg.gap_floor), cfg, tau
    )
    return state(z), rep


def jko_step(prev: SystemState, cfg: JkoConfig) -> SystemState:
    """One minimizing-movement step from ``prev`` (time advances by ``tau``).

    Raises
    ------
    OptimizationError
        If no trial point ever achieves sufficient decrease.
    """
    return jko_step_report(prev, cfg)[0]


def jko_step_atoms(
    x: ArrayLike, y: ArrayLike, cfg: JkoConfig, mass: float = 1.0
) -> tuple[FloatArray, FloatArray, InnerReport]:
    """Minimizing movement for two atomic measures with equal atom masses.

    Uses the atomic energy and the atom-pairing transport cost
    ``mass * sum (z - z_prev)^2``; intended for illustrations with a handful
    of atoms, where the gap-mass reconstruction is degenerate.
    """
    x0 = np.sort(np.asarray(x, dtype=np.float64).ravel())
    y0 = np.sort(np.asarray(y, dtype=np.float64).ravel())
    n = x0.size
    z_prev = np.concatenate((x0, y0))
    tau = cfg.tau

    def fun(z):
        return mass * float((z - z_prev) @ (z - z_prev)) / (2 * tau) + energy_atoms(
            z[:n], z[n:], mass
        ).total

    def grad(z):
        gx, gy = subdifferential_atoms(z[:n], z[n:], mass)
        return mass * (z - z_prev) / tau + mass * np.concatenate((gx, gy))

    def feasible(z):
        if not np.all(np.isfinite(z)):
            return None
        x1, y1 = np.sort(z[:n]), np.sort(z[n:])
        for w in (x1, y1):
            if w.size > 1 and np.min(np.diff(w)) < cfg.gap_floor:
                return None
        return np.concatenate((x1, y1))

    z, rep = _minimize(z_prev, fun, grad, lambda g: g / mass, feasible, cfg, tau)
    return z[:n], z[n:], rep


def jko_flow(s0: SystemState, cfg: JkoConfig) -> JkoResult:
    """``n_steps`` minimizing movements from ``s0``."""
    res = JkoResult(cfg.tau, [s0], [energy_state(s0).total], [], [], [])
    s = s0
    for _ in range(cfg.n_steps):
        new, rep = jko_step_report(s, cfg)
        res.transport_costs.append(transport_cost(s, new))
        res.energies.append(energy_state(new).total)
        res.inner_iterations.append(rep.iterations)
        res.converged.append(rep.converged)
        res.iterates.append(new)
        s = new
    return res


@dataclass(frozen=True)
class OdeComparisonRow:
    tau: float
    n_steps: int
    distance: float


def compare_to_ode(
    s0: SystemState,
    t_end: float,
    tau_list: list[float],
    integrator: IntegratorConfig,
    jko_cfg: JkoConfig | None = None,
) -> list[OdeComparisonRow]:
    """Product ``W2`` distance between the JKO iterate and the ODE state at ``t_end``.

    ``jko_cfg`` supplies the inner-solver settings; its ``tau`` and
    ``n_steps`` are replaced per row.
    """
    base = jko_cfg or JkoConfig(tau=1.0, n_steps=0)
    ode_cfg = IntegratorConfig(
        dt=integrator.dt,
        t_end=t_end,
        gap_floor=integrator.gap_floor,
        max_step_halvings=integrator.max_step_halvings,
        mode=integrator.mode,
        sample_every=integrator.sample_every,
        lp_orders=integrator.lp_orders,
    )
    ode_final = simulate(s0, ode_cfg).states[-1]
    rows = []
    for tau in tau_list:
        n = round(t_end / tau)
        if abs(n * tau - t_end) > 1e-9 * max(t_end, 1.0):
            raise DomainError(f"tau={tau!r} does not divide t_end={t_end!r}")
        cfg = JkoConfig(
            tau=tau,
            n_steps=n,
            inner_tol=base.inner_tol,
            inner_max_iters=base.inner_max_iters,
            initial_step=base.initial_step,
            shrink=base.shrink,
            armijo=base.armijo,
            gap_floor=base.gap_floor,
        )
        res = jko_flow(s0, cfg)
        rows.append(OdeComparisonRow(tau, n, product_w2(res.final, ode_final)))
    return rows


def write_jko_csv(res: JkoResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time", "energy", "transport_cost", "inner_iterations"])
        for k, e in enumerate(res.energies):
            tc = res.transport_costs[k - 1] if k > 0 else 0.0
            it = res.inner_iterations[k - 1] if k > 0 else 0
            w.writerow([k, repr(k * res.tau), repr(e), repr(tc), it])
