"""Command-line experiments.

Configuration is an INI file whose sections group the keys; a key is named
by its dotted path, e.g. ``integrator.dt``::

    [run]
    N = 16

    [rho]
    kind = uniform
    a = -1
    b = 0.5

    [eta]
    kind = tent
    center = 0.5
    half_width = 1

    [integrator]
    dt = 1e-3
    t_end = 1

Physics-relevant keys have no defaults; unknown sections or keys are errors.
"""

from __future__ import annotations

import argparse
import configparser
import difflib
import hashlib
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from morseflow import __version__, _backend
from morseflow.errors import ConfigError, MorseflowError, OptimizationError, StiffnessError
from morseflow.state import (
    InitialDensity,
    PiecewiseConstant,
    SystemState,
    Uniform,
    atomize,
    read_cdf_table,
    tent,
)

EXPERIMENTS = ("simulate", "jko", "converge", "stability", "collision-demo", "kernel-selftest")

EXIT_OK, EXIT_CONTRACT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_DENSITY_KEYS = {"kind", "a", "b", "center", "half_width", "path", "breakpoints", "heights"}
SCHEMA: dict[str, set[str]] = {
    "run": {"N", "N_list", "seed"},
    "rho": _DENSITY_KEYS,
    "eta": _DENSITY_KEYS,
    "integrator": {"dt", "t_end", "gap_floor", "max_step_halvings", "mode", "sample_every"},
    "jko": {"tau", "n_steps", "inner_tol", "inner_max_iters", "tau_list"},
    "analysis": {"perturbation", "n_perturbations", "bump_center", "bump_width", "lp_slack"},
}


@dataclass
class RunConfig:
    experiment: str
    values: dict[str, str] = field(default_factory=dict)
    base_dir: Path = Path(".")
    out_dir: Path = Path("out")
    seed: int = 0
    text: str = ""

    # typed accessors; every failure names the dotted key

    def has(self, key: str) -> bool:
        return key in self.values

    def get_float(self, key: str, default: float | None = None, positive: bool = False,
                  nonneg: bool = False) -> float:
        raw = self._raw(key, default)
        try:
            v = float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {raw!r}", key) from None
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite", key)
        if positive and not v > 0:
            raise ConfigError(f"{key}: must be positive, got {raw}", key)
        if nonneg and v < 0:
            raise ConfigError(f"{key}: must be nonnegative, got {raw}", key)
        return v

    def get_int(self, key: str, default: int | None = None, minimum: int | None = None) -> int:
        raw = self._raw(key, default)
        try:
            v = int(str(raw))
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}", key) from None
        if minimum is not None and v < minimum:
            raise ConfigError(f"{key}: must be >= {minimum}, got {v}", key)
        return v

    def get_floats(self, key: str) -> list[float]:
        raw = self._raw(key, None)
        try:
            return [float(t) for t in str(raw).replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{key}: expected a list of numbers, got {raw!r}", key) from None

    def get_str(self, key: str, default: str | None = None) -> str:
        return str(self._raw(key, default))

    def _raw(self, key: str, default):
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"{key}: required key is missing", key)
        return default


def _suggest(name: str, options) -> str:
    near = difflib.get_close_matches(name, sorted(options), n=1)
    return f" (did you mean {near[0]!r}?)" if near else ""


def parse_config(path: str | Path | None, experiment: str) -> RunConfig:
    """Read and validate an INI config against the strict schema.

    Raises
    ------
    ConfigError
        Unknown sections or keys (with a suggestion), unreadable files, or
        invalid values; the error names the dotted key path.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}{_suggest(experiment, EXPERIMENTS)}")
    if path is None:
        return RunConfig(experiment)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (N vs n)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict[str, str] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"unknown section {section!r}{_suggest(section, SCHEMA)}", section
            )
        for key, val in parser.items(section):
            dotted = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {dotted!r}{_suggest(key, SCHEMA[section])}", dotted
                )
            values[dotted] = val
    cfg = RunConfig(experiment, values, path.parent, text=text)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    # eager checks of whatever is present; requirements per experiment are
    # enforced when the experiment reads its keys
    for key in ("integrator.dt", "jko.tau", "analysis.perturbation", "analysis.bump_width"):
        if cfg.has(key):
            cfg.get_float(key, positive=True)
    if cfg.has("integrator.t_end"):
        cfg.get_float("integrator.t_end", nonneg=True)
    if cfg.has("run.N"):
        cfg.get_int("run.N", minimum=1)
    if cfg.has("run.seed"):
        cfg.get_int("run.seed", minimum=0)
    if cfg.has("integrator.mode"):
        from morseflow.dynamics import VelocityMode

        mode = cfg.get_str("integrator.mode")
        names = [m.value for m in VelocityMode]
        if mode not in names:
            raise ConfigError(
                f"integrator.mode: unknown mode {mode!r}{_suggest(mode, names)}", "integrator.mode"
            )
    for sp in ("rho", "eta"):
        if cfg.has(f"{sp}.kind"):
            _density(cfg, sp)
    if cfg.has("jko.tau_list"):
        taus = cfg.get_floats("jko.tau_list")
        if not taus or any(not (math.isfinite(t) and t > 0) for t in taus):
            raise ConfigError("jko.tau_list: expected positive step sizes", "jko.tau_list")
        if cfg.has("integrator.t_end"):
            t_end = cfg.get_float("integrator.t_end")
            for tau in taus:
                if abs(round(t_end / tau) * tau - t_end) > 1e-9 * max(t_end, 1.0):
                    raise ConfigError(
                        f"jko.tau_list: {tau} does not divide integrator.t_end = {t_end}",
                        "jko.tau_list",
                    )


def _density(cfg: RunConfig, sp: str) -> InitialDensity:
    kind = cfg.get_str(f"{sp}.kind")
    try:
        if kind == "uniform":
            return Uniform(cfg.get_float(f"{sp}.a"), cfg.get_float(f"{sp}.b"))
        if kind == "tent":
            return tent(cfg.get_float(f"{sp}.center"), cfg.get_float(f"{sp}.half_width", positive=True))
        if kind == "cdf_file":
            p = Path(cfg.get_str(f"{sp}.path"))
            p = p if p.is_absolute() else cfg.base_dir / p
            if not p.exists():
                raise ConfigError(f"{sp}.path: file {p} does not exist", f"{sp}.path")
            return read_cdf_table(p)
        if kind == "piecewise":
            return PiecewiseConstant(
                np.array(cfg.get_floats(f"{sp}.breakpoints")), np.array(cfg.get_floats(f"{sp}.heights"))
            )
    except ConfigError:
        raise
    except MorseflowError as exc:
        raise ConfigError(f"{sp}: {exc}", f"{sp}.kind") from None
    kinds = ("uniform", "tent", "cdf_file", "piecewise")
    raise ConfigError(f"{sp}.kind: unknown kind {kind!r}{_suggest(kind, kinds)}", f"{sp}.kind")


def _integrator(cfg: RunConfig, dt=None, t_end=None, sample_every=None):
    from morseflow.dynamics import IntegratorConfig

    se = cfg.get_int("integrator.sample_every", 0, minimum=0) if cfg.has("integrator.sample_every") else sample_every
    return IntegratorConfig(
        dt=cfg.get_float("integrator.dt", dt, positive=True),
        t_end=cfg.get_float("integrator.t_end", t_end, nonneg=True),
        gap_floor=cfg.get_float("integrator.gap_floor", 1e-12, positive=True),
        max_step_halvings=cfg.get_int("integrator.max_step_halvings", 40, minimum=0),
        mode=cfg.get_str("integrator.mode", "difference_quotient_fast"),
        sample_every=se or None,
    )


def _initial_state(cfg: RunConfig, N: int | None = None) -> SystemState:
    N = N if N is not None else cfg.get_int("run.N", minimum=1)
    return SystemState(atomize(_density(cfg, "rho"), N), atomize(_density(cfg, "eta"), N))


# ----------------------------------------------------------------- outputs


class Outputs:
    """Collects written files and contract outcomes for the manifest and summary."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg
        self.dir = cfg.out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.summary: dict[str, object] = {"experiment": cfg.experiment}
        self.contracts: dict[str, bool] = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def contract(self, name: str, ok: bool) -> None:
        self.contracts[name] = bool(ok)

    def finish(self, partial: bool = False, error: str | None = None) -> None:
        from morseflow.analysis import write_summary

        items = dict(self.summary)
        for k, v in self.contracts.items():
            items[f"contract.{k}"] = v
        items["status"] = "error" if error else ("pass" if all(self.contracts.values()) else "fail")
        if error:
            items["error"] = error
        write_summary(self.dir / "summary.txt", items)
        digest = hashlib.sha256(self.cfg.text.encode()).hexdigest()
        lines = [
            f"experiment={self.cfg.experiment}",
            f"config_sha256={digest}",
            f"seed={self.cfg.seed}",
            f"morseflow={__version__}",
            f"backend={_backend.BACKEND}",
            f"numpy={np.__version__}",
            f"python={platform.python_version()}",
            f"partial={'true' if partial else 'false'}",
            "files=" + ",".join([*self.files, "summary.txt"]),
        ]
        (self.dir / "manifest.txt").write_text("\n".join(lines) + "\n")

    @property
    def ok(self) -> bool:
        return all(self.contracts.values())


# -------------------------------------------------------------- experiments


def _trajectory_contracts(out: Outputs, traj, lp_slack: float) -> None:
    from morseflow.analysis import lp_growth_check

    gaps = min(min(d.min_gap_rho, d.min_gap_eta) for d in traj.diagnostics)
    out.summary["min_same_species_gap"] = gaps
    out.contract("non_collision", gaps > 0)
    for p, name in ((2.0, "lp2"), (math.inf, "lpinf")):
        r = lp_growth_check(traj, p)
        out.summary[f"{name}_growth_ratio"] = r
        out.contract(f"{name}_growth", r <= 1.0 + lp_slack)


def _write_trajectory(out: Outputs, traj) -> None:
    from morseflow.dynamics import write_diagnostics_csv, write_events_csv, write_trajectory_csv

    write_trajectory_csv(traj, out.path("trajectory.csv"))
    write_diagnostics_csv(traj, out.path("diagnostics.csv"))
    write_events_csv(traj, out.path("events.csv"))


def run_simulate(cfg: RunConfig, out: Outputs) -> None:
    from morseflow.analysis import TestFunction, weak_form_report
    from morseflow.dynamics import simulate

    s0 = _initial_state(cfg)
    traj = simulate(s0, _integrator(cfg))
    _write_trajectory(out, traj)
    out.summary.update(
        N=s0.N,
        steps=traj.steps,
        step_rejections=traj.rejections,
        crossings=len(traj.events),
        energy_initial=traj.diagnostics[0].energy,
        energy_final=traj.diagnostics[-1].energy,
    )
    _trajectory_contracts(out, traj, cfg.get_float("analysis.lp_slack", 1e-3, nonneg=True))
    if len(traj.times) >= 2:
        phi = TestFunction.gaussian_bump(
            cfg.get_float("analysis.bump_center", 0.0),
            cfg.get_float("analysis.bump_width", 0.5, positive=True),
        )
        # the residual includes the sampling interval's differencing error,
        # so the bound is checked with that interval's second-order slack
        mid = traj.times[len(traj.times) // 2]
        rep = weak_form_report(traj, phi, mid)
        out.summary["weak_form_time"] = mid
        out.summary["weak_form_residual"] = rep.residual
        out.summary["weak_form_bound"] = rep.bound
        out.contract("weak_form_bound", rep.residual <= rep.bound + _sample_slack(traj))


def _sample_slack(traj) -> float:
    h = max(b - a for a, b in zip(traj.times, traj.times[1:]))
    return h * h


def run_jko(cfg: RunConfig, out: Outputs) -> None:
    from morseflow.analysis import write_table
    from morseflow.dynamics import Trajectory, write_trajectory_csv
    from morseflow.jko import JkoConfig, compare_to_ode, jko_flow, write_jko_csv

    s0 = _initial_state(cfg)
    jcfg = JkoConfig(
        tau=cfg.get_float("jko.tau", positive=True),
        n_steps=cfg.get_int("jko.n_steps", minimum=0),
        inner_tol=cfg.get_float("jko.inner_tol", 1e-10, positive=True),
        inner_max_iters=cfg.get_int("jko.inner_max_iters", 100_000, minimum=1),
    )
    res = jko_flow(s0, jcfg)
    write_jko_csv(res, out.path("jko.csv"))
    write_trajectory_csv(
        Trajectory([s.time for s in res.iterates], list(res.iterates)), out.path("trajectory.csv")
    )
    worst = max((b - a for a, b in zip(res.energies, res.energies[1:])), default=0.0)
    cost = sum(res.transport_costs) / (2 * jcfg.tau)
    drop = res.energies[0] - res.energies[-1]
    out.summary.update(
        N=s0.N,
        tau=jcfg.tau,
        n_steps=jcfg.n_steps,
        energy_initial=res.energies[0],
        energy_final=res.energies[-1],
        max_energy_increase=worst,
        scaled_transport=cost,
        inner_converged=all(res.converged),
    )
    out.contract("energy_dissipation", worst <= 1e-10)
    out.contract("transport_bound", cost <= drop + 1e-8)
    if cfg.has("jko.tau_list"):
        taus = cfg.get_floats("jko.tau_list")
        integ = _integrator(cfg)
        rows = compare_to_ode(s0, integ.t_end, taus, integ, jcfg)
        write_table(
            out.path("compare_to_ode.csv"),
            "compare_to_ode",
            {"N": s0.N, "t_end": integ.t_end, "dt": integ.dt},
            ["tau", "n_steps", "distance"],
            [(r.tau, r.n_steps, r.distance) for r in rows],
        )
        out.summary["compare_distances"] = " ".join(repr(r.distance) for r in rows)
        # reported only: no rate or monotonicity is claimed for this comparison
        out.summary["compare_decreasing"] = all(
            b.distance < a.distance for a, b in zip(rows, rows[1:])
        )


def run_converge(cfg: RunConfig, out: Outputs) -> None:
    from morseflow.analysis import convergence_study, write_table

    Ns = [int(v) for v in cfg.get_floats("run.N_list")]
    if not Ns or any(n < 1 for n in Ns) or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ConfigError("run.N_list: must be an increasing list of positive integers", "run.N_list")
    integ = _integrator(cfg)
    rows = convergence_study(_density(cfg, "rho"), _density(cfg, "eta"), Ns, integ.t_end, integ)
    write_table(
        out.path("converge.csv"),
        "convergence_study",
        {"t_end": integ.t_end, "dt": integ.dt},
        ["N", "distance"],
        [(r.N, r.distance) for r in rows],
    )
    out.summary["distances"] = " ".join(repr(r.distance) for r in rows)
    out.contract("cauchy_decreasing", all(b.distance < a.distance for a, b in zip(rows, rows[1:])))


def run_stability(cfg: RunConfig, out: Outputs) -> None:
    from morseflow.analysis import perturbed, stability_report, write_table

    s0 = _initial_state(cfg)
    integ = _integrator(cfg)
    amp = cfg.get_float("analysis.perturbation", positive=True)
    count = cfg.get_int("analysis.n_perturbations", minimum=1)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(count):
        rep = stability_report(s0, perturbed(s0, amp, rng), integ.t_end, integ)
        rows.append((k, rep.worst_ratio))
    shift = stability_report(s0, s0.translated(amp), integ.t_end, integ).worst_ratio
    write_table(
        out.path("stability.csv"),
        "stability_experiment",
        {"N": s0.N, "t_end": integ.t_end, "perturbation": amp, "seed": cfg.seed},
        ["run", "worst_ratio"],
        rows,
    )
    worst = max(r for _, r in rows)
    out.summary.update(worst_ratio=worst, translation_ratio=shift, note="empirical particle-level analogue")
    out.contract("stability_ratio", worst <= 1.05)
    out.contract("translation_equivariance", shift <= 1.0)


def run_collision_demo(cfg: RunConfig, out: Outputs) -> None:
    from morseflow.analysis import minimal_moment_rate, moment_bound_holds, moment_growth
    from morseflow.dynamics import simulate

    s0 = SystemState.from_positions([-2.0, -1.0], [1.0, 2.0])
    traj = simulate(s0, _integrator(cfg, dt=1e-3, t_end=10.0))
    _write_trajectory(out, traj)
    rep = collision_report(traj)
    out.summary.update(rep.summary())
    C = moment_growth(traj)
    out.summary["moment_rate_fit"] = C
    out.summary["moment_rate_min"] = minimal_moment_rate(traj)
    out.contract("mixing", rep.first_below is not None)
    out.contract("lyapunov_monotone", rep.lyapunov_ok)
    out.contract("non_collision", rep.min_gap > 0)
    out.contract("moment_bound", moment_bound_holds(traj, C))


@dataclass
class CollisionReport:
    threshold: float
    first_below: float | None
    first_crossing: float | None
    lyapunov_worst_rate: float
    lyapunov_ok: bool
    min_gap: float

    def summary(self) -> dict[str, object]:
        return {
            "f_threshold": self.threshold,
            "f_below_threshold_time": "none" if self.first_below is None else self.first_below,
            "first_crossing_time": "none" if self.first_crossing is None else self.first_crossing,
            "lyapunov_worst_rate": self.lyapunov_worst_rate,
            "min_same_species_gap": self.min_gap,
        }


def collision_report(traj, threshold: float = 1e-2, tol: float = 1e-6) -> CollisionReport:
    """Mixing diagnostics for the two-plus-two particle example.

    ``f = y_0 - x_1`` is the opposite-species gap and ``d_1 = x_1 - x_0``;
    ``3 f + 2 d_1`` must not increase while ``f >= 0``.
    """
    f = np.array([s.y[0] - s.x[1] for s in traj.states])
    d1 = np.array([s.x[1] - s.x[0] for s in traj.states])
    t = np.array(traj.times)
    L = 3 * f + 2 * d1
    worst = -math.inf
    for k in range(len(t) - 1):
        if f[k + 1] < 0:
            break
        worst = max(worst, (L[k + 1] - L[k]) / (t[k + 1] - t[k]))
    below = np.nonzero(f < threshold)[0]
    gaps = min(float(min(np.min(s.rho.gaps), np.min(s.eta.gaps))) for s in traj.states)
    return CollisionReport(
        threshold,
        float(t[below[0]]) if below.size else None,
        traj.events[0].time if traj.events else None,
        worst,
        worst <= tol,
        gaps,
    )


def kernel_selftest() -> dict[str, tuple[bool, float]]:
    """Named checks of the kernel module: ``name -> (passed, measured value)``."""
    from morseflow.kernel import interval_mean_slope, morse_w, morse_w_prime
    from morseflow.state import PiecewiseDensity, convolve_w, convolve_w_prime

    rng = np.random.default_rng(12345)
    xs = rng.uniform(-40, 40, 1000)
    even = max(abs(morse_w(x) - morse_w(-x)) for x in xs)
    a = rng.uniform(-10, 10, 2000)
    b = a + rng.exponential(2.0, 2000) + 1e-12
    p = rng.uniform(-12, 12, 2000)
    bound = max(abs(interval_mean_slope(ai, bi, pi)) for ai, bi, pi in zip(a, b, p))
    worst_rel = 0.0
    # gaps from 1e-3 down: above that the midpoint rule's own O(gap^2) error dominates
    for gap in 10.0 ** -np.arange(3, 13):
        for lo in (-3.0, -0.5, 0.25, 2.0):
            q = interval_mean_slope(lo, lo + gap, 0.0)
            mid = morse_w_prime(lo + 0.5 * gap)
            worst_rel = max(worst_rel, abs(q - mid) / abs(mid))
    bp = np.sort(rng.uniform(-2, 2, 9))
    heights = rng.uniform(0.2, 1.0, 8)
    f = PiecewiseDensity(bp, heights / np.sum(heights * np.diff(bp)))
    h = 1e-4
    mids = 0.5 * (bp[:-1] + bp[1:])
    pts = np.concatenate((mids, [bp[0] - 0.7, bp[-1] + 0.4]))
    lhs = (np.asarray(convolve_w_prime(f, pts + h)) - np.asarray(convolve_w_prime(f, pts - h))) / (2 * h)
    rhs = np.asarray(convolve_w(f, pts)) - np.asarray(f(pts))
    # the convolution is taken as ∫ W'(x - z) f(z) dz, so its derivative is W * f - f
    elliptic = float(np.max(np.abs(lhs - rhs)))
    return {
        "evenness": (even == 0.0, float(even)),
        "mean_slope_bound": (bound <= 0.5, float(bound)),
        "small_gap_quotient": (worst_rel <= 1e-6, float(worst_rel)),
        "elliptic_law": (elliptic <= 1e-6, elliptic),
    }


def run_kernel_selftest(cfg: RunConfig, out: Outputs) -> None:
    for name, (ok, val) in kernel_selftest().items():
        out.summary[name] = val
        out.contract(name, ok)


RUNNERS: dict[str, Callable[[RunConfig, Outputs], None]] = {
    "simulate": run_simulate,
    "jko": run_jko,
    "converge": run_converge,
    "stability": run_stability,
    "collision-demo": run_collision_demo,
    "kernel-selftest": run_kernel_selftest,
}


def run(cfg: RunConfig) -> int:
    """Run one experiment; the return value is the process exit status."""
    out = Outputs(cfg)
    try:
        RUNNERS[cfg.experiment](cfg, out)
    except ConfigError as exc:
        out.finish(partial=True, error=str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StiffnessError, OptimizationError) as exc:
        out.finish(partial=True, error=str(exc))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out.finish()
    return EXIT_OK if out.ok else EXIT_CONTRACT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morseflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="INI config file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="seed for perturbations")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.experiment)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer", "run.seed")
            cfg.seed = args.seed
        elif cfg.has("run.seed"):
            cfg.seed = cfg.get_int("run.seed", minimum=0)
        cfg.out_dir = args.out
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
