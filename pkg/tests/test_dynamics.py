import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morseflow.dynamics import (
    DIAG_COLUMNS,
    IntegratorConfig,
    StepStats,
    VelocityMode,
    classical_masses,
    classical_velocity_atoms,
    simulate,
    spacing_derivative_check,
    step,
    velocity,
    velocity_classical,
    velocity_fast,
    velocity_naive,
    write_diagnostics_csv,
    write_events_csv,
    write_trajectory_csv,
)
from morseflow.errors import DomainError, SampleLookupError, StiffnessError
from morseflow.state import SystemState, convolve_w_prime, to_density

from conftest import random_state

TWO_TWO = SystemState.from_positions([-2.0, -1.0], [1.0, 2.0])
seeds = st.integers(0, 2**32 - 1)


def test_two_two_velocity_example(backend):
    e = math.exp
    yd0 = (e(-1) - 1) / 2 - (e(-2) - e(-3)) / 2
    assert yd0 == pytest.approx(-0.3588344, abs=1e-7)
    for mode in ("difference_quotient_naive", "difference_quotient_fast"):
        vx, vy = velocity(TWO_TWO, mode)
        assert vy[0] == pytest.approx(yd0, rel=1e-13)
        assert vx[1] == pytest.approx(-yd0, rel=1e-13)


@given(st.integers(1, 40), seeds)
def test_fast_equals_naive(N, seed):
    s = random_state(N, np.random.default_rng(seed))
    for a, b in zip(velocity_fast(s), velocity_naive(s)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_fast_equals_naive_on_python_backend(rng, backend):
    s = random_state(30, rng)
    for a, b in zip(velocity_fast(s), velocity_naive(s)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_naive_is_convolution_form(rng):
    s = random_state(25, rng)
    f, g = to_density(s.rho), to_density(s.eta)
    vx, vy = velocity_naive(s)
    np.testing.assert_allclose(vx, -convolve_w_prime(f, s.x) + convolve_w_prime(g, s.x), atol=1e-13)
    np.testing.assert_allclose(vy, -convolve_w_prime(g, s.y) + convolve_w_prime(f, s.y), atol=1e-13)


@given(st.integers(1, 20), seeds, st.floats(-20, 20))
def test_translation_and_mirror(N, seed, c):
    s = random_state(N, np.random.default_rng(seed))
    vx, vy = velocity_fast(s)
    tx, ty = velocity_fast(s.translated(c))
    np.testing.assert_allclose(tx, vx, atol=1e-12)
    np.testing.assert_allclose(ty, vy, atol=1e-12)
    m = SystemState.from_positions(-s.x[::-1], -s.y[::-1])
    mx, my = velocity_fast(m)
    np.testing.assert_allclose(mx, -vx[::-1], atol=1e-12)
    np.testing.assert_allclose(my, -vy[::-1], atol=1e-12)
    assert np.all(np.abs(vx) <= 1.0) and np.all(np.abs(vy) <= 1.0)


def test_identical_species_are_stationary(rng):
    x = np.sort(rng.uniform(-1, 1, 9))
    s = SystemState.from_positions(x, x)
    for mode in VelocityMode:
        for v in velocity(s, mode):
            np.testing.assert_array_equal(v, 0.0)
    assert step(s, 0.1).x.tolist() == x.tolist()


def test_classical_examples():
    vx, vy = classical_velocity_atoms([-1.0], [1.0], [1.0], [1.0])
    assert vx[0] == pytest.approx(0.5 * math.exp(-2))
    assert vy[0] == pytest.approx(-0.5 * math.exp(-2))
    vx, _ = classical_velocity_atoms([0.0], [0.0], [1.0], [1.0])
    assert vx[0] == 0.0
    s = SystemState.from_positions([-1.0, 0.0, 1.0], [50.0, 51.0, 52.0])
    vx, _ = velocity_classical(s)
    assert abs(vx[1]) <= math.exp(-40)


def test_classical_mass_rules():
    np.testing.assert_allclose(classical_masses(4), 0.25)
    assert classical_masses(4, "left")[-1] == 0.0
    with pytest.raises(DomainError):
        classical_masses(4, "middle")
    vx, _ = velocity_classical(TWO_TWO, "left")
    assert vx.shape == (2,)


def test_step_difference_quotient_tends_to_velocity(rng):
    s = random_state(6, rng)
    v = np.concatenate(velocity_naive(s))
    errs = []
    for dt in (1e-3, 1e-4):
        n = step(s, dt, "difference_quotient_naive")
        dq = np.concatenate(((n.x - s.x) / dt, (n.y - s.y) / dt))
        errs.append(np.max(np.abs(dq - v)))
    # first-order quotient: error shrinks by about 10 per decade
    assert 7 < errs[0] / errs[1] < 13


def test_rk4_order(rng):
    # separated species: opposite-species crossings make the field only
    # Lipschitz and would mask the fourth order
    x = np.sort(rng.uniform(-6, -4, 6))
    s = SystemState.from_positions(x, np.sort(rng.uniform(4, 6, 6)))

    def integrate(dt, T=0.5):
        cur = s
        for _ in range(round(T / dt)):
            cur = step(cur, dt)
        return np.concatenate((cur.x, cur.y))

    ref = integrate(0.5 / 256)
    e1 = np.max(np.abs(integrate(0.1) - ref))
    e2 = np.max(np.abs(integrate(0.05) - ref))
    assert 12 < e1 / e2 < 20


def test_step_advances_time_and_validates():
    n = step(TWO_TWO, 0.25)
    assert n.time == 0.25
    with pytest.raises(DomainError):
        step(TWO_TWO, 0.0)


def test_first_step_closes_opposite_gap():
    n = step(TWO_TWO, 1e-2)
    assert n.y[0] - n.x[1] < TWO_TWO.y[0] - TWO_TWO.x[1]


def test_stiffness_error_reports_gap():
    stats = StepStats()
    with pytest.raises(StiffnessError) as exc:
        step(TWO_TWO, 1.0, gap_floor=1.5, max_step_halvings=2, stats=stats)
    assert exc.value.gap_index == 0
    assert exc.value.species in ("rho", "eta")
    assert stats.rejections >= 3


def test_simulate_t_end_zero():
    traj = simulate(TWO_TWO, IntegratorConfig(dt=0.1, t_end=0.0))
    assert traj.times == [0.0] and traj.states == [TWO_TWO]


def test_simulate_grid_and_sampling():
    traj = simulate(TWO_TWO, IntegratorConfig(dt=0.3, t_end=1.0, sample_every=1))
    assert traj.steps == 4
    assert traj.times[-1] == 1.0
    assert all(b > a for a, b in zip(traj.times, traj.times[1:]))
    assert traj.index_of(0.5) == 2
    with pytest.raises(SampleLookupError):
        traj.index_of(0.4)
    assert traj.positions("eta").shape == (5, 2)


def test_default_cadence_keeps_final_sample():
    traj = simulate(TWO_TWO, IntegratorConfig(dt=1e-3, t_end=1.3))
    assert traj.times[-1] == 1.3
    assert len(traj.times) <= 514


def test_two_two_crossing_and_lyapunov():
    traj = simulate(TWO_TWO, IntegratorConfig(dt=1e-3, t_end=4.0, sample_every=1))
    assert traj.events
    assert traj.events[0].time == pytest.approx(3.1056, abs=1e-3)
    assert traj.events[0].direction == -1
    x, y = traj.positions("rho"), traj.positions("eta")
    f = y[:, 0] - x[:, 1]
    L = 3 * f + 2 * (x[:, 1] - x[:, 0])
    t = np.array(traj.times)
    ok = f[1:] >= 0
    assert np.all((np.diff(L) <= 1e-6 * np.diff(t))[ok])


def test_ordering_preserved(rng):
    s = random_state(16, rng)
    traj = simulate(s, IntegratorConfig(dt=1e-2, t_end=2.0))
    assert traj.rejections == 0
    for st_ in traj.states:
        assert np.all(np.diff(st_.x) > 0) and np.all(np.diff(st_.y) > 0)


@given(st.integers(1, 32), seeds)
def test_spacing_identity(N, seed):
    s = random_state(N, np.random.default_rng(seed))
    assert spacing_derivative_check(s) <= 1e-10


def test_spacing_identity_stationary():
    x = np.linspace(0, 1, 5)
    assert spacing_derivative_check(SystemState.from_positions(x, x)) <= 1e-15


def test_integrator_config_validation():
    with pytest.raises(DomainError):
        IntegratorConfig(dt=-1.0, t_end=1.0)
    with pytest.raises(DomainError):
        IntegratorConfig(dt=0.1, t_end=-1.0)
    assert IntegratorConfig(dt=0.1, t_end=1, mode="classical_pointwise").mode is VelocityMode.CLASSICAL


def test_csv_export(tmp_path):
    traj = simulate(TWO_TWO, IntegratorConfig(dt=0.01, t_end=4.0, sample_every=100))
    write_trajectory_csv(traj, tmp_path / "traj.csv")
    write_diagnostics_csv(traj, tmp_path / "diag.csv")
    write_events_csv(traj, tmp_path / "events.csv")
    rows = list(csv.reader(open(tmp_path / "traj.csv")))
    assert rows[0] == ["t", "index", "species", "position"]
    assert len(rows) == 1 + 4 * len(traj.times)
    diag = list(csv.DictReader(open(tmp_path / "diag.csv")))
    assert tuple(diag[0]) == DIAG_COLUMNS
    assert float(diag[0]["lp2_rho"]) == pytest.approx(1.0)
    assert int(diag[-1]["crossings"]) == len(traj.events) >= 1
    ev = list(csv.reader(open(tmp_path / "events.csv")))
    assert ev[0] == ["time", "i", "j", "direction"] and len(ev) == 1 + len(traj.events)
