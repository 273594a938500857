import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morseflow.dynamics import IntegratorConfig
from morseflow.energy import energy_state
from morseflow.errors import DomainError
from morseflow.jko import (
    JkoConfig,
    compare_to_ode,
    jko_flow,
    jko_step,
    jko_step_atoms,
    jko_step_report,
    mass_matrix,
    transport_cost,
    write_jko_csv,
)
from morseflow.state import SpeciesConfig, SystemState, w2_atoms

from conftest import random_state

TWO_TWO = SystemState.from_positions([-2.0, -1.0], [1.0, 2.0])


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_mass_matrix_is_gap_mass_distance(N, seed):
    r = np.random.default_rng(seed)
    a = SpeciesConfig(np.sort(r.uniform(-2, 2, N + 1)))
    b = SpeciesConfig(np.sort(r.uniform(-2, 2, N + 1)))
    d = a.positions - b.positions
    assert math.sqrt(d @ mass_matrix(N) @ d) == pytest.approx(w2_atoms(a, b), rel=1e-12)


def test_config_validation():
    for kw in ({"tau": 0.0, "n_steps": 1}, {"tau": 0.1, "n_steps": -1}, {"tau": 0.1, "n_steps": 1, "shrink": 1.0}):
        with pytest.raises(DomainError):
            JkoConfig(**kw)


def test_stationary_state_is_fixed():
    x = np.array([-1.0, -0.2, 0.5, 2.0])
    s = SystemState.from_positions(x, x)
    new = jko_step(s, JkoConfig(tau=0.1, n_steps=1))
    np.testing.assert_allclose(new.x, x, atol=1e-10)
    np.testing.assert_allclose(new.y, x, atol=1e-10)
    assert new.time == pytest.approx(0.1)


@pytest.mark.parametrize("tau", [1e-2, 3e-3, 1e-3])
def test_single_atom_pair(tau):
    x, y, rep = jko_step_atoms([-1.0], [1.0], JkoConfig(tau=tau, n_steps=1, inner_tol=1e-13))
    assert rep.converged
    shift = 0.5 * tau * math.exp(-2)
    assert x[0] == pytest.approx(-1 + shift, abs=10 * tau * tau)
    assert y[0] == pytest.approx(1 - shift, abs=10 * tau * tau)


def test_small_tau_limit():
    costs = []
    for tau in (1e-1, 1e-2, 1e-3):
        new = jko_step(TWO_TWO, JkoConfig(tau=tau, n_steps=1))
        costs.append(transport_cost(TWO_TWO, new))
    assert costs[0] > costs[1] > costs[2]
    assert costs[2] < 1e-6


def test_objective_not_increased(rng):
    s = random_state(6, rng)
    cfg = JkoConfig(tau=0.05, n_steps=1)
    new, rep = jko_step_report(s, cfg)
    F_prev = energy_state(s).total
    F_new = transport_cost(s, new) / (2 * cfg.tau) + energy_state(new).total
    assert F_new <= F_prev + 1e-12
    assert rep.iterations >= 1


def test_n_steps_zero():
    res = jko_flow(TWO_TWO, JkoConfig(tau=0.1, n_steps=0))
    assert res.iterates == [TWO_TWO] and res.transport_costs == []
    assert res.final is TWO_TWO


@settings(max_examples=8)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_dissipation_and_transport_bound(N, seed):
    s = random_state(N, np.random.default_rng(seed))
    cfg = JkoConfig(tau=0.1, n_steps=5)
    res = jko_flow(s, cfg)
    e = np.array(res.energies)
    assert np.all(np.diff(e) <= 1e-10)
    assert sum(res.transport_costs) / (2 * cfg.tau) <= e[0] - e[-1] + 1e-8
    assert all(c >= 0 for c in res.transport_costs)
    for it in res.iterates:
        assert np.all(np.diff(it.x) > 0) and np.all(np.diff(it.y) > 0)


def test_two_two_energy_decreases():
    res = jko_flow(TWO_TWO, JkoConfig(tau=0.1, n_steps=10))
    assert all(b < a for a, b in zip(res.energies, res.energies[1:]))


def test_compare_to_ode_trivial_cases():
    ic = IntegratorConfig(dt=0.01, t_end=0.0)
    rows = compare_to_ode(TWO_TWO, 0.0, [0.1, 0.05], ic)
    assert [r.distance for r in rows] == [0.0, 0.0]
    x = np.array([-1.0, 0.0, 1.5])
    s = SystemState.from_positions(x, x)
    cfg = JkoConfig(tau=1.0, n_steps=0)
    for r in compare_to_ode(s, 0.2, [0.1, 0.05], ic, cfg):
        assert r.distance <= cfg.inner_tol * math.sqrt(0.2 / r.tau)
    with pytest.raises(DomainError):
        compare_to_ode(TWO_TWO, 0.25, [0.1], ic)


def test_compare_to_ode_tracks_ode():
    rows = compare_to_ode(TWO_TWO, 0.4, [0.2, 0.1, 0.05], IntegratorConfig(dt=0.01, t_end=0.4))
    d = [r.distance for r in rows]
    assert d[0] > d[1] > d[2]
    assert [r.n_steps for r in rows] == [2, 4, 8]


def test_csv(tmp_path):
    res = jko_flow(TWO_TWO, JkoConfig(tau=0.1, n_steps=3))
    write_jko_csv(res, tmp_path / "jko.csv")
    rows = list(csv.DictReader(open(tmp_path / "jko.csv")))
    assert list(rows[0]) == ["step", "time", "energy", "transport_cost", "inner_iterations"]
    assert len(rows) == 4 and float(rows[2]["time"]) == pytest.approx(0.2)
