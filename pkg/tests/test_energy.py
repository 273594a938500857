import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morseflow.energy import (
    energy_atoms,
    energy_density,
    energy_gradient,
    energy_state,
    subdifferential_atoms,
)
from morseflow.errors import DegenerateInputError, DomainError
from morseflow.state import SystemState, Uniform, atomize, product_w2, tent, to_density

from conftest import random_state


def test_atoms_identical_species_is_zero():
    x = np.array([-1.0, 0.3, 2.0])
    assert energy_atoms(x, x, 0.25).total == 0.0


def test_single_atoms_closed_form():
    d = 1.7
    assert energy_atoms([0.0], [d], 1.0).total == pytest.approx(0.5 * (1 - math.exp(-d)), rel=1e-14)


def test_energy_atoms_validation():
    with pytest.raises(DomainError):
        energy_atoms([], [1.0], 1.0)
    with pytest.raises(DomainError):
        energy_atoms([0.0], [1.0], 0.0)


def test_unit_interval_self_energy():
    # ∬_{[0,L]^2} exp(-|x - z|) = 2 (L - 1 + exp(-L))
    s = SystemState.from_positions([0.0, 1.0], [500.0, 501.0])
    e = energy_state(s)
    assert e.self_rho == pytest.approx(0.5 * math.exp(-1), rel=1e-14)
    assert e.cross < 1e-200
    assert e.total == pytest.approx(math.exp(-1), rel=1e-14)


def test_equal_species_density_energy_vanishes(rng):
    for N in (1, 4, 33):
        x = np.sort(rng.uniform(-2, 2, N + 1))
        assert abs(energy_state(SystemState.from_positions(x, x)).total) <= 1e-12


def test_energy_density_vs_quadrature():
    t, w = np.polynomial.legendre.leggauss(200)
    f = to_density(atomize(tent(0.0, 1.0), 2))
    g = to_density(atomize(Uniform(0.5, 2.0), 3))
    # 1-D quadrature of each density against its exact potential W * (f - g)
    from morseflow.state import convolve_w

    def pair(a, b):
        total = 0.0
        for lo, hi, h in zip(a.breakpoints[:-1], a.breakpoints[1:], a.heights):
            z = 0.5 * (hi - lo) * t + 0.5 * (lo + hi)
            total += h * 0.5 * (hi - lo) * float(np.sum(w * convolve_w(b, z)))
        return total

    want = 0.5 * pair(f, f) + 0.5 * pair(g, g) - pair(f, g)
    assert energy_density(f, g).total == pytest.approx(want, rel=1e-10)


@given(st.integers(1, 20), st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_nonnegative_and_translation_invariant(N, seed, c):
    s = random_state(N, np.random.default_rng(seed))
    e = energy_state(s).total
    assert e >= -1e-12
    assert energy_state(s.translated(c)).total == pytest.approx(e, rel=1e-9, abs=1e-13)
    assert energy_state(s.swapped()).total == pytest.approx(e, rel=1e-12, abs=1e-15)


def test_subdifferential_examples():
    gx, gy = subdifferential_atoms([-1.0], [1.0], 1.0)
    # attraction pulls x right: the velocity -gx is positive
    assert -gx[0] == pytest.approx(0.5 * math.exp(-2))
    assert gy[0] == pytest.approx(-gx[0])
    gx, gy = subdifferential_atoms([0.0], [0.0], 1.0)
    assert gx[0] == 0.0 and gy[0] == 0.0
    with pytest.raises(DegenerateInputError):
        subdifferential_atoms([0.0, 0.0], [1.0, 2.0], 0.5)


def _fd_grad(fun, z, h=1e-6):
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (fun(z + e) - fun(z - e)) / (2 * h)
    return g


def test_subdifferential_vs_finite_differences(rng):
    m = 0.2
    for _ in range(20):
        x, y = rng.uniform(-3, 3, 5), rng.uniform(-3, 3, 5)
        z = np.concatenate((x, y))
        fd = _fd_grad(lambda v: energy_atoms(v[:5], v[5:], m).total, z)
        gx, gy = subdifferential_atoms(x, y, m)
        np.testing.assert_allclose(m * np.concatenate((gx, gy)), fd, rtol=1e-6, atol=1e-10)


def test_energy_gradient_vs_finite_differences(rng):
    for N in (1, 3, 10):
        s = random_state(N, rng)
        z = np.concatenate((s.x, s.y))
        n = N + 1
        fun = lambda v: energy_state(SystemState.from_positions(v[:n], v[n:])).total
        fd = _fd_grad(fun, z, h=1e-6)
        got = np.concatenate(energy_gradient(s))
        np.testing.assert_allclose(got, fd, rtol=1e-6, atol=1e-9)


def test_atomic_midpoint_energy_converges_to_density_energy():
    errs = []
    for N in (8, 16, 32, 64):
        s = SystemState(atomize(tent(-0.5, 1.0), N), atomize(Uniform(0.0, 1.5), N))
        mid = lambda p: 0.5 * (p[:-1] + p[1:])
        ea = energy_atoms(mid(s.x), mid(s.y), 1.0 / N).total
        errs.append(abs(ea - energy_state(s).total))
    assert all(b < a for a, b in zip(errs, errs[1:]))


def _pairwise_energy(f, g):
    # O(N^2) oracle: every cell pair through the closed-form pair integral
    from morseflow.kernel import cell_pair_integral

    def gram(u, v):
        K = cell_pair_integral(
            u.breakpoints[:-1, None], u.breakpoints[1:, None], v.breakpoints[None, :-1], v.breakpoints[None, 1:]
        )
        return float(u.heights @ K @ v.heights)

    return 0.5 * gram(f, f), 0.5 * gram(g, g), gram(f, g)


@pytest.mark.parametrize("N", [1, 2, 7, 40])
def test_linear_time_energy_matches_pairwise_sum(rng, backend, N):
    for _ in range(5):
        s = random_state(N, rng)
        f, g = to_density(s.rho), to_density(s.eta)
        e = energy_density(f, g)
        sr, se, cr = _pairwise_energy(f, g)
        assert e.self_rho == pytest.approx(sr, rel=1e-12)
        assert e.self_eta == pytest.approx(se, rel=1e-12)
        assert e.cross == pytest.approx(cr, rel=1e-12)
        assert e.total == pytest.approx(sr + se - cr, rel=1e-9, abs=1e-14)


def test_disjoint_and_touching_supports():
    f = to_density(SystemState.from_positions([0.0, 1.0], [1.0, 2.0]).rho)
    g = to_density(SystemState.from_positions([0.0, 1.0], [1.0, 2.0]).eta)
    # touching unit cells: ∬ = (1 - e^{-1})^2 / 2
    assert energy_density(f, g).cross == pytest.approx(0.5 * (1 - math.exp(-1)) ** 2, rel=1e-14)


@given(st.integers(1, 16), st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_semiconvex_along_position_interpolation(N, seed, t):
    # with equal gap masses, interpolating positions is the W2 geodesic, and
    # the energy is (-1/2)-convex along it
    r = np.random.default_rng(seed)
    a, b = random_state(N, r), random_state(N, r, spread=float(r.uniform(0.5, 5.0)))
    mid = SystemState.from_positions((1 - t) * a.x + t * b.x, (1 - t) * a.y + t * b.y)
    chord = (1 - t) * energy_state(a).total + t * energy_state(b).total
    w2sq = product_w2(a, b) ** 2
    assert energy_state(mid).total <= chord + 0.25 * t * (1 - t) * w2sq + 1e-12
