import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import _runs
from ma_iterate.convex_body import build_body
from ma_iterate.errors import InequalityViolated, NonPositivePotential, WrongProfile
from ma_iterate.functionals import (F_of, G_of, duality_gap_check, ding_mabuchi, g_value, pairing,
                                    require_exponential, reverse_holder_check)
from ma_iterate.iteration import build_density
from ma_iterate.ot_solver import source_from_nodes
from ma_iterate.potential import EvaluationGrid, MaxAffinePotential
from ma_iterate.profile import Profile

EXP = Profile.exponential(1)
POW = Profile.power(1, 1.0)
INTERVAL = build_body([-1.0, 1.0])
GRID = EvaluationGrid(8.0, 257, 1)


# the tangent envelope sits below the oracle; with 4000 slopes the relative
# error of the integrals is about 1.5e-6 and shrinks like n^-1.5
APPROX = 1e-5


def tangents(conj, n=4000):
    """Max-affine potential with weights w_j = phi*(y_j) at cell midpoints of (-1, 1)."""
    y = -1 + (np.arange(n) + 0.5) * 2 / n
    return MaxAffinePotential(y[:, None], conj(y), np.full(n, 2 / n))


def exp_conj(y):
    x = 2 * np.arctanh(y)
    return y * x - 2 * np.log(2 * np.cosh(x / 2))


def pow_conj(y):
    return -np.sqrt(1 - y ** 2)


def test_F_of_examples():
    for c in (0.0, 1.5, -2.0):
        absx = MaxAffinePotential(np.array([[-1.0], [1.0]]), np.array([-c, -c]), np.ones(2))
        assert F_of(absx, EXP) == pytest.approx(c - np.log(2), abs=1e-14)
    assert F_of(tangents(exp_conj), EXP) == pytest.approx(0, abs=APPROX)
    assert F_of(tangents(pow_conj), POW) == pytest.approx(np.pi ** -0.5, rel=APPROX)
    with pytest.raises(NonPositivePotential):
        F_of(tangents(lambda y: pow_conj(y) + 2), POW)


def test_pairing_examples():
    phi = tangents(pow_conj)
    rho = build_density(phi, POW, GRID)
    assert rho.normalizer == pytest.approx(2, rel=APPROX)
    assert pairing(phi, rho) == pytest.approx(np.pi / 2, rel=APPROX)
    phi = tangents(exp_conj)
    rho = build_density(phi, EXP, GRID)
    # int phi e^-phi for the exponential oracle, 2 to 30 digits by mpmath
    assert pairing(phi, rho) == pytest.approx(2.0, rel=1e-5)
    fine = EvaluationGrid(1.0, 4001, 1)
    x = fine.axis
    narrow = source_from_nodes(fine, np.exp(-0.5 * (x / 0.01) ** 2))
    half_abs = MaxAffinePotential(np.array([[-0.5], [0.5]]), np.zeros(2), np.ones(2))
    assert pairing(half_abs, narrow) == pytest.approx(0.01 * np.sqrt(2 / np.pi) / 2, rel=1e-3)


def test_G_of_examples():
    g = EvaluationGrid(0.5, 101, 1)
    assert G_of(source_from_nodes(g, np.ones(101)), EXP) == pytest.approx(0, abs=1e-14)
    g = EvaluationGrid(1.0, 101, 1)
    assert G_of(source_from_nodes(g, np.full(101, 0.5)), EXP) == pytest.approx(np.log(2), abs=1e-14)
    rho = build_density(tangents(pow_conj), POW, GRID)
    assert G_of(rho, POW) == pytest.approx(0.5 * np.pi ** 1.5, rel=APPROX)
    # entropy of the exponential oracle density, 2 by mpmath
    rho = build_density(tangents(exp_conj), EXP, GRID)
    assert G_of(rho, EXP) == pytest.approx(2.0, rel=1e-5)


def test_gap_at_fixed_point():
    phi = tangents(pow_conj)
    rho = build_density(phi, POW, GRID)
    rep = duality_gap_check(phi, phi, rho, POW)
    assert abs(rep.gap1) <= APPROX and abs(rep.gap2) <= APPROX
    assert rep.g_value == pytest.approx(np.pi ** -0.5, rel=APPROX)
    assert g_value(POW, np.pi / 2, 0.5 * np.pi ** 1.5) == pytest.approx(np.pi ** -0.5, rel=1e-15)
    phi = tangents(exp_conj)
    rep = duality_gap_check(phi, phi, build_density(phi, EXP, GRID), EXP)
    assert abs(rep.gap1) <= 1e-5 and abs(rep.gap2) <= 1e-5


def test_first_step_gaps_positive():
    _, trace, _, _ = _runs.exp_1d()
    first = trace.steps[0].functionals
    assert first.gap1 > 1e-3 and first.gap2 > 1e-3


def test_ding_at_oracle():
    phi = tangents(exp_conj)
    rho = build_density(phi, EXP, GRID)
    tau = -float(phi.site_masses @ phi.weights)
    assert tau == pytest.approx(2.0, abs=1e-5)
    D, K, AM = ding_mabuchi(phi, rho, INTERVAL, profile=EXP)
    assert D == pytest.approx(F_of(phi, EXP) - tau / 2 + np.log(2), abs=1e-14)
    assert D == pytest.approx(-1 + np.log(2), abs=1e-5)
    assert K == pytest.approx(D, abs=1e-5)
    assert AM == pytest.approx(tau / 2, abs=1e-14)
    with pytest.raises(WrongProfile):
        require_exponential(POW)


def test_reverse_holder():
    x = np.linspace(0, 1, 2001)
    q = np.full_like(x, x[1])
    q[[0, -1]] /= 2
    h = 1 + x ** 2
    s = 2.0
    rep = reverse_holder_check(h ** (-1 / (s + 1)), h, s, q)
    assert rep.gap == pytest.approx(0, abs=1e-8)
    rep = reverse_holder_check(np.ones_like(x), h, s, q)
    assert rep.gap > 1e-4
    with pytest.raises(InequalityViolated):
        reverse_holder_check(np.ones_like(x), h, s, q, tol=-1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 4))
def test_reverse_holder_random(seed, s):
    rng = np.random.default_rng(seed)
    q = np.full(200, 1 / 200)
    f = rng.uniform(0.1, 3, 200)
    h = rng.uniform(0, 3, 200)
    rep = reverse_holder_check(f, h, s, q)
    assert rep.lhs <= rep.rhs * (1 + 1e-12)
