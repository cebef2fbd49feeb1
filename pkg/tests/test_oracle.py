import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

import _runs
from ma_iterate.errors import ShootingFailed, WrongProfile
from ma_iterate.oracle import (exp_oracle_1d, power_oracle_1d, radial_residual, radial_shooting,
                               separable_oracle_2d)
from ma_iterate.profile import Profile


def conjugate_1d(fn, y, bound=200.0):
    """fn*(y) = sup_x (x y - fn(x)) by bounded scalar minimisation."""
    res = minimize_scalar(lambda x: fn(np.array([[x]]))[0] - x * y, bounds=(-bound, bound),
                          method="bounded", options={"xatol": 1e-12})
    return -res.fun


# closed-form 1D solutions


def test_exp_oracle_values():
    sol = exp_oracle_1d()
    assert sol(np.array([[0.0]]))[0] == pytest.approx(2 * np.log(2), abs=1e-15)
    assert np.max(sol.residual(np.array([[0.0], [1.0], [-1.0], [3.0], [-3.0]]))) <= 1e-14
    assert conjugate_1d(sol, 0.0) == pytest.approx(-2 * np.log(2), abs=1e-10)


def test_exp_oracle_tau_by_quadrature():
    sol = exp_oracle_1d()
    total = quad(lambda y: conjugate_1d(sol, y), -1, 1, epsabs=1e-10)[0]
    assert sol.tau == pytest.approx(-total, abs=1e-7)


def test_power_oracle_residual_and_tau():
    sol = power_oracle_1d()
    x = np.linspace(-50, 50, 1000)[:, None]
    assert np.max(sol.residual(x)) <= 1e-14
    assert sol.tau == pytest.approx(np.pi / 2, abs=1e-15)
    assert sol.normalizer == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("y", [-0.9, -0.5, 0.0, 0.3, 0.75])
def test_power_oracle_dual_is_semicircle(y):
    assert conjugate_1d(power_oracle_1d(), y) == pytest.approx(-np.sqrt(1 - y * y), abs=1e-9)


# separable square solution


def test_separable_oracle():
    sol = separable_oracle_2d()
    ax = np.linspace(-4, 4, 32)
    x = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    assert np.max(sol.residual(x)) <= 1e-10
    assert sol(np.zeros((1, 2)))[0] == pytest.approx(4 * np.log(2), abs=1e-14)
    # each coordinate conjugate integrates to -tau_1 over (-1, 1), times the other side length 2
    assert sol.tau == pytest.approx(4 * exp_oracle_1d().tau, rel=1e-12)


@pytest.mark.parametrize("sx, sy", [(1, 1), (1, -1), (-1, 1), (-1, -1)])
def test_separable_gradient_reaches_corners(sx, sy):
    t = np.array([1.0, 4.0, 16.0, 40.0])
    g = separable_oracle_2d().sampler.gradient(np.c_[t * sx, t * sy])
    dist = np.linalg.norm(g - [sx, sy], axis=1)
    assert np.all(np.diff(dist) < 0)
    assert dist[-1] <= 1e-8
    assert np.all(np.abs(g) <= 1)


def test_separable_rejects_power():
    with pytest.raises(WrongProfile):
        separable_oracle_2d(Profile.power(2, 1.0))


# radial shooting on the disc


@pytest.fixture(scope="module")
def exp_disc():
    return radial_shooting(Profile.exponential(2), 1.0, 3.0)


@pytest.fixture(scope="module")
def power_disc():
    return radial_shooting(Profile.power(2, 1.0), 1.0, 2 * np.pi / 3)


def test_exp_disc_residual_and_slope(exp_disc):
    assert radial_residual(exp_disc) <= 1e-8
    r = np.linspace(0, 40, 801)
    slope = exp_disc.sampler.gradient(np.c_[r, np.zeros_like(r)])[:, 0]
    # monotone up to rounding and Hermite-interpolation overshoot
    assert np.all(np.diff(slope) >= -1e-14)
    assert slope[0] == 0.0
    assert slope[-1] == pytest.approx(1.0, abs=1e-6)
    assert np.all(slope <= 1 + 1e-10)


def test_power_disc_reproduces_sphere(power_disc):
    assert radial_residual(power_disc) <= 1e-8
    r = np.linspace(0, 10, 201)
    x = np.c_[r * np.cos(0.7), r * np.sin(0.7)]
    assert np.max(np.abs(power_disc(x) - np.sqrt(1 + r ** 2))) <= 1e-6


def test_power_tau_mismatch_gives_dilation(power_disc):
    a = 2.0
    other = radial_shooting(Profile.power(2, 1.0), 1.0, a * 2 * np.pi / 3)
    r = np.linspace(0, 10, 101)
    x = np.c_[r, np.zeros_like(r)]
    assert np.max(np.abs(other(x) - a * power_disc(x / a))) <= 1e-6
    assert radial_residual(other) <= 1e-8


def test_shared_disc_oracles_pass_residual():
    for kind in ("exp", "power"):
        assert radial_residual(_runs.disc_oracle(kind)) <= 1e-8


def test_shooting_rejects_wrong_dimension():
    with pytest.raises(ShootingFailed):
        radial_shooting(Profile.exponential(1), 1.0, 1.0)
    with pytest.raises(ShootingFailed):
        radial_shooting(Profile.exponential(2), _runs.INTERVAL, 1.0)


@pytest.mark.parametrize("a", [0.5, 2.0])
def test_power_dilation_covariance(a):
    base = power_oracle_1d()

    def dilated(x):
        return a * base(x / a)
    lhs = quad(lambda y: conjugate_1d(dilated, y), -1, 1, epsabs=1e-10)[0]
    rhs = quad(lambda y: conjugate_1d(base, y), -1, 1, epsabs=1e-10)[0]
    assert lhs == pytest.approx(a * rhs, rel=1e-7)
