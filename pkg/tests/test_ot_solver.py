import numpy as np
import pytest

from ma_iterate.ot_solver import (SolverOptions, assign_cells, solve_step, solve_step_1d_exact,
                                  source_from_nodes)
from ma_iterate.potential import EvaluationGrid, evaluate
from ma_iterate.errors import NoConvergence

GRID = EvaluationGrid(8.0, 513, 1)
X = GRID.axis


def exp_oracle(x):
    return 2 * np.log(2 * np.cosh(x / 2))


def unit_interval_source():
    # nodes at 0 and 1 exist (spacing 1/32); the interpolation ramps are symmetric about 1/2
    return source_from_nodes(GRID, ((X >= 0) & (X <= 1)).astype(float))


def test_assign_cells_symmetric():
    src = source_from_nodes(GRID, np.exp(-X ** 2))
    out = assign_cells(np.zeros(2), np.array([-0.5, 0.5]), src)
    np.testing.assert_allclose(out.masses, [0.5, 0.5], atol=1e-14)
    out = assign_cells(np.array([0.0, 10.0]), np.array([-0.5, 0.5]), src)
    np.testing.assert_allclose(out.masses, [1.0, 0.0], atol=1e-14)
    assert np.all(out.labels == 0)


def test_assign_cells_breakpoint():
    out = assign_cells(np.array([0.0, 0.5]), np.array([-0.5, 0.5]), unit_interval_source())
    np.testing.assert_allclose(out.masses, [0.5, 0.5], atol=1e-14)


def test_two_site_solve():
    src = unit_interval_source()
    phi = solve_step(src, np.array([-0.5, 0.5]), np.ones(2), SolverOptions(mass_tol=1e-12))
    assert phi.weights[1] - phi.weights[0] == pytest.approx(0.5, abs=1e-10)
    ex = solve_step_1d_exact(src, np.array([-0.5, 0.5]), np.ones(2))
    np.testing.assert_allclose(ex.weights, phi.weights, atol=1e-8)


def test_identity_transport():
    # source uniform on A discretised at the sites' own cells: w = |y|^2/2 + const
    grid = EvaluationGrid(1.0, 1025, 1)
    x = grid.axis
    src = source_from_nodes(grid, (np.abs(x) <= 1).astype(float))
    y = -1 + (np.arange(16) + 0.5) / 8
    phi = solve_step(src, y, np.full(16, 1 / 8), SolverOptions(mass_tol=1e-10))
    w = phi.weights - phi.weights.min()
    ref = y ** 2 / 2
    np.testing.assert_allclose(w, ref - ref.min(), atol=1e-10)


def test_fixed_point_of_exp_oracle():
    src = source_from_nodes(GRID, np.exp(-exp_oracle(X)))
    n = 129
    y = -1 + (np.arange(n) + 0.5) * 2 / n
    phi = solve_step(src, y, np.full(n, 2 / n), SolverOptions(mass_tol=1e-10))
    # the best max-affine approximant with these slopes: tangent lines of the oracle
    xs = 2 * np.arctanh(y)
    w_tan = y * xs - exp_oracle(xs)
    x = np.linspace(-4, 4, 401)[:, None]
    tangent_err = np.max(np.abs(np.max(x * y - w_tan, axis=1) - exp_oracle(x[:, 0])))
    vals = evaluate(phi, x)
    shift = np.mean(vals - exp_oracle(x[:, 0]))
    err = np.max(np.abs(vals - shift - exp_oracle(x[:, 0])))
    assert err <= 2 * tangent_err + 2e-3


def test_exact_single_site_and_symmetry():
    src = source_from_nodes(GRID, np.exp(-X ** 2 / 2))
    assert solve_step_1d_exact(src, np.array([0.3]), np.ones(1)).weights.tolist() == [0.0]
    y = np.array([-0.9, -0.4, -0.1, 0.1, 0.4, 0.9])
    phi = solve_step_1d_exact(src, y, np.ones(6))
    # symmetric data: phi even, so phi*(y) = w is even in y
    np.testing.assert_allclose(phi.weights, phi.weights[::-1], atol=1e-12)
    newton = solve_step(src, y, np.ones(6), SolverOptions(mass_tol=1e-11))
    np.testing.assert_allclose(newton.weights, phi.weights, atol=1e-8)


def test_dual_is_monotone_and_masses_balance():
    src = source_from_nodes(GRID, np.exp(-(X - 1) ** 2) + 0.5 * np.exp(-(X + 2) ** 2 / 0.5))
    rng = np.random.default_rng(7)
    y = np.sort(rng.uniform(-1, 1, 30))
    m = rng.uniform(0.5, 1.5, 30)
    phi, state = solve_step(src, y, m, SolverOptions(mass_tol=1e-9), return_state=True)
    assert np.all(np.diff(state.dual_history) >= -1e-12 * (1 + abs(state.dual_history[0])))
    assert state.mass_error <= 1e-9
    assert phi.weights.min() == 0
    out = assign_cells(phi.weights, y, src)
    np.testing.assert_allclose(out.masses, m / m.sum(), rtol=1e-8)


def test_no_convergence_carries_state():
    src = source_from_nodes(GRID, np.exp(-X ** 2))
    with pytest.raises(NoConvergence) as info:
        solve_step(src, np.linspace(-0.9, 0.9, 20), np.ones(20), SolverOptions(mass_tol=1e-14, max_iters=1))
    assert info.value.state is not None


def test_two_dimensional_balance():
    grid = EvaluationGrid(5.0, 65, 2)
    x = grid.nodes
    src = source_from_nodes(grid, np.exp(-np.sum(x ** 2, axis=1)))
    # a generic rotation: edges parallel to the rows make the row-wise mass
    # jump in w and are avoided on purpose
    ang = 2 * np.pi * np.arange(12) / 12 + 0.1234
    y = np.r_[0.8 * np.c_[np.cos(ang), np.sin(ang)], 0.3 * np.c_[np.cos(ang[::3]), np.sin(ang[::3])]]
    m = np.ones(len(y))
    phi, state = solve_step(src, y, m, SolverOptions(mass_tol=1e-8), return_state=True)
    out = assign_cells(phi.weights, y, src)
    np.testing.assert_allclose(out.masses, m / m.sum(), rtol=1e-7)
