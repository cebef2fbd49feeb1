"""
Acceptance criteria at their stated tolerances.

Each criterion records one PASS/FAIL line; the lines are printed in the
pytest terminal summary and when this file is run as a script.
"""

import numpy as np
import pytest
from scipy.integrate import quad

import _runs
from ma_iterate import affine_geom
from ma_iterate.convex_body import build_body
from ma_iterate.errors import BarycenterNotAtOrigin, HypothesisViolated, ValidationError
from ma_iterate.functionals import F_of
from ma_iterate.iteration import IterationConfig, run
from ma_iterate.oracle import power_oracle_1d
from ma_iterate.ot_solver import SolverOptions, solve_step, solve_step_1d_exact, source_from_nodes
from ma_iterate.potential import EvaluationGrid
from ma_iterate.profile import Profile

RESULTS = {}
NUM_TOL = 1e-6


def record(key, ok, detail):
    RESULTS[key] = f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}"
    return ok


def _exp_oracle(x):
    return 2 * np.log(2 * np.cosh(x / 2))


def criterion_1():
    phi, trace, secs, _ = _runs.exp_1d()
    x = np.linspace(-4, 4, 801)[:, None]
    err = float(np.max(np.abs(phi(x) - _exp_oracle(x[:, 0]))))
    steps = len(trace.steps)
    ok = trace.converged and err <= 2e-2 and steps <= 60 and secs < 10
    return record(1, ok, f"exponential 1D sup-error {err:.2e} (<= 2e-2), {steps} iterations (<= 60), "
                         f"{secs:.1f} s (< 10 s)")


def _power_1d_geometry():
    phi, trace, _, config = _runs.power_1d()
    geom = affine_geom.IterateGeometry.from_trace(phi, trace, config.body, config.profile)
    return phi, trace, config, geom


def criterion_2():
    phi, trace, config, geom = _power_1d_geometry()
    x = np.linspace(-4, 4, 801)[:, None]
    err = float(np.max(np.abs(phi(x) - np.sqrt(1 + x[:, 0] ** 2))))
    rep = affine_geom.affine_report(geom, config.body)
    ok = trace.converged and err <= 2e-2 and abs(rep.gamma_est - 1) <= 2e-2
    return record(2, ok, f"power 1D sup-error {err:.2e} (<= 2e-2), gamma {rep.gamma_est:.6f} "
                         f"(|gamma - 1| <= 2e-2)")


def criterion_3():
    worst = np.inf
    for name, fn in _runs.ALL_RUNS.items():
        _, trace, _, _ = fn()
        for s in trace.steps:
            worst = min(worst, s.functionals.gap1, s.functionals.gap2)
    return record(3, worst >= -NUM_TOL, f"smallest chain gap over all runs {worst:.3e} (>= -1e-6)")


def criterion_4():
    phi, trace, secs, _ = _runs.exp_square()
    x = _runs.square_window()
    err = float(np.max(np.abs(phi(x) - _exp_oracle(x[:, 0]) - _exp_oracle(x[:, 1]))))
    ok = trace.converged and err <= 5e-2 and secs < 120
    return record(4, ok, f"exponential 2D square sup-error {err:.2e} (<= 5e-2), {secs:.1f} s (< 120 s)")


def _density_norm(phi_fn, k, s):
    """G = ||phi^-k / Z||_{s/(s+1)} in 1D by adaptive quadrature."""
    Z = quad(lambda x: phi_fn(x) ** -k, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    q = s / (s + 1)
    inner = quad(lambda x: (phi_fn(x) ** -k / Z) ** q, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    return inner ** (1 / q)


def criterion_5():
    sol = power_oracle_1d()
    asa = [affine_geom.affine_surface_area(sol, m) for m in (1, 2, 3)]
    rel = [abs(a / np.pi - 1) for a in asa]
    G = _density_norm(lambda x: np.sqrt(1 + x * x), 3, 2.0)
    lhs = asa[0] ** 1.5
    rhs = sol.body.volume * G
    ident = abs(lhs / rhs - 1)
    ok = max(rel) <= 1e-2 and ident <= 1e-2
    return record(5, ok, f"ASA methods 1/2/3 = {asa[0]:.6f}/{asa[1]:.6f}/{asa[2]:.6f} vs pi "
                         f"(max rel {max(rel):.1e} <= 1e-2); Omega^(3/2) = vol*G rel {ident:.1e}")


def criterion_6():
    details, ok = [], True
    sol = power_oracle_1d()
    F = quad(lambda x: (1 + x * x) ** -1.0, -np.inf, np.inf)[0] ** -0.5
    _, mu_nu = affine_geom.cone_measures(sol)
    rel = abs(F ** -2 / mu_nu - 1)
    ok &= rel <= 1e-2
    details.append(f"oracle {rel:.1e}")
    phi, _, config, geom = _power_1d_geometry()
    _, mu_nu = affine_geom.cone_measures(geom)
    rel = abs(F_of(phi, config.profile, config.grid) ** -2 / mu_nu - 1)
    ok &= rel <= 3e-2
    details.append(f"1D iterate {rel:.1e}")
    phi, trace, _, config = _runs.power_disc()
    geom = affine_geom.IterateGeometry.from_trace(phi, trace, config.body, config.profile)
    _, mu_nu = affine_geom.cone_measures(geom)
    rel = abs(F_of(phi, config.profile, config.grid, complete=True) ** -3 / mu_nu - 1)
    ok &= rel <= 3e-2
    details.append(f"2D iterate {rel:.1e}")
    return record(6, bool(ok), "F^-(n+1) vs cone measure of nu, relative gaps " + ", ".join(details)
                  + " (oracle <= 1e-2, iterates <= 3e-2)")


def _random_source(rng, grid):
    x = grid.axis
    dens = np.zeros_like(x)
    for _ in range(rng.integers(1, 4)):
        c, s = rng.uniform(-2, 2), rng.uniform(0.3, 1.5)
        dens += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((x - c) / s) ** 2)
    return source_from_nodes(grid, dens)


def criterion_7():
    worst_mass = 0.0
    for fn in _runs.ALL_RUNS.values():
        _, trace, _, _ = fn()
        worst_mass = max(worst_mass, max(s.mass_error for s in trace.steps))
    rng = np.random.default_rng(20240611)
    grid = EvaluationGrid(8.0, 513, 1)
    worst_w = 0.0
    for _ in range(20):
        src = _random_source(rng, grid)
        n = int(rng.integers(5, 40))
        sites = np.sort(rng.uniform(-1, 1, n))
        masses = rng.uniform(0.5, 1.5, n)
        masses *= 2 / masses.sum()
        w_newton = solve_step(src, sites, masses, SolverOptions(mass_tol=1e-10)).weights
        w_exact = solve_step_1d_exact(src, sites, masses).weights
        worst_w = max(worst_w, float(np.max(np.abs(w_newton - w_exact))))
    ok = worst_mass <= 1e-6 and worst_w <= 1e-8
    return record(7, ok, f"worst relative site mass error {worst_mass:.1e} (<= 1e-6); "
                         f"Newton vs quantile weights {worst_w:.1e} on 20 sources (<= 1e-8)")


def criterion_8():
    bad, count = [], 0
    for name, fn in _runs.ALL_RUNS.items():
        _, trace, _, config = fn()
        c = config.tau / config.body.volume
        for s in trace.steps:
            g = s.growth
            count += 1
            if not (g.ok and g.positivity_margin >= -1e-9 * (1 + abs(c)) and g.lower_margin >= 0
                    and g.upper_margin >= 0 and g.radius > 0):
                bad.append((name, s.iteration))
    return record(8, not bad, f"growth and positivity bounds at {count} iterations, "
                              f"{len(bad)} violations {bad[:3]}")


def criterion_9():
    worst, count = np.inf, 0
    for fn in (_runs.exp_1d, _runs.exp_square, _runs.exp_disc):
        _, trace, _, config = fn()
        vol = config.body.volume
        # normalised iterates have sum nu_j phi*(y_j) = -tau
        D_prev = trace.F_seed - config.tau / vol + np.log(vol)
        for s in trace.steps:
            r = s.functionals
            worst = min(worst, D_prev - r.mabuchi, r.mabuchi - r.ding)
            D_prev = r.ding
            count += 1
    return record(9, worst >= -NUM_TOL, f"D(phi_i) >= K(phi_i+1) >= D(phi_i+1) over {count} steps, "
                                        f"smallest slack {worst:.3e} (>= -1e-6)")


def criterion_10():
    x = _runs.disc_window()
    errs = {}
    for kind, fn in (("exp", _runs.exp_disc), ("power", _runs.power_disc)):
        phi, trace, _, _ = fn()
        errs[kind] = float(np.max(np.abs(phi(x) - _runs.disc_oracle(kind)(x))))
    ok = max(errs.values()) <= 5e-2
    return record(10, ok, f"disc vs shooting oracle sup-error exp {errs['exp']:.2e}, "
                          f"power {errs['power']:.2e} (<= 5e-2)")


def criterion_11():
    outcomes = []
    tri = build_body([[0, 0], [1, 0], [0, 1]])
    checks = [
        (BarycenterNotAtOrigin, IterationConfig(tri, Profile.exponential(2), 1.0, 50, 8.0, 33)),
        (ValidationError, IterationConfig(_runs.INTERVAL, Profile.power(1, 1.0), 0.0, 33, 8.0, 65)),
        (ValidationError, IterationConfig(_runs.INTERVAL, Profile.power(1, 1.0), -1.0, 33, 8.0, 65)),
        (HypothesisViolated, IterationConfig(_runs.INTERVAL, Profile.power(1, 0.0), 1.0, 33, 8.0, 65)),
    ]
    for exc, config in checks:
        try:
            run(config)
            outcomes.append(False)
        except exc:
            outcomes.append(True)
    return record(11, all(outcomes), "uncentered body, tau = 0, tau < 0 and p = 0 rejected: "
                                     + "/".join("yes" if o else "NO" for o in outcomes))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{k}" for k in range(1, 12)])
def test_criterion(criterion):
    assert criterion(), RESULTS.get(CRITERIA.index(criterion) + 1)


if __name__ == "__main__":
    for crit in CRITERIA:
        crit()
    print("\n".join(RESULTS[k] for k in sorted(RESULTS)))
