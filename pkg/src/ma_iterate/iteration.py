"""
Driver for the normalised Monge-Ampère iteration.

Each step builds rho_i = h(phi_i) / Z, solves the transport step onto the
uniform measure of A, shifts the result so that int_A phi* = -tau, moves its
minimum to the origin and checks the monotone chain and the growth bounds.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from . import linescan
from .convex_body import ConvexBody, assert_centered
from .errors import (GridMismatch, MonotonicityViolated, NonPositivePotential, TailTooHeavy,
                     ValidationError, WrongProfile)
from .functionals import NUM_TOL, F_of, FunctionalRecord, functional_record
from .ot_solver import SolverOptions, SourceDensity, solve_step
from .potential import (EvaluationGrid, GrowthReport, MaxAffinePotential, argmin,
                        default_potential, evaluate, growth_bounds_check, make_sites, normalize,
                        recenter)
from .profile import Coupling, Profile, check_hypothesis_b1, h_eval

TAIL_TOL = 1e-8


@dataclass(frozen=True)
class IterationConfig:
    body: ConvexBody
    profile: Profile
    tau: float
    n_sites: int
    grid_halfwidth: float
    grid_points: int
    coupling: Coupling | None = None
    mass_tol: float = 1e-6
    stop_tol: float = 1e-5
    max_iterations: int = 100
    seed_potential: MaxAffinePotential | None = None
    site_seed: int | None = None
    num_tol: float = NUM_TOL
    tail_tol: float = TAIL_TOL
    check_chain: bool = True
    check_growth: bool = True
    grid_grading: float = 0.0

    @property
    def grid(self) -> EvaluationGrid:
        return EvaluationGrid(self.grid_halfwidth, self.grid_points, self.body.dim, self.grid_grading)

    def validate(self) -> None:
        """
        Raises
        ------
        BarycenterNotAtOrigin, WrongProfile, ValidationError, HypothesisViolated
        """
        assert_centered(self.body, 1e-9)
        if self.coupling is not None and self.coupling is not self.profile.coupling:
            raise WrongProfile(f"{self.profile.kind.value} profile needs the "
                               f"{self.profile.coupling.value} coupling")
        if self.profile.dim != self.body.dim:
            raise ValidationError("profile and body dimensions differ")
        if self.profile.is_power:
            if not self.tau > 0:
                raise ValidationError(f"power profile needs tau > 0, got {self.tau}")
            check_hypothesis_b1(self.profile)
        if self.n_sites < 2 or self.grid_points < 3 or self.grid_halfwidth <= 0 or self.grid_grading < 0:
            raise ValidationError("need n_sites >= 2, grid_points >= 3, grid_halfwidth > 0, grid_grading >= 0")


@dataclass
class StepRecord:
    iteration: int
    functionals: FunctionalRecord
    translation: np.ndarray
    drift: float
    sup_change: float
    tail_mass: float
    solver_iterations: int
    mass_error: float
    normalization_error: float
    growth: GrowthReport | None
    tail_moments: tuple
    tail_envelope: tuple
    wall_time: float


@dataclass
class IterationTrace:
    steps: list = field(default_factory=list)
    F_seed: float = np.nan
    converged: bool = False
    radii: tuple = ()
    # (placed potential, shift used to place it) for the last three iterates
    recent: list = field(default_factory=list)

    @property
    def F(self) -> np.ndarray:
        return np.array([self.F_seed] + [s.functionals.F_value for s in self.steps])

    @property
    def sup_changes(self) -> np.ndarray:
        return np.array([s.sup_change for s in self.steps])

    @property
    def max_drift(self) -> float:
        return max((s.drift for s in self.steps), default=0.0)


def _tail_bound(phi, profile, Z, grid, directions: int = 720):
    """
    Upper bound on the mass of h(phi)/Z outside the strip the rows cover.

    The strip misses only points with |x| > L.  Along each ray phi is convex,
    so phi(t u) >= a_u + s_u (t - L) for t >= L with a_u = phi(L u) and s_u
    the right slope there; the radial tail then has a closed form.
    """
    n = phi.dim
    if n == 1:
        return 0.0
    L = grid.halfwidth
    ang = 2 * np.pi * np.arange(directions) / directions
    u = np.c_[np.cos(ang), np.sin(ang)]
    vals = L * (u @ phi.sites.T) - phi.weights
    a = vals.max(axis=1)
    tie = vals >= a[:, None] - 1e-12 * (1 + np.abs(a[:, None]))
    slope = np.max(np.where(tie, u @ phi.sites.T, -np.inf), axis=1)
    if np.any(slope <= 0):
        return np.inf
    if profile.is_power:
        k = profile.s + 1
        if np.any(a <= 0):
            return np.inf
        ray = L * a ** (1 - k) / (slope * (k - 1)) + a ** (2 - k) / (slope ** 2 * (k - 1) * (k - 2))
    else:
        ray = np.exp(-a) * (L / slope + 1 / slope ** 2)
    return float(2 * np.pi * ray.mean() / Z)


def build_density(phi: MaxAffinePotential, profile: Profile, grid: EvaluationGrid,
                  tail_tol: float = TAIL_TOL) -> SourceDensity:
    """
    rho = h(phi) / ||h(phi)||_1 as a line measure plus node masses.

    Raises
    ------
    NonPositivePotential
        power profile with min phi <= 0.
    TailTooHeavy
        when the estimated mass the grid misses exceeds tail_tol.
    """
    if profile.is_power:
        vmin = argmin(phi, tie_break="center")[1]
        if vmin <= 0:
            raise NonPositivePotential(f"min phi = {vmin} <= 0")
        kernel = linescan.Kernel("power", profile.s + 1)
    else:
        kernel = linescan.Kernel("exp")
    measure = linescan.measure_from_potential(phi.sites, phi.weights, grid.rows, kernel)
    Z = measure.total
    node_vals = evaluate(phi, grid.nodes)
    masses = grid.quad_weights * h_eval(profile, node_vals)
    masses = masses / masses.sum()
    tail = _tail_bound(phi, profile, Z, grid)
    if tail > tail_tol:
        raise TailTooHeavy(f"TailTooHeavy: estimated truncated mass {tail:.3e} > {tail_tol:.1e}; "
                           f"enlarge the grid half-width {grid.halfwidth}")
    return SourceDensity(grid, masses, measure.normalized(), tail, phi, Z)


def _tail_moments(rho: SourceDensity, radii):
    r = np.linalg.norm(rho.grid.nodes, axis=1)
    return tuple(float(np.sum((r * rho.masses)[r >= R])) for R in radii)


def _tail_envelope(phi, profile, tau, growth, Z, radii):
    """int_{|x|>=R} |x| h(lower(x)) / Z with the certified linear lower bound."""
    if growth is None or growth.radius <= 0:
        return tuple(np.inf for _ in radii)
    n = phi.dim
    c0 = 0.5 * (growth.min_value + tau / phi.volume)
    r = growth.radius
    area = 2.0 if n == 1 else 2 * np.pi

    def integrand(t):
        return t * float(h_eval(profile, max(c0 + r * t, 1e-300))) * area * t ** (n - 1)
    return tuple(quad(integrand, R, np.inf, limit=200)[0] / Z for R in radii)


def _place(phi, tau, profile):
    a, _ = argmin(phi, tie_break="center")
    # recentring moves int phi* by <a, sum nu_j y_j>; renormalise for the discrete barycenter
    return normalize(recenter(phi, a), tau, profile), a


def run(config: IterationConfig, callback=None):
    """
    Iterate to a fixed point.

    Returns
    -------
    (MaxAffinePotential, IterationTrace)
        the final recentred, normalised potential and the per-step trace;
        trace.converged is False when max_iterations ran out.

    Raises
    ------
    MonotonicityViolated
        when a step breaks the chain beyond num_tol (carries the trace).
    """
    config.validate()
    body, profile, tau = config.body, config.profile, config.tau
    grid = config.grid
    if config.seed_potential is None:
        sites, masses = make_sites(body, config.n_sites, seed=config.site_seed)
        phi = default_potential(sites, masses)
    else:
        phi = config.seed_potential
        sites, masses = phi.sites, phi.site_masses
    phi = normalize(phi, tau, profile)
    phi, a_seed = _place(phi, tau, profile)
    opts = SolverOptions(mass_tol=config.mass_tol)
    L = grid.halfwidth
    radii = (L / 4, L / 2, 3 * L / 4)
    window = grid.nodes[grid.window(0.5)]
    trace = IterationTrace(radii=radii)
    trace.recent.append((phi, a_seed))
    trace.F_seed = F_of(phi, profile, grid)
    values = evaluate(phi, window)
    translation = np.zeros(body.dim)
    for it in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        rho = build_density(phi, profile, grid, config.tail_tol)
        warm = None if it == 1 else phi.weights
        nxt, state = solve_step(rho, sites, masses, opts, init_weights=warm, return_state=True)
        nxt = normalize(nxt, tau, profile)
        rec = functional_record(phi, nxt, rho, profile, body)
        placed, a = _place(nxt, tau, profile)
        growth = None
        if config.check_growth:
            growth = growth_bounds_check(placed, tau, body, grid)
        new_values = evaluate(placed, window)
        sup_change = float(np.max(np.abs(new_values - values)))
        drift = float(np.linalg.norm(a))
        translation = translation + a
        step = StepRecord(
            iteration=it, functionals=rec, translation=translation.copy(), drift=drift,
            sup_change=sup_change, tail_mass=rho.tail_mass_bound,
            solver_iterations=state.iterations, mass_error=state.mass_error,
            normalization_error=float(abs(placed.site_masses @ placed.weights + tau)),
            growth=growth, tail_moments=_tail_moments(rho, radii),
            tail_envelope=_tail_envelope(phi, profile, tau, growth, rho.normalizer, radii),
            wall_time=time.perf_counter() - t0)
        trace.steps.append(step)
        if callback is not None:
            callback(step)
        if config.check_chain and min(rec.gap1, rec.gap2) < -config.num_tol:
            raise MonotonicityViolated(
                f"MonotonicityViolated at step {it}: gaps ({rec.gap1:.3e}, {rec.gap2:.3e})",
                (rec.gap1, rec.gap2), trace)
        phi, values = placed, new_values
        trace.recent = trace.recent[-2:] + [(placed, a)]
        if sup_change <= config.stop_tol:
            trace.converged = True
            break
    return phi, trace


def w1_diagnostic(rho_a: SourceDensity, rho_b: SourceDensity, blocks: int = 12):
    """
    Wasserstein-1 distance between two densities on the same grid.

    n = 1: exact distance between the node measures, returned as (d, d).
    n >= 2: (lower, upper), the lower bound from the 1-Lipschitz test
    functions x_i and |x|, the upper bound from an exact transport between
    block-aggregated measures plus the aggregation cost on both sides.
    """
    ga, gb = rho_a.grid, rho_b.grid
    if ga != gb:
        raise GridMismatch("densities live on different grids")
    x = ga.nodes
    if ga.dim == 1:
        d = float(wasserstein_distance(x[:, 0], x[:, 0], rho_a.masses, rho_b.masses))
        return d, d
    ma, mb = rho_a.masses, rho_b.masses
    tests = [x[:, i] for i in range(ga.dim)] + [np.linalg.norm(x, axis=1)]
    lower = max(abs(float(f @ (ma - mb))) for f in tests)
    L = ga.halfwidth
    edges = np.linspace(-L, L, blocks + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, blocks - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (blocks,) * ga.dim)
    centers_1d = 0.5 * (edges[:-1] + edges[1:])
    centers = np.stack(np.meshgrid(*([centers_1d] * ga.dim), indexing="ij"), -1).reshape(-1, ga.dim)
    move = np.linalg.norm(x - centers[flat], axis=1)
    agg_cost = float(move @ ma + move @ mb)
    pa = np.bincount(flat, weights=ma, minlength=len(centers))
    pb = np.bincount(flat, weights=mb, minlength=len(centers))
    ia, ib = np.flatnonzero(pa > 0), np.flatnonzero(pb > 0)
    cost = np.linalg.norm(centers[ia][:, None, :] - centers[ib][None, :, :], axis=2).ravel()
    k, l = len(ia), len(ib)
    rows_a = np.kron(np.eye(k), np.ones((1, l)))
    rows_b = np.kron(np.ones((1, k)), np.eye(l))
    pb_sel = pb[ib] * pa[ia].sum() / pb[ib].sum()
    res = linprog(cost, A_eq=np.vstack([rows_a, rows_b]), b_eq=np.r_[pa[ia], pb_sel],
                  bounds=(0, None), method="highs")
    upper = float(res.fun) + agg_cost
    return lower, max(upper, lower)


@dataclass(frozen=True)
class TightnessReport:
    radii: tuple
    sup_moments: tuple
    sup_envelope: tuple
    decreasing: bool
    within_envelope: bool


def tightness_check(trace: IterationTrace) -> TightnessReport:
    """
    Tail first moments sum_{|x_k| >= R} |x_k| m_k over the run.

    Reports their supremum over steps for each R, whether they decrease in
    R at every step, and whether they stay below the envelope implied by
    the certified linear lower bound of each step's potential.
    """
    if len(trace.steps) < 3:
        raise ValidationError("tightness check needs at least 3 completed iterations")
    mom = np.array([s.tail_moments for s in trace.steps])
    env = np.array([s.tail_envelope for s in trace.steps])
    decreasing = bool(np.all(np.diff(mom, axis=1) <= 1e-15))
    within = bool(np.all(mom <= env * (1 + 1e-9) + 1e-15))
    return TightnessReport(trace.radii, tuple(mom.max(axis=0)), tuple(env.max(axis=0)),
                           decreasing, within)
