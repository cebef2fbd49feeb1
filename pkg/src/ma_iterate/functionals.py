"""
Lyapunov functionals of the iteration and their Kähler-side counterparts.

F(f) = H^-1(int H(f)):   -log int e^-f          (exponential)
                         (int f^-s)^(-1/s)      (power)
G(rho):                  -int rho log rho       (exponential)
                         ||rho||_{s/(s+1)}      (power)

Max-affine potentials are integrated exactly along grid lines (see
`linescan`); plain callables fall back to the trapezoid rule on the grid
nodes.  Both the F of a potential and the G of the density it generates use
the same base measure, so the chain inequalities hold in the discrete sense
up to the transport solver tolerance.
"""

from dataclasses import dataclass

import numpy as np

from . import linescan
from .errors import InequalityViolated, MonotonicityViolated, NonPositivePotential, WrongProfile
from .potential import EvaluationGrid, MaxAffinePotential, argmin, evaluate
from .profile import Profile, couple

NUM_TOL = 1e-6


@dataclass(frozen=True)
class FunctionalRecord:
    F_value: float
    pairing: float
    G_value: float
    g_value: float
    ding: float | None
    mabuchi: float | None
    aubin_mabuchi: float
    gap1: float | None = None
    gap2: float | None = None


def _rows(phi, grid):
    if grid is None:
        if phi.dim != 1:
            raise ValueError("a grid is needed in dimension > 1")
        return EvaluationGrid(1.0, 2, 1).rows
    return grid.rows


def _check_positive(phi, grid):
    if isinstance(phi, MaxAffinePotential):
        vmin = argmin(phi, tie_break="center")[1]
    else:
        vmin = float(np.min(phi(grid.nodes)))
    if vmin <= 0:
        raise NonPositivePotential(f"min phi = {vmin} <= 0")


def line_integral(phi: MaxAffinePotential, kernel: linescan.Kernel, grid=None) -> float:
    """int kernel(phi), exact along lines, trapezoid across them."""
    rows = _rows(phi, grid)
    return linescan.measure_from_potential(phi.sites, phi.weights, rows, kernel).total


def _node_integral(values, grid):
    return float(grid.quad_weights @ values)


def F_of(phi, profile: Profile, grid: EvaluationGrid | None = None, complete: bool = False) -> float:
    """
    F(phi) for a max-affine potential or a vectorised callable.

    complete=True adds, for a max-affine phi in the plane, the part of the
    integral outside the strip the grid rows cover (|x_2| > L), so that the
    value refers to all of R^2 rather than to the base measure of the run.

    Raises
    ------
    NonPositivePotential
        power profile with min phi <= 0.
    """
    s = profile.s
    if profile.is_power:
        _check_positive(phi, grid)
    if isinstance(phi, MaxAffinePotential):
        kernel = linescan.Kernel("power", s) if profile.is_power else linescan.Kernel("exp")
        total = line_integral(phi, kernel, grid)
        if complete and phi.dim == 2:
            total += linescan.strip_complement(phi.sites, phi.weights, kernel, grid.halfwidth)
    else:
        vals = np.asarray(phi(grid.nodes), dtype=float)
        total = _node_integral(vals ** -s if profile.is_power else np.exp(-vals), grid)
    if profile.is_power:
        return float(total ** (-1.0 / s))
    return float(-np.log(total))


def pairing(phi_next, rho) -> float:
    """<phi_next, rho>, using that the solved step has MA(phi_next)/vol = rho."""
    if isinstance(phi_next, MaxAffinePotential):
        return linescan.potential_integral(rho.measure, phi_next.sites, phi_next.weights)
    return float(rho.masses @ phi_next(rho.grid.nodes))


def G_of(rho, profile: Profile) -> float:
    """
    G of a source density.

    For rho = h(phi)/Z built from a potential the closed forms reduce to
    <phi, rho> + log Z (exponential) and Z^-1 (int phi^-s)^((s+1)/s)
    (power); otherwise node densities are used with 0 log 0 = 0.
    """
    gen, Z = rho.generator, rho.normalizer
    if gen is not None and Z is not None:
        if profile.is_power:
            s = profile.s
            total = line_integral(gen, linescan.Kernel("power", s), rho.grid)
            return float(total ** ((s + 1) / s) / Z)
        return pairing(gen, rho) + float(np.log(Z))
    q = rho.grid.quad_weights
    dens = rho.masses / q
    if profile.is_power:
        s = profile.s
        return float((q @ dens ** (s / (s + 1))) ** ((s + 1) / s))
    pos = rho.masses > 0
    return float(-np.sum(rho.masses[pos] * np.log(dens[pos])))


def g_value(profile: Profile, pair: float, G: float) -> float:
    return float(couple(profile.coupling, pair, G))


@dataclass(frozen=True)
class GapReport:
    F_prev: float
    g_value: float
    F_next: float
    gap1: float
    gap2: float
    ok: bool


def duality_gap_check(phi_prev, phi_next, rho, profile: Profile, num_tol: float = NUM_TOL,
                      raise_on_violation: bool = True) -> GapReport:
    """
    F(phi_prev) >= g(<phi_next, rho>, G(rho)) >= F(phi_next) for rho built
    from phi_prev and phi_next its solved (normalised) successor.
    """
    grid = rho.grid
    F_prev = F_of(phi_prev, profile, grid)
    F_next = F_of(phi_next, profile, grid)
    gv = g_value(profile, pairing(phi_next, rho), G_of(rho, profile))
    gap1, gap2 = F_prev - gv, gv - F_next
    ok = gap1 >= -num_tol and gap2 >= -num_tol
    report = GapReport(F_prev, gv, F_next, gap1, gap2, ok)
    if raise_on_violation and not ok:
        raise MonotonicityViolated(f"MonotonicityViolated: gaps ({gap1:.3e}, {gap2:.3e})",
                                   (gap1, gap2), None)
    return report


def ding_mabuchi(phi, rho, body, grid=None, profile: Profile | None = None,
                 legendre_integral: float | None = None):
    """
    (D, K, AM) for an exponential-profile potential.

    D = F + I/vol + log vol and AM = -I/vol with I = int_A phi*.  K is the
    K-energy of phi as the solved successor for rho, with its determinant
    term taken from det D^2 phi = vol * rho:
    K = <phi, rho> - G(rho) + log vol + I/vol.
    """
    if profile is not None:
        require_exponential(profile)
    if not isinstance(phi, MaxAffinePotential):
        raise TypeError("ding_mabuchi needs a max-affine potential")
    vol = body.volume
    I = float(phi.site_masses @ phi.weights) if legendre_integral is None else legendre_integral
    grid = rho.grid if grid is None else grid
    F = F_of(phi, Profile.exponential(phi.dim), grid)
    D = F + I / vol + np.log(vol)
    K = pairing(phi, rho) - G_of(rho, Profile.exponential(phi.dim)) + np.log(vol) + I / vol
    return float(D), float(K), float(-I / vol)


def functional_record(phi_prev, phi_next, rho, profile: Profile, body) -> FunctionalRecord:
    """All per-step quantities for the successor phi_next of phi_prev."""
    grid = rho.grid
    F_prev = F_of(phi_prev, profile, grid)
    F_next = F_of(phi_next, profile, grid)
    pair = pairing(phi_next, rho)
    G = G_of(rho, profile)
    gv = g_value(profile, pair, G)
    I = float(phi_next.site_masses @ phi_next.weights)
    vol = body.volume
    ding = mabuchi = None
    if not profile.is_power:
        ding = F_next + I / vol + float(np.log(vol))
        mabuchi = pair - G + float(np.log(vol)) + I / vol
    return FunctionalRecord(F_next, pair, G, gv, ding, mabuchi, -I / vol, F_prev - gv, gv - F_next)


def require_exponential(profile: Profile):
    if profile.is_power:
        raise WrongProfile("Ding and Mabuchi functionals need the exponential profile")


@dataclass(frozen=True)
class HolderReport:
    lhs: float
    rhs: float
    gap: float


def reverse_holder_check(f, h_density, s: float, weights, tol: float = 1e-12) -> HolderReport:
    """
    ||h||_{s/(s+1)} ||f||_{-s} <= int f h for positive f, nonnegative h.

    f, h_density are samples and weights the quadrature weights.
    """
    f = np.asarray(f, dtype=float)
    h = np.asarray(h_density, dtype=float)
    q = np.asarray(weights, dtype=float)
    if np.any(f <= 0):
        raise NonPositivePotential("reverse Hölder needs f > 0")
    p = s / (s + 1)
    h_norm = (q @ h ** p) ** (1 / p)
    f_norm = (q @ f ** -s) ** (-1 / s)
    lhs = float(h_norm * f_norm)
    rhs = float(q @ (f * h))
    if lhs > rhs + tol * max(1.0, abs(rhs)):
        raise InequalityViolated(f"reverse Hölder fails: {lhs} > {rhs}")
    return HolderReport(lhs, rhs, rhs - lhs)


def node_values(phi, grid):
    """phi at the grid nodes for either representation."""
    if isinstance(phi, MaxAffinePotential):
        return evaluate(phi, grid.nodes)
    return np.asarray(phi(grid.nodes), dtype=float)
