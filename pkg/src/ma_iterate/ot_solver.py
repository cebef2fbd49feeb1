"""
One second-boundary-value step as semi-discrete optimal transport.

Given a source probability density rho and sites y_j with masses nu_j, find
weights w so that the gradient of phi(x) = max_j <x, y_j> - w_j pushes rho
onto sum_j (nu_j / vol) delta_{y_j}.  The concave dual

    D(w) = -int phi_w rho - sum_j (nu_j / vol) w_j,   dD/dw_j = mass_j(w) - nu_j / vol,

is maximised by damped Newton steps; cell masses and the Hessian (a
weighted graph Laplacian over neighbouring cells) come from exact
integration along grid lines (see `linescan`).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from . import linescan
from .errors import EmptyCellPersistent, NoConvergence
from .potential import EvaluationGrid, MaxAffinePotential, winners


POPULATED_FRACTION = 0.05
NODE_MASS_FLOOR = 1e-10


@dataclass
class SourceDensity:
    """
    Source probability on a grid.

    masses are node masses (sum 1) for node-based diagnostics; measure is the
    line-integrated density the solver and the functionals integrate against.
    generator, when present, is the potential phi_i with rho = h(phi_i) / Z.
    """
    grid: EvaluationGrid
    masses: np.ndarray
    measure: linescan.RowMeasure
    tail_mass_bound: float = 0.0
    generator: MaxAffinePotential | None = None
    normalizer: float | None = None

    @property
    def node_density(self) -> np.ndarray:
        return self.masses / self.grid.quad_weights


def source_from_nodes(grid: EvaluationGrid, node_density) -> SourceDensity:
    """Density given by node values, linearly interpolated along lines, zero off the box."""
    dens = np.asarray(node_density, dtype=float)
    measure = linescan.measure_from_nodes(grid.axis, grid.node_field(dens), grid.rows)
    total = measure.total
    masses = grid.quad_weights * dens
    return SourceDensity(grid, masses / masses.sum(), measure.normalized(), 0.0, None, total)


@dataclass(frozen=True)
class SolverOptions:
    mass_tol: float = 1e-6
    max_iters: int = 500
    damping: float = 0.5
    method: str = "newton"


@dataclass
class DualState:
    weights: np.ndarray
    cell_masses: np.ndarray
    dual_value: float
    iterations: int = 0
    dual_history: list = field(default_factory=list)
    mass_error: float = np.inf


@dataclass(frozen=True)
class CellAssignment:
    masses: np.ndarray
    labels: np.ndarray


def assign_cells(weights, sites, source: SourceDensity) -> CellAssignment:
    """
    Cell masses of the Laguerre cells {x : j attains max_k <x, y_k> - w_k}.

    labels give the winning site at every grid node (ties to the lowest
    index); masses are the exact line integrals of the source over each cell.
    """
    sites = np.asarray(sites, dtype=float).reshape(len(weights), -1)
    ci = linescan.cell_integrals(source.measure, sites, weights, with_hessian=False)
    phi = MaxAffinePotential(sites, np.asarray(weights, dtype=float), np.ones(len(weights)))
    return CellAssignment(ci.masses, winners(phi, source.grid.nodes))


def _evaluate(source, sites, w, target, hessian=True):
    ci = linescan.cell_integrals(source.measure, sites, w, with_hessian=hessian)
    dual = -ci.pairing - float(target @ w)
    return ci, dual


def _laplacian(ci, N):
    i, j, d = ci.hess_i, ci.hess_j, ci.hess_d
    off = sp.coo_matrix((np.r_[-d, -d], (np.r_[i, j], np.r_[j, i])), shape=(N, N)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return off + sp.diags(diag), diag


def _direction(ci, g, N, method):
    L, diag = _laplacian(ci, N)
    if method == "diagonal":
        return g / np.where(diag > 0, diag, max(diag.max(), 1.0))
    # empty cells have no neighbours; give them a gradient step of typical size
    isolated = diag <= 0
    if isolated.any():
        L = L + sp.diags(np.where(isolated, np.median(diag[~isolated]) if (~isolated).any() else 1.0, 0.0))
    # pin the best-connected site to fix the additive gauge
    pin = int(np.argmax(diag))
    keep = np.r_[0:pin, pin + 1:N]
    delta = np.zeros(N)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", MatrixRankWarning)
        try:
            delta[keep] = spsolve(L[keep][:, keep].tocsc(), g[keep])
        except Exception:
            delta[:] = np.nan
        if not np.all(np.isfinite(delta)):
            reg = 1e-10 * max(diag.max(), 1e-300)
            delta = spsolve((L + reg * sp.eye(N)).tocsc(), g)
    return delta


def _scaled_identity(source, sites, target):
    """w_j = |y_j|^2 / (2 sigma): the map x -> sigma x matching second moments."""
    x = source.grid.nodes
    m = source.masses
    var_x = m @ np.sum((x - m @ x) ** 2, axis=1)
    var_y = target @ np.sum((sites - target @ sites) ** 2, axis=1)
    sigma = np.sqrt(var_y / var_x) if var_x > 0 and var_y > 0 else 1.0
    return 0.5 * np.sum(sites ** 2, axis=1) / sigma


def _radial_rearrangement(source, sites, target, samples=2048):
    """
    Conjugate weights of the radial monotone map x -> g(|x|) x / |x|.

    g = F_A^-1 o F_rho matches the radial distribution functions, and
    w_j = int_0^|y_j| F_rho^-1(F_A(t)) dt is the Legendre transform of the
    convex radial potential with derivative g.
    """
    r = np.linalg.norm(source.grid.nodes, axis=1)
    order = np.argsort(r)
    r_sorted = r[order]
    cum_rho = np.cumsum(source.masses[order])
    s = np.linalg.norm(sites, axis=1)
    s_order = np.argsort(s)
    s_sorted = s[s_order]
    cum_a = np.cumsum(target[s_order]) - 0.5 * target[s_order]
    t = np.linspace(0.0, s_sorted[-1], samples)
    level = np.interp(t, s_sorted, cum_a, left=0.0)
    inv = np.interp(level, cum_rho, r_sorted)
    prim = np.r_[0.0, np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(t))]
    return np.interp(s, t, prim)


def populate(source: SourceDensity, sites, w, target, rounds: int = 20) -> np.ndarray:
    """
    Coordinate ascent on the cells holding less than POPULATED_FRACTION of
    their target mass.

    Damped Newton needs every cell populated at the start: an empty cell
    makes the Laplacian singular and the floor of the line search zero.
    Cells are visited one at a time.  Site j first takes the node x, among
    nodes carrying source mass, where <x, y_j> - w_j comes closest to
    phi(x); w_j is then lowered until cell j holds between half and
    3/2 of its target.  Mass_j is monotone in w_j and each such step
    increases the concave dual, so the sweeps settle.
    """
    w = np.array(w, dtype=float)
    nodes = source.grid.nodes[source.masses > NODE_MASS_FLOOR * source.masses.max()]
    h = source.grid.min_spacing

    def mass_of(weights, j):
        return linescan.cell_integrals(source.measure, sites, weights, with_hessian=False).masses[j]

    for _ in range(rounds):
        m = linescan.cell_integrals(source.measure, sites, w, with_hessian=False).masses
        empty = np.flatnonzero(m < POPULATED_FRACTION * target)
        if empty.size == 0:
            break
        for j in empty:
            scores = nodes @ sites.T - w
            best = np.argmax(scores, axis=1)
            slack = scores[:, j] - scores[np.arange(len(nodes)), best]
            k = int(np.argmax(slack))
            margin = 1e-3 * h * max(np.linalg.norm(sites[j] - sites[best[k]]), 1e-12)
            hi = w[j]                       # mass_j too small here
            lo = w[j] + slack[k] - margin
            for _ in range(80):
                w[j] = lo
                if mass_of(w, j) >= target[j]:
                    break
                hi, margin = lo, 2 * margin
                lo = hi - margin
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                w[j] = mid
                mj = mass_of(w, j)
                if 0.5 * target[j] <= mj <= 1.5 * target[j]:
                    break
                if mj < target[j]:
                    hi = mid
                else:
                    lo = mid
    return w


def cold_start(source: SourceDensity, sites, target) -> np.ndarray:
    """
    Starting weights: the better, by dual value, of the moment-scaled
    identity map and the radial monotone rearrangement.
    """
    best, best_dual = None, -np.inf
    for w in (_scaled_identity(source, sites, target), _radial_rearrangement(source, sites, target)):
        _, dual = _evaluate(source, sites, w, target, hessian=False)
        if dual > best_dual:
            best, best_dual = w, dual
    return best


def _newton(source, sites, target, w, opts):
    N = len(target)
    ci, dual = _evaluate(source, sites, w, target)
    floor = 0.5 * min(target.min(), ci.masses.min())
    state = DualState(w.copy(), ci.masses, dual, 0, [dual])
    dual_slack = 1e-13 * (1 + abs(dual))
    while True:
        g = ci.masses - target
        state.mass_error = float(np.max(np.abs(g) / target))
        if state.mass_error <= opts.mass_tol:
            break
        if state.iterations >= opts.max_iters:
            raise NoConvergence(f"NoConvergence after {opts.max_iters} steps, "
                                f"mass error {state.mass_error:.3e}", state)
        delta = _direction(ci, g, N, opts.method)
        theta = 1.0
        while True:
            w_try = w + theta * delta
            ci_try, dual_try = _evaluate(source, sites, w_try, target)
            populated = ci_try.masses.min() >= floor
            if populated and dual_try >= dual - dual_slack:
                break
            theta *= opts.damping
            if theta < 1e-14:
                if not populated:
                    raise EmptyCellPersistent("EmptyCellPersistent: damping cannot keep cells populated", state)
                raise NoConvergence(f"NoConvergence: line search stalled at mass error {state.mass_error:.3e}",
                                    state)
        w, ci, dual = w_try, ci_try, dual_try
        state.iterations += 1
        state.weights, state.cell_masses, state.dual_value = w.copy(), ci.masses, dual
        state.dual_history.append(dual)
    return w, state


def _mixture(source, t):
    """(1 - t) rho + t * uniform on the grid box, from node densities."""
    q = source.grid.quad_weights
    return source_from_nodes(source.grid, (1 - t) * source.node_density + t / q.sum())


def _continuation(source, sites, target, opts, stages: int = 40):
    """
    Warm start through the mixtures (1 - t) rho + t * uniform, t = 1, 1/2,
    1/4, ...; every cell holds mass along the path because the mixture
    density is positive on the box.
    """
    loose = SolverOptions(mass_tol=1e-3, max_iters=opts.max_iters, damping=opts.damping, method=opts.method)
    src = _mixture(source, 1.0)
    w = populate(src, sites, cold_start(src, sites, target), target)
    w, _ = _newton(src, sites, target, w, loose)
    for k in range(1, stages + 1):
        w, _ = _newton(_mixture(source, 2.0 ** -k), sites, target, w, loose)
    return w


def _underfilled(source, sites, w, target):
    m = linescan.cell_integrals(source.measure, sites, w, with_hessian=False).masses
    return bool(np.any(m < POPULATED_FRACTION * target))


def solve_step(source: SourceDensity, sites, site_masses, opts: SolverOptions = SolverOptions(),
               init_weights=None, return_state: bool = False):
    """
    Weights w with max_j |mass_j - nu_j/vol| / (nu_j/vol) <= opts.mass_tol.

    Starts from `cold_start` unless init_weights is given, then fills
    under-populated cells with `populate`; if that fails the start comes from
    a continuation through mixtures with the uniform density.  Each Newton
    step is halved by opts.damping until the dual does not decrease and no
    cell drops below half the smallest initial cell mass.  The result is
    gauged to min w = 0.

    Raises
    ------
    NoConvergence
        after opts.max_iters steps; carries the best state.
    EmptyCellPersistent
        when no positive step length keeps every cell populated.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None]
    nu = np.asarray(site_masses, dtype=float)
    target = nu / nu.sum()
    w = cold_start(source, sites, target) if init_weights is None else np.array(init_weights, dtype=float)
    w = populate(source, sites, w, target)
    if _underfilled(source, sites, w, target):
        w = _continuation(source, sites, target, opts)
    w, state = _newton(source, sites, target, w, opts)
    w = w - w.min()
    state.weights = w
    phi = MaxAffinePotential(sites, w, nu)
    return (phi, state) if return_state else phi


def solve_step_1d_exact(source: SourceDensity, sites, site_masses) -> MaxAffinePotential:
    """
    Monotone rearrangement for n = 1.

    Sorted sites take consecutive source quantiles; the cell boundary b_j
    between y_j < y_{j+1} solves CDF(b_j) = sum_{k<=j} nu_k/vol, and
    w_{j+1} - w_j = b_j (y_{j+1} - y_j).  Gauged to min w = 0.
    """
    y = np.asarray(sites, dtype=float).reshape(-1)
    nu = np.asarray(site_masses, dtype=float)
    N = len(y)
    if N == 1:
        return MaxAffinePotential(y[:, None], np.zeros(1), nu)
    order = np.argsort(y)
    ys = y[order]
    levels = np.cumsum(nu[order])[:-1] / nu.sum()
    zero = np.zeros(1, dtype=int)

    def cdf(t):
        return source.measure.primitives(zero, np.array([t]))[0][0]

    breaks = np.empty(N - 1)
    for j, level in enumerate(levels):
        lo, hi = -1.0, 1.0
        while cdf(lo) >= level:
            lo *= 2
        while cdf(hi) <= level:
            hi *= 2
        breaks[j] = brentq(lambda t: cdf(t) - level, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    ws = np.r_[0.0, np.cumsum(breaks * np.diff(ys))]
    w = np.empty(N)
    w[order] = ws - ws.min()
    return MaxAffinePotential(y[:, None], w, nu)
