"""
Max-affine convex potentials anchored at target sites, and their Legendre data.

phi(x) = max_j (<x, y_j> - w_j) with sites y_j in A and quadrature masses
nu_j (sum nu_j = volume of A).  At active sites phi*(y_j) = w_j, so the
normalisation integral of phi* over A is sum_j nu_j w_j.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, linprog
from scipy.spatial import ConvexHull, Delaunay, QhullError

from . import linescan
from .convex_body import ConvexBody, erode
from .errors import (BoundViolated, InactiveSite, PositivityLost, Unbounded,
                     UnsupportedDimension)
from .profile import Profile

LATTICE_ANGLE = 0.35
ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class MaxAffinePotential:
    sites: np.ndarray
    weights: np.ndarray
    site_masses: np.ndarray

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    @property
    def volume(self) -> float:
        return float(self.site_masses.sum())

    def with_weights(self, weights) -> "MaxAffinePotential":
        return replace(self, weights=np.asarray(weights, dtype=float))

    def __call__(self, x):
        return evaluate(self, x)


@dataclass(frozen=True)
class EvaluationGrid:
    """
    Tensor trapezoid grid on [-L, L]^n; lines run along the first axis.

    grading > 0 places the nodes at L sinh(g t) / sinh(g) for equispaced t,
    so that the spacing near the origin shrinks by about g / sinh(g) while
    the half-width stays large enough for slowly decaying tails.
    """
    halfwidth: float
    points_per_axis: int
    dim: int
    grading: float = 0.0

    @property
    def axis(self) -> np.ndarray:
        t = np.linspace(-1.0, 1.0, self.points_per_axis)
        if self.grading > 0:
            return self.halfwidth * np.sinh(self.grading * t) / np.sinh(self.grading)
        return self.halfwidth * t

    @property
    def axis_weights(self) -> np.ndarray:
        x = self.axis
        w = np.zeros_like(x)
        dx = np.diff(x)
        w[:-1] += dx / 2
        w[1:] += dx / 2
        return w

    @property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.axis)))

    @property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    @property
    def quad_weights(self) -> np.ndarray:
        w = self.axis_weights
        out = w
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, w)
        return out.ravel()

    @property
    def rows(self) -> linescan.Rows:
        if self.dim == 1:
            return linescan.Rows(np.zeros((1, 0)), np.ones(1))
        sub = EvaluationGrid(self.halfwidth, self.points_per_axis, self.dim - 1, self.grading)
        return linescan.Rows(sub.nodes, sub.quad_weights)

    def node_field(self, values) -> np.ndarray:
        """Reshape node values to (rows, points along a line)."""
        m = self.points_per_axis
        v = np.asarray(values).reshape((m,) * self.dim)
        return np.moveaxis(v, 0, -1).reshape(-1, m)

    def window(self, fraction: float = 0.5) -> np.ndarray:
        """Mask of nodes with max-norm at most fraction * L."""
        return np.all(np.abs(self.nodes) <= fraction * self.halfwidth + 1e-12, axis=1)


def evaluate(phi: MaxAffinePotential, x, chunk: int = 4096):
    """phi(x) for one point or an array of points (M, n)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and phi.dim > 1)
    pts = x.reshape(-1, phi.dim)
    out = np.empty(len(pts))
    for a in range(0, len(pts), chunk):
        block = pts[a:a + chunk]
        out[a:a + chunk] = np.max(block @ phi.sites.T - phi.weights, axis=1)
    return float(out[0]) if scalar else out


def winners(phi: MaxAffinePotential, x, chunk: int = 4096):
    """Index of the affine piece attaining the max (ties to the lowest index)."""
    pts = np.asarray(x, dtype=float).reshape(-1, phi.dim)
    out = np.empty(len(pts), dtype=int)
    for a in range(0, len(pts), chunk):
        out[a:a + chunk] = np.argmax(pts[a:a + chunk] @ phi.sites.T - phi.weights, axis=1)
    return out


def gradient(phi: MaxAffinePotential, x):
    return phi.sites[winners(phi, x)]


# site generation ------------------------------------------------------------

def _clip(poly, normal, offset):
    """Keep the part of a convex polygon with <normal, x> + offset >= 0."""
    if len(poly) == 0:
        return poly
    d = poly @ normal + offset
    out = []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        dp, dq = d[i], d[(i + 1) % k]
        if dp >= 0:
            out.append(p)
        if (dp >= 0) != (dq >= 0):
            out.append(p + (q - p) * (dp / (dp - dq)))
    return np.array(out)


def _polygon_moments(poly):
    if len(poly) < 3:
        return 0.0, np.zeros(2)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2
    if abs(area) < 1e-300:
        return 0.0, poly.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6 * area)
    cy = ((y + yn) * cross).sum() / (6 * area)
    return abs(area), np.array([cx, cy])


def _ccw(vertices):
    c = vertices.mean(axis=0)
    return vertices[np.argsort(np.arctan2(vertices[:, 1] - c[1], vertices[:, 0] - c[0]))]


def voronoi_cells(sites, body: ConvexBody):
    """Areas and centroids of the Voronoi cells of `sites` clipped to a polygon."""
    N = len(sites)
    if N > 8:
        tri = Delaunay(sites)
        nbrs = [set() for _ in range(N)]
        for simplex in tri.simplices:
            for a in simplex:
                nbrs[a].update(simplex)
    else:
        nbrs = [set(range(N)) for _ in range(N)]
    base = _ccw(body.vertices)
    areas = np.empty(N)
    cents = np.empty((N, 2))
    for j in range(N):
        poly = base
        for k in nbrs[j]:
            if k == j:
                continue
            # closer to y_j than to y_k
            normal = sites[j] - sites[k]
            offset = (sites[k] @ sites[k] - sites[j] @ sites[j]) / 2
            poly = _clip(poly, normal, offset)
        areas[j], cents[j] = _polygon_moments(poly)
    return areas, cents


def _lattice(body, h, offset):
    c, s = np.cos(LATTICE_ANGLE), np.sin(LATTICE_ANGLE)
    rot = np.array([[c, -s], [s, c]])
    reach = np.abs(body.vertices).max() / h + 2
    k = np.arange(-int(reach), int(reach) + 1)
    grid = np.stack(np.meshgrid(k, k, indexing="ij"), -1).reshape(-1, 2) + offset
    pts = (grid * h) @ rot.T
    return pts[body.contains(pts, tol=-1e-9)]


def make_sites(body: ConvexBody, n_sites: int, seed=None, lloyd_steps: int = 5):
    """
    Quasi-uniform target sites in A with Voronoi-cell masses.

    n = 1: midpoints of n_sites equal subintervals.  n = 2: a rotated square
    lattice with spacing tuned to give n_sites points inside A (the rotation
    keeps no two neighbours on a common vertical line), relaxed by Lloyd
    steps; masses are the clipped Voronoi areas.

    Returns
    -------
    sites : ndarray (N, n)
    masses : ndarray (N,)
    """
    n = body.dim
    if n == 1:
        lo, hi = body.vertices[:, 0].min(), body.vertices[:, 0].max()
        step = (hi - lo) / n_sites
        sites = lo + (np.arange(n_sites) + 0.5) * step
        return sites[:, None], np.full(n_sites, step)
    if n != 2:
        raise UnsupportedDimension("site generation implemented for n <= 2")
    offset = np.zeros(2)
    if seed is not None:
        offset = np.random.default_rng(seed).uniform(-0.5, 0.5, 2)
    h0 = np.sqrt(body.volume / n_sites)
    best = None
    for h in np.linspace(0.8 * h0, 1.25 * h0, 1801):
        pts = _lattice(body, h, offset)
        gap = abs(len(pts) - n_sites)
        if best is None or gap < best[0] or (gap == best[0] and abs(h - h0) < abs(best[1] - h0)):
            best = (gap, h, pts)
        if gap == 0 and abs(h - h0) < 0.02 * h0:
            break
    sites = best[2]
    for _ in range(lloyd_steps):
        areas, cents = voronoi_cells(sites, body)
        sites = np.where(areas[:, None] > 0, cents, sites)
    areas, _ = voronoi_cells(sites, body)
    return sites, areas


def default_potential(sites, masses) -> MaxAffinePotential:
    """Seed phi_0(x) = max_j <x, y_j> - |y_j|^2 / 2."""
    return MaxAffinePotential(sites, 0.5 * np.sum(sites ** 2, axis=1), masses)


# Legendre data --------------------------------------------------------------

def conjugate_envelope(phi: MaxAffinePotential):
    """
    Lower convex envelope of the lifted points (y_j, w_j).

    Returns a callable giving phi* on conv{y_j}, and its values at the sites.
    """
    y, w = phi.sites, phi.weights
    if phi.dim == 1:
        order = np.argsort(y[:, 0])
        ys, ws = y[order, 0], w[order]
        hull = []
        for i in range(len(ys)):
            while len(hull) >= 2:
                i1, i2 = hull[-2], hull[-1]
                if (ws[i2] - ws[i1]) * (ys[i] - ys[i1]) >= (ws[i] - ws[i1]) * (ys[i2] - ys[i1]):
                    hull.pop()
                else:
                    break
            hull.append(i)
        hx, hw = ys[hull], ws[hull]

        def env(q):
            q = np.asarray(q, dtype=float).reshape(-1)
            return np.interp(q, hx, hw, left=np.inf, right=np.inf)
        return env, env(y[:, 0])
    lifted = np.c_[y, w]
    try:
        hull = ConvexHull(lifted)
        eq = hull.equations
        lower = eq[eq[:, -2] < -1e-12]
        # plane: a.y + c w + d = 0 with c < 0  ->  w = -(a.y + d) / c
        coef = -lower[:, :-2] / lower[:, [-2]]
        const = -lower[:, -1] / lower[:, -2]
    except QhullError:
        # all lifted points coplanar: w is affine in y
        A = np.c_[y, np.ones(len(y))]
        sol, *_ = np.linalg.lstsq(A, w, rcond=None)
        coef, const = sol[None, :-1], sol[-1:]

    def env(q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        return np.max(q @ coef.T + const, axis=1)
    return env, env(y)


def active_sites(phi: MaxAffinePotential, tol: float = ACTIVE_TOL):
    """Sites whose affine piece touches the graph: phi*(y_j) = w_j."""
    _, env_vals = conjugate_envelope(phi)
    return phi.weights <= env_vals + tol * (1 + np.abs(phi.weights))


@dataclass(frozen=True)
class LegendreValues:
    values: np.ndarray
    integral: float


def legendre_on_body(phi: MaxAffinePotential, check: bool = True) -> LegendreValues:
    """phi*(y_j) = w_j at active sites and I = sum nu_j phi*(y_j)."""
    if check:
        bad = np.flatnonzero(~active_sites(phi))
        if bad.size:
            raise InactiveSite(bad)
    return LegendreValues(phi.weights.copy(), float(phi.site_masses @ phi.weights))


def normalize(phi: MaxAffinePotential, tau: float, profile: Profile | None = None,
              check: bool = False) -> MaxAffinePotential:
    """
    Add the constant c to phi so that sum nu_j phi*(y_j) = -tau.

    (phi + c)* = phi* - c, so c = (I + tau) / vol(A).  For the power profile
    the shifted potential must stay positive.
    """
    I = legendre_on_body(phi, check=check).integral
    c = (I + tau) / phi.volume
    out = phi.with_weights(phi.weights - c)
    if profile is not None and profile.is_power:
        _, value = argmin(out)
        if value <= 0:
            raise PositivityLost(f"min phi = {value} <= 0 after normalisation with tau = {tau}")
    return out


def _argmin_1d(phi, tie_break):
    y = phi.sites[:, 0]
    if not (y.min() < 0 < y.max()):
        raise Unbounded("origin not interior to conv{sites}")
    env = linescan.upper_envelope(y, -phi.weights[None, :])
    idx = env.idx[0, :env.counts[0]]
    edges = env.edges[0, :env.counts[0] + 1]
    s = y[idx]
    flat = np.flatnonzero(s == 0)
    if flat.size:
        lo, hi = edges[flat[0]], edges[flat[0] + 1]
    else:
        k = np.flatnonzero(s > 0)[0]
        lo = hi = edges[k]
    x = lo if tie_break == "lexicographic" else 0.5 * (lo + hi)
    return np.array([x]), evaluate(phi, np.array([x]))[0]


def argmin(phi: MaxAffinePotential, tie_break: str = "lexicographic"):
    """
    Minimiser of phi as a linear program: min t s.t. <x, y_j> - w_j <= t.

    tie_break "lexicographic" returns the lexicographically smallest point of
    a flat minimum; "center" returns the coordinatewise midpoint, which keeps
    symmetric problems symmetric.
    """
    if phi.dim == 1:
        return _argmin_1d(phi, tie_break)
    n = phi.dim
    y, w = phi.sites, phi.weights
    a_ub = np.c_[y, -np.ones(len(w))]
    free = [(None, None)] * (n + 1)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=a_ub, b_ub=w, bounds=free, method="highs")
    if res.status == 3:
        raise Unbounded("phi is not coercive: origin not interior to conv{sites}")
    if res.status != 0:
        raise Unbounded(f"argmin LP failed: {res.message}")
    t_star = evaluate(phi, res.x[:n][None, :])[0]
    slack = 1e-9 * (1 + abs(t_star))
    x = np.empty(n)
    eq_rows, eq_vals = [], []
    for i in range(n):
        c = np.zeros(n + 1)
        c[i] = 1.0
        bounds = [(None, None)] * n + [(t_star + slack, t_star + slack)]
        kw = dict(A_ub=a_ub, b_ub=w, bounds=bounds, method="highs")
        if eq_rows:
            kw.update(A_eq=np.array(eq_rows), b_eq=np.array(eq_vals))
        lo = linprog(c, **kw).x[i]
        if tie_break == "lexicographic":
            x[i] = lo
        else:
            hi = linprog(-c, **kw).x[i]
            x[i] = 0.5 * (lo + hi)
        row = np.zeros(n + 1)
        row[i] = 1.0
        eq_rows.append(row)
        eq_vals.append(x[i])
    return x, evaluate(phi, x[None, :])[0]


def recenter(phi: MaxAffinePotential, a) -> MaxAffinePotential:
    """phi(x + a) = max_j <x, y_j> - (w_j - <a, y_j>)."""
    a = np.asarray(a, dtype=float).reshape(-1)
    return phi.with_weights(phi.weights - phi.sites @ a)


# growth bounds --------------------------------------------------------------

def conv_inradius(sites) -> float:
    """Largest r with B_r(0) inside conv{sites}."""
    if sites.shape[1] == 1:
        lo, hi = sites.min(), sites.max()
        return float(min(-lo, hi)) if lo < 0 < hi else 0.0
    hull = ConvexHull(sites)
    return float(max(-hull.equations[:, -1].max(), 0.0))


def _max_on_sphere(env, radius, dim, samples=720):
    if dim == 1:
        return float(np.max(env(np.array([-radius, radius]))))
    ang = 2 * np.pi * np.arange(samples) / samples
    pts = radius * np.c_[np.cos(ang), np.sin(ang)]
    return float(np.max(env(pts)))


def lower_growth_radius(phi: MaxAffinePotential, tau: float) -> float:
    """
    Largest r with phi*(y) <= (phi*(0) - tau/vol) / 2 on |y| <= r.

    On that ball phi(x) >= <x, y> - phi*(y) gives
    phi(x) >= (phi(0) + tau/vol) / 2 + r|x| when the minimum sits at 0.
    """
    env, _ = conjugate_envelope(phi)
    c = tau / phi.volume
    at0 = float(env(np.zeros((1, phi.dim)))[0])
    level = 0.5 * (at0 - c)
    rmax = conv_inradius(phi.sites) * (1 - 1e-9)
    if at0 > level:
        return 0.0
    if _max_on_sphere(env, rmax, phi.dim) <= level:
        return rmax
    return brentq(lambda r: _max_on_sphere(env, r, phi.dim) - level, 0.0, rmax, xtol=1e-12)


@dataclass(frozen=True)
class GrowthReport:
    min_value: float
    positivity_margin: float
    radius: float
    lower_margin: float
    upper_constant: float
    slope_bound: float
    upper_margin: float
    eroded_radius: float
    eroded_margin: float
    ok: bool


def growth_bounds_check(phi: MaxAffinePotential, tau: float, body: ConvexBody,
                        grid: EvaluationGrid, eps_geom: float | None = None,
                        slack: float = 1e-9, raise_on_violation: bool = True) -> GrowthReport:
    """
    Check tau/vol + r|x| <= phi(x) <= phi(0) + R|x| at the grid nodes.

    r is certified from phi* (see `lower_growth_radius`); R = max |y_j|.  The
    eroded-body inradius r_eps is reported alongside with its own margin but
    is not enforced.
    """
    x = grid.nodes
    vals = evaluate(phi, x)
    radius_x = np.linalg.norm(x, axis=1)
    c = tau / body.volume
    _, vmin = argmin(phi, tie_break="center")
    at0 = evaluate(phi, np.zeros((1, phi.dim)))[0]
    r = lower_growth_radius(phi, tau)
    tol = slack * (1 + np.abs(vals))
    # valid wherever the minimum sits; equals the recentered form when it is at 0
    lower = 0.5 * (vmin + c) + r * radius_x
    R = float(np.max(np.linalg.norm(phi.sites, axis=1)))
    upper = at0 + R * radius_x
    if eps_geom is None:
        eps_geom = body.inradius / 8
    r_eps = erode(body, eps_geom).inradius if eps_geom > 0 else body.inradius
    report = GrowthReport(
        min_value=float(vmin),
        positivity_margin=float(vmin - c),
        radius=float(r),
        lower_margin=float(np.min(vals - lower + tol)),
        upper_constant=float(at0),
        slope_bound=R,
        upper_margin=float(np.min(upper - vals + tol)),
        eroded_radius=float(r_eps),
        eroded_margin=float(np.min(vals - (c + r_eps * radius_x))),
        ok=True,
    )
    ok = (report.positivity_margin >= -slack * (1 + abs(c)) and r > 0
          and report.lower_margin >= 0 and report.upper_margin >= 0)
    report = replace(report, ok=bool(ok))
    if raise_on_violation and not ok:
        raise BoundViolated(f"growth bounds fail: {report}", report)
    return report


def default_halfwidth(profile: Profile, tau: float, body: ConvexBody,
                      rel_tail: float = 1e-10) -> float:
    """
    Truncation half-width from the linear lower growth tau/vol + r_eps |x|.

    Smallest L whose radial tail fraction of h(c + r_eps |x|) is below
    rel_tail, with r_eps the inradius of A eroded by inradius / 8.
    """
    n = body.dim
    r = erode(body, body.inradius / 8).inradius
    c = tau / body.volume
    if profile.is_power:
        s = profile.s
        c = max(c, 1e-12)

        def dens(t):
            return (c + r * t) ** -(s + 1) * t ** (n - 1)
    else:
        def dens(t):
            return np.exp(-r * t) * t ** (n - 1)
    total = quad(dens, 0, np.inf)[0]

    def frac(L):
        return quad(dens, L, np.inf)[0] / total - rel_tail
    hi = 1.0
    while frac(hi) > 0:
        hi *= 2
        if hi > 1e12:
            return hi
    return brentq(frac, 0.0, hi)
