"""
Exact integration along the lines of an evaluation grid.

Integrals over R^n are taken as ``sum_r omega_r * int_R f(t, z_r) dt``: the
first coordinate runs over the whole real line and is integrated in closed
form, the transverse coordinates z_r are the trapezoid nodes of the grid
(one line of weight 1 when n = 1).  Along a line a max-affine function is
piecewise affine, so exp(-phi), phi**-k and piecewise-linear node
interpolants all have closed-form primitives.  Cell masses are then
continuous in the weights and the transport dual has an exact Hessian.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rows:
    """Transverse quadrature: line offsets z (R, n-1) and weights (R,)."""
    z: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return len(self.weights)


def line_coefficients(sites, weights, rows: Rows):
    """Slopes (N,) and intercepts (R, N) of t -> <(t, z_r), y_j> - w_j."""
    sites = np.asarray(sites, dtype=float)
    slopes = sites[:, 0].copy()
    intercepts = rows.z @ sites[:, 1:].T - np.asarray(weights)[None, :]
    return slopes, intercepts


@dataclass(frozen=True)
class Envelope:
    """Upper envelope per line: winners idx (R, K) and piece edges (R, K+1)."""
    idx: np.ndarray
    edges: np.ndarray
    counts: np.ndarray


def upper_envelope(slopes, intercepts) -> Envelope:
    """
    Upper envelope of the lines t -> slopes[j] t + intercepts[r, j] for every r.

    Monotone chain over lines sorted by slope, vectorised across rows.
    Lines touching the envelope at a single point are dropped; among lines
    of equal slope the larger intercept (then the lower index) is kept.
    """
    slopes = np.asarray(slopes, dtype=float)
    intercepts = np.atleast_2d(np.asarray(intercepts, dtype=float))
    R, N = intercepts.shape
    order = np.argsort(slopes, kind="stable")
    s_sorted = slopes[order]
    starts = np.flatnonzero(np.r_[True, np.diff(s_sorted) > 0])
    ends = np.r_[starts[1:], N]
    G = len(starts)
    gs = s_sorted[starts]
    gidx = np.empty((R, G), dtype=int)
    gc = np.empty((R, G))
    for g, (a, b) in enumerate(zip(starts, ends)):
        members = order[a:b]
        if b - a == 1:
            gidx[:, g] = members[0]
            gc[:, g] = intercepts[:, members[0]]
        else:
            # stable order keeps lowest index first among equal intercepts
            sub = intercepts[:, members]
            best = np.argmax(sub, axis=1)
            gidx[:, g] = members[best]
            gc[:, g] = sub[np.arange(R), best]

    rows = np.arange(R)
    stack = np.empty((R, G), dtype=int)
    top = np.zeros(R, dtype=int)
    for g in range(G):
        s3 = gs[g]
        c3 = gc[:, g]
        while True:
            live = rows[top >= 2]
            if live.size == 0:
                break
            i1 = stack[live, top[live] - 2]
            i2 = stack[live, top[live] - 1]
            s1, s2 = gs[i1], gs[i2]
            c1, c2 = gc[live, i1], gc[live, i2]
            pop = (c1 - c3[live]) * (s2 - s1) <= (c1 - c2) * (s3 - s1)
            if not pop.any():
                break
            top[live[pop]] -= 1
        stack[rows, top] = g
        top += 1

    K = int(top.max())
    pos = stack[:, :K]
    valid = np.arange(K)[None, :] < top[:, None]
    pos = np.where(valid, pos, 0)
    idx = np.where(valid, gidx[rows[:, None], pos], -1)
    cpos = gc[rows[:, None], pos]
    spos = gs[pos]
    edges = np.full((R, K + 1), np.inf)
    edges[:, 0] = -np.inf
    if K > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = (cpos[:, :-1] - cpos[:, 1:]) / (spos[:, 1:] - spos[:, :-1])
            inner_valid = valid[:, 1:]
            inner = np.where(inner_valid, inner, np.inf)
        # rounding can leave a vanishing piece with reversed edges
        inner = np.maximum.accumulate(np.where(inner_valid, inner, -np.inf), axis=1)
        inner = np.where(inner_valid, inner, np.inf)
        edges[:, 1:K] = inner
    return Envelope(idx, edges, top)


# closed-form piece integrals ------------------------------------------------

def _phi1(x):
    """(1 - exp(-x)) / x for x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = x > 1e-10
    out[big] = -np.expm1(-x[big]) / x[big]
    small = ~big
    out[small] = 1 - x[small] / 2
    return out


def _phi2(x):
    """(1 - exp(-x) - x exp(-x)) / x**2 for x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-2
    xs = x[small]
    acc = np.zeros_like(xs)
    term = np.ones_like(xs)
    for k in range(12):
        acc += term / (k + 2)
        term = term * (-xs) / (k + 1)
    out[small] = acc
    xb = x[~small]
    out[~small] = (-np.expm1(-xb) - xb * np.exp(-xb)) / xb ** 2
    return out


def _pow_p0(x, k):
    """int_0^1 (1 + x s)^-k ds for x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-10
    out[small] = 1 - k * x[small] / 2
    xb = x[~small]
    out[~small] = -np.expm1((1 - k) * np.log1p(xb)) / ((k - 1) * xb)
    return out


def _pow_p1(x, k):
    """int_0^1 s (1 + x s)^-k ds for x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-2
    xs = x[small]
    acc = np.zeros_like(xs)
    term = np.ones_like(xs)
    for j in range(14):
        acc += term / (j + 2)
        term = term * (-xs) * (k + j) / (j + 1)
    out[small] = acc
    xb = x[~small]
    L = np.log1p(xb)
    A = L if k == 2 else np.expm1((2 - k) * L) / (2 - k)
    B = np.expm1((1 - k) * L) / (1 - k)
    out[~small] = (A - B) / xb ** 2
    return out


class Kernel:
    """Integrand family on an affine piece g(t) = a + b t."""

    def __init__(self, kind: str, k: float = 0.0):
        self.kind = kind
        self.k = float(k)

    def value(self, a, b, t):
        g = a + b * t
        if self.kind == "exp":
            return np.exp(-g)
        if self.kind == "power":
            return g ** -self.k
        return g

    def integrals(self, a, b, u, v):
        """(int_u^v f, int_u^v t f) on pieces; u may be -inf, v may be +inf."""
        a, b, u, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (a, b, u, v)))
        I0 = np.zeros(a.shape)
        I1 = np.zeros(a.shape)
        live = v > u
        if not live.any():
            return I0, I1
        a, b, u, v = a[live], b[live], u[live], v[live]
        if self.kind == "linear":
            fin = np.isfinite(u) & np.isfinite(v)
            i0 = np.zeros(a.shape)
            i1 = np.zeros(a.shape)
            af, bf, uf, vf = a[fin], b[fin], u[fin], v[fin]
            D = vf - uf
            i0[fin] = D * (af + bf * (uf + vf) / 2)
            i1[fin] = D * (af * (uf + vf) / 2 + bf * (uf * uf + uf * vf + vf * vf) / 3)
            I0[live], I1[live] = i0, i1
            return I0, I1
        up = b >= 0
        ref = np.where(up, u, v)
        sigma = np.where(up, 1.0, -1.0)
        beta = np.abs(b)
        D = v - u
        fin = np.isfinite(D)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ge = a + b * ref
            if self.kind == "exp":
                fe = np.exp(-ge)
                x = np.where(fin, beta * D, 0.0)
                E0 = np.where(fin, D * _phi1(x), 1 / beta)
                E1 = np.where(fin, D * D * _phi2(x), 1 / beta ** 2)
                i0 = fe * E0
                i1 = fe * (ref * E0 + sigma * E1)
            else:
                k = self.k
                fe = ge ** -k
                x = np.where(fin, beta * D / ge, 0.0)
                P0 = np.where(fin, D * _pow_p0(x, k), ge / (beta * (k - 1)))
                if k > 2:
                    tail1 = ge ** 2 / (beta ** 2 * (k - 1) * (k - 2))
                else:
                    tail1 = np.full(ge.shape, np.inf)
                P1 = np.where(fin, D * D * _pow_p1(x, k), tail1)
                i0 = fe * P0
                i1 = fe * (ref * P0 + sigma * P1)
        I0[live], I1[live] = i0, i1
        return I0, I1


class RowMeasure:
    """
    A measure sum_r omega_r * scale * f_r(t) dt with f_r piecewise of one kernel.

    edges (R, P+1) hold piece boundaries (-inf first, +inf padding), a and b
    the affine parameters of each piece.
    """

    def __init__(self, rows: Rows, kernel: Kernel, edges, a, b, counts, scale=1.0):
        self.rows = rows
        self.kernel = kernel
        self.edges = edges
        self.a = a
        self.b = b
        self.counts = counts
        self.scale = float(scale)
        R, P = a.shape
        self._valid = np.arange(P)[None, :] < counts[:, None]
        i0, i1 = kernel.integrals(a, b, edges[:, :-1], edges[:, 1:])
        i0 = np.where(self._valid, i0, 0.0)
        i1 = np.where(self._valid, i1, 0.0)
        self._cum0 = np.concatenate([np.zeros((R, 1)), np.cumsum(i0, axis=1)], axis=1)
        # first moments diverge for power kernels with k <= 2; only masses are used then
        with np.errstate(invalid="ignore"):
            self._cum1 = np.concatenate([np.zeros((R, 1)), np.cumsum(i1, axis=1)], axis=1)

    @property
    def row_totals(self):
        return self.scale * self._cum0[:, -1]

    @property
    def total(self) -> float:
        return float(self.rows.weights @ self.row_totals)

    @property
    def first_moment_rows(self):
        return self.scale * self._cum1[:, -1]

    def normalized(self) -> "RowMeasure":
        out = RowMeasure.__new__(RowMeasure)
        out.__dict__.update(self.__dict__)
        out.scale = self.scale / self.total
        return out

    def _locate(self, r, t):
        inner = self.edges[r, 1:-1]
        p = np.sum(inner < t[:, None], axis=1)
        return np.minimum(p, self.counts[r] - 1)

    def primitives(self, r, t):
        """Cumulative (mass, first moment) on line r up to t, unweighted by omega."""
        r = np.asarray(r, dtype=int)
        t = np.asarray(t, dtype=float)
        m0 = np.zeros(t.shape)
        m1 = np.zeros(t.shape)
        hi = t == np.inf
        m0[hi] = self._cum0[r[hi], -1]
        m1[hi] = self._cum1[r[hi], -1]
        mid = np.isfinite(t)
        if mid.any():
            rr, tt = r[mid], t[mid]
            p = self._locate(rr, tt)
            i0, i1 = self.kernel.integrals(self.a[rr, p], self.b[rr, p], self.edges[rr, p], tt)
            m0[mid] = self._cum0[rr, p] + i0
            m1[mid] = self._cum1[rr, p] + i1
        return self.scale * m0, self.scale * m1

    def density(self, r, t):
        r = np.asarray(r, dtype=int)
        t = np.asarray(t, dtype=float)
        p = self._locate(r, t)
        with np.errstate(over="ignore"):
            return self.scale * self.kernel.value(self.a[r, p], self.b[r, p], t)


def measure_from_potential(sites, weights, rows: Rows, kernel: Kernel) -> RowMeasure:
    """f = kernel(phi) along every line, phi(x) = max_j <x, y_j> - w_j."""
    slopes, intercepts = line_coefficients(sites, weights, rows)
    env = upper_envelope(slopes, intercepts)
    R = rows.count
    safe = np.maximum(env.idx, 0)
    a = intercepts[np.arange(R)[:, None], safe]
    b = slopes[safe]
    return RowMeasure(rows, kernel, env.edges, a, b, env.counts)


def measure_from_nodes(line_nodes, node_density, rows: Rows) -> RowMeasure:
    """Piecewise-linear interpolation of node values (R, m), zero off the box."""
    t = np.asarray(line_nodes, dtype=float)
    f = np.atleast_2d(np.asarray(node_density, dtype=float))
    R, m = f.shape
    edges = np.empty((R, m + 2))
    edges[:, 0] = -np.inf
    edges[:, 1:-1] = t
    edges[:, -1] = np.inf
    slope = np.diff(f, axis=1) / np.diff(t)
    a = np.zeros((R, m + 1))
    b = np.zeros((R, m + 1))
    b[:, 1:-1] = slope
    a[:, 1:-1] = f[:, :-1] - slope * t[:-1]
    counts = np.full(R, m + 1)
    return RowMeasure(rows, Kernel("linear"), edges, a, b, counts)


@dataclass
class CellIntegrals:
    masses: np.ndarray
    pairing: float
    hess_i: np.ndarray
    hess_j: np.ndarray
    hess_d: np.ndarray


def cell_integrals(measure: RowMeasure, sites, weights, with_hessian=True) -> CellIntegrals:
    """
    Masses of the cells of phi(x) = max_j <x, y_j> - w_j under `measure`,
    the integral of phi against it, and the cell-adjacency coefficients
    d = d(mass_j)/d(w_k) for neighbouring cells.
    """
    rows = measure.rows
    slopes, intercepts = line_coefficients(sites, weights, rows)
    env = upper_envelope(slopes, intercepts)
    R, K = env.idx.shape
    rr = np.repeat(np.arange(R), K + 1).reshape(R, K + 1)
    m0, m1 = measure.primitives(rr.ravel(), env.edges.ravel())
    m0 = m0.reshape(R, K + 1)
    m1 = m1.reshape(R, K + 1)
    # padded edges are +inf so their differences vanish
    pm0 = np.diff(m0, axis=1)
    pm1 = np.diff(m1, axis=1)
    valid = env.idx >= 0
    w_r = np.broadcast_to(rows.weights[:, None], (R, K))
    j = env.idx[valid]
    cell_mass = (w_r * pm0)[valid]
    cell_mom = (w_r * pm1)[valid]
    N = len(slopes)
    masses = np.bincount(j, weights=cell_mass, minlength=N)
    c = intercepts[np.nonzero(valid)[0], j]
    pairing = float(np.sum(c * cell_mass + slopes[j] * cell_mom))
    hi = hj = hd = np.empty(0)
    if with_hessian and K > 1:
        inner = valid[:, 1:]
        r_in = np.nonzero(inner)[0]
        left = env.idx[:, :-1][inner]
        right = env.idx[:, 1:][inner]
        beta = env.edges[:, 1:K][inner]
        dens = measure.density(r_in, beta)
        hd = rows.weights[r_in] * dens / (slopes[right] - slopes[left])
        hi, hj = left, right
    return CellIntegrals(masses, pairing, hi, hj, hd)


def potential_integral(measure: RowMeasure, sites, weights) -> float:
    """int phi d(measure) for a max-affine phi."""
    return cell_integrals(measure, sites, weights, with_hessian=False).pairing


# rays from the origin (n = 2) ------------------------------------------------

def ray_moments(sites, weights, kernel: Kernel, directions, start=None) -> np.ndarray:
    """
    int_{t0}^inf t f(phi(t u)) dt along every ray t u, u in `directions`.

    With s = 1/t, phi(t u) / t = max_j <u, y_j> - w_j s is an envelope of
    lines with common slopes -w_j, so one vectorised envelope in s serves
    all rays; each s-piece is a t-piece on which phi(t u) = <u, y_j> t - w_j.
    start gives t0 per ray (default 0); rays with t0 = inf contribute nothing.
    """
    sites = np.asarray(sites, dtype=float)
    weights = np.asarray(weights, dtype=float)
    directions = np.atleast_2d(directions)
    D = len(directions)
    t0 = np.zeros(D) if start is None else np.asarray(start, dtype=float)
    alpha = directions @ sites.T
    env = upper_envelope(-weights, alpha)
    valid = env.idx >= 0
    j = np.maximum(env.idx, 0)
    s_lo = np.maximum(env.edges[:, :-1], 0.0)
    with np.errstate(divide="ignore"):
        s_cap = np.where(np.isfinite(t0), 1.0 / t0, -np.inf)
        s_hi = np.minimum(env.edges[:, 1:], s_cap[:, None])
        t_lo = 1.0 / s_hi
        t_hi = 1.0 / s_lo
    live = valid & (s_hi > s_lo)
    b = np.take_along_axis(alpha, j, axis=1)
    a = -weights[j]
    _, i1 = kernel.integrals(np.where(live, a, 0.0), np.where(live, b, 1.0),
                             np.where(live, t_lo, 0.0), np.where(live, t_hi, 0.0))
    return np.sum(np.where(live, i1, 0.0), axis=1)


def _circle(count):
    ang = 2 * np.pi * (np.arange(count) + 0.5) / count
    return ang, np.c_[np.cos(ang), np.sin(ang)]


def plane_integral(sites, weights, kernel: Kernel, directions: int = 1440) -> float:
    """int_{R^2} f(phi): exact along rays, trapezoid in the angle."""
    _, u = _circle(directions)
    return float(2 * np.pi * ray_moments(sites, weights, kernel, u).mean())


def strip_complement(sites, weights, kernel: Kernel, halfwidth: float,
                     directions: int = 1440) -> float:
    """int of f(phi) over {|x_2| > L}, the part of R^2 that grid rows miss."""
    ang, u = _circle(directions)
    with np.errstate(divide="ignore"):
        t0 = halfwidth / np.abs(np.sin(ang))
    return float(2 * np.pi * ray_moments(sites, weights, kernel, u, t0).mean())
