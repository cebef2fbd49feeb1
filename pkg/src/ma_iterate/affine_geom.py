"""
Equiaffine geometry of Legendre graph immersions.

For a smooth strictly convex phi with grad phi(R^n) = A the immersion

    f(x)  = (grad phi(x), <x, grad phi(x)> - phi(x))

has affine normal xi = -(grad psi, <x, grad psi> - psi) with
psi = det(D^2 phi)^(-1/(n+2)), affine metric h = D^2 phi / psi and shape
operator S = D^2 psi (D^2 phi)^-1.  For phi > 0 the dual immersion is
nu(x) = (x, -1) / phi(x).

Two kinds of input are accepted.  `SmoothPotential` wraps an analytic
sampler (value, gradient, Hessian); derivatives of psi are then central
differences.  `IterateGeometry` wraps a solved power-profile iterate, whose
Hessian determinant is known only through the transport step it solved:
det D^2 phi_{i+1}(x) = vol * phi_i(x + a)^-(n+2) / Z_i.  Its shape operator is
available through its determinant only.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from . import linescan
from .convex_body import ConvexBody, polar
from .errors import NonconvexSample, NonPositivePotential, PreconditionViolated, WrongProfile
from .functionals import line_integral
from .oracle import AnalyticSampler, OracleSolution
from .ot_solver import solve_step, source_from_nodes
from .potential import EvaluationGrid, MaxAffinePotential, argmin, evaluate, gradient, make_sites
from .profile import Profile

FD_STEP = 1e-4
FD_STEP2 = 1e-2


# full-space quadrature ------------------------------------------------------

@lru_cache(maxsize=8)
def _gauss(count):
    return np.polynomial.legendre.leggauss(count)


def full_space_points(dim: int, scale: float = 1.0, radial: int = 1200, angular: int = 256):
    """
    Nodes and weights of a rule for int_{R^n} with algebraic or exponential decay.

    n = 1: x = c t / (1 - t^2) on Gauss-Legendre t in (-1, 1).
    n = 2: polar, trapezoid in the angle, r = c t / (1 - t) on t in (0, 1).
    """
    t, w = _gauss(radial)
    if dim == 1:
        x = scale * t / (1 - t * t)
        jac = scale * (1 + t * t) / (1 - t * t) ** 2
        return x[:, None], w * jac
    if dim != 2:
        raise ValueError("full-space quadrature is implemented for n <= 2")
    s = 0.5 * (t + 1)
    r = scale * s / (1 - s)
    dr = 0.5 * w * scale / (1 - s) ** 2
    ang = 2 * np.pi * (np.arange(angular) + 0.5) / angular
    u = np.c_[np.cos(ang), np.sin(ang)]
    pts = (r[:, None, None] * u[None, :, :]).reshape(-1, 2)
    wts = (dr * r)[:, None] * np.full(angular, 2 * np.pi / angular)[None, :]
    return pts, wts.ravel()


def integrate(fn, dim: int, scale: float = 1.0) -> float:
    """int_{R^n} fn(x) dx for a vectorised fn on points (M, n)."""
    x, w = full_space_points(dim, scale)
    vals = np.asarray(fn(x), dtype=float)
    return float(w @ np.where(np.isfinite(vals), vals, 0.0))


def kernel_integral(phi: MaxAffinePotential, k: float) -> float:
    """int_{R^n} phi^-k for a positive max-affine phi, exact along lines or rays."""
    kernel = linescan.Kernel("power", k)
    if phi.dim == 1:
        return line_integral(phi, kernel)
    return linescan.plane_integral(phi.sites, phi.weights, kernel)


# inputs --------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothPotential:
    """
    Analytic potential with the volume of its gradient image.

    source, when given, is the potential whose power image h(source) / Z is
    the Monge-Ampere density of phi (for a solution of the fixed-point
    equation, phi itself).
    """
    sampler: AnalyticSampler
    volume: float
    scale: float = 1.0
    source: AnalyticSampler | None = None

    @property
    def dim(self) -> int:
        return self.sampler.dim

    def value(self, x):
        return self.sampler.value(x)

    def gradient(self, x):
        return self.sampler.gradient(x)

    def hessian(self, x):
        return self.sampler.hessian(x)

    def det_hessian(self, x):
        return self.sampler.det_hessian(x)


def as_geometry(obj, volume: float | None = None, scale: float = 1.0):
    """Wrap an oracle, sampler or `IterateGeometry` for the routines below."""
    if isinstance(obj, (SmoothPotential, IterateGeometry)):
        return obj
    if isinstance(obj, OracleSolution):
        src = obj.sampler if obj.profile.is_power else None
        return SmoothPotential(obj.sampler, obj.target_volume, scale, src)
    if isinstance(obj, AnalyticSampler):
        if volume is None:
            raise ValueError("an analytic sampler needs the volume of its gradient image")
        return SmoothPotential(obj, float(volume), scale)
    raise TypeError(f"cannot build an immersion from {type(obj).__name__}")


@dataclass(frozen=True)
class IterateGeometry:
    """
    A solved power-profile iterate phi_{i+1} with its two predecessors.

    shift is the translation a_{i+1} used when phi_{i+1} was recentred and
    prev_shift the one used for phi_i; normalizers are the full-space
    Z_i = int phi_i^-(n+2) and Z_{i-1}.
    """
    phi: MaxAffinePotential
    prev: MaxAffinePotential
    prev2: MaxAffinePotential
    shift: np.ndarray
    prev_shift: np.ndarray
    volume: float
    normalizers: tuple
    scale: float = 1.0

    @classmethod
    def from_trace(cls, phi: MaxAffinePotential, trace, body: ConvexBody, profile: Profile):
        if not profile.is_power:
            raise WrongProfile("affine geometry needs the power profile")
        if len(trace.recent) < 3:
            raise ValueError("need at least two completed steps")
        (p2, _), (p1, a1), (p0, a0) = trace.recent[-3:]
        k = phi.dim + 2
        Z = (kernel_integral(p1, k), kernel_integral(p2, k))
        return cls(phi, p1, p2, np.asarray(a0, float), np.asarray(a1, float), body.volume, Z)

    @property
    def dim(self) -> int:
        return self.phi.dim

    @property
    def source(self) -> MaxAffinePotential:
        return self.prev

    def value(self, x):
        return evaluate(self.phi, np.asarray(x, dtype=float).reshape(-1, self.dim))

    def gradient(self, x):
        return gradient(self.phi, np.asarray(x, dtype=float).reshape(-1, self.dim))

    def det_hessian(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return self.volume * evaluate(self.prev, x + self.shift) ** -(self.dim + 2) / self.normalizers[0]

    def prev_det_hessian(self, x):
        """det D^2 phi_i at x + a_{i+1}, from the step that produced phi_i."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        z = x + self.shift + self.prev_shift
        return self.volume * evaluate(self.prev2, z) ** -(self.dim + 2) / self.normalizers[1]


# pointwise geometry -------------------------------------------------------

def _psi(geom, x):
    return geom.det_hessian(x) ** (-1.0 / (geom.dim + 2))


def _fd_gradient(fn, x, h):
    n = x.shape[1]
    out = np.empty_like(x)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[:, i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return out


_D1 = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))
_D2 = ((-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12))


def _fd_hessian(fn, x, h):
    """Fourth-order central differences; truncation ~ h^4, rounding ~ eps / h^2."""
    n = x.shape[1]
    out = np.zeros((len(x), n, n))
    eye = np.eye(n) * h
    for i in range(n):
        for k, c in _D2:
            out[:, i, i] += c * fn(x + k * eye[i])
        for j in range(i + 1, n):
            acc = np.zeros(len(x))
            for k, a in _D1:
                for m, b in _D1:
                    acc += a * b * fn(x + k * eye[i] + m * eye[j])
            out[:, i, j] = out[:, j, i] = acc
    return out / h ** 2


def _checked_hessian(geom, x):
    H = geom.hessian(x)
    if np.any(np.linalg.eigvalsh(H) <= 0):
        raise NonconvexSample("Hessian not positive definite at a sample point")
    return H


@dataclass(frozen=True)
class ImmersionSample:
    x: np.ndarray
    f_point: np.ndarray
    xi: np.ndarray
    nu_point: np.ndarray | None
    gauss_normal: np.ndarray
    support: np.ndarray
    kappa: np.ndarray
    psi: np.ndarray


def _lift(x, grad, value):
    return np.c_[grad, np.sum(x * grad, axis=1) - value]


def immerse(phi, x) -> ImmersionSample:
    """
    f, xi, nu, N, rho = <f, N> and the Gauss curvature at the points x.

    Raises
    ------
    NonconvexSample
        the Hessian of an analytic potential is not positive definite.
    """
    geom = as_geometry(phi)
    x = np.asarray(x, dtype=float).reshape(-1, geom.dim)
    if isinstance(geom, SmoothPotential):
        _checked_hessian(geom, x)
    val = geom.value(x)
    grad = geom.gradient(x)
    f = _lift(x, grad, val)
    psi = _psi(geom, x)
    dpsi = _fd_gradient(lambda z: _psi(geom, z), x, FD_STEP * geom.scale)
    xi = -_lift(x, dpsi, psi)
    q = 1 + np.sum(x * x, axis=1)
    N = np.c_[x, -np.ones(len(x))] / np.sqrt(q)[:, None]
    rho = np.sum(f * N, axis=1)
    kappa = q ** (-(geom.dim + 2) / 2) / geom.det_hessian(x)
    nu = np.c_[x, -np.ones(len(x))] / val[:, None] if np.all(val > 0) else None
    return ImmersionSample(x, f, xi, nu, N, rho, kappa, psi)


def affine_metric(phi, x) -> np.ndarray:
    """h_ij = phi_ij / psi."""
    geom = as_geometry(phi)
    x = np.asarray(x, dtype=float).reshape(-1, geom.dim)
    H = _checked_hessian(geom, x)
    return H / _psi(geom, x)[:, None, None]


def volume_forms(phi, x):
    """
    (theta, omega_h) on the coordinate frame.

    theta = det[f_*(d_1), ..., f_*(d_n), xi] from the immersion itself,
    omega_h = det(h)^(1/2) from the affine metric.
    """
    geom = as_geometry(phi)
    x = np.asarray(x, dtype=float).reshape(-1, geom.dim)
    H = _checked_hessian(geom, x)
    s = immerse(geom, x)
    # f_*(d_j) = (H e_j, <x, H e_j>)
    cols = np.concatenate([H, np.einsum("mi,mij->mj", x, H)[:, None, :]], axis=1)
    frame = np.concatenate([cols, s.xi[:, :, None]], axis=2)
    theta = np.linalg.det(frame)
    omega = np.sqrt(np.linalg.det(affine_metric(geom, x)))
    return theta, omega


def shape_operator(phi, x):
    """
    Shape operator S at each point and gamma_est = trace(S) / n.

    For an analytic potential S = D^2 psi (D^2 phi)^-1 with D^2 psi by
    central differences.  For a solved iterate only det S is available,
    det S(x) = c^n det D^2 phi_i(x + a) / det D^2 phi_{i+1}(x) with
    c = (Z_i / vol)^(1/(n+2)), and the isotropic (det S)^(1/n) I is returned.

    Returns
    -------
    (S, gamma) with S of shape (M, n, n) and gamma of shape (M,).
    """
    geom = as_geometry(phi)
    x = np.asarray(x, dtype=float).reshape(-1, geom.dim)
    n = geom.dim
    if isinstance(geom, IterateGeometry):
        c = (geom.normalizers[0] / geom.volume) ** (1.0 / (n + 2))
        detS = c ** n * geom.prev_det_hessian(x) / geom.det_hessian(x)
        g = detS ** (1.0 / n)
        return g[:, None, None] * np.eye(n)[None], g
    H = _checked_hessian(geom, x)
    Psi = _fd_hessian(lambda z: _psi(geom, z), x, FD_STEP2 * geom.scale)
    S = Psi @ np.linalg.inv(H)
    return S, np.trace(S, axis1=1, axis2=2) / n


def dual_alignment(phi, x) -> np.ndarray:
    """
    Cosine between the normal of the dual immersion nu and f at each point.

    The normal of nu is taken orthogonal to central-difference tangents of
    nu; dualising nu recovers the direction of f.
    """
    geom = as_geometry(phi)
    x = np.asarray(x, dtype=float).reshape(-1, geom.dim)
    n = geom.dim
    h = FD_STEP * geom.scale

    def nu(z):
        return np.c_[z, -np.ones(len(z))] / geom.value(z)[:, None]
    tangents = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        tangents.append((nu(x + e) - nu(x - e)) / (2 * h))
    T = np.stack(tangents, axis=2)
    out = np.empty(len(x))
    f = _lift(x, geom.gradient(x), geom.value(x))
    for m in range(len(x)):
        normal = np.linalg.svd(T[m].T)[2][-1]
        out[m] = abs(normal @ f[m]) / np.linalg.norm(f[m])
    return out


# integrated quantities -------------------------------------------------------

def _positive_values(geom, x):
    v = geom.value(x)
    if np.any(v <= 0):
        raise NonPositivePotential("cone and dual quantities need phi > 0")
    return v


def affine_surface_area(phi, method: int = 1) -> float:
    """
    Affine surface area of f(R^n) by one of three routes.

    1: int det(D^2 phi)^((n+1)/(n+2)) dx.
    2: int kappa(N(x))^(1/(n+2)) dV with kappa and the area element dV of
       the graph built separately.
    3: (vol * G(rho))^((n+1)/(n+2)) where G is the power-profile functional
       (s = n + 1) of the Monge-Ampere density rho.  When rho is known as
       h(source) / Z, G is taken in closed form from the source potential;
       otherwise it is the s/(s+1)-norm of det D^2 phi / vol.
    """
    geom = as_geometry(phi)
    n = geom.dim
    p = (n + 1) / (n + 2)
    if method == 1:
        # the far field of a radial oracle is exactly affine, so det rounds to +-0 there
        return integrate(lambda x: np.maximum(geom.det_hessian(x), 0.0) ** p, n, geom.scale)
    if method == 2:
        def integrand(x):
            q = 1 + np.sum(x * x, axis=1)
            det = np.maximum(geom.det_hessian(x), 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                kappa = q ** (-(n + 2) / 2) / det
                dV = np.sqrt(q) * det
                return np.where(det > 0, kappa ** (1 / (n + 2)) * dV, 0.0)
        return integrate(integrand, n, geom.scale)
    if method == 3:
        s = n + 1
        src = getattr(geom, "source", None)
        if isinstance(src, MaxAffinePotential):
            G = kernel_integral(src, s) ** ((s + 1) / s) / kernel_integral(src, s + 1)
        elif src is not None:
            G = (integrate(lambda x: src.value(x) ** -s, n, geom.scale) ** ((s + 1) / s)
                 / integrate(lambda x: src.value(x) ** -(s + 1), n, geom.scale))
        else:
            G = integrate(lambda x: (np.maximum(geom.det_hessian(x), 0.0) / geom.volume) ** p,
                          n, geom.scale) ** (1 / p)
        return float((geom.volume * G) ** p)
    raise ValueError(f"method must be 1, 2 or 3, got {method}")


def _dual_cone_density(geom, x):
    """rho_nu |det[d nu, N_nu]| from the Jacobian of nu and N_nu = f / |f|."""
    n = geom.dim
    v = _positive_values(geom, x)
    g = geom.gradient(x)
    f = _lift(x, g, v)
    Nn = f / np.linalg.norm(f, axis=1)[:, None]
    nu = np.c_[x, -np.ones(len(x))] / v[:, None]
    # d(x / phi) = I / phi - x g^T / phi^2,  d(-1 / phi) = g^T / phi^2
    top = np.eye(n)[None] / v[:, None, None] - x[:, :, None] * g[:, None, :] / (v ** 2)[:, None, None]
    bottom = (g / (v ** 2)[:, None])[:, None, :]
    J = np.concatenate([top, bottom], axis=1)
    frame = np.concatenate([J, Nn[:, :, None]], axis=2)
    dV = np.abs(np.linalg.det(frame))
    support = np.sum(Nn * nu, axis=1)
    return support * dV


def cone_measures(phi):
    """
    (mu_f(R^n), mu_nu(R^n)).

    mu_f integrates the support function <f, N> against the area element
    of f; mu_nu integrates the support function of nu against its area
    element from the Jacobian of nu.  Both need phi > 0.

    Raises
    ------
    NonPositivePotential
    """
    geom = as_geometry(phi)
    n = geom.dim

    def cone_f(x):
        v = _positive_values(geom, x)
        q = 1 + np.sum(x * x, axis=1)
        f = _lift(x, geom.gradient(x), v)
        N = np.c_[x, -np.ones(len(x))] / np.sqrt(q)[:, None]
        return np.sum(f * N, axis=1) * np.sqrt(q) * geom.det_hessian(x)
    mu_f = integrate(cone_f, n, geom.scale)
    mu_nu = integrate(lambda x: _dual_cone_density(geom, x), n, geom.scale)
    return mu_f, mu_nu


def _boundary_distance(points, body: ConvexBody):
    """Distance from points to the boundary of a body (n <= 2)."""
    V = body.vertices
    if body.dim == 1:
        return np.min(np.abs(points[:, :1] - V[:, 0][None, :]), axis=1)
    ring = V[ConvexHull(V).vertices]
    a, b = ring, np.roll(ring, -1, axis=0)
    d = b - a
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(rel * d[None], axis=2) / np.sum(d * d, axis=1)[None], 0.0, 1.0)
    foot = a[None] + t[:, :, None] * d[None]
    return np.min(np.linalg.norm(points[:, None, :] - foot, axis=2), axis=1)


def anchor_check(phi, body: ConvexBody, R_far: float, directions: int = 256) -> float:
    """
    Largest distance from nu(R u) to the boundary of polar(A) x {0}.

    Raises
    ------
    PreconditionViolated
        when grad phi leaves A at the sampled far points.
    NonPositivePotential
    """
    geom = as_geometry(phi)
    n = geom.dim
    if n == 1:
        u = np.array([[-1.0], [1.0]])
    else:
        ang = 2 * np.pi * np.arange(directions) / directions
        u = np.c_[np.cos(ang), np.sin(ang)]
    x = R_far * u
    g = geom.gradient(x)
    if body.disc_radius is not None:
        # a polygon flagged as a disc stands for the disc itself
        inside = np.linalg.norm(g, axis=1) <= body.disc_radius * (1 + 1e-9)
    else:
        inside = body.contains(g, tol=1e-9)
    if not np.all(inside):
        raise PreconditionViolated("gradient image of phi is not inside A")
    v = _positive_values(geom, x)
    base = x / v[:, None]
    if body.disc_radius is not None:
        dist = np.abs(np.linalg.norm(base, axis=1) - 1.0 / body.disc_radius)
    else:
        dist = _boundary_distance(base, polar(body))
    return float(np.max(np.hypot(dist, 1.0 / v)))


# affine iteration step ---------------------------------------------------

@dataclass(frozen=True)
class NormalStep:
    potential: MaxAffinePotential
    c: float


def prescribed_normal_step(psi, body: ConvexBody, grid: EvaluationGrid, sites=None,
                           site_masses=None, n_sites: int = 129) -> NormalStep:
    """
    Solve for phi whose affine normal is -c f_psi.

    The Monge-Ampere density is psi^-(n+2) / ||psi^-(n+2)||_1, so this is one
    transport step; c = vol^(-1/(n+2)) ||psi||_{-(n+2)}^-1.

    Raises
    ------
    NonPositivePotential
        psi has min <= 0.
    """
    from .iteration import build_density

    n = body.dim
    k = n + 2
    if sites is None:
        sites, site_masses = make_sites(body, n_sites)
    if site_masses is None:
        raise ValueError("site masses are needed with explicit sites")
    if isinstance(psi, MaxAffinePotential):
        if argmin(psi, tie_break="center")[1] <= 0:
            raise NonPositivePotential("psi must be positive")
        rho = build_density(psi, Profile.power(n, 1.0), grid, tail_tol=np.inf)
        Z = kernel_integral(psi, k)
    else:
        vals = np.asarray(psi(grid.nodes), dtype=float)
        if np.any(vals <= 0):
            raise NonPositivePotential("psi must be positive")
        rho = source_from_nodes(grid, vals ** -k)
        Z = integrate(lambda x: np.asarray(psi(x), dtype=float) ** -k, n)
    phi = solve_step(rho, sites, site_masses)
    c = body.volume ** (-1.0 / k) * Z ** (1.0 / k)
    return NormalStep(phi, float(c))


# report --------------------------------------------------------------------

@dataclass(frozen=True)
class AffineReport:
    gamma_est: float
    gamma_formula: float
    sphere_residual: float
    asa_def1: float
    asa_def2: float
    asa_def3: float
    cone_measure_f: float
    cone_measure_nu: float
    anchor_error: float


def gamma_formula(phi) -> float:
    """vol^(-1/(n+2)) ||phi||_{-(n+2)}^-1 for the potential generating the density."""
    geom = as_geometry(phi)
    n = geom.dim
    src = getattr(geom, "source", None)
    if isinstance(src, MaxAffinePotential):
        Z = kernel_integral(src, n + 2)
    elif src is not None:
        Z = integrate(lambda x: src.value(x) ** -(n + 2), n, geom.scale)
    else:
        raise ValueError("gamma formula needs the generating potential")
    return float((Z / geom.volume) ** (1.0 / (n + 2)))


def sample_window(dim: int, radius: float, count: int = 41) -> np.ndarray:
    """Interior sample points with |x| <= radius."""
    if dim == 1:
        return np.linspace(-radius, radius, count)[:, None]
    side = max(3, int(np.sqrt(count)) | 1)
    ax = np.linspace(-radius, radius, side)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    return pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]


def affine_report(phi, body: ConvexBody, window: float = 2.0, R_far: float = 100.0) -> AffineReport:
    """
    All affine diagnostics for an oracle, analytic sampler or solved iterate.

    gamma_est averages the pointwise shape-operator estimate over the sample
    window |x| <= window; sphere_residual is the sup of |S - gamma_est I|
    there.
    """
    geom = as_geometry(phi, body.volume)
    x = sample_window(geom.dim, window)
    S, g = shape_operator(geom, x)
    gamma = float(np.mean(g))
    resid = float(np.max(np.abs(S - gamma * np.eye(geom.dim)[None])))
    mu_f, mu_nu = cone_measures(geom)
    return AffineReport(
        gamma_est=gamma, gamma_formula=gamma_formula(geom), sphere_residual=resid,
        asa_def1=affine_surface_area(geom, 1), asa_def2=affine_surface_area(geom, 2),
        asa_def3=affine_surface_area(geom, 3), cone_measure_f=mu_f, cone_measure_nu=mu_nu,
        anchor_error=anchor_check(geom, body, R_far))


def cone_asa_chain(geom: IterateGeometry):
    """
    (mu_{nu_i}^(-1/(n+1)), mu_{f_{i+1}} Omega_{f_{i+1}}^(-(n+2)/(n+1)), mu_{nu_{i+1}}^(-1/(n+1)))

    along one step of the affine iteration; the sequence is non-increasing.
    """
    n = geom.dim
    mu_nu_prev = kernel_integral(geom.prev, n + 1)
    mu_f, mu_nu = cone_measures(geom)
    omega = affine_surface_area(geom, 3)
    return (mu_nu_prev ** (-1 / (n + 1)), mu_f * omega ** (-(n + 2) / (n + 1)),
            mu_nu ** (-1 / (n + 1)))
