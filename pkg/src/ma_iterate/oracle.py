"""
Ground-truth solutions of det D^2 phi / vol(A) = h(phi) / ||h(phi)||_1 with
grad phi(R^n) = A, used by the tests and acceptance runs.

Closed forms exist on the interval (-1, 1) for both profiles and on the
square (-1, 1)^2 for the exponential profile (a sum of 1D solutions).  For a
disc of radius R the radial reduction

    psi'' psi' / r = h(psi),   psi(0) = b,   psi'(0) = 0

is integrated by RK4 and b is bisected until psi'(inf) = R; mass balance
then forces ||h(psi)||_1 = vol(A).  The exponential solution is shifted and
the power solution dilated, phi_a(x) = a psi(x / a), to meet int_A phi* = -tau.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .convex_body import ConvexBody, build_body
from .errors import ShootingFailed, WrongProfile
from .profile import Profile, h_eval


@dataclass(frozen=True)
class AnalyticSampler:
    """Vectorised phi, grad phi and Hessian on points of shape (M, n)."""
    dim: int
    value_fn: object
    gradient_fn: object
    hessian_fn: object

    def value(self, x):
        return np.asarray(self.value_fn(_pts(x, self.dim)), dtype=float)

    def gradient(self, x):
        return np.asarray(self.gradient_fn(_pts(x, self.dim)), dtype=float)

    def hessian(self, x):
        return np.asarray(self.hessian_fn(_pts(x, self.dim)), dtype=float)

    def det_hessian(self, x):
        H = self.hessian(x)
        return np.linalg.det(H)

    def __call__(self, x):
        return self.value(x)


def _pts(x, n):
    return np.asarray(x, dtype=float).reshape(-1, n)


@dataclass(frozen=True)
class OracleSolution:
    profile: Profile
    body: ConvexBody
    sampler: AnalyticSampler
    tau: float
    normalizer: float
    note: str
    volume: float | None = None

    @property
    def target_volume(self) -> float:
        return self.body.volume if self.volume is None else self.volume

    def __call__(self, x):
        return self.sampler.value(x)

    def residual(self, x) -> np.ndarray:
        """|det D^2 phi / vol - h(phi) / Z| at the given points."""
        lhs = self.sampler.det_hessian(x) / self.target_volume
        rhs = h_eval(self.profile, self.sampler.value(x)) / self.normalizer
        return np.abs(lhs - rhs)


def _interval():
    return build_body([-1.0, 1.0])


def _log2cosh_half(x):
    # 2 log(2 cosh(x/2)) without overflow
    ax = np.abs(x)
    return ax + 2 * np.log1p(np.exp(-ax))


def exp_oracle_1d() -> OracleSolution:
    """phi(x) = 2 log(2 cosh(x/2)) on A = (-1, 1); int e^-phi = 1, tau = 2."""
    def val(x):
        return _log2cosh_half(x[:, 0])

    def grad(x):
        return np.tanh(x / 2)

    def hess(x):
        return (0.5 / np.cosh(x / 2) ** 2)[:, :, None]

    sampler = AnalyticSampler(1, val, grad, hess)
    return OracleSolution(Profile.exponential(1), _interval(), sampler, _exp_tau_1d(), 1.0,
                          "closed form 2 log(2 cosh(x/2))")


def _phi1_star(y):
    """Conjugate of 2 log(2 cosh(x/2)) on (-1, 1)."""
    y = np.asarray(y, dtype=float)
    x = 2 * np.arctanh(y)
    return y * x - _log2cosh_half(x)


def _exp_tau_1d():
    # phi_1*(y) = (1+y) log(1+y) + (1-y) log(1-y) - 2 log 2 integrates to -2
    return 2.0


def power_oracle_1d() -> OracleSolution:
    """phi(x) = sqrt(1 + x^2) on A = (-1, 1), p = 1; ||phi^-3||_1 = 2, tau = pi/2."""
    def val(x):
        return np.sqrt(1 + x[:, 0] ** 2)

    def grad(x):
        return x / np.sqrt(1 + x ** 2)

    def hess(x):
        return ((1 + x ** 2) ** -1.5)[:, :, None]

    sampler = AnalyticSampler(1, val, grad, hess)
    return OracleSolution(Profile.power(1, 1.0), _interval(), sampler, np.pi / 2, 2.0,
                          "closed form sqrt(1 + x^2)")


def separable_oracle_2d(profile: Profile | None = None) -> OracleSolution:
    """phi(x) = phi_1(x_1) + phi_1(x_2) on the square (-1, 1)^2, exponential profile."""
    if profile is not None and profile.is_power:
        raise WrongProfile("the product construction needs h(s + t) = h(s) h(t)")

    def val(x):
        return _log2cosh_half(x[:, 0]) + _log2cosh_half(x[:, 1])

    def grad(x):
        return np.tanh(x / 2)

    def hess(x):
        d = 0.5 / np.cosh(x / 2) ** 2
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = d[:, 0]
        out[:, 1, 1] = d[:, 1]
        return out

    body = build_body([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    sampler = AnalyticSampler(2, val, grad, hess)
    return OracleSolution(Profile.exponential(2), body, sampler, 2 * 2 * _exp_tau_1d(), 1.0,
                          "sum of two 1D exponential solutions")


# radial shooting --------------------------------------------------------------

RK4_STEP = 1e-3
SHOOT_TOL = 1e-10


def _radial_mesh(r_max, step):
    """Steps of length step * max(1, r): uniform near 0, geometric far out."""
    r = [0.0]
    while r[-1] < r_max:
        r.append(r[-1] + step * max(1.0, r[-1]))
    return np.array(r)


def _rk4(h, b, r):
    """
    Integrate (psi, u = psi'^2 / 2) with psi' = sqrt(2u), u' = r h(psi).

    b may be an array of starting values, integrated together.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    psi = np.empty((len(r), len(b)))
    u = np.empty_like(psi)
    hb = h(b)
    psi[0], u[0] = b, 0.0

    def rhs(rr, p, q):
        return np.sqrt(2 * np.maximum(q, 0.0)), rr * h(p)

    for k in range(len(r) - 1):
        r0, dr = r[k], r[k + 1] - r[k]
        p, q = psi[k], u[k]
        if k == 0:
            # psi''(0) = sqrt(h(b)) from psi'' psi' / r = h
            psi[1] = b + 0.5 * np.sqrt(hb) * dr ** 2
            u[1] = 0.5 * hb * dr ** 2
            continue
        k1p, k1q = rhs(r0, p, q)
        k2p, k2q = rhs(r0 + dr / 2, p + dr / 2 * k1p, q + dr / 2 * k1q)
        k3p, k3q = rhs(r0 + dr / 2, p + dr / 2 * k2p, q + dr / 2 * k2q)
        k4p, k4q = rhs(r0 + dr, p + dr * k3p, q + dr * k3q)
        psi[k + 1] = p + dr / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        u[k + 1] = q + dr / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
    return psi, u


def _slope_at_infinity(profile, r_end, psi_end, u_end):
    """sqrt(2 u(inf)) using the linear extension psi(r_end) + psi'(r_end)(r - r_end)."""
    s = np.sqrt(2 * u_end)
    if profile.is_power:
        k = profile.s + 1
        tail = (r_end * psi_end ** (1 - k) / (s * (k - 1))
                + psi_end ** (2 - k) / (s ** 2 * (k - 1) * (k - 2)))
    else:
        tail = np.exp(-psi_end) * (r_end / s + 1 / s ** 2)
    return np.sqrt(2 * (u_end + tail))


@dataclass(frozen=True)
class RadialProfile:
    r: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    ddpsi: np.ndarray
    b: float


def _shoot(profile, R, r_max, step):
    """Bisect psi(0) = b so that psi'(inf) = R."""
    h = (lambda t: np.asarray(t, dtype=float) ** -(profile.s + 1)) if profile.is_power \
        else (lambda t: np.exp(-np.asarray(t, dtype=float)))
    r = _radial_mesh(r_max, step)

    def slope(b):
        psi, u = _rk4(h, b, r)
        return _slope_at_infinity(profile, r[-1], psi[-1], u[-1])

    # slope decreases in b
    lo, hi = (0.05, 50.0) if profile.is_power else (-20.0, 20.0)
    grid = np.linspace(lo, hi, 41) if not profile.is_power else np.geomspace(lo, hi, 41)
    vals = slope(grid) - R
    sign = np.flatnonzero(np.diff(np.sign(vals)) != 0)
    if not sign.size:
        raise ShootingFailed(f"no bracket for psi(0) in [{lo}, {hi}] (slopes {vals.min():.3g}..{vals.max():.3g} vs {R})")
    a, c = grid[sign[0]], grid[sign[0] + 1]
    # bisect several candidates at once
    while c - a > SHOOT_TOL * max(1.0, abs(a)):
        cand = np.linspace(a, c, 17)
        v = slope(cand) - R
        i = np.flatnonzero(np.diff(np.sign(v)) != 0)
        if not i.size:
            break
        a, c = cand[i[0]], cand[i[0] + 1]
    b = 0.5 * (a + c)
    psi, u = _rk4(h, b, r)
    psi, u = psi[:, 0], u[:, 0]
    dpsi = np.sqrt(2 * np.maximum(u, 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(r > 0, r * h(psi) / np.where(dpsi > 0, dpsi, 1.0), np.sqrt(h(b)))
    dd[0] = np.sqrt(h(b))
    return RadialProfile(r, psi, dpsi, dd, b), h


def radial_shooting(profile: Profile, body: ConvexBody | float, tau: float,
                    r_max: float | None = None, step: float = RK4_STEP) -> OracleSolution:
    """
    Radial solution on a disc (or a fine polygon flagged with disc_radius).

    Raises
    ------
    ShootingFailed
        if no bracket for psi(0) is found.
    """
    if isinstance(body, ConvexBody):
        if body.dim != 2:
            raise ShootingFailed("radial shooting is for n = 2")
        R = body.disc_radius if body.disc_radius is not None else body.inradius
    else:
        R = float(body)
        ang = 2 * np.pi * np.arange(256) / 256
        body = build_body(R * np.c_[np.cos(ang), np.sin(ang)], disc_radius=R)
    if profile.dim != 2:
        raise ShootingFailed("profile dimension must be 2")
    if r_max is None:
        r_max = 1e4 if profile.is_power else 60.0
    prof, h = _shoot(profile, R, r_max, step)
    # Richardson: RK4 error scales as step^4, so |psi_h - psi_2h| / 15 estimates it
    coarse = _radial_mesh(r_max, 2 * step)
    psi2, u2 = _rk4(h, prof.b, coarse)
    fine_fit = CubicHermiteSpline(prof.r, prof.psi, prof.dpsi)
    coarse_fit = CubicHermiteSpline(coarse, psi2[:, 0], np.sqrt(2 * np.maximum(u2[:, 0], 0)))
    probe = np.array([0.5, 1.0, 2.0, 5.0])
    richardson = float(np.max(np.abs(fine_fit(probe) - coarse_fit(probe)))) / 15
    if richardson > 1e-8:
        raise ShootingFailed(f"RK4 step {step} too coarse: Richardson estimate {richardson:.2e}")
    spline = fine_fit
    dspline = CubicHermiteSpline(prof.r, prof.dpsi, prof.ddpsi)
    d2spline = dspline.derivative()
    r_end, psi_end, s_end = prof.r[-1], prof.psi[-1], prof.dpsi[-1]
    vol = np.pi * R ** 2

    def psi_of(r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= r_end, spline(np.minimum(r, r_end)), psi_end + s_end * (r - r_end))
        return out

    def dpsi_of(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, dspline(np.minimum(r, r_end)), s_end)

    def ddpsi_of(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, d2spline(np.minimum(r, r_end)), 0.0)

    # normalisation: psi* on the disc, radially psi*(rho) = r psi'(r) - psi(r) at rho = psi'(r)
    rr = prof.r
    conj = rr * prof.dpsi - prof.psi
    # int_disc psi* = int_0^R 2 pi rho psi*(rho) d rho, rho = psi'(r), d rho = psi'' dr
    integrand = 2 * np.pi * prof.dpsi * conj * prof.ddpsi
    I = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(rr)))
    # the linear far field contributes nothing: rho stays at R there
    if profile.is_power:
        a = tau / -I
        scale, shift = a, 0.0
        Z = a ** (2 - profile.s - 1) * vol
        note = f"radial shooting, dilation a = {a:.12g}, RK4 error ~ {richardson:.1e}"
    else:
        scale = 1.0
        shift = (I + tau) / vol
        Z = vol * np.exp(-shift)
        note = f"radial shooting, shift c = {shift:.12g}, RK4 error ~ {richardson:.1e}"

    def val(x):
        r = np.linalg.norm(x, axis=1)
        return scale * psi_of(r / scale) + shift

    def grad(x):
        r = np.linalg.norm(x, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, x / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return dpsi_of(r / scale)[:, None] * unit

    def hess(x):
        r = np.linalg.norm(x, axis=1)
        rs = r / scale
        d1 = dpsi_of(rs)
        d2 = ddpsi_of(rs) / scale
        with np.errstate(invalid="ignore", divide="ignore"):
            tang = np.where(rs > 0, d1 / np.where(r > 0, r, 1.0), d2)
            unit = np.where(r[:, None] > 0, x / np.where(r > 0, r, 1.0)[:, None], 0.0)
        eye = np.eye(2)[None]
        uu = unit[:, :, None] * unit[:, None, :]
        return d2[:, None, None] * uu + tang[:, None, None] * (eye - uu)

    sampler = AnalyticSampler(2, val, grad, hess)
    return OracleSolution(profile, body, sampler, float(tau), float(Z), note, vol)


def radial_residual(sol: OracleSolution, r_max: float = 10.0, samples: int = 1000) -> float:
    """
    PDE residual of a radial oracle between mesh points.

    psi'' comes from differentiating the Hermite interpolant of psi', so the
    check is independent of the ODE right-hand side used during stepping.
    """
    r = np.linspace(0.05, r_max, samples)
    x = np.c_[r, np.zeros_like(r)]
    return float(np.max(sol.residual(x)))
