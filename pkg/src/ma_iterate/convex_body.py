"""
Bounded convex target sets given by vertex lists.

A body stores its hull vertices together with the inward halfspace
description ``<n_i, y> + lam_i >= 0`` (unit normals), so that support
numbers, erosion and polar sets are cheap to read off.
"""

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial import QhullError

from .errors import (BarycenterNotAtOrigin, DegenerateBody, ErosionEmpty,
                     NonIntegralVertex, OriginNotInterior, UnsupportedDimension)

COORD_TOL = 1e-12


@dataclass(frozen=True)
class ConvexBody:
    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    volume: float
    barycenter: np.ndarray
    inradius: float
    disc_radius: float | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def halfspaces(self):
        return list(zip(self.normals, self.offsets))

    def contains(self, y, tol=COORD_TOL):
        y = np.atleast_2d(y)
        return np.all(y @ self.normals.T + self.offsets >= -tol, axis=1)


def _simplex_moments(vertices, dim):
    """Volume and barycenter by fanning simplices from the vertex mean."""
    if dim == 1:
        lo, hi = vertices.min(), vertices.max()
        return hi - lo, np.array([(lo + hi) / 2])
    hull = ConvexHull(vertices)
    apex = vertices.mean(axis=0)
    vol = 0.0
    moment = np.zeros(dim)
    for simplex in hull.simplices:
        pts = vertices[simplex]
        v = abs(np.linalg.det(pts - apex)) / np.prod(np.arange(1, dim + 1))
        vol += v
        moment += v * (pts.sum(axis=0) + apex) / (dim + 1)
    return vol, moment / vol


def build_body(vertices, disc_radius=None) -> ConvexBody:
    """
    Convex hull of a point list in dimension 1, 2 or 3.

    Parameters
    ----------
    vertices : array_like, shape (k, n) or (k,) for n = 1
    disc_radius : float, optional
        Marks a fine polygon as an approximation of the centered disc of
        that radius (used by the radial oracle).

    Returns
    -------
    ConvexBody
    """
    pts = np.asarray(vertices, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    k, n = pts.shape
    if n not in (1, 2, 3):
        raise UnsupportedDimension(f"dimension {n} not in {{1, 2, 3}}")
    if k < n + 1:
        raise DegenerateBody(f"need at least {n + 1} points, got {k}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv.size < n or sv[n - 1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateBody("affine hull has dimension < n")

    if n == 1:
        lo, hi = pts.min(), pts.max()
        verts = np.array([[lo], [hi]])
        normals = np.array([[1.0], [-1.0]])
        offsets = np.array([-lo, hi])
    else:
        try:
            hull = ConvexHull(pts)
        except QhullError as exc:
            raise DegenerateBody(str(exc)) from exc
        verts = pts[hull.vertices]
        # qhull: a.x + b <= 0 with outward unit a; flip to inward form
        eqs = _unique_rows(hull.equations)
        normals = -eqs[:, :n]
        offsets = -eqs[:, n]
    volume, bary = _simplex_moments(verts, n)
    if volume <= 0:
        raise DegenerateBody("zero volume")
    inradius = float(max(offsets.min(), 0.0))
    return ConvexBody(verts, normals, offsets, float(volume), bary, inradius, disc_radius)


def _unique_rows(eqs, tol=1e-10):
    keep = []
    for row in eqs:
        if not any(np.allclose(row, other, atol=tol) for other in keep):
            keep.append(row)
    return np.array(keep)


def regular_polygon(radius, count, phase=0.0):
    """Inscribed regular polygon; flagged as a disc of that radius."""
    ang = phase + 2 * np.pi * np.arange(count) / count
    return build_body(radius * np.c_[np.cos(ang), np.sin(ang)], disc_radius=radius)


def assert_centered(body: ConvexBody, tol: float = 1e-10) -> None:
    if np.linalg.norm(body.barycenter) > tol:
        raise BarycenterNotAtOrigin(body.barycenter)


def polar(body: ConvexBody) -> ConvexBody:
    """Polar set {y : <x, y> <= 1 for x in A}; facets and vertices swap."""
    if body.inradius <= COORD_TOL:
        raise OriginNotInterior("polar needs the origin strictly inside")
    # <n, y> + lam >= 0  <=>  <-n/lam, y> <= 1
    pts = -body.normals / body.offsets[:, None]
    return build_body(pts if body.dim > 1 else pts[:, 0])


def chebyshev_center(body: ConvexBody):
    """Center and radius of the largest inscribed ball."""
    n = body.dim
    c = np.zeros(n + 1)
    c[-1] = -1.0
    # -<n_i, x> + r <= lam_i
    a_ub = np.c_[-body.normals, np.ones(len(body.offsets))]
    res = linprog(c, A_ub=a_ub, b_ub=body.offsets, bounds=[(None, None)] * n + [(0, None)],
                  method="highs")
    return res.x[:n], float(res.x[-1])


@dataclass(frozen=True)
class ErodedBody:
    parent: ConvexBody
    epsilon: float
    normals: np.ndarray
    offsets: np.ndarray

    @property
    def inradius(self) -> float:
        """Inradius about the origin, 0 if the origin is not inside."""
        return float(max(self.offsets.min(), 0.0))

    def as_body(self) -> ConvexBody:
        n = self.parent.dim
        if n == 1:
            lo = -self.offsets[self.normals[:, 0] > 0].min()
            hi = self.offsets[self.normals[:, 0] < 0].min()
            return build_body([lo, hi])
        center, _ = chebyshev_center(self.parent)
        hs = np.c_[-self.normals, -self.offsets]
        pts = HalfspaceIntersection(hs, center).intersections
        return build_body(pts)


def erode(body: ConvexBody, epsilon: float) -> ErodedBody:
    """A_eps = {y : B_eps(y) inside A}: every unit-normal offset drops by eps."""
    if epsilon <= 0:
        raise ErosionEmpty("epsilon must be positive")
    _, cheb = chebyshev_center(body)
    if epsilon >= cheb:
        raise ErosionEmpty(f"epsilon {epsilon} >= Chebyshev radius {cheb}")
    return ErodedBody(body, float(epsilon), body.normals.copy(), body.offsets - epsilon)


def _primitive(v):
    g = gcd(abs(int(v[0])), abs(int(v[1])))
    return np.array([int(v[0]) // g, int(v[1]) // g])


def delzant_check(body: ConvexBody) -> bool:
    """Primitive edge vectors at every vertex form a lattice basis (n <= 2)."""
    n = body.dim
    if n > 2:
        raise UnsupportedDimension("Delzant check implemented for n <= 2")
    v = body.vertices
    if np.any(np.abs(v - np.round(v)) > COORD_TOL):
        raise NonIntegralVertex("vertices must be integral")
    if n == 1:
        return True
    v = np.round(v).astype(int)
    # order counterclockwise around the mean
    c = v.mean(axis=0)
    v = v[np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))]
    k = len(v)
    for i in range(k):
        e1 = _primitive(v[(i + 1) % k] - v[i])
        e2 = _primitive(v[i - 1] - v[i])
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) != 1:
            return False
    return True
