"""Quadrature rules on the reference square and on star-shaped polygons.

Square rules are tensor Gauss-Legendre mapped to [0,1]^2.  Polygon rules fan
the polygon into triangles from a kernel point and use a collapsed
(Duffy-type) Gauss rule on each triangle: with n = ceil((d+2)/2) points per
direction the collapsed rule integrates bivariate polynomials of total
degree d exactly on the triangle, and all weights are positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import NotStarShaped
from .mesh import polygon_area


@dataclass(frozen=True)
class QuadratureRule:
    """Points (n, 2) and weights (n,); ``domain`` is 'ref-square' for rules
    on [0,1]^2 or 'physical' for rules living directly in physical space."""

    points: np.ndarray
    weights: np.ndarray
    degree: int
    domain: str = "ref-square"

    def integrate(self, values) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))


@lru_cache(maxsize=None)
def gauss_01(n: int):
    """n-point Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def quad_rule_square(degree: int) -> QuadratureRule:
    """Tensor Gauss rule on [0,1]^2 exact for bi-degree ``degree``."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    n = (degree + 2) // 2
    x, w = gauss_01(n)
    U, V = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    pts = np.column_stack([U.ravel(), V.ravel()])
    return QuadratureRule(points=pts, weights=W.ravel(), degree=degree)


@lru_cache(maxsize=None)
def _triangle_rule_ref(degree: int):
    """Collapsed Gauss rule on the unit triangle (0,0),(1,0),(0,1)."""
    n = (degree + 3) // 2  # integrand picks up one extra degree from the map
    u, wu = gauss_01(n)
    pts = []
    wts = []
    for i in range(n):
        for j in range(n):
            x = u[i]
            y = u[j] * (1.0 - u[i])
            pts.append((x, y))
            wts.append(wu[i] * wu[j] * (1.0 - u[i]))
    return np.array(pts), np.array(wts)


def triangle_rule(p0, p1, p2, degree: int):
    """Gauss points/weights on the physical triangle (p0, p1, p2)."""
    ref_pts, ref_wts = _triangle_rule_ref(degree)
    p0 = np.asarray(p0, float)
    e1 = np.asarray(p1, float) - p0
    e2 = np.asarray(p2, float) - p0
    area2 = e1[0] * e2[1] - e1[1] * e2[0]
    pts = p0 + np.outer(ref_pts[:, 0], e1) + np.outer(ref_pts[:, 1], e2)
    return pts, ref_wts * area2


def quad_rule_polygon(points, star_center, degree: int) -> QuadratureRule:
    """Physical-space rule on a star-shaped polygon via fan triangulation
    from ``star_center`` (must lie in the polygon's kernel)."""
    pts = np.asarray(points, dtype=float)
    c = np.asarray(star_center, dtype=float)
    n = len(pts)
    all_p = []
    all_w = []
    for i in range(n):
        tp, tw = triangle_rule(c, pts[i], pts[(i + 1) % n], degree)
        if np.any(tw < 0):
            raise NotStarShaped("fan triangle is inverted; center not in kernel")
        all_p.append(tp)
        all_w.append(tw)
    P = np.vstack(all_p)
    W = np.concatenate(all_w)
    area = polygon_area(pts)
    if not math.isclose(float(W.sum()), area, rel_tol=1e-12, abs_tol=1e-14):
        raise NotStarShaped("fan weights do not sum to the polygon area")
    return QuadratureRule(points=P, weights=W, degree=degree, domain="physical")


@lru_cache(maxsize=None)
def edge_rule(degree: int):
    """1D Gauss nodes/weights on [0, 1] exact for ``degree``."""
    n = (degree + 2) // 2
    return gauss_01(n)
