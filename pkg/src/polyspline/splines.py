"""Quadratic B-spline and Lagrange shape functions on the unit interval.

All element bases are tensor products of three one-dimensional functions
evaluated on the owning cell's parametric span [0, 1].  The spline variants
differ only in how the six-entry knot vector treats the two ends of the cell
strip: a cell away from the boundary uses uniform knots, a cell whose strip
ends at the mesh boundary uses repeated (open) end knots there.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# end-condition codes per direction
INTERIOR = 0
OPEN_LO = 1    # strip ends at the boundary on the t=0 side
OPEN_HI = 2    # strip ends at the boundary on the t=1 side
OPEN_BOTH = 3

#: six-entry knot vectors; the owning cell's span is always knots[2:4] = [0,1]
VARIANT_KNOTS = {
    INTERIOR: (-2.0, -1.0, 0.0, 1.0, 2.0, 3.0),
    OPEN_LO: (0.0, 0.0, 0.0, 1.0, 2.0, 3.0),
    OPEN_HI: (-2.0, -1.0, 0.0, 1.0, 1.0, 1.0),
    OPEN_BOTH: (0.0, 0.0, 0.0, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class SplineBasis1D:
    """One quadratic B-spline out of the three living on a 6-knot vector."""

    knots: tuple
    index: int

    def eval(self, t):
        return bspline_quad_eval(self, t)


def _deg0(knots, t):
    """Degree-0 B-splines over 4 knots at points t, right-closed at the top
    of the active span so cell-endpoint evaluations work."""
    t = np.asarray(t, dtype=float)
    out = []
    for j in range(3):
        lo, hi = knots[j], knots[j + 1]
        if hi <= lo:
            out.append(np.zeros_like(t))
        else:
            closed_top = hi >= knots[3]
            inside = (t >= lo) & ((t <= hi) if closed_top else (t < hi))
            out.append(inside.astype(float))
    return out


def bspline_quad_eval(basis: SplineBasis1D, t):
    """Cox-de Boor value and derivative of a quadratic B-spline.

    The four knots of function ``index`` are ``knots[index:index+4]``.
    Outside the support both value and derivative are zero.
    """
    k = np.asarray(basis.knots, dtype=float)[basis.index : basis.index + 4]
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)

    n0 = _deg0(k, t_arr)

    def ratio(num, den):
        return num / den if den > 0 else 0.0

    # degree 1
    n1 = []
    for j in range(2):
        a = ratio(1.0, k[j + 1] - k[j])
        b = ratio(1.0, k[j + 2] - k[j + 1])
        n1.append((t_arr - k[j]) * a * n0[j] + (k[j + 2] - t_arr) * b * n0[j + 1])
    # degree 2
    a = ratio(1.0, k[2] - k[0])
    b = ratio(1.0, k[3] - k[1])
    val = (t_arr - k[0]) * a * n1[0] + (k[3] - t_arr) * b * n1[1]
    der = 2.0 * (a * n1[0] - b * n1[1])

    if scalar:
        return float(val[0]), float(der[0])
    return val, der


@lru_cache(maxsize=None)
def spline_slot_functions(variant: int):
    """The three SplineBasis1D functions active on the cell span [0,1] for a
    knot variant, ordered by slot (anchor at offset -1, 0, +1 or the
    boundary entity replacing it)."""
    knots = VARIANT_KNOTS[variant]
    return tuple(SplineBasis1D(knots=knots, index=j) for j in range(3))


def spline_values_1d(variant: int, t):
    """Values and derivatives of the 3 slot functions at points t; arrays of
    shape (len(t), 3)."""
    t = np.asarray(t, dtype=float)
    vals = np.empty(t.shape + (3,))
    ders = np.empty(t.shape + (3,))
    for j, fn in enumerate(spline_slot_functions(variant)):
        v, d = bspline_quad_eval(fn, t)
        vals[..., j] = v
        ders[..., j] = d
    return vals, ders


# ----------------------------------------------------------------------
# Lagrange shape functions (Q1 / Q2)
# ----------------------------------------------------------------------

def lagrange_1d(order: int, t):
    """Nodal 1D Lagrange values/derivatives: 2 linear or 3 quadratic."""
    t = np.asarray(t, dtype=float)
    if order == 1:
        vals = np.stack([1.0 - t, t], axis=-1)
        ders = np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
    elif order == 2:
        vals = np.stack(
            [(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)],
            axis=-1,
        )
        ders = np.stack([4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0], axis=-1)
    else:
        raise ValueError("order must be 1 or 2")
    return vals, ders


def lagrange_basis(order: int, points):
    """Tensor Lagrange basis on [0,1]^2 at ``points`` (n, 2).

    Returns values (n, m) and gradients (n, m, 2) with m = 4 (Q1) or 9 (Q2).
    Local ordering is tensor: l = (order+1)*iy + ix over node coordinates
    {0, 1} (Q1) or {0, 1/2, 1} (Q2).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    fu, du = lagrange_1d(order, pts[:, 0])
    fv, dv = lagrange_1d(order, pts[:, 1])
    k = order + 1
    n = len(pts)
    vals = np.empty((n, k * k))
    grads = np.empty((n, k * k, 2))
    for iy in range(k):
        for ix in range(k):
            l = k * iy + ix
            vals[:, l] = fu[:, ix] * fv[:, iy]
            grads[:, l, 0] = du[:, ix] * fv[:, iy]
            grads[:, l, 1] = fu[:, ix] * dv[:, iy]
    return vals, grads


def lagrange_nodes(order: int):
    """Reference coordinates of the tensor Lagrange nodes."""
    xs = np.linspace(0.0, 1.0, order + 1)
    return np.array([(x, y) for y in xs for x in xs])


@lru_cache(maxsize=None)
def _spline_table_cached(vx: int, vy: int, pts_key):
    pts = np.asarray(pts_key, dtype=float).reshape(-1, 2)
    fu, du = spline_values_1d(vx, pts[:, 0])
    fv, dv = spline_values_1d(vy, pts[:, 1])
    n = len(pts)
    vals = np.empty((n, 9))
    grads = np.empty((n, 9, 2))
    for sy in range(3):
        for sx in range(3):
            l = 3 * sy + sx
            vals[:, l] = fu[:, sx] * fv[:, sy]
            grads[:, l, 0] = du[:, sx] * fv[:, sy]
            grads[:, l, 1] = fu[:, sx] * dv[:, sy]
    return vals, grads


def spline_basis_2d(vx: int, vy: int, points):
    """Tensor biquadratic spline basis for a cell with knot variants
    (vx, vy); values (n, 9) and gradients (n, 9, 2), slot order
    l = 3*sy + sx."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    key = tuple(pts.ravel().tolist())
    return _spline_table_cached(vx, vy, key)
