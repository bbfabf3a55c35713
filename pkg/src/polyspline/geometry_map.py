"""Geometric map from parametric cells to physical space.

Quads not in the spline region use bilinear interpolation of their corners;
spline cells use the spline basis itself (isoparametric), with control
values fitted so the map interpolates the mesh vertices; polygon cells live
directly in physical space, so their map is the identity.

The spline fit solves g(corner) = vertex for every vertex of the spline
region.  The system is underdetermined, so the control values are written as
anchor positions (cell centroids, edge midpoints, corner vertices - the
Greville points of the tensor spline) plus a minimum-norm correction.  On
grids whose spline region is an affine image of the unit lattice the anchors
already interpolate, the correction vanishes, and the map is exactly affine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateJacobian, SingularFit
from .mesh import CellTag, PolyMesh
from .splines import lagrange_basis, spline_basis_2d

IDENTITY, BILINEAR, SPLINE = 0, 1, 2


@dataclass
class GeoMapEval:
    """Geometric map data at a batch of parametric points."""

    x: np.ndarray      # (n, 2) physical positions
    Dg: np.ndarray     # (n, 2, 2) Jacobians
    det: np.ndarray    # (n,) determinants
    A: np.ndarray      # (n, 2, 2) metric tensors inv(Dg) inv(Dg)^T


@dataclass
class GeoMap:
    mesh: PolyMesh
    kinds: np.ndarray              # per-face IDENTITY / BILINEAR / SPLINE
    corners: dict                  # quad face -> (4, 2) vertex positions
    controls: np.ndarray           # (n_dofs, 2); rows only used for spline dofs
    space: object                  # SpaceBasis (for spline element dof ids)

    def eval(self, f: int, points, check: bool = True) -> GeoMapEval:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        kind = self.kinds[f]
        if kind == IDENTITY:
            n = len(pts)
            Dg = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
            return GeoMapEval(x=pts.copy(), Dg=Dg, det=np.ones(n), A=Dg.copy())
        if kind == BILINEAR:
            vals, grads = lagrange_basis(1, pts)
            c = self.corners[f]
        else:
            eb = self.space.elements[f]
            vals, grads = eb.eval(pts)
            c = self.controls[eb.identity_cols]
        x = vals @ c
        Dg = np.einsum("nlj,li->nij", grads, c)
        det = Dg[:, 0, 0] * Dg[:, 1, 1] - Dg[:, 0, 1] * Dg[:, 1, 0]
        if check and np.any(np.abs(det) < 1e-14):
            raise DegenerateJacobian(f"|det Dg| < 1e-14 on cell {f}")
        inv = np.empty_like(Dg)
        inv[:, 0, 0] = Dg[:, 1, 1]
        inv[:, 0, 1] = -Dg[:, 0, 1]
        inv[:, 1, 0] = -Dg[:, 1, 0]
        inv[:, 1, 1] = Dg[:, 0, 0]
        inv /= det[:, None, None]
        A = np.einsum("nik,njk->nij", inv, inv)
        return GeoMapEval(x=x, Dg=Dg, det=det, A=A)


def eval_geomap(geomap: GeoMap, f: int, points, check: bool = True) -> GeoMapEval:
    """Functional wrapper around :meth:`GeoMap.eval`."""
    return geomap.eval(f, points, check=check)


def _anchor_controls(space) -> np.ndarray:
    mesh = space.mesh
    c = np.zeros((len(space.dofs), 2))
    for i, d in enumerate(space.dofs.dofs):
        c[i] = d.anchor
    return c


def fit_geometric_map(space) -> GeoMap:
    """Fit the per-cell geometric maps for a built SpaceBasis.

    Spline control values solve the vertex-interpolation conditions
    g(corner) = vertex in the least-norm sense relative to the anchor
    positions.  Raises SingularFit when the interpolation conditions cannot
    be met.
    """
    mesh = space.mesh
    tags = space.classes.tags
    kinds = np.empty(mesh.n_faces, dtype=np.int64)
    corners = {}
    for f in range(mesh.n_faces):
        if tags[f] == CellTag.POLYGON:
            kinds[f] = IDENTITY
        elif space.mode == "polyspline" and tags[f] == CellTag.SPLINE:
            kinds[f] = SPLINE
        else:
            kinds[f] = BILINEAR
        if kinds[f] != IDENTITY:
            # tensor (Q1) node order: v0, v1, v3, v2
            corners[f] = mesh.face_points(f)[[0, 1, 3, 2]]

    controls = _anchor_controls(space)
    spline_faces = sorted(space.layouts)
    if spline_faces:
        A_v, b_v = _interp_rows(space, spline_faces, _VERTEX_UV)
        A_s, b_s = _interp_rows(space, spline_faces, _SOFT_UV)
        r_v = b_v - A_v @ controls
        if np.max(np.abs(r_v)) > 1e-12:
            controls = controls + _constrained_correction(
                A_v, r_v, A_s, b_s - A_s @ controls)
            r_v = b_v - A_v @ controls
            if np.max(np.abs(r_v)) > 1e-9:
                raise SingularFit(
                    f"spline map interpolation residual {np.max(np.abs(r_v)):.2e}"
                )
    return GeoMap(mesh=mesh, kinds=kinds, corners=corners, controls=controls,
                  space=space)


# reference points for the spline-map fit: vertices carry hard interpolation
# conditions; cell centers and edge midpoints are pulled (in the least-squares
# sense) to their bilinear positions, which keeps the underdetermined fit
# smooth and avoids inverted cells on curved but combinatorially regular
# patches
_VERTEX_UV = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
_SOFT_UV = [(0.5, 0.5), (0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5)]


def _interp_rows(space, spline_faces, uv_list):
    """Sparse evaluation rows of the spline map at the given reference
    points of every spline cell, with their bilinear physical targets."""
    mesh = space.mesh
    from .splines import lagrange_basis

    q1v, _ = lagrange_basis(1, uv_list)
    rows, cols, vals, rhs = [], [], [], []
    seen = set()
    for f in spline_faces:
        ids = space.elements[f].identity_cols
        loop = mesh.faces[f]
        corners = mesh.vertices[[loop[0], loop[1], loop[3], loop[2]]]
        bv, _ = spline_basis_2d(*space.layouts[f][0], uv_list)
        for k, uv in enumerate(uv_list):
            # dedup shared vertices/edges by their physical target key
            target = q1v[k] @ corners
            key = (round(target[0], 12), round(target[1], 12), uv in _VERTEX_UV)
            if uv in _VERTEX_UV or uv != (0.5, 0.5):
                if key in seen:
                    continue
                seen.add(key)
            r = len(rhs)
            for l in range(9):
                if abs(bv[k, l]) > 1e-14:
                    rows.append(r)
                    cols.append(int(ids[l]))
                    vals.append(bv[k, l])
            rhs.append(target)
    A = sp.csr_matrix((vals, (rows, cols)),
                      shape=(len(rhs), len(space.dofs)))
    return A, np.asarray(rhs)


def _constrained_correction(A_v, r_v, A_s, r_s):
    """min |A_s d - r_s| subject to A_v d = r_v, via a sparse KKT solve."""
    n = A_v.shape[1]
    m = A_v.shape[0]
    AtA = (A_s.T @ A_s).tocsr()
    reg = 1e-10 * max(AtA.diagonal().max(), 1.0)
    kkt = sp.bmat([[AtA + reg * sp.eye(n), A_v.T], [A_v, None]], format="csc")
    rhs = np.vstack([A_s.T @ r_s, r_v])
    try:
        sol = spla.spsolve(kkt, rhs)
    except RuntimeError as exc:
        raise SingularFit(f"geometric map KKT solve failed: {exc}") from exc
    return np.asarray(sol)[:n]


def validate_geomap(geomap: GeoMap, quadrature_points) -> dict:
    """Evaluate det Dg at the given reference points on every non-polygon
    cell; report the minimum and the cells with nonpositive determinants."""
    min_det = np.inf
    bad = []
    for f in range(geomap.mesh.n_faces):
        if geomap.kinds[f] == IDENTITY:
            continue
        ev = geomap.eval(f, quadrature_points, check=False)
        m = float(ev.det.min())
        min_det = min(min_det, m)
        if m <= 0.0:
            bad.append(f)
    return {"min_det": min_det, "inverted_cells": bad}
