"""Nonconforming polygon bases from harmonic kernels and quadratic monomials.

Each basis function overlapping a polygon cell P (one per vertex / edge node
on the boundary of P) is extended into P as

    phi(x) = sum_i w_i psi_i(x) + sum_d a_d q_d(x)

with kernels psi_i(x) = 1 / |x - z_i| centered strictly outside P and the
six quadratic monomials q_d.  The coefficients minimize the mismatch with
the neighboring elements' traces at collocation points on the boundary of P,
subject to PDE-dependent consistency constraints that make the discrete
bilinear form exact on quadratic polynomials (which restores third-order
convergence despite the basis being nonconforming).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CenterInsidePolygon, InfeasibleConstraints, NotStarShaped, RankDeficient
from .mesh import edge_key
from .preprocess import point_in_polygon, polygon_kernel
from .problems import (
    CONSTRAINT_MONOMIALS,
    monomial_gradients,
    monomial_values,
)
from .quadrature import quad_rule_polygon, quad_rule_square

KKT_COND_LIMIT = 1e14


def kernel_values(kind: str, centers, points) -> np.ndarray:
    """psi_i(p) for all centers/points -> (n_points, k)."""
    z = np.asarray(centers, float)
    p = np.atleast_2d(np.asarray(points, float))
    d = p[:, None, :] - z[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=2))
    if kind == "inverse-distance":
        return 1.0 / r
    if kind == "log":
        return np.log(r)
    raise ValueError(f"unknown kernel kind {kind!r}")


def kernel_gradients(kind: str, centers, points) -> np.ndarray:
    """grad psi_i(p) -> (n_points, k, 2)."""
    z = np.asarray(centers, float)
    p = np.atleast_2d(np.asarray(points, float))
    d = p[:, None, :] - z[None, :, :]
    r2 = np.sum(d * d, axis=2)
    if kind == "inverse-distance":
        return -d / (r2 ** 1.5)[:, :, None]
    if kind == "log":
        return d / r2[:, :, None]
    raise ValueError(f"unknown kernel kind {kind!r}")


@dataclass
class HarmonicBasisRep:
    """One fitted basis function restricted to one polygon."""

    centers: np.ndarray   # (k, 2), all strictly outside the polygon
    weights: np.ndarray   # (k,)
    poly: np.ndarray      # (6,) coefficients of [1, x, y, xy, x^2, y^2]
    kernel: str = "inverse-distance"

    def values(self, points) -> np.ndarray:
        return (kernel_values(self.kernel, self.centers, points) @ self.weights
                + monomial_values(points) @ self.poly)

    def gradients(self, points) -> np.ndarray:
        g = np.einsum("nkd,k->nd", kernel_gradients(self.kernel, self.centers, points),
                      self.weights)
        return g + np.einsum("nmd,m->nd", monomial_gradients(points), self.poly)

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
            "poly": self.poly.tolist(),
            "kernel": self.kernel,
        }


@dataclass
class ConstraintSystem:
    """Equality rows C [w; a] = c; the rhs is per basis function."""

    C: np.ndarray                 # (n_rows, k + 6)
    labels: list                  # (monomial, alpha, beta) per row
    kernel: str

    @property
    def n_rows(self) -> int:
        return len(self.C)


@dataclass
class PolygonBasis:
    """All fitted basis functions of one polygon cell."""

    cell: int
    dof_ids: np.ndarray           # (m,) global dofs overlapping the polygon
    centers: np.ndarray
    kernel: str
    W: np.ndarray                 # (m, k) kernel weights per dof
    A_poly: np.ndarray            # (m, 6) monomial coefficients per dof
    quadrature: object
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_local(self) -> int:
        return len(self.dof_ids)

    def rep(self, local: int) -> HarmonicBasisRep:
        return HarmonicBasisRep(centers=self.centers, weights=self.W[local].copy(),
                                poly=self.A_poly[local].copy(), kernel=self.kernel)

    def values(self, points) -> np.ndarray:
        psi = kernel_values(self.kernel, self.centers, points)
        mono = monomial_values(points)
        return psi @ self.W.T + mono @ self.A_poly.T

    def gradients(self, points) -> np.ndarray:
        gpsi = kernel_gradients(self.kernel, self.centers, points)
        gmono = monomial_gradients(points)
        return (np.einsum("nkd,mk->nmd", gpsi, self.W)
                + np.einsum("nqd,mq->nmd", gmono, self.A_poly))

    def to_dict(self) -> dict:
        return {
            "cell": int(self.cell),
            "dofs": self.dof_ids.tolist(),
            "kernel": self.kernel,
            "centers": self.centers.tolist(),
            "weights": self.W.tolist(),
            "poly": self.A_poly.tolist(),
        }


# ----------------------------------------------------------------------
# center placement and collocation
# ----------------------------------------------------------------------

def place_kernel_centers(points, k_per_vertex: int = 1,
                         offset_factor: float = 1.0) -> np.ndarray:
    """Kernel centers outside the polygon: one per vertex on the outward
    angle-bisector normal, plus k_per_vertex - 1 per edge on the edge
    normal, offset by offset_factor times the local edge length.

    Each candidate failing the strict point-in-polygon test is retried once
    at double the offset; CenterInsidePolygon is raised if that also fails.
    """
    pts = np.asarray(points, float)
    n = len(pts)
    edges = pts[(np.arange(n) + 1) % n] - pts
    lens = np.linalg.norm(edges, axis=1)
    # outward normal of a CCW edge
    normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lens[:, None]

    def placed(base, direction, dist):
        for mult in (1.0, 2.0):
            cand = base + mult * dist * direction
            if not point_in_polygon(cand, pts):
                return cand
        raise CenterInsidePolygon(
            f"could not place a kernel center outside near {base}"
        )

    centers = []
    for i in range(n):
        d = normals[i - 1] + normals[i]
        nd = np.linalg.norm(d)
        if nd < 1e-12:
            d = pts[i] - pts.mean(axis=0)
            nd = np.linalg.norm(d)
        d = d / nd
        local = 0.5 * (lens[i - 1] + lens[i])
        centers.append(placed(pts[i], d, offset_factor * local))
        for j in range(1, k_per_vertex):
            t = j / k_per_vertex
            base = pts[i] + t * edges[i]
            centers.append(placed(base, normals[i], offset_factor * lens[i]))
    centers = np.asarray(centers)
    # offsets from vertices flanking a reflex corner can coincide exactly;
    # coincident kernels make the fit singular, so keep one of each group
    diam = float(np.max(np.ptp(pts, axis=0)))
    keep = []
    for i, z in enumerate(centers):
        if all(np.linalg.norm(z - centers[j]) > 1e-9 * diam for j in keep):
            keep.append(i)
    return centers[keep]


def sample_collocation(points, samples_per_edge: int):
    """Uniform boundary samples, deduplicated at shared vertices.

    Returns (points (s, 2), edge_index (s,), edge_param (s,)); each edge
    contributes samples at t = j/(samples_per_edge-1), j < samples_per_edge-1
    (the endpoint t=1 is the next edge's t=0).
    """
    if samples_per_edge < 3:
        raise ValueError("samples_per_edge must be >= 3")
    pts = np.asarray(points, float)
    n = len(pts)
    out, eidx, ets = [], [], []
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(samples_per_edge - 1):
            t = j / (samples_per_edge - 1)
            out.append(a + t * (b - a))
            eidx.append(i)
            ets.append(t)
    return np.asarray(out), np.asarray(eidx), np.asarray(ets)


# ----------------------------------------------------------------------
# consistency constraints
# ----------------------------------------------------------------------

def consistency_rows_poisson(points, centers, rule,
                             kernel: str = "inverse-distance") -> ConstraintSystem:
    """The five explicit Poisson constraint rows over unknowns [w; a].

    Row r, applied to phi = sum w psi + sum a q, states
    integral_P [ grad(q_r) . grad(phi) + lap(q_r) phi ] = c_r with the
    kernel integrals evaluated by the polygon quadrature rule and the
    monomial coefficients given by the polygon moments.
    """
    z = np.asarray(centers, float)
    k = len(z)
    qp, qw = rule.points, rule.weights
    x, y = qp[:, 0], qp[:, 1]
    psi = kernel_values(kernel, z, qp)
    gpsi = kernel_gradients(kernel, z, qp)
    gx, gy = gpsi[:, :, 0], gpsi[:, :, 1]
    # moments [ |P|, Mx, My, Mxy, Mxx, Myy ]
    M = qw @ monomial_values(qp)
    P, Mx, My, Mxy, Mxx, Myy = M

    C = np.zeros((5, k + 6))
    C[0, :k] = qw @ gx
    C[0, k:] = [0.0, P, 0.0, My, 2 * Mx, 0.0]
    C[1, :k] = qw @ gy
    C[1, k:] = [0.0, 0.0, P, Mx, 0.0, 2 * My]
    C[2, :k] = qw @ (y[:, None] * gx + x[:, None] * gy)
    C[2, k:] = [0.0, My, Mx, Mxx + Myy, 2 * Mxy, 2 * Mxy]
    C[3, :k] = 2.0 * (qw @ (psi + x[:, None] * gx))
    C[3, k:] = [2 * P, 4 * Mx, 2 * My, 4 * Mxy, 6 * Mxx, 2 * Myy]
    C[4, :k] = 2.0 * (qw @ (psi + y[:, None] * gy))
    C[4, k:] = [2 * P, 2 * Mx, 4 * My, 4 * Mxy, 2 * Mxx, 6 * Myy]

    labels = [(m, 0, 0) for m in CONSTRAINT_MONOMIALS]
    return ConstraintSystem(C=C, labels=labels, kernel=kernel)


def consistency_rows_generic(pde, points, centers, rule,
                             kernel: str = "inverse-distance") -> ConstraintSystem:
    """Constraint rows for any linear second-order PDE.

    For each constraint monomial q and emitted component pair (alpha, beta)
    the row applies integral_P [ m(x) . grad(phi) - s phi ] to the unknown
    coefficients, where s and m come from the PDE's strong and
    integrated-by-parts forms.  For scalar PDEs this reproduces the Poisson
    rows; 2D elasticity emits 15 rows (redundant-but-consistent rows are
    dropped numerically before solving).
    """
    z = np.asarray(centers, float)
    k = len(z)
    qp, qw = rule.points, rule.weights
    psi = kernel_values(kernel, z, qp)
    gpsi = kernel_gradients(kernel, z, qp)
    mono = monomial_values(qp)
    gmono = monomial_gradients(qp)

    rows = []
    labels = []
    for im, name in zip((1, 2, 3, 4, 5), CONSTRAINT_MONOMIALS):
        q_grad = gmono[:, im, :]
        for alpha, beta in pde.consistency_pairs(name):
            s = pde.strong_coeff(name, alpha, beta)
            m = pde.flux_coeff(name, alpha, beta, q_grad)
            row = np.empty(k + 6)
            integ_w = np.einsum("nd,nkd->nk", m, gpsi) - s * psi
            row[:k] = qw @ integ_w
            integ_a = np.einsum("nd,nqd->nq", m, gmono) - s * mono
            row[k:] = qw @ integ_a
            rows.append(row)
            labels.append((name, alpha, beta))
    C = np.asarray(rows)
    if k + 6 < len(rows):
        raise InfeasibleConstraints(
            f"{len(rows)} constraint rows need at least {len(rows) - 6} kernel "
            f"centers, got k={k}"
        )
    return ConstraintSystem(C=C, labels=labels, kernel=kernel)


def constraint_rows_for_mode(pde, points, centers, rule, kernel,
                             mode: str) -> ConstraintSystem:
    """Rows for an ablation mode: 'none', 'linear' (x and y rows only) or
    'quadratic' (the full PDE-dependent set)."""
    if mode == "none":
        return ConstraintSystem(C=np.zeros((0, len(centers) + 6)), labels=[],
                                kernel=kernel)
    sys_full = consistency_rows_generic(pde, points, centers, rule, kernel)
    if mode == "quadratic":
        return sys_full
    if mode == "linear":
        keep = [i for i, (m, _, _) in enumerate(sys_full.labels) if m in ("x", "y")]
        return ConstraintSystem(C=sys_full.C[keep], labels=[sys_full.labels[i] for i in keep],
                                kernel=kernel)
    raise ValueError(f"unknown constraint mode {mode!r}")


def consistency_rhs(space, geomap, polygon: int, dof_ids, pde,
                    labels, quad_degree: int = 6) -> np.ndarray:
    """Right-hand sides of the constraint rows for each overlapping dof.

    Integrates sum of [ s phi_j - m . grad(phi_j) ] over the cells of
    phi_j's support outside the polygon, in physical space through the
    geometric map.  Returns (n_dofs, n_rows).
    """
    mesh = space.mesh
    dof_ids = np.asarray(dof_ids, dtype=np.int64)
    col_of = {int(d): i for i, d in enumerate(dof_ids)}

    # cells outside P touching any overlapping dof: quads sharing a vertex
    # with the polygon boundary
    cells = set()
    for v in mesh.faces[polygon]:
        for g in mesh.vertex_faces(v):
            if g != polygon and len(mesh.faces[g]) == 4 and g in space.elements:
                cells.add(g)

    rule = quad_rule_square(quad_degree)
    out = np.zeros((len(dof_ids), len(labels)))
    for g in sorted(cells):
        eb = space.elements[g]
        vals, grads = eb.eval(rule.points)
        ev = geomap.eval(g, rule.points)
        inv = np.linalg.inv(ev.Dg)
        gphys = np.einsum("qji,qlj->qli", inv, grads)
        # local-dof coefficients of each overlapping global dof on this cell
        cols = np.zeros((eb.n_local, len(dof_ids)))
        touched = False
        for l, (ids, w) in enumerate(eb.rows):
            for i, w_i in zip(ids, w):
                j = col_of.get(int(i))
                if j is not None:
                    cols[l, j] += w_i
                    touched = True
        if not touched:
            continue
        phi = vals @ cols                                   # (nq, ndofs)
        gphi = np.einsum("qli,lj->qji", gphys, cols)        # (nq, ndofs, 2)
        wdet = rule.weights * np.abs(ev.det)
        gmono = monomial_gradients(ev.x)
        name_index = {"x": 1, "y": 2, "xy": 3, "x^2": 4, "y^2": 5}
        for row, (name, alpha, beta) in enumerate(labels):
            s = pde.strong_coeff(name, alpha, beta)
            m = pde.flux_coeff(name, alpha, beta, gmono[:, name_index[name], :])
            integ = s * phi - np.einsum("nd,njd->nj", m, gphi)
            out[:, row] += wdet @ integ
    return out


def boundary_trace(space, geomap, polygon: int, dof: int, edge_index: int,
                   edge_param) -> np.ndarray:
    """Trace of global dof ``dof`` on edge ``edge_index`` of the polygon
    boundary, evaluated from the neighboring quad element at parameters
    ``edge_param`` measured along the polygon's CCW loop."""
    mesh = space.mesh
    loop = mesh.faces[polygon]
    n = len(loop)
    a, b = loop[edge_index], loop[(edge_index + 1) % n]
    g = mesh.face_across(a, b)
    if g is None or g not in space.elements:
        raise ValueError("polygon edge has no quad neighbor")
    eb = space.elements[g]
    ts = np.atleast_1d(np.asarray(edge_param, float))
    uv = _edge_params_on_quad(mesh, g, b, a, 1.0 - ts)
    vals, _ = eb.eval(uv)
    col = eb.global_column(dof)
    return vals @ col


def _edge_params_on_quad(mesh, f: int, a: int, b: int, ts):
    """Reference coordinates on quad ``f`` of points at parameters ``ts``
    along its directed edge a->b (which f must traverse)."""
    loop = mesh.faces[f]
    i = loop.index(a)
    if loop[(i + 1) % 4] != b:
        raise ValueError(f"face {f} does not traverse edge ({a},{b})")
    ts = np.asarray(ts, float)
    zero = np.zeros_like(ts)
    one = np.ones_like(ts)
    if i == 0:
        return np.column_stack([ts, zero])
    if i == 1:
        return np.column_stack([one, ts])
    if i == 2:
        return np.column_stack([1.0 - ts, one])
    return np.column_stack([zero, 1.0 - ts])


# ----------------------------------------------------------------------
# constrained least-squares fit
# ----------------------------------------------------------------------

def monomial_shift_matrix(cx: float, cy: float, h: float) -> np.ndarray:
    """Change of basis T with a_raw = T a_local for the local monomials
    [1, xi, eta, xi*eta, xi^2, eta^2], xi = (x-cx)/h, eta = (y-cy)/h.

    Fitting in the local basis removes the near-collinearity of raw
    monomial columns on small polygons away from the origin.
    """
    T = np.zeros((6, 6))
    T[:, 0] = [1, 0, 0, 0, 0, 0]
    T[:, 1] = [-cx / h, 1 / h, 0, 0, 0, 0]
    T[:, 2] = [-cy / h, 0, 1 / h, 0, 0, 0]
    T[:, 3] = [cx * cy / h**2, -cy / h**2, -cx / h**2, 1 / h**2, 0, 0]
    T[:, 4] = [cx**2 / h**2, -2 * cx / h**2, 0, 0, 1 / h**2, 0]
    T[:, 5] = [cy**2 / h**2, 0, -2 * cy / h**2, 0, 0, 1 / h**2]
    return T


def fit_poly_basis(A: np.ndarray, b: np.ndarray, C: np.ndarray, c: np.ndarray,
                   recondition: np.ndarray | None = None):
    """Minimize |A u - b| subject to C u = c.

    The equality-constrained least-squares problem is solved by a nullspace
    method: a minimum-norm particular solution of the (independent) rows of
    C, plus an unconstrained fit in their orthogonal complement.  Columns
    are equilibrated; ``recondition`` optionally substitutes u = T v to fit
    in a better-conditioned basis.  Raises RankDeficient when the fit matrix
    condition estimate exceeds 1e14 (degenerate center placement).
    Returns (u, lstsq_residual_norm).
    """
    U, resid = _fit_poly_basis_batch(A, b[:, None], C,
                                     c[None, :] if C.size else np.zeros((1, 0)),
                                     recondition)
    return U[0], resid


def _fit_poly_basis_batch(A, B, C, Crhs, recondition=None, n_kernels=None,
                          weight_penalty=0.0):
    """Constrained fits for many right-hand sides sharing A and C.

    B is (n_points, n_fits), Crhs is (n_fits, n_rows).  One factorization
    serves all fits.  ``weight_penalty`` adds a small ridge on the (scaled)
    kernel weights: it damps large cancelling weight patterns that would
    otherwise stiffen the polygon blocks, and cannot perturb exactly
    representable (polynomial-trace) fits, whose optima have zero kernel
    weights.  Returns (coefficients (n_fits, n_unknowns), max_residual).
    """
    if recondition is not None:
        A = A @ recondition
        C = C @ recondition if C.size else C
    d = np.linalg.norm(A, axis=0)
    d[d < 1e-300] = 1.0
    As = A / d
    if np.linalg.cond(As) > KKT_COND_LIMIT:
        raise RankDeficient("collocation matrix is numerically singular")

    Afit, Bfit = As, B
    if weight_penalty > 0.0 and n_kernels:
        ridge = np.zeros((n_kernels, As.shape[1]))
        ridge[:, :n_kernels] = np.sqrt(weight_penalty) * np.eye(n_kernels)
        Afit = np.vstack([As, ridge])
        Bfit = np.vstack([B, np.zeros((n_kernels, B.shape[1]))])

    if C.size:
        keep = _independent_rows(C)
        Cs = C[keep] / d
        CK = Crhs[:, keep]
        # orthonormal basis: range(Cs^T) for particular solutions,
        # null(Cs) for the free directions
        Q, R = scipy.linalg.qr(Cs.T, mode="full")
        r = Cs.shape[0]
        Up = Q[:, :r] @ scipy.linalg.solve_triangular(R[:r, :r].T, CK.T,
                                                      lower=True)
        Z = Q[:, r:]
        Y, *_ = np.linalg.lstsq(Afit @ Z, Bfit - Afit @ Up, rcond=None)
        Us = Up + Z @ Y
    else:
        Us, *_ = np.linalg.lstsq(Afit, Bfit, rcond=None)

    Ucoef = (Us / d[:, None]).T
    if recondition is not None:
        Ucoef = Ucoef @ recondition.T
    resid = float(np.max(np.linalg.norm(As @ Us - B, axis=0))) if B.size else 0.0
    return Ucoef, resid


def _independent_rows(C: np.ndarray, tol: float = 1e-10):
    """Indices of a maximal numerically independent subset of rows."""
    norms = np.linalg.norm(C, axis=1)
    norms[norms < 1e-300] = 1.0
    Cn = C / norms[:, None]
    _, R, piv = scipy.linalg.qr(Cn.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return np.array([], dtype=int)
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(piv[:rank])


# ----------------------------------------------------------------------
# per-polygon pipeline
# ----------------------------------------------------------------------

@dataclass
class PolygonOptions:
    samples_per_edge: int = 10
    offset_factor: float = 1.0
    k_per_vertex: int | None = None     # None: smallest count meeting the floor
    kernel: str = "inverse-distance"
    constraint_mode: str = "quadratic"  # 'none' | 'linear' | 'quadratic'
    quad_degree: int = 6
    weight_penalty: float = 0.05        # ridge on scaled kernel weights


def polygon_dof_ids(space, polygon: int) -> np.ndarray:
    """Global dofs overlapping a polygon: the vertex (and, for quadratic
    neighbors, edge) node dofs on its boundary, in loop order."""
    mesh = space.mesh
    loop = mesh.faces[polygon]
    n = len(loop)
    ids = []
    for i in range(n):
        v = loop[i]
        ids.append(space.dofs.index[("nvert", v)])
        if space.order == 2:
            key = edge_key(v, loop[(i + 1) % n])
            ids.append(space.dofs.index[("nedge", key)])
    return np.asarray(ids, dtype=np.int64)


def build_polygon_basis(space, geomap, polygon: int, pde,
                        options: PolygonOptions) -> PolygonBasis:
    """Construct the fitted harmonic basis of one polygon cell."""
    mesh = space.mesh
    pts = mesh.face_points(polygon)
    loop = mesh.faces[polygon]
    n = len(loop)
    info = polygon_kernel(pts)
    if not info.is_star_shaped:
        raise NotStarShaped(f"polygon {polygon} has an empty kernel")
    rule = quad_rule_polygon(pts, info.chosen_center, options.quad_degree)

    dof_ids = polygon_dof_ids(space, polygon)
    kpv = options.k_per_vertex
    if kpv is None:
        # one center per boundary vertex, raised only to meet the
        # feasibility floor (5 scalar constraint rows; 15 for 2D vector PDEs)
        floor = 5 if pde.r == 1 else 15
        kpv = max(1, math.ceil(floor / n))
    centers = place_kernel_centers(pts, k_per_vertex=kpv,
                                   offset_factor=options.offset_factor)
    k = len(centers)

    spe = options.samples_per_edge
    while n * (spe - 1) <= k + 6:
        spe += 2
    cpts, eidx, ets = sample_collocation(pts, spe)

    # collocation matrix over unknowns [w; a]
    A = np.empty((len(cpts), k + 6))
    A[:, :k] = kernel_values(options.kernel, centers, cpts)
    A[:, k:] = monomial_values(cpts)

    # traces of every overlapping dof at the collocation points
    col_of = {int(d): i for i, d in enumerate(dof_ids)}
    B = np.zeros((len(cpts), len(dof_ids)))
    for e in range(n):
        sel = np.flatnonzero(eidx == e)
        if not sel.size:
            continue
        a_v, b_v = loop[e], loop[(e + 1) % n]
        g = mesh.face_across(a_v, b_v)
        eb = space.elements[g]
        uv = _edge_params_on_quad(mesh, g, b_v, a_v, 1.0 - ets[sel])
        vals, _ = eb.eval(uv)
        for l, (ids, w) in enumerate(eb.rows):
            for i, w_i in zip(ids, w):
                j = col_of.get(int(i))
                if j is not None:
                    B[sel, j] += w_i * vals[:, l]

    csys = constraint_rows_for_mode(pde, pts, centers, rule, options.kernel,
                                    options.constraint_mode)
    rhs = consistency_rhs(space, geomap, polygon, dof_ids, pde, csys.labels,
                          options.quad_degree)

    cx, cy = pts.mean(axis=0)
    h = max(float(np.max(np.ptp(pts, axis=0))), 1e-300)
    T = np.eye(k + 6)
    T[k:, k:] = monomial_shift_matrix(cx, cy, h)

    U, max_resid = _fit_poly_basis_batch(A, B, csys.C, rhs, recondition=T,
                                         n_kernels=k,
                                         weight_penalty=options.weight_penalty)
    W = U[:, :k]
    A_poly = U[:, k:]
    max_cresid = 0.0
    if csys.n_rows:
        max_cresid = float(np.max(np.abs(U @ csys.C.T - rhs)))

    return PolygonBasis(
        cell=polygon, dof_ids=dof_ids, centers=centers, kernel=options.kernel,
        W=W, A_poly=A_poly, quadrature=rule,
        diagnostics={"fit_residual": max_resid, "constraint_residual": max_cresid,
                     "n_collocation": len(cpts), "n_centers": k,
                     "n_constraint_rows": csys.n_rows},
    )


def build_polygon_bases(space, geomap, pde, options: PolygonOptions | None = None) -> dict:
    """Fit bases for every polygon cell; returns {face: PolygonBasis}."""
    options = options or PolygonOptions()
    out = {}
    for f in map(int, space.classes.polygon_cells):
        out[f] = build_polygon_basis(space, geomap, f, pde, options)
    return out
