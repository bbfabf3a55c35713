"""Stiffness/RHS assembly, boundary conditions, solve, and error norms.

Quad cells integrate on the reference square through the geometric map
(metric tensor and Jacobian determinant); polygon cells integrate directly
in physical space with the fitted kernel bases.  Cells sharing reference
tables are assembled in vectorized batches; local matrices scatter through
the sparse local-to-global rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotConverged, NotSPD, RankDeficient, TooLarge
from .mesh import CellTag
from .quadrature import edge_rule, quad_rule_square

DENSE_SOLVE_LIMIT = 2000
CG_RTOL = 1e-10
COND_SIZE_LIMIT = 3000


@dataclass
class SparseSystem:
    """Assembled system K u = f with Dirichlet bookkeeping.

    Unknowns are interleaved for vector problems: component ``a`` of dof
    ``j`` sits at index r*j + a.
    """

    K: sp.csr_matrix
    f: np.ndarray
    r: int
    n_dofs: int
    dirichlet: dict = field(default_factory=dict)
    _reduced: tuple = field(default=None, repr=False)

    @property
    def n_unknowns(self) -> int:
        return self.r * self.n_dofs

    def free_indices(self) -> np.ndarray:
        fixed = set(self.dirichlet)
        return np.array([i for i in range(self.n_unknowns) if i not in fixed],
                        dtype=np.int64)

    def reduced(self):
        """(K_ff, f_f, free) with Dirichlet columns folded into the rhs."""
        if self._reduced is None:
            free = self.free_indices()
            fixed = np.array(sorted(self.dirichlet), dtype=np.int64)
            vals = np.array([self.dirichlet[i] for i in fixed])
            K_ff = self.K[free][:, free].tocsr()
            f_f = self.f[free]
            if len(fixed):
                f_f = f_f - self.K[free][:, fixed] @ vals
            self._reduced = (K_ff, f_f, free)
        return self._reduced

    def invalidate(self):
        self._reduced = None

    def dump_coo(self, path) -> None:
        """Write the full matrix as `i j value` text rows."""
        coo = self.K.tocoo()
        with open(path, "w") as fh:
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")


# ----------------------------------------------------------------------
# batched element data
# ----------------------------------------------------------------------

def _batches(disc):
    """Group quad faces by shared reference tables."""
    groups = {}
    for f, eb in disc.space.elements.items():
        if eb.family == "spline":
            key = ("spline", eb.variant)
        else:
            key = ("lagrange", eb.order)
        groups.setdefault(key, []).append(f)
    return {k: sorted(v) for k, v in groups.items()}


def _batch_geometry(disc, faces, ref_vals, ref_grads, pts):
    """Physical data for a batch: x (c,q,2), det (c,q), and physical
    gradients of the reference table (c,q,m,2)."""
    from .splines import lagrange_basis

    geo = disc.geomap
    if disc.space.elements[faces[0]].family == "spline":
        ctrl = np.asarray([geo.controls[disc.space.elements[f].identity_cols]
                           for f in faces])       # (c, 9, 2)
        x = np.einsum("ql,cli->cqi", ref_vals, ctrl)
        Dg = np.einsum("qlj,cli->cqij", ref_grads, ctrl)
    else:
        q1v, q1g = lagrange_basis(1, pts)
        corners = np.asarray([geo.corners[f] for f in faces])  # (c, 4, 2)
        x = np.einsum("ql,cli->cqi", q1v, corners)
        Dg = np.einsum("qlj,cli->cqij", q1g, corners)
    det = Dg[..., 0, 0] * Dg[..., 1, 1] - Dg[..., 0, 1] * Dg[..., 1, 0]
    inv = np.empty_like(Dg)
    inv[..., 0, 0] = Dg[..., 1, 1]
    inv[..., 0, 1] = -Dg[..., 0, 1]
    inv[..., 1, 0] = -Dg[..., 1, 0]
    inv[..., 1, 1] = Dg[..., 0, 0]
    inv = inv / det[..., None, None]
    gphys = np.einsum("cqji,qlj->cqli", inv, ref_grads)
    return x, det, gphys


def _scatter_identity(rows_all, K_loc, r, data, rows, cols):
    """Append COO triplets for cells whose local-to-global is an identity."""
    nc, m = rows_all.shape
    if r == 1:
        gdof = rows_all
    else:
        gdof = (r * rows_all[:, :, None] + np.arange(r)).reshape(nc, m * r)
    mr = gdof.shape[1]
    ii = np.repeat(gdof[:, :, None], mr, axis=2)
    jj = np.repeat(gdof[:, None, :], mr, axis=1)
    rows.append(ii.ravel())
    cols.append(jj.ravel())
    data.append(K_loc.reshape(nc, mr, mr).ravel())


def _scatter_general(eb, K_loc, r, data, rows, cols):
    m = eb.n_local
    exp_ids = []
    exp_w = []
    for l in range(m):
        ids, w = eb.rows[l]
        for a in range(r):
            exp_ids.append(r * ids + a)
            exp_w.append(w)
    for lb in range(m * r):
        for mb in range(m * r):
            v = K_loc[lb, mb]
            if v == 0.0:
                continue
            wi = exp_w[lb]
            wj = exp_w[mb]
            block = v * np.outer(wi, wj)
            ii, jj = np.meshgrid(exp_ids[lb], exp_ids[mb], indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            data.append(block.ravel())


def _elastic_local(wdet, G, lam, mu):
    """Vector-block local matrices (c, 2m, 2m) from scalar gradients."""
    nc, nq, m, _ = G.shape
    gg = np.einsum("cq,cqli,cqmi->clm", wdet, G, G)
    T = np.einsum("cq,cqlb,cqma->clbma", wdet, G, G)
    K = np.zeros((nc, m, 2, m, 2))
    for a in range(2):
        K[:, :, a, :, a] += mu * gg
        for b in range(2):
            K[:, :, a, :, b] += mu * T[:, :, b, :, a] + lam * T[:, :, a, :, b]
    return K.reshape(nc, 2 * m, 2 * m)


def assemble_stiffness(disc, quad_degree: int = 6) -> SparseSystem:
    """Assemble the stiffness matrix of the discretization's PDE."""
    pde = disc.pde
    r = pde.r
    n = len(disc.space.dofs)
    rule = quad_rule_square(quad_degree)
    data, rows, cols = [], [], []

    for key, faces in _batches(disc).items():
        eb0 = disc.space.elements[faces[0]]
        ref_vals, ref_grads = eb0.eval(rule.points)
        x, det, G = _batch_geometry(disc, faces, ref_vals, ref_grads, rule.points)
        wdet = rule.weights[None, :] * np.abs(det)
        if r == 1:
            K_loc = np.einsum("cq,cqli,cqmi->clm", wdet, G, G)
        else:
            K_loc = _elastic_local(wdet, G, pde.lam, pde.mu)

        ident = np.array([disc.space.elements[f].identity_cols is not None
                          for f in faces])
        if ident.all():
            rows_all = np.asarray([disc.space.elements[f].identity_cols
                                   for f in faces])
            _scatter_identity(rows_all, K_loc, r, data, rows, cols)
        else:
            id_faces = [i for i, f in enumerate(faces) if ident[i]]
            if id_faces:
                rows_all = np.asarray(
                    [disc.space.elements[faces[i]].identity_cols for i in id_faces])
                _scatter_identity(rows_all, K_loc[id_faces], r, data, rows, cols)
            for i, f in enumerate(faces):
                if not ident[i]:
                    _scatter_general(disc.space.elements[f], K_loc[i], r,
                                     data, rows, cols)

    for f, pb in disc.polygons.items():
        rule_p = pb.quadrature
        G = pb.gradients(rule_p.points)           # (nq, m, 2)
        w = rule_p.weights
        if r == 1:
            K_loc = np.einsum("q,qli,qmi->lm", w, G, G)
        else:
            K_loc = _elastic_local(w[None], G[None], pde.lam, pde.mu)[0]
        ids = pb.dof_ids
        if r == 1:
            gdof = ids
        else:
            gdof = (r * ids[:, None] + np.arange(r)).ravel()
        ii, jj = np.meshgrid(gdof, gdof, indexing="ij")
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        data.append(K_loc.ravel())

    K = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r * n, r * n),
    ).tocsr()
    return SparseSystem(K=K, f=np.zeros(r * n), r=r, n_dofs=n)


def assemble_rhs(disc, source, quad_degree: int = 6) -> np.ndarray:
    """Load vector b_i = integral f phi_i over the domain."""
    r = disc.pde.r
    n = len(disc.space.dofs)
    b = np.zeros(r * n)
    rule = quad_rule_square(quad_degree)
    for key, faces in _batches(disc).items():
        eb0 = disc.space.elements[faces[0]]
        ref_vals, ref_grads = eb0.eval(rule.points)
        x, det, _ = _batch_geometry(disc, faces, ref_vals, ref_grads, rule.points)
        wdet = rule.weights[None, :] * np.abs(det)
        fx = np.asarray(source(x.reshape(-1, 2)))
        if r == 1:
            fx = fx.reshape(len(faces), -1)
            loc = np.einsum("cq,cq,ql->cl", wdet, fx, ref_vals)
        else:
            fx = fx.reshape(len(faces), -1, r)
            loc = np.einsum("cq,cqa,ql->cla", wdet, fx, ref_vals).reshape(
                len(faces), -1)
        for i, f in enumerate(faces):
            eb = disc.space.elements[f]
            if eb.identity_cols is not None:
                if r == 1:
                    np.add.at(b, eb.identity_cols, loc[i])
                else:
                    gdof = (r * eb.identity_cols[:, None] + np.arange(r)).ravel()
                    np.add.at(b, gdof, loc[i])
            else:
                for l, (ids, w) in enumerate(eb.rows):
                    for a in range(r):
                        np.add.at(b, r * ids + a, w * loc[i][r * l + a])

    for f, pb in disc.polygons.items():
        rule_p = pb.quadrature
        vals = pb.values(rule_p.points)            # (nq, m)
        fx = np.asarray(source(rule_p.points))
        if r == 1:
            loc = (rule_p.weights * fx) @ vals
            np.add.at(b, pb.dof_ids, loc)
        else:
            loc = np.einsum("q,qa,qm->ma", rule_p.weights, fx, vals)
            gdof = (r * pb.dof_ids[:, None] + np.arange(r)).ravel()
            np.add.at(b, gdof, loc.ravel())
    return b


# ----------------------------------------------------------------------
# boundary conditions
# ----------------------------------------------------------------------

def _boundary_edges_with_owner(mesh):
    out = []
    for he in range(len(mesh.he_vertex)):
        if mesh.he_twin[he] < 0:
            a = int(mesh.he_vertex[he])
            b = int(mesh.he_vertex[mesh.he_next[he]])
            out.append((a, b, int(mesh.he_face[he])))
    return out


def _edge_ref_params(mesh, f, a, b, ts):
    from .polygon_basis import _edge_params_on_quad
    return _edge_params_on_quad(mesh, f, a, b, ts)


def dirichlet_dof_ids(disc, region=None) -> np.ndarray:
    """Boundary dofs whose anchor lies in the Dirichlet region."""
    ids = []
    for i, d in enumerate(disc.space.dofs.dofs):
        if d.on_boundary and (region is None or region(d.anchor)):
            ids.append(i)
    return np.asarray(ids, dtype=np.int64)


def apply_dirichlet(system: SparseSystem, disc, d, region=None,
                    samples_per_edge: int = 6) -> SparseSystem:
    """Fix boundary dofs to a least-squares fit of the boundary data.

    Samples ``d`` at >= samples_per_edge points per Dirichlet edge,
    assembles the boundary-trace matrix over the Dirichlet dofs, and stores
    the fitted values in ``system.dirichlet``.  Raises RankDeficient when a
    Dirichlet dof is not supported by any sample.
    """
    mesh = disc.space.mesh
    r = system.r
    bids = dirichlet_dof_ids(disc, region)
    if not len(bids):
        return system
    col_of = {int(dof): i for i, dof in enumerate(bids)}

    M_rows = []
    rhs_rows = []
    ts = np.linspace(0.0, 1.0, samples_per_edge)
    for a, b, f in _boundary_edges_with_owner(mesh):
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        if region is not None and not region(mid):
            continue
        if disc.space.classes.tags[f] == CellTag.POLYGON:
            continue
        eb = disc.space.elements[f]
        uv = _edge_ref_params(mesh, f, a, b, ts)
        vals, _ = eb.eval(uv)
        x = disc.geomap.eval(f, uv).x
        dvals = np.asarray(d(x))
        block = np.zeros((len(ts), len(bids)))
        for l, (ids, w) in enumerate(eb.rows):
            for i, w_i in zip(ids, w):
                j = col_of.get(int(i))
                if j is not None:
                    block[:, j] += w_i * vals[:, l]
        M_rows.append(block)
        rhs_rows.append(dvals.reshape(len(ts), -1))

    if not M_rows:
        raise RankDeficient(
            f"{len(bids)} Dirichlet dofs selected but no boundary edges to "
            f"sample them on")
    M = np.vstack(M_rows)
    rhs = np.vstack(rhs_rows)
    support = np.linalg.norm(M, axis=0)
    if np.any(support < 1e-12):
        missing = bids[support < 1e-12]
        raise RankDeficient(f"boundary dofs {missing} have no sample support")
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    for j, dof in enumerate(bids):
        for a in range(r):
            system.dirichlet[r * int(dof) + a] = float(sol[j, a])
    system.invalidate()
    return system


def apply_neumann(system: SparseSystem, disc, n_func, region,
                  quad_degree: int = 6) -> SparseSystem:
    """Add boundary flux contributions on the Neumann part of the boundary."""
    mesh = disc.space.mesh
    r = system.r
    ts, ws = edge_rule(quad_degree)
    for a, b, f in _boundary_edges_with_owner(mesh):
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        if region is not None and not region(mid):
            continue
        if disc.space.classes.tags[f] == CellTag.POLYGON:
            continue
        eb = disc.space.elements[f]
        uv = _edge_ref_params(mesh, f, a, b, ts)
        # edge direction in reference coordinates
        dref = uv[-1] - uv[0] if len(uv) > 1 else np.array([1.0, 0.0])
        dref = dref / np.linalg.norm(dref)
        ev = disc.geomap.eval(f, uv)
        tangent = np.einsum("qij,j->qi", ev.Dg, dref)
        jac = np.linalg.norm(tangent, axis=1)
        vals, _ = eb.eval(uv)
        nv = np.asarray(n_func(ev.x)).reshape(len(ts), -1)
        loc = np.einsum("q,q,ql,qa->la", ws, jac, vals, nv)
        for l, (ids, w) in enumerate(eb.rows):
            for comp in range(r):
                np.add.at(system.f, r * ids + comp, w * loc[l, comp])
    system.invalidate()
    return system


# ----------------------------------------------------------------------
# solve and diagnostics
# ----------------------------------------------------------------------

def solve(system: SparseSystem) -> np.ndarray:
    """Solve the reduced SPD system; returns the full dof vector with
    Dirichlet values filled in.

    Dense Cholesky up to 2000 unknowns, then Jacobi-preconditioned conjugate
    gradients to relative residual 1e-10 (iteration cap 10 N).
    """
    K_ff, f_f, free = system.reduced()
    nf = len(f_f)
    if nf == 0:
        u_f = np.zeros(0)
    elif nf <= DENSE_SOLVE_LIMIT:
        try:
            cho = scipy.linalg.cho_factor(K_ff.toarray())
        except scipy.linalg.LinAlgError as exc:
            raise NotSPD(f"dense factorization failed: {exc}") from exc
        u_f = scipy.linalg.cho_solve(cho, f_f)
    else:
        diag = K_ff.diagonal()
        if np.any(diag <= 0):
            raise NotSPD("reduced matrix has nonpositive diagonal entries")
        M = sp.diags(1.0 / diag)
        u_f, info = spla.cg(K_ff, f_f, rtol=CG_RTOL, atol=0.0,
                            maxiter=10 * nf, M=M)
        if info != 0:
            raise NotConverged(f"CG failed to converge (info={info})")

    u = np.zeros(system.n_unknowns)
    u[free] = u_f
    for i, v in system.dirichlet.items():
        u[i] = v
    return u


def residual_norm(system: SparseSystem, u: np.ndarray) -> float:
    """Relative infinity-norm residual of the reduced equations."""
    K_ff, f_f, free = system.reduced()
    if len(f_f) == 0:
        return 0.0
    res = K_ff @ u[free] - f_f
    scale = max(np.max(np.abs(f_f)), 1e-300)
    return float(np.max(np.abs(res)) / scale)


def condition_number(system: SparseSystem) -> float:
    """lambda_max / lambda_min of the reduced matrix (dense eigendecomposition)."""
    K_ff, _, _ = system.reduced()
    n = K_ff.shape[0]
    if n > COND_SIZE_LIMIT:
        raise TooLarge(f"reduced system has {n} > {COND_SIZE_LIMIT} unknowns")
    w = scipy.linalg.eigvalsh(K_ff.toarray())
    if w[0] <= 0:
        raise NotSPD(f"reduced matrix has nonpositive eigenvalue {w[0]:.3e}")
    return float(w[-1] / w[0])


# ----------------------------------------------------------------------
# error norms
# ----------------------------------------------------------------------

def _sample_grid(n: int):
    xs = np.linspace(0.0, 1.0, n)
    U, V = np.meshgrid(xs, xs, indexing="ij")
    return np.column_stack([U.ravel(), V.ravel()])


def _polygon_samples(pb, mesh, n: int = 4):
    """Sample points covering a polygon: barycentric grids on fan triangles."""
    from .preprocess import polygon_kernel

    pts = mesh.face_points(pb.cell)
    c = polygon_kernel(pts).chosen_center
    tri_pts = []
    nv = len(pts)
    bary = [(i / n, j / n) for i in range(n + 1) for j in range(n + 1 - i)]
    for i in range(nv):
        p1, p2 = pts[i], pts[(i + 1) % nv]
        for l1, l2 in bary:
            tri_pts.append(c + l1 * (p1 - c) + l2 * (p2 - c))
    return np.asarray(tri_pts)


def error_norms(disc, u, exact_value, exact_grad=None, quad_degree: int = 6,
                linf_samples: int = 5):
    """(L2, Linf, H1) errors of the discrete solution against the exact one.

    L2 and the H1 seminorm integrate by quadrature (gradients through the
    metric of the geometric map on quads, directly on polygons); Linf takes
    the max over a dense per-cell sample grid.  The H1 norm includes the L2
    part.  Vector problems use the Euclidean norm across components.
    """
    r = disc.pde.r
    rule = quad_rule_square(quad_degree)
    l2_sq = 0.0
    h1_sq = 0.0
    linf = 0.0
    samples = _sample_grid(linf_samples)

    for key, faces in _batches(disc).items():
        eb0 = disc.space.elements[faces[0]]
        ref_vals, ref_grads = eb0.eval(rule.points)
        x, det, G = _batch_geometry(disc, faces, ref_vals, ref_grads, rule.points)
        wdet = rule.weights[None, :] * np.abs(det)
        s_vals, s_grads = eb0.eval(samples)
        xs, _, _ = _batch_geometry(disc, faces, s_vals, s_grads, samples)
        u_loc = np.asarray([disc.space.elements[f].gather(u, r) for f in faces])
        if r == 1:
            uh = np.einsum("ql,cl->cq", ref_vals, u_loc)
            guh = np.einsum("cqli,cl->cqi", G, u_loc)
            ue = np.asarray(exact_value(x.reshape(-1, 2))).reshape(uh.shape)
            diff = uh - ue
            l2_sq += float(np.sum(wdet * diff**2))
            if exact_grad is not None:
                ge = np.asarray(exact_grad(x.reshape(-1, 2))).reshape(guh.shape)
                h1_sq += float(np.sum(wdet * np.sum((guh - ge) ** 2, axis=-1)))
            uhs = np.einsum("ql,cl->cq", s_vals, u_loc)
            ues = np.asarray(exact_value(xs.reshape(-1, 2))).reshape(uhs.shape)
            linf = max(linf, float(np.max(np.abs(uhs - ues))))
        else:
            uh = np.einsum("ql,cla->cqa", ref_vals, u_loc)
            guh = np.einsum("cqli,cla->cqai", G, u_loc)
            ue = np.asarray(exact_value(x.reshape(-1, 2))).reshape(uh.shape)
            diff = uh - ue
            l2_sq += float(np.sum(wdet * np.sum(diff**2, axis=-1)))
            if exact_grad is not None:
                ge = np.asarray(exact_grad(x.reshape(-1, 2))).reshape(guh.shape)
                h1_sq += float(np.sum(wdet * np.sum((guh - ge) ** 2, axis=(-1, -2))))
            uhs = np.einsum("ql,cla->cqa", s_vals, u_loc)
            ues = np.asarray(exact_value(xs.reshape(-1, 2))).reshape(uhs.shape)
            linf = max(linf, float(np.max(np.abs(uhs - ues))))

    for f, pb in disc.polygons.items():
        rule_p = pb.quadrature
        vals = pb.values(rule_p.points)
        grads = pb.gradients(rule_p.points)
        ids = pb.dof_ids
        if r == 1:
            coef = u[ids]
            uh = vals @ coef
            guh = np.einsum("qmi,m->qi", grads, coef)
            ue = np.asarray(exact_value(rule_p.points))
            l2_sq += float(rule_p.weights @ (uh - ue) ** 2)
            if exact_grad is not None:
                ge = np.asarray(exact_grad(rule_p.points))
                h1_sq += float(rule_p.weights @ np.sum((guh - ge) ** 2, axis=-1))
        else:
            coef = np.column_stack([u[r * ids + a] for a in range(r)])
            uh = np.einsum("qm,ma->qa", vals, coef)
            guh = np.einsum("qmi,ma->qai", grads, coef)
            ue = np.asarray(exact_value(rule_p.points))
            l2_sq += float(rule_p.weights @ np.sum((uh - ue) ** 2, axis=-1))
            if exact_grad is not None:
                ge = np.asarray(exact_grad(rule_p.points))
                h1_sq += float(rule_p.weights
                               @ np.sum((guh - ge) ** 2, axis=(-1, -2)))
        spts = _polygon_samples(pb, disc.space.mesh)
        svals = pb.values(spts)
        if r == 1:
            uhs = svals @ u[ids]
            ues = np.asarray(exact_value(spts))
        else:
            uhs = np.einsum("qm,ma->qa", svals, coef)
            ues = np.asarray(exact_value(spts))
        linf = max(linf, float(np.max(np.abs(uhs - ues))))

    l2 = np.sqrt(l2_sq)
    h1 = np.sqrt(l2_sq + h1_sq)
    return l2, linf, h1
