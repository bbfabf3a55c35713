"""Acceptance suite: each criterion runs at its stated tolerance and prints
one pass/fail line (run with ``pytest -s tests/test_acceptance.py`` to see
them)."""

import time

import numpy as np
import pytest
import scipy.sparse as sp

import polyspline as ps
from polyspline.assembly import (
    apply_dirichlet,
    assemble_rhs,
    assemble_stiffness,
    condition_number,
    error_norms,
    solve,
)
from polyspline.experiments import (
    ExperimentConfig,
    displaced_polygon_mesh,
    run_constraint_ablation,
    run_convergence,
)
from polyspline.mesh import build_adjacency, grid_mesh, merge_faces
from polyspline.polygon_basis import PolygonOptions
from polyspline.preprocess import (
    ensure_separation,
    polygon_kernel,
    star_shape_report,
    uniform_refine,
)
from polyspline.problems import monomial_values
from polyspline.quadrature import quad_rule_polygon, quad_rule_square
from polyspline.solver import discretize, solve_problem


def report(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ----------------------------------------------------------------------
# criteria 1 + 2 share one sweep
# ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def regular_grid_sweep():
    t0 = time.monotonic()
    records = {}
    for basis in ("q1", "q2", "polyspline"):
        cfg = ExperimentConfig(mesh={"kind": "grid", "n": 8}, basis=basis,
                               levels=4)
        records[basis] = run_convergence(cfg)
    return records, time.monotonic() - t0


def test_criterion_1_regular_grid_rates(regular_grid_sweep):
    records, elapsed = regular_grid_sweep
    r_q1 = records["q1"].rates["L2"]["lstsq"]
    r_q2 = records["q2"].rates["L2"]["lstsq"]
    r_ps = records["polyspline"].rates["L2"]["lstsq"]
    ok = (abs(r_q1 - 2.0) <= 0.3 and abs(r_q2 - 3.0) <= 0.3
          and r_ps >= 2.9 and elapsed < 120.0)
    report(1, ok, f"L2 rates Q1={r_q1:.2f} Q2={r_q2:.2f} PolySpline={r_ps:.2f}, "
                  f"runtime {elapsed:.0f}s (< 120s)")


def test_criterion_2_h1_rates(regular_grid_sweep):
    records, _ = regular_grid_sweep
    r_ps = records["polyspline"].rates["H1"]["lstsq"]
    r_q2 = records["q2"].rates["H1"]["lstsq"]
    ok = (r_ps >= 1.9 and r_q2 >= 1.9
          and abs(r_ps - 2.0) <= 0.3 + 1e-9 and abs(r_q2 - 2.0) <= 0.3 + 1e-9)
    report(2, ok, f"H1 rates PolySpline={r_ps:.2f} Q2={r_q2:.2f} (>= 1.9)")


def test_criterion_3_hybrid_convergence():
    cfg = ExperimentConfig(mesh={"kind": "hybrid", "n": 9},
                           basis="polyspline", levels=4)
    rec = run_convergence(cfg)
    r_l2 = rec.rates["L2"]["lstsq"]
    r_li = rec.rates["Linf"]["lstsq"]
    ok = r_l2 >= 2.8 and r_li >= 2.5
    report(3, ok, f"hybrid mesh rates L2={r_l2:.2f} (>= 2.8) "
                  f"Linf={r_li:.2f} (>= 2.5)")


def test_criterion_4_constraint_ablation():
    cfg = ExperimentConfig(mesh={"kind": "polar-cross"}, basis="q2",
                           pde={"kind": "poisson-cubic"}, levels=4,
                           weight_penalty=0.0)
    recs = run_constraint_ablation(cfg)
    rates = {m: recs[m].rates["Linf"]["lstsq"]
             for m in ("none", "linear", "quadratic")}
    ordered = rates["none"] < rates["linear"] < rates["quadratic"]
    windows = (abs(rates["none"] - 2.0) <= 0.3
               and abs(rates["linear"] - 2.5) <= 0.3
               and abs(rates["quadratic"] - 3.0) <= 0.3)
    report(4, ordered and windows,
           f"Linf rates none={rates['none']:.2f} linear={rates['linear']:.2f} "
           f"quadratic={rates['quadratic']:.2f} (~2.0/2.5/3.0 +-0.3, ordered)")


def test_criterion_5_patch_test():
    # sheared grid (parallelogram cells) with a hexagon polygon: all three
    # element types present, affine geometric maps
    n = 8
    mesh = grid_mesh(n)
    c = (n // 2 - 1) * n + n // 2 - 1
    mesh = merge_faces(mesh, [c, c + 1])
    shear = np.array([[1.0, 0.35], [0.1, 1.0]])
    mesh = build_adjacency(mesh.vertices @ shear.T, mesh.faces)
    disc = discretize(mesh, basis="polyspline")
    tags = disc.space.classes.tags
    assert len(np.unique(tags)) == 3, "mesh must contain S, Q and P cells"
    prob = ps.quadratic_poisson()
    u, system = solve_problem(disc, prob)
    _, linf, _ = error_norms(disc, u, prob.exact_value, prob.exact_grad)
    report(5, linf <= 1e-7,
           f"quadratic patch solution Linf error {linf:.2e} (<= 1e-7)")


# ----------------------------------------------------------------------
# criteria 6 + 7: polygon consistency and reproduction
# ----------------------------------------------------------------------

def _monomial_dof_vector(disc, d):
    """Oracle: dof vector representing monomial d, by least-squares
    interpolation of the global basis at dense sample points."""
    from polyspline.assembly import _batch_geometry, _batches

    rule = quad_rule_square(2)
    rows, cols, data, rhs = [], [], [], []
    nrow = 0
    for key, faces in _batches(disc).items():
        eb0 = disc.space.elements[faces[0]]
        vals, grads = eb0.eval(rule.points)
        x, det, _ = _batch_geometry(disc, faces, vals, grads, rule.points)
        for i, f in enumerate(faces):
            eb = disc.space.elements[f]
            for q in range(len(rule.points)):
                for l, (ids, w) in enumerate(eb.rows):
                    for jj, ww in zip(ids, w):
                        rows.append(nrow)
                        cols.append(int(jj))
                        data.append(ww * vals[q, l])
                rhs.append(monomial_values(x[i, q][None, :])[0, d])
                nrow += 1
    for f, pb in disc.polygons.items():
        pts = pb.quadrature.points[::3]
        vals = pb.values(pts)
        for q in range(len(pts)):
            for m, jj in enumerate(pb.dof_ids):
                rows.append(nrow)
                cols.append(int(jj))
                data.append(vals[q, m])
            rhs.append(monomial_values(pts[q][None, :])[0, d])
            nrow += 1
    M = sp.csr_matrix((data, (rows, cols)),
                      shape=(nrow, disc.n_dofs)).toarray()
    coef, *_ = np.linalg.lstsq(M, np.asarray(rhs), rcond=None)
    resid = float(np.max(np.abs(M @ coef - rhs)))
    assert resid < 1e-8, f"monomial {d} not representable (resid {resid:.1e})"
    return coef


@pytest.fixture(scope="module")
def consistency_meshes():
    n = 8
    hexmesh = merge_faces(grid_mesh(n), [(n // 2 - 1) * n + n // 2 - 1,
                                         (n // 2 - 1) * n + n // 2])
    n = 9
    cc = (n // 2) * n + n // 2
    cross = merge_faces(grid_mesh(n), [cc, cc - 1, cc + 1, cc - n, cc + n])
    return {"hexagon": hexmesh, "cross-refined": uniform_refine(cross)}


def test_criterion_6_polygon_consistency(consistency_meshes):
    worst = 0.0
    for name, mesh in consistency_meshes.items():
        disc = discretize(mesh, basis="polyspline")
        system = assemble_stiffness(disc)
        for d, lap in ((1, 0.0), (2, 0.0), (3, 0.0), (4, 2.0), (5, 2.0)):
            qvec = _monomial_dof_vector(disc, d)
            lhs = system.K @ qvec
            rhs = -assemble_rhs(
                disc, lambda p, lap=lap: np.full(len(np.atleast_2d(p)), lap))
            for pb in disc.polygons.values():
                for j in pb.dof_ids:
                    err = abs(lhs[j] - rhs[j]) / max(1.0, abs(lhs[j]), abs(rhs[j]))
                    worst = max(worst, err)
    report(6, worst <= 1e-8,
           f"Eq. K q = -int(lap q phi) residual {worst:.2e} (<= 1e-8 relative)")


def test_criterion_7_quadratic_reproduction(consistency_meshes):
    from polyspline.preprocess import point_in_polygon

    worst = 0.0
    rng = np.random.default_rng(17)
    for name, mesh in consistency_meshes.items():
        disc = discretize(mesh, basis="polyspline")
        for pb in disc.polygons.values():
            poly_pts = mesh.face_points(pb.cell)
            lo, hi = poly_pts.min(axis=0), poly_pts.max(axis=0)
            pts = []
            while len(pts) < 50:
                p = rng.uniform(lo, hi)
                if point_in_polygon(p, poly_pts):
                    pts.append(p)
            pts = np.asarray(pts)
            anchors = np.array([disc.space.dofs.dofs[i].anchor
                                for i in pb.dof_ids])
            nodal = monomial_values(anchors)
            vals = pb.values(pts)
            target = monomial_values(pts)
            for d in range(6):
                err = np.max(np.abs(vals @ nodal[:, d] - target[:, d]))
                worst = max(worst, float(err))
    report(7, worst <= 1e-8,
           f"monomial reproduction error at 50 interior points {worst:.2e} "
           f"(<= 1e-8)")


def test_criterion_8_dof_economy():
    ok = True
    details = []
    for n in (4, 8, 16, 32):
        spl = discretize(grid_mesh(n), basis="polyspline").n_dofs
        q2 = discretize(grid_mesh(n), basis="q2").n_dofs
        ok &= spl == (n + 2) ** 2 and q2 == (2 * n + 1) ** 2
        details.append(f"n={n}: {spl}/{q2}={spl / q2:.3f}")
    report(8, ok, "spline/Q2 dof ratio " + ", ".join(details) + " -> 0.25")


def test_criterion_9_conditioning():
    prob = ps.franke_poisson()

    def cond_of(mesh, basis, overrides=()):
        disc = discretize(mesh, basis=basis, polygon_overrides=overrides)
        system = assemble_stiffness(disc)
        apply_dirichlet(system, disc, prob.dirichlet)
        return condition_number(system)

    # ordering on a hybrid family where all three element types coexist
    n = 6
    mesh = merge_faces(grid_mesh(n), [(n // 2 - 1) * n + n // 2 - 1,
                                      (n // 2 - 1) * n + n // 2])
    ordering_ok = True
    lines = []
    for level in range(3):
        c1 = cond_of(mesh, "q1")
        cs = cond_of(mesh, "polyspline")
        c2 = cond_of(mesh, "q2")
        ordering_ok &= c1 <= cs <= c2
        lines.append(f"lvl{level}: {c1:.1e}<={cs:.1e}<={c2:.1e}")
        if level < 2:
            mesh = uniform_refine(mesh)

    # marked-polygon treatment vs no-polygon treatment on the same displaced
    # mesh stays within 2x
    ratio_ok = True
    worst_ratio = 0.0
    for size in (6, 12, 24):
        dmesh, marked = displaced_polygon_mesh(size, 0.05, (0.2, 0.4), seed=42)
        for basis in ("q1", "q2", "polyspline"):
            c_plain = cond_of(dmesh, basis)
            c_poly = cond_of(dmesh, basis, marked)
            ratio = c_poly / c_plain
            worst_ratio = max(worst_ratio, ratio)
            ratio_ok &= ratio <= 2.0
    ok = ordering_ok and ratio_ok
    report(9, ok, "ordering " + "; ".join(lines)
           + f"; worst marked/unmarked ratio {worst_ratio:.2f} (<= 2)")


def test_criterion_10_elasticity():
    cfg = ExperimentConfig(mesh={"kind": "grid", "n": 8}, basis="polyspline",
                           pde={"kind": "elasticity", "E": 200.0, "nu": 0.35},
                           levels=3)
    rec = run_convergence(cfg)
    r_l2 = rec.rates["L2"]["lstsq"]

    # rigid-body kernel on a hybrid mesh (vector polygon constraints active)
    n = 9
    cc = (n // 2) * n + n // 2
    mesh = merge_faces(grid_mesh(n), [cc, cc - 1, cc + 1, cc - n, cc + n])
    pde = ps.Elasticity.from_young_poisson(200.0, 0.35)
    disc = discretize(mesh, basis="polyspline", pde=pde)
    system = assemble_stiffness(disc)
    anchors = disc.space.dofs.anchors()
    m = len(anchors)
    modes = [np.column_stack([np.ones(m), np.zeros(m)]),
             np.column_stack([np.zeros(m), np.ones(m)]),
             np.column_stack([-anchors[:, 1], anchors[:, 0]])]
    kern = max(float(np.max(np.abs(system.K @ mode.reshape(-1))))
               for mode in modes)
    ok = r_l2 >= 2.7 and kern <= 1e-9
    report(10, ok, f"elasticity L2 rate {r_l2:.2f} (>= 2.7), "
                   f"rigid-body kernel residual {kern:.2e} (<= 1e-9)")


def test_criterion_11_preprocessing_corpus():
    from test_preprocess import TestCorpus

    max_iters = 0
    area_ok = True
    invariants_ok = True
    for seed in range(50):
        mesh = TestCorpus.random_mesh(seed)
        area = mesh.total_area()
        fixed, iters = star_shape_report(mesh)
        max_iters = max(max_iters, iters)
        fixed = ensure_separation(fixed)
        area_ok &= bool(np.isclose(fixed.total_area(), area, rtol=1e-12))
        pset = {f for f in range(fixed.n_faces) if len(fixed.faces[f]) != 4}
        for f in pset:
            invariants_ok &= polygon_kernel(fixed.face_points(f)).is_star_shaped
            for v in fixed.faces[f]:
                invariants_ok &= not fixed.vertex_boundary[v]
                invariants_ok &= not any(g != f and g in pset
                                         for g in fixed.vertex_faces(v))
    ok = max_iters <= 4 and area_ok and invariants_ok
    report(11, ok, f"50-mesh corpus: merge iterations <= {max_iters} (<= 4), "
                   f"area preserved to 1e-12: {area_ok}, "
                   f"star/separation invariants: {invariants_ok}")


def test_criterion_12_quadrature_and_solver_oracles():
    rule = quad_rule_square(5)
    x, y = rule.points[:, 0], rule.points[:, 1]
    q_ok = (abs(rule.integrate(x**2 * y**2) - 1.0 / 9.0) <= 1e-14
            and abs(rule.integrate(x**5) - 1.0 / 6.0) <= 1e-14
            and abs(rule.weights.sum() - 1.0) <= 1e-14)
    prule = quad_rule_polygon(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]),
                              (0.5, 0.5), 6)
    q_ok &= abs(prule.integrate(prule.points[:, 0]) - 0.5) <= 1e-14

    rng = np.random.default_rng(0)
    A = rng.standard_normal((60, 60))
    K = sp.csr_matrix(A @ A.T + 60 * np.eye(60))
    f = rng.standard_normal(60)
    from polyspline.assembly import SparseSystem

    system = SparseSystem(K=K, f=f, r=1, n_dofs=60)
    u = solve(system)
    oracle = np.linalg.solve(K.toarray(), f)
    s_ok = np.max(np.abs(u - oracle)) <= 1e-9

    # CG path against the dense oracle on a real assembled system
    disc = discretize(grid_mesh(8), basis="q1")
    prob = ps.franke_poisson()
    system = assemble_stiffness(disc)
    system.f = assemble_rhs(disc, prob.source)
    apply_dirichlet(system, disc, prob.dirichlet)
    K_ff, f_f, free = system.reduced()
    dense = np.linalg.solve(K_ff.toarray(), f_f)
    import polyspline.assembly as asm

    old = asm.DENSE_SOLVE_LIMIT
    try:
        asm.DENSE_SOLVE_LIMIT = 1
        u = solve(system)
    finally:
        asm.DENSE_SOLVE_LIMIT = old
    s_ok &= np.max(np.abs(u[free] - dense)) <= 1e-9
    report(12, q_ok and s_ok,
           f"Gauss rules exact to 1e-14: {q_ok}; "
           f"solve matches dense oracle to 1e-9: {s_ok}")
