import numpy as np
import pytest
import scipy.sparse as sp

from polyspline.assembly import (
    apply_dirichlet,
    apply_neumann,
    assemble_rhs,
    assemble_stiffness,
    condition_number,
    error_norms,
    residual_norm,
    solve,
)
from polyspline.errors import NotSPD, RankDeficient, TooLarge
from polyspline.mesh import build_adjacency, grid_mesh
from polyspline.problems import (
    Elasticity,
    franke_2d,
    franke_2d_laplacian,
    franke_poisson,
    manufactured_elasticity,
    quadratic_poisson,
)
from polyspline.solver import discretize, solve_problem


def sympy_q1_laplacian():
    """Symbolic oracle: local Poisson matrix of the bilinear unit square."""
    import sympy as sy

    x, y = sy.symbols("x y")
    basis = [(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y]  # tensor order
    K = sy.zeros(4, 4)
    for i in range(4):
        for j in range(4):
            integrand = (sy.diff(basis[i], x) * sy.diff(basis[j], x)
                         + sy.diff(basis[i], y) * sy.diff(basis[j], y))
            K[i, j] = sy.integrate(sy.integrate(integrand, (x, 0, 1)), (y, 0, 1))
    return np.array(K.tolist(), dtype=float)


class TestStiffness:
    def test_q1_local_matrix_matches_symbolic_oracle(self):
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        mesh = build_adjacency(verts, [[0, 1, 2, 3]])
        disc = discretize(mesh, basis="q1")
        system = assemble_stiffness(disc)
        K = system.K.toarray()
        # global dof order is tensor order for the single cell
        oracle = sympy_q1_laplacian()
        eb = disc.space.elements[0]
        perm = eb.identity_cols
        K_local = K[np.ix_(perm, perm)]
        assert np.allclose(K_local, oracle, atol=1e-14)
        assert oracle[0, 0] == pytest.approx(2 / 3)
        assert oracle[0, 1] == pytest.approx(-1 / 6)
        assert oracle[0, 3] == pytest.approx(-1 / 3)  # opposite corner

    @pytest.mark.parametrize("basis", ["q1", "q2", "polyspline"])
    def test_interior_row_sums_vanish(self, hexagon_hybrid, basis):
        disc = discretize(hexagon_hybrid, basis=basis)
        system = assemble_stiffness(disc)
        rows = np.asarray(system.K.sum(axis=1)).ravel()
        interior = [i for i, d in enumerate(disc.space.dofs.dofs)
                    if not d.on_boundary]
        assert np.max(np.abs(rows[interior])) < 1e-10

    @pytest.mark.parametrize("basis", ["q2", "polyspline"])
    def test_symmetric(self, hexagon_hybrid, basis):
        disc = discretize(hexagon_hybrid, basis=basis)
        K = assemble_stiffness(disc).K
        diff = (K - K.T).tocoo()
        scale = np.abs(K.data).max()
        assert np.abs(diff.data).max() if diff.nnz else 0.0 <= 1e-12 * scale

    def test_quadrature_degree_insensitive_on_affine_cells(self):
        # parallelogram cells: raising the rule degree by 2 leaves K unchanged
        mesh = grid_mesh(4)
        shear = np.array([[1.0, 0.3], [0.0, 1.0]])
        mesh = build_adjacency(mesh.vertices @ shear.T, mesh.faces)
        disc = discretize(mesh, basis="polyspline")
        K6 = assemble_stiffness(disc, quad_degree=6).K
        K8 = assemble_stiffness(disc, quad_degree=8).K
        scale = np.abs(K6.data).max()
        assert np.abs((K6 - K8).toarray()).max() < 1e-10 * scale


class TestRhs:
    def test_zero_source(self, hexagon_hybrid):
        disc = discretize(hexagon_hybrid, basis="polyspline")
        b = assemble_rhs(disc, lambda p: np.zeros(len(np.atleast_2d(p))))
        assert np.allclose(b, 0.0)

    @pytest.mark.parametrize("basis", ["q1", "q2", "polyspline"])
    def test_unit_source_sums_to_area(self, hexagon_hybrid, basis):
        disc = discretize(hexagon_hybrid, basis=basis)
        b = assemble_rhs(disc, lambda p: np.ones(len(np.atleast_2d(p))))
        assert b.sum() == pytest.approx(1.0, abs=1e-12)

    def test_franke_laplacian_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(0.1, 0.9, size=(5, 2))
        eps = 1e-5
        for p in pts:
            stencil = (franke_2d(p + [eps, 0]) + franke_2d(p - [eps, 0])
                       + franke_2d(p + [0, eps]) + franke_2d(p - [0, eps])
                       - 4 * franke_2d(p[None, :]))
            fd = float(stencil[0]) / eps**2
            assert franke_2d_laplacian(p[None, :])[0] == pytest.approx(
                fd, abs=1e-4 * max(1, abs(fd)))


class TestDirichlet:
    def test_zero_data(self, hexagon_hybrid):
        disc = discretize(hexagon_hybrid, basis="polyspline")
        system = assemble_stiffness(disc)
        apply_dirichlet(system, disc, lambda p: np.zeros(len(np.atleast_2d(p))))
        assert all(v == 0.0 for v in system.dirichlet.values())
        assert len(system.dirichlet) == len(disc.space.dofs.boundary_ids())

    def test_quadratic_data_exact_on_q2(self):
        mesh = grid_mesh(4)
        disc = discretize(mesh, basis="q2")
        prob = quadratic_poisson()
        system = assemble_stiffness(disc)
        apply_dirichlet(system, disc, prob.dirichlet)
        for idx, val in system.dirichlet.items():
            anchor = disc.space.dofs.dofs[idx].anchor
            assert val == pytest.approx(float(prob.exact_value(anchor[None, :])[0]),
                                        abs=1e-10)

    def test_dirichlet_trace_fit_converges(self):
        # fitted boundary values approach Franke at unseen boundary points
        errs = []
        for n in (4, 8, 16):
            disc = discretize(grid_mesh(n), basis="polyspline")
            system = assemble_stiffness(disc)
            apply_dirichlet(system, disc, franke_2d)
            ts = np.linspace(0.0123, 0.987, 7)
            worst = 0.0
            from polyspline.assembly import _boundary_edges_with_owner, _edge_ref_params
            mesh = disc.space.mesh
            for a, b, f in _boundary_edges_with_owner(mesh):
                eb = disc.space.elements[f]
                uv = _edge_ref_params(mesh, f, a, b, ts)
                vals, _ = eb.eval(uv)
                x = disc.geomap.eval(f, uv).x
                u = np.zeros(system.n_unknowns)
                for i, v in system.dirichlet.items():
                    u[i] = v
                fitted = vals @ eb.gather(u)
                worst = max(worst, np.max(np.abs(fitted - franke_2d(x))))
            errs.append(worst)
        rate = np.log(errs[0] / errs[-1]) / np.log(4.0)
        assert rate >= 2.5

    def test_unsupported_dof_raises(self, hexagon_hybrid):
        disc = discretize(hexagon_hybrid, basis="polyspline")
        system = assemble_stiffness(disc)
        # region catches the corner vertex dof but no edge midpoints, so the
        # selected dof has no sample support
        with pytest.raises(RankDeficient):
            apply_dirichlet(system, disc, franke_2d,
                            region=lambda x: float(np.linalg.norm(x)) < 1e-6)


class TestNeumann:
    def test_zero_flux_no_change(self, hexagon_hybrid):
        disc = discretize(hexagon_hybrid, basis="polyspline")
        system = assemble_stiffness(disc)
        f0 = system.f.copy()
        apply_neumann(system, disc, lambda p: np.zeros(len(np.atleast_2d(p))),
                      region=lambda x: True)
        assert np.allclose(system.f, f0)

    def test_unit_flux_on_one_edge_sums_to_length(self):
        mesh = grid_mesh(3)
        disc = discretize(mesh, basis="q2")
        system = assemble_stiffness(disc)
        region = lambda x: x[1] < 1e-12  # the bottom side, length 1
        apply_neumann(system, disc, lambda p: np.ones(len(np.atleast_2d(p))),
                      region=region)
        assert system.f.sum() == pytest.approx(1.0, abs=1e-12)

    def test_mixed_bc_converges_like_dirichlet(self):
        prob = franke_poisson()
        from polyspline.problems import franke_2d_gradient

        errs = []
        for n in (8, 16, 32):
            mesh = grid_mesh(n)
            disc = discretize(mesh, basis="q2")
            system = assemble_stiffness(disc)
            system.f = assemble_rhs(disc, prob.source)
            dir_region = lambda x: x[0] < 1e-12 or x[0] > 1 - 1e-12 or x[1] < 1e-12
            neu_region = lambda x: not dir_region(x)

            def flux(p):
                # outward normal on the top side is (0, 1)
                return franke_2d_gradient(p)[:, 1]

            apply_neumann(system, disc, flux, region=neu_region)
            apply_dirichlet(system, disc, prob.dirichlet, region=dir_region)
            u = solve(system)
            l2, _, _ = error_norms(disc, u, prob.exact_value, prob.exact_grad)
            errs.append(l2)
        rate = np.log(errs[0] / errs[-1]) / np.log(4.0)
        assert rate > 2.7


class TestSolve:
    def test_identity_system(self):
        system_like = sp.eye(7, format="csr")
        from polyspline.assembly import SparseSystem

        sy = SparseSystem(K=system_like, f=np.arange(7.0), r=1, n_dofs=7)
        u = solve(sy)
        assert np.allclose(u, np.arange(7.0))

    def test_random_spd_dense_path(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((50, 50))
        K = A @ A.T + 50 * np.eye(50)
        f = rng.standard_normal(50)
        from polyspline.assembly import SparseSystem

        sy = SparseSystem(K=sp.csr_matrix(K), f=f, r=1, n_dofs=50)
        u = solve(sy)
        assert np.linalg.norm(K @ u - f) / np.linalg.norm(f) <= 1e-10

    def test_cg_path_matches_dense_oracle(self):
        # Poisson on an 8x8 grid, Q1: dense factorization oracle
        mesh = grid_mesh(8)
        disc = discretize(mesh, basis="q1")
        prob = franke_poisson()
        system = assemble_stiffness(disc)
        system.f = assemble_rhs(disc, prob.source)
        apply_dirichlet(system, disc, prob.dirichlet)
        K_ff, f_f, free = system.reduced()
        oracle = np.linalg.solve(K_ff.toarray(), f_f)
        import polyspline.assembly as asm

        old = asm.DENSE_SOLVE_LIMIT
        try:
            asm.DENSE_SOLVE_LIMIT = 1  # force the CG path
            u = solve(system)
        finally:
            asm.DENSE_SOLVE_LIMIT = old
        assert np.max(np.abs(u[free] - oracle)) <= 1e-9

    def test_not_spd_raises(self):
        from polyspline.assembly import SparseSystem

        K = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))  # indefinite
        sy = SparseSystem(K=K, f=np.ones(2), r=1, n_dofs=2)
        with pytest.raises(NotSPD):
            solve(sy)

    def test_residual_invariant_after_solve(self, cross_hybrid):
        disc = discretize(cross_hybrid, basis="polyspline")
        u, system = solve_problem(disc, franke_poisson())
        assert residual_norm(system, u) <= 1e-9


class TestConditionNumber:
    def test_diagonal_matrix(self):
        from polyspline.assembly import SparseSystem

        K = sp.diags(np.arange(1.0, 11.0)).tocsr()
        sy = SparseSystem(K=K, f=np.zeros(10), r=1, n_dofs=10)
        assert condition_number(sy) == pytest.approx(10.0)

    def test_identity(self):
        from polyspline.assembly import SparseSystem

        sy = SparseSystem(K=sp.eye(5, format="csr"), f=np.zeros(5), r=1, n_dofs=5)
        assert condition_number(sy) == pytest.approx(1.0)

    def test_too_large_raises(self):
        from polyspline.assembly import SparseSystem

        n = 3500
        sy = SparseSystem(K=sp.eye(n, format="csr"), f=np.zeros(n), r=1, n_dofs=n)
        with pytest.raises(TooLarge):
            condition_number(sy)

    def test_q1_laplacian_h2_growth(self):
        conds = []
        for n in (4, 8, 16, 32):
            disc = discretize(grid_mesh(n), basis="q1")
            system = assemble_stiffness(disc)
            apply_dirichlet(system, disc,
                            lambda p: np.zeros(len(np.atleast_2d(p))))
            conds.append(condition_number(system))
        slopes = np.diff(np.log(conds)) / np.log(2.0)
        overall = np.log(conds[-1] / conds[0]) / np.log(8.0)
        assert overall == pytest.approx(2.0, abs=0.3)


class TestErrorNorms:
    def test_exact_solution_zero_error(self):
        mesh = grid_mesh(4)
        disc = discretize(mesh, basis="q2")
        prob = quadratic_poisson()
        u, system = solve_problem(disc, prob)
        l2, linf, h1 = error_norms(disc, u, prob.exact_value, prob.exact_grad)
        assert l2 < 1e-12 and linf < 1e-11 and h1 < 1e-11

    def test_constant_error_field(self):
        mesh = grid_mesh(3)
        disc = discretize(mesh, basis="q1")
        u = np.zeros(disc.n_dofs)
        c = 0.37
        l2, linf, h1 = error_norms(
            disc, u, lambda p: np.full(len(np.atleast_2d(p)), c),
            lambda p: np.zeros((len(np.atleast_2d(p)), 2)))
        assert l2 == pytest.approx(c, rel=1e-12)      # c * sqrt(|Omega|)
        assert linf == pytest.approx(c, rel=1e-12)
        assert h1 == pytest.approx(c, rel=1e-12)      # gradient part vanishes

    def test_linear_error_field_h1(self):
        # u_h = 0 against exact u = a x: |u|_H1^2 = a^2, L2^2 = a^2/3
        mesh = grid_mesh(3)
        disc = discretize(mesh, basis="q1")
        u = np.zeros(disc.n_dofs)
        a = 2.0
        l2, linf, h1 = error_norms(
            disc, u, lambda p: a * np.atleast_2d(p)[:, 0],
            lambda p: np.column_stack([np.full(len(np.atleast_2d(p)), a),
                                       np.zeros(len(np.atleast_2d(p)))]))
        assert l2 == pytest.approx(a / np.sqrt(3), rel=1e-12)
        assert h1 == pytest.approx(np.sqrt(a**2 + a**2 / 3), rel=1e-12)
        assert linf == pytest.approx(a, rel=1e-12)


class TestElasticityAssembly:
    def test_rigid_modes_in_kernel(self, hexagon_hybrid):
        pde = Elasticity.from_young_poisson(200.0, 0.35)
        disc = discretize(hexagon_hybrid, basis="polyspline", pde=pde)
        system = assemble_stiffness(disc)
        anchors = disc.space.dofs.anchors()
        n = len(anchors)
        modes = [
            np.column_stack([np.ones(n), np.zeros(n)]),
            np.column_stack([np.zeros(n), np.ones(n)]),
            np.column_stack([-anchors[:, 1], anchors[:, 0]]),
        ]
        for mode in modes:
            r = mode.reshape(-1)
            assert np.max(np.abs(system.K @ r)) <= 1e-9

    def test_rigid_translation_solved_exactly(self):
        mesh = grid_mesh(4)
        pde = Elasticity.from_young_poisson(200.0, 0.35)
        disc = discretize(mesh, basis="polyspline", pde=pde)
        from polyspline.problems import ProblemSpec

        shift = np.array([0.3, -0.2])
        prob = ProblemSpec(
            pde=pde,
            source=lambda p: np.zeros((len(np.atleast_2d(p)), 2)),
            dirichlet=lambda p: np.tile(shift, (len(np.atleast_2d(p)), 1)),
            exact_value=lambda p: np.tile(shift, (len(np.atleast_2d(p)), 1)),
            exact_grad=lambda p: np.zeros((len(np.atleast_2d(p)), 2, 2)),
        )
        u, system = solve_problem(disc, prob)
        l2, linf, h1 = error_norms(disc, u, prob.exact_value, prob.exact_grad)
        assert linf <= 1e-9

    def test_matrix_dump(self, tmp_path, hexagon_hybrid):
        disc = discretize(hexagon_hybrid, basis="q1")
        system = assemble_stiffness(disc)
        path = tmp_path / "K.txt"
        system.dump_coo(path)
        rows = [line.split() for line in path.read_text().splitlines()]
        assert len(rows) == system.K.nnz
        i, j, v = rows[0]
        assert float(v) == system.K[int(i), int(j)]
