import numpy as np
import pytest
from scipy.optimize import linprog

from polyspline.errors import NotStarShaped
from polyspline.mesh import build_adjacency, grid_mesh, merge_faces, polygon_area
from polyspline.preprocess import (
    ensure_separation,
    make_star_shaped,
    point_in_polygon,
    polar_refine,
    polygon_kernel,
    star_shape_report,
    uniform_refine,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
L_SHAPE = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)

# a spiral-like polygon whose inward half-planes have empty intersection
SPIRAL = np.array([
    [0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [1.0, 4.0], [1.0, 1.5],
    [2.5, 1.5], [2.5, 3.0], [2.0, 3.0], [2.0, 2.0], [1.5, 2.0],
    [1.5, 3.5], [3.5, 3.5], [3.5, 0.5], [0.5, 0.5], [0.5, 4.0],
    [0.0, 4.0],
])


def kernel_feasible_lp(points) -> bool:
    """Independent oracle: LP feasibility of the inward half-plane system."""
    pts = np.asarray(points, float)
    n = len(pts)
    A, b = [], []
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        d = q - p
        # left of p->q: -d1*(x-px) + d0*(y-py) >= margin
        A.append([d[1], -d[0]])
        b.append(d[1] * p[0] - d[0] * p[1] - 1e-9)
    res = linprog(c=[0.0, 0.0], A_ub=A, b_ub=b, bounds=[(None, None)] * 2,
                  method="highs")
    return res.status == 0


class TestPolygonKernel:
    def test_unit_square_kernel_is_square(self):
        info = polygon_kernel(UNIT_SQUARE)
        assert info.is_star_shaped
        assert np.isclose(polygon_area(info.kernel), 1.0)
        assert np.allclose(sorted(map(tuple, np.round(info.kernel, 9))),
                           sorted(map(tuple, UNIT_SQUARE)))
        assert np.allclose(info.chosen_center, [0.5, 0.5])

    def test_l_shape_kernel_is_unit_square(self):
        # oracle: exhaustive clipping by hand gives [0,1]^2
        info = polygon_kernel(L_SHAPE)
        assert info.is_star_shaped
        assert np.isclose(polygon_area(info.kernel), 1.0)
        k = np.round(info.kernel, 9)
        assert k[:, 0].min() == 0 and k[:, 0].max() == 1
        assert k[:, 1].min() == 0 and k[:, 1].max() == 1

    def test_spiral_kernel_empty(self):
        assert not kernel_feasible_lp(SPIRAL)  # oracle agrees it is empty
        assert not polygon_kernel(SPIRAL).is_star_shaped

    def test_lp_oracle_agrees_on_star_cases(self):
        for pts in (UNIT_SQUARE, L_SHAPE):
            assert kernel_feasible_lp(pts)

    def test_center_strictly_inside_kernel(self):
        info = polygon_kernel(L_SHAPE)
        c = info.chosen_center
        assert point_in_polygon(c, info.kernel)
        assert point_in_polygon(c, L_SHAPE)


def embed_polygon_in_grid(polygon_cells, n=6):
    """Grid mesh with the listed cells merged into one polygon."""
    return merge_faces(grid_mesh(n), polygon_cells)


class TestMakeStarShaped:
    def test_convex_mesh_unchanged(self):
        mesh = grid_mesh(4)
        out = make_star_shaped(mesh)
        assert out.n_faces == mesh.n_faces
        assert out.faces == mesh.faces

    def test_non_star_polygon_merged(self):
        # U-shaped union of cells in a 6x6 grid: not star-shaped
        n = 6
        cells = [13, 14, 15, 19, 21]  # U: bottom row of three + two prongs
        mesh = embed_polygon_in_grid(cells, n)
        poly = next(f for f in range(mesh.n_faces) if len(mesh.faces[f]) != 4)
        assert not polygon_kernel(mesh.face_points(poly)).is_star_shaped
        fixed, iters = star_shape_report(mesh)
        for f in range(fixed.n_faces):
            if len(fixed.faces[f]) != 4:
                assert polygon_kernel(fixed.face_points(f)).is_star_shaped
        assert fixed.n_faces < mesh.n_faces  # neighbors were absorbed
        assert iters <= 4

    def test_area_preserved(self):
        mesh = embed_polygon_in_grid([13, 14, 15, 19, 21])
        fixed = make_star_shaped(mesh)
        assert np.isclose(fixed.total_area(), mesh.total_area(), rtol=1e-12)


class TestPolarRefine:
    def test_square_single_segment_counts(self):
        mesh = build_adjacency(UNIT_SQUARE, [[0, 1, 2, 3]])
        out = polar_refine(mesh, 0, rings=1, target_edge_len=2.0)  # s = 1
        assert out.n_faces == 5  # 4 ring quads + central 4-gon
        polys = [f for f in range(out.n_faces) if len(out.faces[f]) != 4]
        assert polys == [] or all(len(out.faces[f]) == 4 for f in polys)
        # Euler characteristic of a disk: V - E + F = 1
        V, E, F = out.n_vertices, len(out.edges()), out.n_faces
        assert V - E + F == 1
        assert np.isclose(out.total_area(), 1.0, rtol=1e-12)

    def test_square_midpoint_split_counts(self):
        mesh = build_adjacency(UNIT_SQUARE, [[0, 1, 2, 3]])
        out = polar_refine(mesh, 0, rings=1, target_edge_len=0.5)  # s = 2
        # 8 boundary points -> 8 ring quads + central 8-gon
        assert out.n_faces == 9
        central = next(f for f in range(out.n_faces) if len(out.faces[f]) == 8)
        assert len(out.faces[central]) == 8
        V, E, F = out.n_vertices, len(out.edges()), out.n_faces
        assert V - E + F == 1

    @pytest.mark.parametrize("nv", [5, 7])
    def test_ngon_ring_counts(self, nv):
        ang = np.linspace(0, 2 * np.pi, nv, endpoint=False)
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
        mesh = build_adjacency(pts, [list(range(nv))])
        out = polar_refine(mesh, 0, rings=1,
                           target_edge_len=0.5 * mesh.average_edge_length())
        # s = 2 per edge: ring has 2*nv quads, central polygon 2*nv vertices
        quads = [f for f in range(out.n_faces) if len(out.faces[f]) == 4]
        central = [f for f in range(out.n_faces) if len(out.faces[f]) != 4]
        assert len(quads) == 2 * nv
        assert len(central) == 1
        assert len(out.faces[central[0]]) == 2 * nv

    def test_pentagon_sequence_shapes(self):
        # kernel point, spokes, midpoint splits, one quad ring
        ang = np.linspace(0, 2 * np.pi, 5, endpoint=False)
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
        info = polygon_kernel(pts)
        assert info.is_star_shaped
        mesh = build_adjacency(pts, [list(range(5))])
        out = polar_refine(mesh, 0, rings=1,
                           target_edge_len=0.5 * mesh.average_edge_length())
        assert out.n_faces == 11  # 10 ring quads + central 10-gon
        assert np.isclose(out.total_area(), polygon_area(pts), rtol=1e-12)

    def test_rings_parameter(self):
        mesh = build_adjacency(UNIT_SQUARE, [[0, 1, 2, 3]])
        out = polar_refine(mesh, 0, rings=3, target_edge_len=2.0)
        assert out.n_faces == 3 * 4 + 1

    def test_not_star_shaped_raises(self):
        mesh = build_adjacency(SPIRAL, [list(range(len(SPIRAL)))])
        with pytest.raises(NotStarShaped):
            polar_refine(mesh, 0, rings=1)

    def test_conforming_with_neighbors(self, hexagon_hybrid):
        mesh = hexagon_hybrid
        poly = next(f for f in range(mesh.n_faces) if len(mesh.faces[f]) != 4)
        out = polar_refine(mesh, poly, rings=1,
                           target_edge_len=0.5 * mesh.average_edge_length())
        # adjacency construction validates conformity/manifoldness
        assert np.isclose(out.total_area(), mesh.total_area(), rtol=1e-12)


class TestEnsureSeparation:
    def test_all_quad_unchanged(self):
        mesh = grid_mesh(3)
        assert ensure_separation(mesh) is mesh

    def test_boundary_polygon_ringed(self):
        # merge two boundary cells: hexagon touching the mesh boundary
        mesh = merge_faces(grid_mesh(4), [0, 1])
        out = ensure_separation(mesh)
        polys = [f for f in range(out.n_faces) if len(out.faces[f]) != 4]
        assert len(polys) == 1
        assert all(not out.vertex_boundary[v] for v in out.faces[polys[0]])

    def test_adjacent_polygons_separated(self):
        mesh = merge_faces(grid_mesh(6), [14, 15])
        poly1 = mesh.n_faces - 1
        # the second merge target sits edge-adjacent to the first polygon
        mesh = merge_faces(mesh, [int(f) for f in (8, 9)])
        out = ensure_separation(mesh)
        polys = [f for f in range(out.n_faces) if len(out.faces[f]) != 4]
        pset = set(polys)
        for f in polys:
            for v in out.faces[f]:
                assert not out.vertex_boundary[v]
                assert not any(g != f and g in pset for g in out.vertex_faces(v))


class TestUniformRefine:
    def test_grid_quadruples(self):
        mesh = grid_mesh(3)
        out = uniform_refine(mesh)
        assert out.n_faces == 4 * mesh.n_faces
        assert np.isclose(out.max_edge_length(), mesh.max_edge_length() / 2)

    def test_hybrid_polygon_persists(self, cross_hybrid):
        mesh = cross_hybrid
        arity = 12
        for _ in range(2):
            mesh = uniform_refine(mesh)
            polys = [f for f in range(mesh.n_faces) if len(mesh.faces[f]) != 4]
            assert len(polys) == 1
            arity *= 2
            assert len(mesh.faces[polys[0]]) == arity

    def test_area_preserved(self, cross_hybrid):
        out = uniform_refine(cross_hybrid)
        assert np.isclose(out.total_area(), cross_hybrid.total_area(), rtol=1e-12)


class TestCorpus:
    """Generated 50-mesh corpus: repair always reaches the invariants."""

    @staticmethod
    def random_mesh(seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 9))
        mesh = grid_mesh(n)
        # random connected cluster of cells via a lattice random walk
        size = int(rng.integers(3, 8))
        cell = int(rng.integers(0, n * n))
        cluster = {cell}
        while len(cluster) < size:
            i, j = cell % n, cell // n
            step = rng.choice(4)
            i2 = i + (step == 0) - (step == 1)
            j2 = j + (step == 2) - (step == 3)
            if 0 <= i2 < n and 0 <= j2 < n:
                cell = j2 * n + i2
                cluster.add(cell)
        mesh = merge_faces(mesh, cluster)
        # interior jitter keeps loops simple but distorts shapes
        verts = mesh.vertices.copy()
        h = 1.0 / n
        for v in range(mesh.n_vertices):
            if not mesh.vertex_boundary[v]:
                verts[v] += rng.uniform(-0.25 * h, 0.25 * h, size=2)
        return build_adjacency(verts, mesh.faces)

    def test_corpus_invariants(self):
        max_iters = 0
        for seed in range(50):
            mesh = self.random_mesh(seed)
            area = mesh.total_area()
            fixed, iters = star_shape_report(mesh)
            max_iters = max(max_iters, iters)
            fixed = ensure_separation(fixed)
            assert np.isclose(fixed.total_area(), area, rtol=1e-12)
            pset = {f for f in range(fixed.n_faces) if len(fixed.faces[f]) != 4}
            for f in pset:
                assert polygon_kernel(fixed.face_points(f)).is_star_shaped
                for v in fixed.faces[f]:
                    assert not fixed.vertex_boundary[v]
                    assert not any(g != f and g in pset
                                   for g in fixed.vertex_faces(v))
        assert max_iters <= 4
