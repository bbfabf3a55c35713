"""High-level solver: discretization bundle and an estimator-style wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .assembly import (
    apply_dirichlet,
    apply_neumann,
    assemble_rhs,
    assemble_stiffness,
    error_norms,
    residual_norm,
    solve,
)
from .elements import build_space_basis
from .geometry_map import fit_geometric_map
from .mesh import (
    CellClass,
    CellTag,
    PolyMesh,
    build_adjacency,
    classify_cells,
    read_polyoff,
    validate_separation,
)
from .polygon_basis import PolygonOptions, build_polygon_bases
from .preprocess import point_in_polygon
from .problems import Poisson, ProblemSpec


@dataclass
class Discretization:
    """Everything needed to assemble on one mesh: classification, element
    bases, geometric map and fitted polygon bases."""

    space: object
    geomap: object
    polygons: dict
    pde: object

    @property
    def mesh(self):
        return self.space.mesh

    @property
    def n_dofs(self) -> int:
        return len(self.space.dofs)


def discretize(mesh: PolyMesh, basis: str = "polyspline", pde=None,
               polygon_overrides=(), polygon_options: PolygonOptions | None = None,
               check_separation: bool = True) -> Discretization:
    """Classify cells, build element bases, fit the geometric map and the
    polygon kernels for one mesh."""
    pde = pde or Poisson()
    if basis == "polyspline":
        classes = classify_cells(mesh, polygon_overrides=polygon_overrides,
                                 check_separation=check_separation)
    else:
        # every quad is a plain Lagrange element; no one-ring tests needed
        tags = np.full(mesh.n_faces, CellTag.Q2, dtype=np.int64)
        polys = {int(f) for f in polygon_overrides}
        polys.update(f for f in range(mesh.n_faces) if len(mesh.faces[f]) != 4)
        for f in polys:
            tags[f] = CellTag.POLYGON
        if check_separation:
            validate_separation(mesh, polys)
        classes = CellClass(tags=tags)
    space, geomap = _build_valid_space(mesh, classes, basis)
    polys = build_polygon_bases(space, geomap, pde, polygon_options)
    return Discretization(space=space, geomap=geomap, polygons=polys, pde=pde)


_DEMOTE_DET_RATIO = 1e-3
_DEMOTE_SAMPLES = np.array([(u, v) for u in np.linspace(0, 1, 5)
                            for v in np.linspace(0, 1, 5)])


def _build_valid_space(mesh, classes, basis):
    """Build element bases and the geometric map, demoting spline cells whose
    fitted map degenerates (det Dg nonpositive or collapsing) to Q2.

    On curved-but-combinatorially-regular patches (quad bands around refined
    polygons) a tensor spline map can fold; Q2 with a bilinear map is always
    valid there.  Regular regions are unaffected and keep the fast path.
    """
    for _ in range(10):
        space = build_space_basis(mesh, classes, mode=basis)
        geomap = fit_geometric_map(space)
        bad = []
        for f in space.layouts:
            ev = geomap.eval(f, _DEMOTE_SAMPLES, check=False)
            dmin, dmax = float(ev.det.min()), float(ev.det.max())
            if dmin <= _DEMOTE_DET_RATIO * max(dmax, 0.0):
                bad.append(f)
        if not bad:
            return space, geomap
        for f in bad:
            classes.tags[f] = CellTag.Q2
    return space, geomap


def solve_problem(disc: Discretization, problem: ProblemSpec, quad_degree: int = 6):
    """Assemble, apply boundary conditions, and solve; returns (u, system)."""
    system = assemble_stiffness(disc, quad_degree=quad_degree)
    system.f = assemble_rhs(disc, problem.source, quad_degree=quad_degree)
    if problem.neumann is not None:
        region = problem.dirichlet_region
        neumann_region = (lambda x: not region(x)) if region is not None else None
        apply_neumann(system, disc, problem.neumann, neumann_region,
                      quad_degree=quad_degree)
    apply_dirichlet(system, disc, problem.dirichlet,
                    region=problem.dirichlet_region)
    u = solve(system)
    return u, system


class PolySplineSolver(BaseEstimator):
    """Estimator-style interface: ``fit(mesh, problem)`` discretizes and
    solves; ``predict(X)`` evaluates the discrete solution at points.

    Parameters mirror the discretization options so instances compose with
    scikit-learn tooling (``get_params`` / ``set_params`` / cloning).
    """

    def __init__(self, basis: str = "polyspline", quad_degree: int = 6,
                 samples_per_edge: int = 10, offset_factor: float = 1.0,
                 kernel: str = "inverse-distance",
                 constraint_mode: str = "quadratic"):
        self.basis = basis
        self.quad_degree = quad_degree
        self.samples_per_edge = samples_per_edge
        self.offset_factor = offset_factor
        self.kernel = kernel
        self.constraint_mode = constraint_mode

    # ------------------------------------------------------------------
    def fit(self, mesh, problem: ProblemSpec, polygon_overrides=()):
        """Discretize ``mesh`` (a PolyMesh, a (vertices, faces) pair, or a
        poly-off path) and solve ``problem``."""
        mesh = self._as_mesh(mesh)
        options = PolygonOptions(
            samples_per_edge=self.samples_per_edge,
            offset_factor=self.offset_factor,
            kernel=self.kernel,
            constraint_mode=self.constraint_mode,
            quad_degree=self.quad_degree,
        )
        self.discretization_ = discretize(
            mesh, basis=self.basis, pde=problem.pde,
            polygon_overrides=polygon_overrides, polygon_options=options)
        self.problem_ = problem
        self.solution_, self.system_ = solve_problem(
            self.discretization_, problem, quad_degree=self.quad_degree)
        self.n_dofs_ = self.discretization_.n_dofs
        self.residual_ = residual_norm(self.system_, self.solution_)
        return self

    def predict(self, X) -> np.ndarray:
        """Evaluate the discrete solution at physical points (n, 2)."""
        self._check_fitted()
        X = self._check_points(X)
        disc = self.discretization_
        r = disc.pde.r
        out = np.full((len(X), r), np.nan)
        for i, p in enumerate(X):
            val = self._eval_point(disc, p)
            if val is not None:
                out[i] = val
        return out[:, 0] if r == 1 else out

    def errors(self):
        """(L2, Linf, H1) against the problem's exact solution."""
        self._check_fitted()
        prob = self.problem_
        if prob.exact_value is None:
            raise ValueError("problem has no exact solution")
        return error_norms(self.discretization_, self.solution_,
                           prob.exact_value, prob.exact_grad,
                           quad_degree=self.quad_degree)

    # ------------------------------------------------------------------
    @staticmethod
    def _as_mesh(mesh) -> PolyMesh:
        if isinstance(mesh, PolyMesh):
            return mesh
        if isinstance(mesh, (str,)) or hasattr(mesh, "__fspath__"):
            return read_polyoff(mesh)
        vertices, faces = mesh
        return build_adjacency(vertices, faces)

    @staticmethod
    def _check_points(X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"points must be (n, 2), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("points contain NaN or inf")
        return X

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            raise RuntimeError("solver is not fitted; call fit() first")

    def _eval_point(self, disc, p):
        mesh = disc.mesh
        r = disc.pde.r
        u = self.solution_
        for f in range(mesh.n_faces):
            loop = mesh.faces[f]
            pts = mesh.face_points(f)
            if not point_in_polygon(p, pts):
                continue
            if disc.space.classes.tags[f] == CellTag.POLYGON:
                pb = disc.polygons[f]
                vals = pb.values(p[None, :])[0]
                if r == 1:
                    return float(vals @ u[pb.dof_ids])
                return np.array([vals @ u[r * pb.dof_ids + a] for a in range(r)])
            uv = _invert_map(disc.geomap, f, p)
            if uv is None:
                continue
            eb = disc.space.elements[f]
            vals, _ = eb.eval(uv[None, :])
            loc = eb.gather(u, r)
            if r == 1:
                return float(vals[0] @ loc)
            return vals[0] @ loc
        return None


def _invert_map(geomap, f, p, tol=1e-11):
    """Newton inversion of the per-cell geometric map (quads only)."""
    uv = np.array([0.5, 0.5])
    for _ in range(30):
        ev = geomap.eval(f, uv[None, :], check=False)
        res = ev.x[0] - p
        if np.max(np.abs(res)) < tol:
            break
        try:
            step = np.linalg.solve(ev.Dg[0], res)
        except np.linalg.LinAlgError:
            return None
        uv = uv - step
    if np.all(uv > -1e-9) and np.all(uv < 1 + 1e-9):
        return np.clip(uv, 0.0, 1.0)
    return None
