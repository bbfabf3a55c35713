"""Hybrid spline / Q2 / harmonic-polygon finite elements on 2D meshes."""

from .assembly import (
    SparseSystem,
    apply_dirichlet,
    apply_neumann,
    assemble_rhs,
    assemble_stiffness,
    condition_number,
    error_norms,
    solve,
)
from .elements import DofTable, ElementBasis, build_space_basis
from .errors import PolySplineError
from .geometry_map import GeoMap, GeoMapEval, eval_geomap, fit_geometric_map, validate_geomap
from .mesh import (
    CellClass,
    CellTag,
    PolyMesh,
    build_adjacency,
    classify_cells,
    grid_mesh,
    is_spline_compatible,
    read_polyoff,
    write_polyoff,
)
from .polygon_basis import (
    ConstraintSystem,
    HarmonicBasisRep,
    PolygonBasis,
    PolygonOptions,
    consistency_rhs,
    consistency_rows_generic,
    consistency_rows_poisson,
    fit_poly_basis,
    place_kernel_centers,
    sample_collocation,
)
from .preprocess import (
    StarShapeInfo,
    ensure_separation,
    make_star_shaped,
    polar_refine,
    polygon_kernel,
    uniform_refine,
)
from .problems import (
    Elasticity,
    Poisson,
    ProblemSpec,
    franke_2d,
    franke_2d_gradient,
    franke_2d_laplacian,
    franke_poisson,
    manufactured_elasticity,
    quadratic_poisson,
)
from .quadrature import QuadratureRule, quad_rule_polygon, quad_rule_square
from .solver import Discretization, PolySplineSolver, discretize, solve_problem
from .splines import SplineBasis1D, bspline_quad_eval, lagrange_basis

__version__ = "0.1.0"

__all__ = [
    "CellClass", "CellTag", "ConstraintSystem", "Discretization", "DofTable",
    "Elasticity", "ElementBasis", "GeoMap", "GeoMapEval", "HarmonicBasisRep",
    "Poisson", "PolyMesh", "PolySplineError", "PolySplineSolver",
    "PolygonBasis", "PolygonOptions", "ProblemSpec", "QuadratureRule",
    "SparseSystem", "SplineBasis1D", "StarShapeInfo",
    "apply_dirichlet", "apply_neumann", "assemble_rhs", "assemble_stiffness",
    "bspline_quad_eval", "build_adjacency", "build_space_basis",
    "classify_cells", "condition_number", "consistency_rhs",
    "consistency_rows_generic", "consistency_rows_poisson", "discretize",
    "ensure_separation", "error_norms", "eval_geomap", "fit_geometric_map",
    "fit_poly_basis", "franke_2d", "franke_2d_gradient", "franke_2d_laplacian",
    "franke_poisson", "grid_mesh", "is_spline_compatible", "lagrange_basis",
    "make_star_shaped", "manufactured_elasticity", "place_kernel_centers",
    "polar_refine", "polygon_kernel", "quad_rule_polygon", "quad_rule_square",
    "quadratic_poisson", "read_polyoff", "sample_collocation", "solve",
    "solve_problem", "uniform_refine", "validate_geomap", "write_polyoff",
]
