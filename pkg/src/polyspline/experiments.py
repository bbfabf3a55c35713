"""Experiment runners: convergence sweeps, constraint ablation, conditioning,
interpolation resilience, and elasticity, with CSV/JSON output."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    apply_dirichlet,
    assemble_stiffness,
    condition_number,
    error_norms,
)
from .mesh import PolyMesh, build_adjacency, grid_mesh, merge_faces, read_polyoff
from .polygon_basis import PolygonOptions, kernel_gradients, place_kernel_centers
from .preprocess import ensure_separation, uniform_refine
from .problems import (
    cubic_poisson,
    franke_2d,
    franke_2d_gradient,
    franke_poisson,
    manufactured_elasticity,
)
from .quadrature import quad_rule_square
from .solver import discretize, solve_problem
from .splines import lagrange_basis


@dataclass
class ExperimentConfig:
    """Configuration shared by all experiment runners (JSON-mirrored)."""

    experiment: str = "convergence"      # routing key used by `polyspline run`
    mesh: dict = field(default_factory=lambda: {"kind": "grid", "n": 8})
    basis: str = "polyspline"            # 'q1' | 'q2' | 'polyspline'
    pde: dict = field(default_factory=lambda: {"kind": "poisson"})
    levels: int = 4
    constraint_mode: str = "quadratic"   # 'none' | 'linear' | 'quadratic'
    weight_penalty: float | None = None  # None: the PolygonOptions default
    perturbation: dict = field(default_factory=lambda: {
        "fraction": 0.05, "displacement": [0.2, 0.4]})
    output: str | None = None
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        cfg = cls()
        for k, v in data.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key {k!r}")
            setattr(cfg, k, v)
        return cfg


@dataclass
class ConvergenceRecord:
    """Per-level errors/timings of one sweep plus fitted rates."""

    levels: list = field(default_factory=list)   # dict rows
    rates: dict = field(default_factory=dict)

    def add(self, **row):
        self.levels.append(row)

    def fit_rates(self):
        hs = np.array([r["h"] for r in self.levels])
        self.rates = {}
        for key in ("L2", "Linf", "H1"):
            errs = np.array([r[key] for r in self.levels])
            if len(hs) >= 3 and np.all(errs > 0):
                A = np.vstack([np.log(hs), np.ones_like(hs)]).T
                slope = float(np.linalg.lstsq(A, np.log(errs), rcond=None)[0][0])
                pair = np.diff(np.log(errs)) / np.diff(np.log(hs))
                self.rates[key] = {"lstsq": slope,
                                   "pairwise_median": float(np.median(pair))}
        return self.rates

    def write_csv(self, path):
        if not self.levels:
            return
        cols = list(self.levels[0].keys())
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.levels:
                w.writerow(row)


def build_base_mesh(spec: dict) -> PolyMesh:
    """Mesh source: {'kind': 'grid'|'hybrid'|'polar-cross'|'file', ...}.

    'hybrid' is an n-by-n grid whose five central cells are merged into a
    cross-shaped star polygon (then separation is restored if needed).
    'polar-cross' is a plus-sign domain filled by one quad ring around a
    central cross polygon, so the nonconforming cell dominates the error at
    every level (the constraint-ablation configuration).
    """
    kind = spec.get("kind", "grid")
    if kind == "grid":
        return grid_mesh(int(spec.get("n", 8)))
    if kind == "hybrid":
        n = int(spec.get("n", 9))
        mesh = grid_mesh(n)
        cc = (n // 2) * n + (n // 2 if n % 2 == 1 else n // 2 - 1)
        mesh = merge_faces(mesh, [cc, cc - 1, cc + 1, cc - n, cc + n])
        return ensure_separation(mesh)
    if kind == "polar-cross":
        t = 1.0 / 3.0
        cross = np.array([
            [t, 0], [2 * t, 0], [2 * t, t], [1, t], [1, 2 * t], [2 * t, 2 * t],
            [2 * t, 1], [t, 1], [t, 2 * t], [0, 2 * t], [0, t], [t, t]])
        c = np.array([0.5, 0.5])
        inner = c + 0.45 * (cross - c)
        verts = np.vstack([cross, inner])
        m = len(cross)
        faces = [[i, (i + 1) % m, m + (i + 1) % m, m + i] for i in range(m)]
        faces.append(list(range(m, 2 * m)))
        return build_adjacency(verts, faces)
    if kind == "file":
        return read_polyoff(spec["path"])
    raise ValueError(f"unknown mesh kind {kind!r}")


def _problem_for(cfg: ExperimentConfig):
    kind = cfg.pde.get("kind", "poisson")
    if kind == "poisson":
        return franke_poisson()
    if kind == "poisson-cubic":
        return cubic_poisson()
    if kind == "elasticity":
        return manufactured_elasticity(E=float(cfg.pde.get("E", 200.0)),
                                       nu=float(cfg.pde.get("nu", 0.35)))
    raise ValueError(f"unknown pde kind {kind!r}")


def _polygon_options(cfg: ExperimentConfig) -> PolygonOptions:
    opts = PolygonOptions(constraint_mode=cfg.constraint_mode)
    if cfg.weight_penalty is not None:
        opts.weight_penalty = cfg.weight_penalty
    return opts


def run_convergence(cfg: ExperimentConfig) -> ConvergenceRecord:
    """Refinement sweep: build, solve, and measure errors per level."""
    problem = _problem_for(cfg)
    mesh = build_base_mesh(cfg.mesh)
    rec = ConvergenceRecord()
    options = _polygon_options(cfg)
    for level in range(cfg.levels + 1):
        t0 = time.perf_counter()
        disc = discretize(mesh, basis=cfg.basis, pde=problem.pde,
                          polygon_options=options)
        t_basis = time.perf_counter() - t0
        t0 = time.perf_counter()
        system = assemble_stiffness(disc)
        from .assembly import assemble_rhs, solve
        system.f = assemble_rhs(disc, problem.source)
        apply_dirichlet(system, disc, problem.dirichlet,
                        region=problem.dirichlet_region)
        t_assembly = time.perf_counter() - t0
        t0 = time.perf_counter()
        u = solve(system)
        t_solve = time.perf_counter() - t0
        l2, linf, h1 = error_norms(disc, u, problem.exact_value,
                                   problem.exact_grad)
        rec.add(level=level, h=mesh.max_edge_length(), N=disc.n_dofs,
                L2=l2, Linf=linf, H1=h1, t_basis=round(t_basis, 4),
                t_assembly=round(t_assembly, 4), t_solve=round(t_solve, 4))
        if level < cfg.levels:
            mesh = uniform_refine(mesh)
    rec.fit_rates()
    _write_outputs(cfg, "convergence", rec)
    return rec


def run_constraint_ablation(cfg: ExperimentConfig) -> dict:
    """Convergence with no / linear / quadratic polygon constraints."""
    out = {}
    for mode in ("none", "linear", "quadratic"):
        sub = ExperimentConfig(**{**asdict(cfg), "constraint_mode": mode,
                                  "output": None})
        out[mode] = run_convergence(sub)
    if cfg.output:
        base = Path(cfg.output)
        base.mkdir(parents=True, exist_ok=True)
        summary = {}
        for mode, rec in out.items():
            rec.write_csv(base / f"ablation_{mode}.csv")
            summary[mode] = rec.rates
        (base / "ablation_summary.json").write_text(json.dumps(summary, indent=2))
    return out


def displaced_polygon_mesh(n: int, fraction: float, displacement, seed: int):
    """Mark a fraction of interior quads as polygons and move one vertex of
    each along its diagonal by a random factor in ``displacement``.

    The marked set is interior and pairwise non-adjacent so the separation
    invariant holds.  Returns (mesh, marked_faces).
    """
    rng = np.random.default_rng(seed)
    mesh = grid_mesh(n)
    nf = mesh.n_faces
    count = max(1, round(fraction * nf)) if fraction > 0 else 0
    marked, forbidden = [], set()
    for f in rng.permutation(nf):
        if len(marked) >= count:
            break
        loop = mesh.faces[f]
        if any(mesh.vertex_boundary[v] for v in loop) or f in forbidden:
            continue
        marked.append(int(f))
        for v in loop:
            forbidden.update(mesh.vertex_faces(v))
    verts = mesh.vertices.copy()
    lo, hi = displacement
    for f in marked:
        loop = mesh.faces[f]
        i = int(rng.integers(0, 4))
        v, vopp = loop[i], loop[(i + 2) % 4]
        verts[v] = verts[v] + rng.uniform(lo, hi) * (verts[vopp] - verts[v])
    return build_adjacency(verts, mesh.faces), marked


def run_conditioning(cfg: ExperimentConfig) -> list:
    """Condition numbers per level for Q1/Q2/PolySpline, with and without
    the marked-polygon treatment, on the same displaced mesh."""
    problem = franke_poisson()
    rows = []
    n = int(cfg.mesh.get("n", 6))
    frac = cfg.perturbation.get("fraction", 0.05)
    disp = cfg.perturbation.get("displacement", [0.2, 0.4])
    for level in range(cfg.levels + 1):
        size = n * (2 ** level)
        mesh, marked = displaced_polygon_mesh(size, frac, disp, cfg.seed + level)
        row = {"level": level, "n": size, "marked": len(marked)}
        for basis in ("q1", "q2", "polyspline"):
            for with_poly in (False, True):
                disc = discretize(mesh, basis=basis,
                                  polygon_overrides=marked if with_poly else ())
                system = assemble_stiffness(disc)
                apply_dirichlet(system, disc, problem.dirichlet)
                key = basis + ("_poly" if with_poly else "")
                row[key] = condition_number(system)
        rows.append(row)
    if cfg.output:
        base = Path(cfg.output)
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "conditioning.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            for row in rows:
                w.writerow(row)
    return rows


# ----------------------------------------------------------------------
# interpolation resilience on badly shaped quads
# ----------------------------------------------------------------------

def bad_quad_shapes(n_shapes: int = 14, seed: int = 3):
    """Distorted-but-valid quads: one vertex pulled far along its diagonal
    plus jitter, giving near-degenerate corners like the paper's gallery."""
    rng = np.random.default_rng(seed)
    shapes = []
    while len(shapes) < n_shapes:
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        pts += rng.uniform(-0.15, 0.15, size=(4, 2))
        i = int(rng.integers(0, 4))
        t = rng.uniform(0.45, 0.58)
        pts[i] = pts[i] + t * (pts[(i + 2) % 4] - pts[i])
        from .mesh import polygon_area
        if polygon_area(pts) <= 0.05:
            continue
        # bilinear map must stay invertible for the Q2 comparison
        vals, grads = lagrange_basis(1, _dense_ref_grid(8))
        c = pts[[0, 1, 3, 2]]
        Dg = np.einsum("qlj,li->qij", grads, c)
        det = Dg[:, 0, 0] * Dg[:, 1, 1] - Dg[:, 0, 1] * Dg[:, 1, 0]
        if det.min() <= 1e-3:
            continue
        shapes.append(pts)
    return shapes


def _dense_ref_grid(n: int):
    xs = np.linspace(0.0, 1.0, n)
    U, V = np.meshgrid(xs, xs, indexing="ij")
    return np.column_stack([U.ravel(), V.ravel()])


def _gradient_errors(fit_grad, pts, weights):
    exact = franke_2d_gradient(pts)
    diff = np.linalg.norm(fit_grad - exact, axis=1)
    l2 = float(np.sqrt(np.sum(weights * diff**2)))
    return l2, float(diff.max())


def resilience_case(quad_pts, samples: int = 12):
    """Gradient interpolation errors of Franke on one quad, projected onto
    the Q2 basis (through the bilinear map) and onto the kernel basis (the
    quad treated as a polygon).  Returns dict of L2/Linf errors."""
    ref = _dense_ref_grid(samples)
    vals_q2, grads_q2 = lagrange_basis(2, ref)
    c = quad_pts[[0, 1, 3, 2]]
    vals_q1, grads_q1 = lagrange_basis(1, ref)
    x = vals_q1 @ c
    Dg = np.einsum("qlj,li->qij", grads_q1, c)
    det = Dg[:, 0, 0] * Dg[:, 1, 1] - Dg[:, 0, 1] * Dg[:, 1, 0]
    inv = np.empty_like(Dg)
    inv[:, 0, 0] = Dg[:, 1, 1]
    inv[:, 0, 1] = -Dg[:, 0, 1]
    inv[:, 1, 0] = -Dg[:, 1, 0]
    inv[:, 1, 1] = Dg[:, 0, 0]
    inv /= det[:, None, None]
    gphys = np.einsum("qji,qlj->qli", inv, grads_q2)
    f = franke_2d(x)
    w = np.abs(det) / len(ref)

    coef, *_ = np.linalg.lstsq(vals_q2, f, rcond=None)
    q2_l2, q2_linf = _gradient_errors(np.einsum("qli,l->qi", gphys, coef), x, w)

    from .polygon_basis import kernel_values, monomial_shift_matrix
    from .problems import monomial_gradients, monomial_values
    centers = place_kernel_centers(quad_pts, k_per_vertex=2, offset_factor=1.0)
    A = np.hstack([kernel_values("inverse-distance", centers, x),
                   monomial_values(x)])
    cx, cy = quad_pts.mean(axis=0)
    hh = float(np.max(np.ptp(quad_pts, axis=0)))
    T = np.eye(A.shape[1])
    T[len(centers):, len(centers):] = monomial_shift_matrix(cx, cy, hh)
    At = A @ T
    d = np.linalg.norm(At, axis=0)
    coef_p, *_ = np.linalg.lstsq(At / d, f, rcond=None)
    coef_p = T @ (coef_p / d)
    gk = kernel_gradients("inverse-distance", centers, x)
    gm = monomial_gradients(x)
    fit_grad = (np.einsum("qki,k->qi", gk, coef_p[: len(centers)])
                + np.einsum("qmi,m->qi", gm, coef_p[len(centers):]))
    poly_l2, poly_linf = _gradient_errors(fit_grad, x, w)
    return {"q2_l2": q2_l2, "q2_linf": q2_linf,
            "poly_l2": poly_l2, "poly_linf": poly_linf,
            "ratio_l2": q2_l2 / poly_l2, "ratio_linf": q2_linf / poly_linf}


def run_interpolation_resilience(cfg: ExperimentConfig) -> list:
    """Per-shape gradient interpolation errors on a generated bad-quad set."""
    rows = []
    for i, pts in enumerate(bad_quad_shapes(seed=cfg.seed + 3)):
        case = resilience_case(pts)
        case["shape"] = i
        rows.append(case)
    if cfg.output:
        base = Path(cfg.output)
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "resilience.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            for row in rows:
                w.writerow(row)
    return rows


def run_elasticity(cfg: ExperimentConfig) -> ConvergenceRecord:
    """Elasticity convergence sweep (vector pipeline)."""
    sub = ExperimentConfig(**{**asdict(cfg),
                              "pde": {"kind": "elasticity",
                                      **{k: v for k, v in cfg.pde.items()
                                         if k != "kind"}}})
    return run_convergence(sub)


def _write_outputs(cfg: ExperimentConfig, name: str, rec: ConvergenceRecord):
    if not cfg.output:
        return
    base = Path(cfg.output)
    base.mkdir(parents=True, exist_ok=True)
    rec.write_csv(base / f"{name}_{cfg.basis}.csv")
    summary = {"config": asdict(cfg), "rates": rec.rates}
    (base / f"{name}_{cfg.basis}_summary.json").write_text(
        json.dumps(summary, indent=2))
