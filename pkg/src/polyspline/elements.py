"""Element bases, global degrees of freedom, and local-to-global maps.

Spline-compatible cells carry 9 tensor-product quadratic B-spline functions
whose anchors live on the cells of the one-ring (or, along the mesh
boundary, on boundary edges and corner vertices).  Q2 cells carry the 9
interpolatory Lagrange functions with nodes at vertices, edge midpoints and
the center; Q1 cells the 4 vertex hats.  A local degree of freedom sitting
on an edge or vertex that also belongs to a spline cell is not a global
unknown: it is a fixed combination of the neighboring spline dofs, with
weights given by evaluating the spline basis at the node.  That coupling is
what keeps the mixed basis C0 across the spline / Q2 interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotCompatible
from .mesh import CellClass, CellTag, PolyMesh, edge_key, one_ring_grid
from .splines import (
    INTERIOR,
    OPEN_BOTH,
    OPEN_HI,
    OPEN_LO,
    lagrange_basis,
    lagrange_nodes,
    spline_basis_2d,
)

WEIGHT_TOL = 1e-13


@dataclass
class Dof:
    kind: str          # 'spline-cell' | 'spline-edge' | 'spline-vertex' | 'node'
    entity: tuple      # ('scell', f) | ('sedge', key) | ('svert', v) | ('nvert', v) | ...
    anchor: np.ndarray
    on_boundary: bool


@dataclass
class DofTable:
    dofs: list = field(default_factory=list)
    index: dict = field(default_factory=dict)

    def add(self, kind, entity, anchor, on_boundary) -> int:
        if entity in self.index:
            return self.index[entity]
        i = len(self.dofs)
        self.dofs.append(Dof(kind, entity, np.asarray(anchor, float), bool(on_boundary)))
        self.index[entity] = i
        return i

    def __len__(self):
        return len(self.dofs)

    def lookup(self, entity):
        return self.index.get(entity)

    def anchors(self) -> np.ndarray:
        return np.array([d.anchor for d in self.dofs])

    def boundary_ids(self) -> np.ndarray:
        return np.array([i for i, d in enumerate(self.dofs) if d.on_boundary], dtype=np.int64)

    def count(self, kind_prefix: str) -> int:
        return sum(1 for d in self.dofs if d.kind.startswith(kind_prefix))


@dataclass
class ElementBasis:
    """Local basis of one quad cell plus its sparse local-to-global rows."""

    cell: int
    family: str                  # 'spline' | 'lagrange'
    order: int                   # 2 for spline/Q2, 1 for Q1
    variant: tuple | None        # (vx, vy) knot variants for spline cells
    rows: list                   # per local dof: (ids array, weights array)
    identity_cols: np.ndarray | None  # set when every row is one unit entry

    @property
    def n_local(self) -> int:
        return len(self.rows)

    def eval(self, points):
        """Reference values (n, m) and parametric gradients (n, m, 2)."""
        if self.family == "spline":
            return spline_basis_2d(self.variant[0], self.variant[1], points)
        return lagrange_basis(self.order, points)

    def gather(self, u: np.ndarray, r: int = 1) -> np.ndarray:
        """Local coefficients of a global dof vector (m,) or (m, r)."""
        m = self.n_local
        if r == 1:
            out = np.zeros(m)
            for l, (ids, w) in enumerate(self.rows):
                out[l] = w @ u[ids]
            return out
        out = np.zeros((m, r))
        for l, (ids, w) in enumerate(self.rows):
            for a in range(r):
                out[l, a] = w @ u[r * ids + a]
        return out

    def global_column(self, dof: int) -> np.ndarray:
        """Local coefficient vector representing global dof ``dof`` alone."""
        col = np.zeros(self.n_local)
        for l, (ids, w) in enumerate(self.rows):
            hit = np.flatnonzero(ids == dof)
            if hit.size:
                col[l] = w[hit].sum()
        return col


# slot -> anchor mapping per 1D variant: ('cell', offset) or ('side', end)
_SLOT_ANCHORS = {
    INTERIOR: (("cell", -1), ("cell", 0), ("cell", 1)),
    OPEN_LO: (("side", 0), ("cell", 0), ("cell", 1)),
    OPEN_HI: (("cell", -1), ("cell", 0), ("side", 1)),
    OPEN_BOTH: (("side", 0), ("cell", 0), ("side", 1)),
}


def _variant_from_open(lo: bool, hi: bool) -> int:
    if lo and hi:
        return OPEN_BOTH
    if lo:
        return OPEN_LO
    if hi:
        return OPEN_HI
    return INTERIOR


def spline_cell_layout(mesh: PolyMesh, f: int):
    """One-ring grid, knot variants and the 9 slot anchor entities of a
    spline-compatible cell.  Raises NotCompatible if the ring is irregular.

    Slot entities are ('scell', face), ('sedge', edge_key) or ('svert', v),
    ordered l = 3*sy + sx to match the tensor basis.
    """
    grid = one_ring_grid(mesh, f)
    if grid is None:
        raise NotCompatible(f"cell {f} one-ring is not a regular 3x3 grid")
    cells, lat, open_sides = grid
    vx = _variant_from_open(open_sides["x0"], open_sides["x1"])
    vy = _variant_from_open(open_sides["y0"], open_sides["y1"])

    entities = []
    ax = _SLOT_ANCHORS[vx]
    ay = _SLOT_ANCHORS[vy]
    for sy in range(3):
        ky, oy = ay[sy]
        for sx in range(3):
            kx, ox = ax[sx]
            if kx == "cell" and ky == "cell":
                entities.append(("scell", cells[1 + ox][1 + oy]))
            elif kx == "side" and ky == "cell":
                lx = 1 if ox == 0 else 2
                a, b = lat[lx][1 + oy], lat[lx][2 + oy]
                entities.append(("sedge", edge_key(a, b)))
            elif kx == "cell" and ky == "side":
                ly = 1 if oy == 0 else 2
                a, b = lat[1 + ox][ly], lat[2 + ox][ly]
                entities.append(("sedge", edge_key(a, b)))
            else:
                lx = 1 if ox == 0 else 2
                ly = 1 if oy == 0 else 2
                entities.append(("svert", lat[lx][ly]))
    return (vx, vy), entities


def _corner_params(mesh: PolyMesh, f: int, v: int):
    i = mesh.faces[f].index(v)
    return [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)][i]


def _edge_mid_params(mesh: PolyMesh, f: int, key):
    loop = mesh.faces[f]
    for i in range(4):
        if edge_key(loop[i], loop[(i + 1) % 4]) == key:
            return [(0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5)][i]
    raise KeyError(f"edge {key} not in face {f}")


@dataclass
class SpaceBasis:
    """Dof table plus per-quad element bases for one discretization mode."""

    mesh: PolyMesh
    classes: CellClass
    mode: str                      # 'polyspline' | 'q2' | 'q1'
    order: int
    dofs: DofTable
    elements: dict                 # face -> ElementBasis
    spline_vertices: set
    spline_edges: set
    layouts: dict                  # spline face -> ((vx, vy), entities)

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)


def build_space_basis(mesh: PolyMesh, classes: CellClass, mode: str = "polyspline") -> SpaceBasis:
    """Enumerate global dofs and build each quad cell's element basis.

    In 'q1'/'q2' mode every quad is a Lagrange element regardless of its
    classification tag; 'polyspline' follows the tags.
    """
    order = 1 if mode == "q1" else 2
    tags = classes.tags
    spline_faces = [] if mode != "polyspline" else [int(f) for f in classes.spline_cells]

    layouts = {}
    for f in spline_faces:
        layouts[f] = spline_cell_layout(mesh, f)

    spline_vertices = set()
    spline_edges = set()
    for f in spline_faces:
        loop = mesh.faces[f]
        spline_vertices.update(loop)
        for i in range(4):
            spline_edges.add(edge_key(loop[i], loop[(i + 1) % 4]))

    dofs = DofTable()

    # spline dofs first, in (kind, entity) sorted order for determinism
    ents = sorted({e for f in spline_faces for e in layouts[f][1]})
    for ent in ents:
        if ent[0] == "scell":
            dofs.add("spline-cell", ent, mesh.face_centroid(ent[1]), False)
    for ent in ents:
        if ent[0] == "sedge":
            a, b = ent[1]
            mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
            dofs.add("spline-edge", ent, mid, True)
    for ent in ents:
        if ent[0] == "svert":
            dofs.add("spline-vertex", ent, mesh.vertices[ent[1]], True)

    # Lagrange node dofs on the remaining quads
    quad_faces = [f for f in range(mesh.n_faces) if len(mesh.faces[f]) == 4
                  and tags[f] != CellTag.POLYGON]
    lagrange_faces = [f for f in quad_faces if mode != "polyspline" or tags[f] != CellTag.SPLINE]
    for f in lagrange_faces:
        loop = mesh.faces[f]
        for v in loop:
            if v not in spline_vertices:
                dofs.add("node-vertex", ("nvert", v), mesh.vertices[v],
                         bool(mesh.vertex_boundary[v]))
        if order == 2:
            for i in range(4):
                key = edge_key(loop[i], loop[(i + 1) % 4])
                if key not in spline_edges:
                    mid = 0.5 * (mesh.vertices[key[0]] + mesh.vertices[key[1]])
                    dofs.add("node-edge", ("nedge", key), mid,
                             mesh.is_boundary_edge(*key))
            dofs.add("node-cell", ("ncell", f), mesh.face_centroid(f), False)

    # interface weights are shared between all cells touching an entity
    iface_cache = {}

    def interface_row(entity_kind, entity):
        key = (entity_kind, entity)
        if key in iface_cache:
            return iface_cache[key]
        if entity_kind == "vertex":
            owner = min(f for f in mesh.vertex_faces(entity) if f in layouts)
            uv = _corner_params(mesh, owner, entity)
        else:
            a, b = entity
            fa = set(mesh.vertex_faces(a)) & set(mesh.vertex_faces(b))
            owner = min(f for f in fa if f in layouts)
            uv = _edge_mid_params(mesh, owner, entity)
        vals, _ = spline_basis_2d(*layouts[owner][0], [uv])
        ids = np.array([dofs.index[e] for e in layouts[owner][1]], dtype=np.int64)
        w = vals[0]
        keep = np.abs(w) > WEIGHT_TOL
        row = (ids[keep], w[keep].copy())
        iface_cache[key] = row
        return row

    elements = {}
    for f in spline_faces:
        (vx, vy), entities = layouts[f]
        ids = np.array([dofs.index[e] for e in entities], dtype=np.int64)
        rows = [(np.array([i]), np.array([1.0])) for i in ids]
        elements[f] = ElementBasis(cell=f, family="spline", order=2,
                                   variant=(vx, vy), rows=rows, identity_cols=ids)

    for f in lagrange_faces:
        loop = mesh.faces[f]
        corner = {0: loop[0], 2: loop[1], 8: loop[2], 6: loop[3]} if order == 2 else {
            0: loop[0], 1: loop[1], 3: loop[2], 2: loop[3]}
        rows = []
        identity = []
        if order == 1:
            for l in range(4):
                v = corner[l]
                i = dofs.index[("nvert", v)]
                rows.append((np.array([i]), np.array([1.0])))
                identity.append(i)
        else:
            edge_of_node = {1: (loop[0], loop[1]), 5: (loop[1], loop[2]),
                            7: (loop[2], loop[3]), 3: (loop[3], loop[0])}
            for l in range(9):
                if l == 4:
                    i = dofs.index[("ncell", f)]
                    rows.append((np.array([i]), np.array([1.0])))
                    if identity is not None:
                        identity.append(i)
                elif l in corner:
                    v = corner[l]
                    if v in spline_vertices:
                        rows.append(interface_row("vertex", v))
                        identity = None
                    else:
                        i = dofs.index[("nvert", v)]
                        rows.append((np.array([i]), np.array([1.0])))
                        if identity is not None:
                            identity.append(i)
                else:
                    key = edge_key(*edge_of_node[l])
                    if key in spline_edges:
                        rows.append(interface_row("edge", key))
                        identity = None
                    else:
                        i = dofs.index[("nedge", key)]
                        rows.append((np.array([i]), np.array([1.0])))
                        if identity is not None:
                            identity.append(i)
        ident = np.array(identity, dtype=np.int64) if identity is not None else None
        elements[f] = ElementBasis(cell=f, family="lagrange", order=order,
                                   variant=None, rows=rows, identity_cols=ident)

    return SpaceBasis(mesh=mesh, classes=classes, mode=mode, order=order,
                      dofs=dofs, elements=elements,
                      spline_vertices=spline_vertices, spline_edges=spline_edges,
                      layouts=layouts)


def q2_node_entities(mesh: PolyMesh, f: int):
    """Entity of each of the 9 Q2 nodes of quad f (tensor order)."""
    loop = mesh.faces[f]
    ents = {}
    corner = {0: loop[0], 2: loop[1], 8: loop[2], 6: loop[3]}
    edges = {1: (loop[0], loop[1]), 5: (loop[1], loop[2]),
             7: (loop[2], loop[3]), 3: (loop[3], loop[0])}
    for l in range(9):
        if l == 4:
            ents[l] = ("ncell", f)
        elif l in corner:
            ents[l] = ("nvert", corner[l])
        else:
            ents[l] = ("nedge", edge_key(*edges[l]))
    return ents


def node_reference_params(order: int):
    return lagrange_nodes(order)
