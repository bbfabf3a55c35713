"""Mesh preprocessing: star-shaped polygons, separation, and refinement.

Polygon cells must be star-shaped (their kernel non-empty) so that they can
be fan-triangulated for quadrature and refined by concentric quad rings.
Inputs that violate this are repaired by merging a polygon with the faces
its barycenter-to-vertex segments cross, or, when merging cannot succeed,
by triangulating and regrouping.  Separation (no two polygons adjacent, no
polygon on the boundary) is restored by surrounding offending polygons with
one polar ring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MergeFailed, NotStarShaped
from .mesh import (
    PolyMesh,
    build_adjacency,
    compact_mesh,
    edge_key,
    merge_faces,
    polygon_area,
)

KERNEL_REL_TOL = 1e-12


@dataclass
class StarShapeInfo:
    """Kernel polygon (None when empty) and a representative center."""

    kernel: np.ndarray | None
    chosen_center: np.ndarray | None

    @property
    def is_star_shaped(self) -> bool:
        return self.kernel is not None


def _clip_halfplane(poly, a, b, eps):
    """Keep the part of ``poly`` on the left of the directed line a->b."""
    d = b - a
    out = []
    n = len(poly)
    if n == 0:
        return poly
    side = [(d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0])) for p in poly]
    for i in range(n):
        j = (i + 1) % n
        pi, pj = poly[i], poly[j]
        si, sj = side[i], side[j]
        if si >= -eps:
            out.append(pi)
        if (si > eps and sj < -eps) or (si < -eps and sj > eps):
            t = si / (si - sj)
            out.append(pi + t * (pj - pi))
    return out


def _loop_centroid(points):
    """Area centroid of a simple CCW polygon."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-300:
        return p.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def polygon_kernel(points) -> StarShapeInfo:
    """Kernel of a simple CCW polygon by successive half-plane clipping.

    The kernel is the intersection of the inward half-planes of all edges;
    it is non-empty exactly when the polygon is star-shaped.  Kernels of
    relative area below 1e-12 are reported empty.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    scale = float(np.max(np.ptp(pts, axis=0)))
    eps = 1e-12 * max(scale, 1.0)
    lo = pts.min(axis=0) - 0.125 * scale
    hi = pts.max(axis=0) + 0.125 * scale
    poly = [np.array([lo[0], lo[1]]), np.array([hi[0], lo[1]]),
            np.array([hi[0], hi[1]]), np.array([lo[0], hi[1]])]
    for i in range(n):
        poly = _clip_halfplane(poly, pts[i], pts[(i + 1) % n], eps)
        if len(poly) < 3:
            return StarShapeInfo(kernel=None, chosen_center=None)
    kernel = np.asarray(poly)
    if polygon_area(kernel) < KERNEL_REL_TOL * abs(polygon_area(pts)):
        return StarShapeInfo(kernel=None, chosen_center=None)
    return StarShapeInfo(kernel=kernel, chosen_center=_loop_centroid(kernel))


def point_in_polygon(point, points) -> bool:
    """Strict point-in-polygon test (boundary counts as inside)."""
    x, y = point
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    inside = False
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # on-edge check
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) < 1e-14 and min(x1, x2) - 1e-14 <= x <= max(x1, x2) + 1e-14 \
                and min(y1, y2) - 1e-14 <= y <= max(y1, y2) + 1e-14:
            return True
        if (y1 > y) != (y2 > y):
            xt = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if x < xt:
                inside = not inside
    return inside


def _proper_cross(p, q, a, b) -> bool:
    """True when open segments pq and ab properly intersect."""
    def orient(u, v, w):
        return (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])

    o1, o2 = orient(p, q, a), orient(p, q, b)
    o3, o4 = orient(a, b, p), orient(a, b, q)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def _crossed_edges(points) -> list[int]:
    """Indices of polygon edges crossed by barycenter-to-vertex segments."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    b = pts.mean(axis=0)
    crossed = set()
    for i in range(n):
        v = pts[i]
        for e in range(n):
            if e == i or (e + 1) % n == i:
                continue
            if _proper_cross(b, v, pts[e], pts[(e + 1) % n]):
                crossed.add(e)
    return sorted(crossed)


def _ear_clip(points):
    """Triangulate a simple CCW polygon; returns index triples."""
    idx = list(range(len(points)))
    pts = np.asarray(points, dtype=float)
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise MergeFailed("ear clipping failed on a degenerate polygon")
        n = len(idx)
        clipped = False
        for k in range(n):
            a, b, c = idx[k - 1], idx[k], idx[(k + 1) % n]
            pa, pb, pc = pts[a], pts[b], pts[c]
            if polygon_area([pa, pb, pc]) <= 1e-14:
                continue
            ok = True
            for j in idx:
                if j in (a, b, c):
                    continue
                if _point_in_triangle(pts[j], pa, pb, pc):
                    ok = False
                    break
            if ok:
                tris.append((a, b, c))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise MergeFailed("no ear found; polygon may be non-simple")
    tris.append(tuple(idx))
    return tris


def _point_in_triangle(p, a, b, c):
    d1 = polygon_area([p, a, b])
    d2 = polygon_area([p, b, c])
    d3 = polygon_area([p, c, a])
    return (d1 >= -1e-14) and (d2 >= -1e-14) and (d3 >= -1e-14)


def make_star_shaped(mesh: PolyMesh, max_iterations: int = 8) -> PolyMesh:
    """Merge (and if needed split) polygon cells until all are star-shaped.

    Returns a new mesh together with nothing else; the per-polygon iteration
    counts are available via :func:`star_shape_report` for diagnostics.
    Raises MergeFailed when repair consumes the whole mesh.
    """
    mesh, _ = _make_star_shaped_impl(mesh, max_iterations)
    return mesh


def star_shape_report(mesh: PolyMesh, max_iterations: int = 8):
    """Same as make_star_shaped but also reports max merge iterations used."""
    return _make_star_shaped_impl(mesh, max_iterations)


def _find_non_star(mesh: PolyMesh):
    for f in range(mesh.n_faces):
        if len(mesh.faces[f]) == 4:
            continue
        if not polygon_kernel(mesh.face_points(f)).is_star_shaped:
            return f
    return None


def _make_star_shaped_impl(mesh: PolyMesh, max_iterations: int):
    worst = 0
    guard = 0
    while True:
        guard += 1
        if guard > 10 * max(mesh.n_faces, 1):
            raise MergeFailed("star-shape repair did not terminate")
        f = _find_non_star(mesh)
        if f is None:
            return mesh, worst
        iters = 0
        while True:
            pts = mesh.face_points(f)
            if polygon_kernel(pts).is_star_shaped:
                break
            iters += 1
            if iters > max_iterations:
                mesh = _triangulate_and_regroup(mesh, f)
                break
            crossed = _crossed_edges(pts)
            loop = mesh.faces[f]
            nbrs = set()
            hit_boundary = False
            for e in crossed:
                a, b = loop[e], loop[(e + 1) % len(loop)]
                g = mesh.face_across(a, b)
                if g is None:
                    hit_boundary = True
                else:
                    nbrs.add(g)
            if hit_boundary or not nbrs:
                mesh = _triangulate_and_regroup(mesh, f)
                break
            if len(nbrs) + 1 >= mesh.n_faces:
                raise MergeFailed("merging consumed the entire mesh")
            mesh = merge_faces(mesh, {f} | nbrs)
            # the merged polygon is the last face of the rebuilt mesh
            f = mesh.n_faces - 1
        worst = max(worst, iters)


def _triangulate_and_regroup(mesh: PolyMesh, f: int) -> PolyMesh:
    """Split polygon ``f`` into triangles, then greedily merge adjacent
    triangles back into star-shaped polygons."""
    loop = mesh.faces[f]
    pts = mesh.face_points(f)
    tris = _ear_clip(pts)
    tri_faces = [[loop[i] for i in t] for t in tris]

    # greedy merge: grow groups of triangles while the union stays one
    # star-shaped simple loop
    edges = {}
    for ti, t in enumerate(tri_faces):
        for i in range(3):
            edges.setdefault(edge_key(t[i], t[(i + 1) % 3]), []).append(ti)
    adj = {ti: set() for ti in range(len(tri_faces))}
    for lst in edges.values():
        if len(lst) == 2:
            adj[lst[0]].add(lst[1])
            adj[lst[1]].add(lst[0])

    def union_loop(group):
        border = {}
        for ti in group:
            t = tri_faces[ti]
            for i in range(3):
                a, b = t[i], t[(i + 1) % 3]
                other = [x for x in edges[edge_key(a, b)] if x != ti]
                if not other or other[0] not in group:
                    if a in border:
                        return None
                    border[a] = b
        start = min(border)
        out = [start]
        cur = border[start]
        while cur != start:
            out.append(cur)
            cur = border[cur]
            if len(out) > len(border):
                return None
        return out if len(out) == len(border) else None

    used = set()
    groups = []
    for seed in range(len(tri_faces)):
        if seed in used:
            continue
        group = {seed}
        frontier = list(adj[seed])
        while frontier:
            cand = frontier.pop()
            if cand in used or cand in group:
                continue
            trial = group | {cand}
            lp = union_loop(trial)
            if lp is not None and polygon_kernel(mesh.vertices[lp]).is_star_shaped:
                group = trial
                frontier.extend(adj[cand])
        used |= group
        groups.append(union_loop(group))

    new_faces = [list(l) for g, l in enumerate(mesh.faces) if g != f]
    new_faces.extend(groups)
    return compact_mesh(mesh.vertices, new_faces)


# ----------------------------------------------------------------------
# refinement
# ----------------------------------------------------------------------

def _edge_param_from(key, a, ts):
    """Canonical-direction split params converted to run from vertex a.

    Values are rounded to 12 digits so that the t <-> 1-t conversion is an
    exact round trip and split propagation reaches a fixpoint.
    """
    if key[0] == a:
        return sorted(round(t, 12) for t in ts)
    return sorted(round(1.0 - t, 12) for t in ts)


def _propagate_splits(mesh: PolyMesh, splits: dict) -> dict:
    """Grow edge split sets until every quad can be cut by straight strips
    (opposite edges carry identical parameters)."""
    splits = {k: set(v) for k, v in splits.items()}
    queue = list(range(mesh.n_faces))
    while queue:
        f = queue.pop()
        loop = mesh.faces[f]
        if len(loop) != 4:
            continue
        v0, v1, v2, v3 = loop
        pairs = [((v0, v1), (v3, v2)), ((v0, v3), (v1, v2))]
        for (a1, b1), (a2, b2) in pairs:
            k1, k2 = edge_key(a1, b1), edge_key(a2, b2)
            t1 = set(_edge_param_from(k1, a1, splits.get(k1, ())))
            t2 = set(_edge_param_from(k2, a2, splits.get(k2, ())))
            union = t1 | t2
            if union == t1 and union == t2:
                continue
            for key, start, cur in ((k1, a1, t1), (k2, a2, t2)):
                if union != cur:
                    if key[0] == start:
                        splits[key] = {round(t, 12) for t in union}
                    else:
                        splits[key] = {round(1.0 - t, 12) for t in union}
                    # requeue both faces incident to the updated edge
                    for g in (mesh.face_across(key[0], key[1]),
                              mesh.face_across(key[1], key[0])):
                        if g is not None:
                            queue.append(g)
    return splits


def _polar_faces(loop_ids, loop_pts, center, rings, new_vertex):
    """Faces of the polar refinement of one polygon: ``rings`` bands of
    quads plus the central polygon.  ``new_vertex(p)`` allocates a vertex."""
    n = len(loop_ids)
    layers = [list(loop_ids)]
    for k in range(rings, 0, -1):
        t = k / (rings + 1.0)
        layer = [new_vertex(center + t * (p - center)) for p in loop_pts]
        layers.append(layer)
    faces = []
    for outer, inner in zip(layers[:-1], layers[1:]):
        for i in range(n):
            j = (i + 1) % n
            faces.append([outer[i], outer[j], inner[j], inner[i]])
    faces.append(list(layers[-1]))
    return faces


def _apply_refinement(mesh: PolyMesh, splits: dict, polar_targets: dict,
                      rings: int) -> PolyMesh:
    """Rebuild the mesh with the given edge splits; quads are strip/tensor
    cut, polygons in ``polar_targets`` (face -> star center) are polar
    refined, other polygons absorb the split points into their loops."""
    verts = [np.asarray(v, float) for v in mesh.vertices]
    edge_vertex = {}

    def new_vertex(p):
        verts.append(np.asarray(p, float))
        return len(verts) - 1

    for key, ts in splits.items():
        a, b = key
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        edge_vertex[key] = {
            round(t, 12): new_vertex(pa + t * (pb - pa)) for t in sorted(ts)
        }

    def edge_chain(a, b):
        """Vertex ids along edge a->b, interior split points only."""
        key = edge_key(a, b)
        if key not in edge_vertex:
            return []
        items = sorted(edge_vertex[key].items())
        ids = [v for _, v in items]
        return ids if key[0] == a else ids[::-1]

    faces = []
    for f in range(mesh.n_faces):
        loop = mesh.faces[f]
        n = len(loop)
        if f in polar_targets:
            chain = []
            pts = []
            for i in range(n):
                a, b = loop[i], loop[(i + 1) % n]
                chain.append(a)
                pts.append(mesh.vertices[a])
                for v in edge_chain(a, b):
                    chain.append(v)
                    pts.append(verts[v])
            faces.extend(_polar_faces(chain, np.asarray(pts), polar_targets[f],
                                      rings, new_vertex))
            continue
        has_split = any(edge_key(loop[i], loop[(i + 1) % n]) in edge_vertex
                        and edge_vertex[edge_key(loop[i], loop[(i + 1) % n])]
                        for i in range(n))
        if n != 4:
            if not has_split:
                faces.append(list(loop))
            else:
                chain = []
                for i in range(n):
                    a, b = loop[i], loop[(i + 1) % n]
                    chain.append(a)
                    chain.extend(edge_chain(a, b))
                faces.append(chain)
            continue
        if not has_split:
            faces.append(list(loop))
            continue
        v0, v1, v2, v3 = loop
        k_bottom = edge_key(v0, v1)
        us = sorted({round(t, 12) for t in
                     _edge_param_from(k_bottom, v0, splits.get(k_bottom, ()))})
        k_left = edge_key(v0, v3)
        vs = sorted({round(t, 12) for t in
                     _edge_param_from(k_left, v0, splits.get(k_left, ()))})
        us_full = [0.0] + us + [1.0]
        vs_full = [0.0] + vs + [1.0]
        corners = mesh.face_points(f)

        def bilinear(u, v):
            return ((1 - u) * (1 - v) * corners[0] + u * (1 - v) * corners[1]
                    + u * v * corners[2] + (1 - u) * v * corners[3])

        nu, nv = len(us_full), len(vs_full)
        lattice = np.empty((nu, nv), dtype=np.int64)
        bottom = [v0] + edge_chain(v0, v1) + [v1]
        top = [v3] + edge_chain(v3, v2) + [v2]
        left = [v0] + edge_chain(v0, v3) + [v3]
        right = [v1] + edge_chain(v1, v2) + [v2]
        for i in range(nu):
            for j in range(nv):
                if j == 0:
                    lattice[i, j] = bottom[i]
                elif j == nv - 1:
                    lattice[i, j] = top[i]
                elif i == 0:
                    lattice[i, j] = left[j]
                elif i == nu - 1:
                    lattice[i, j] = right[j]
                else:
                    lattice[i, j] = new_vertex(bilinear(us_full[i], vs_full[j]))
        for i in range(nu - 1):
            for j in range(nv - 1):
                faces.append([lattice[i, j], lattice[i + 1, j],
                              lattice[i + 1, j + 1], lattice[i, j + 1]])

    return compact_mesh(np.asarray(verts), faces)


def polar_refine(mesh: PolyMesh, face: int, rings: int = 1,
                 target_edge_len: float | None = None) -> PolyMesh:
    """Surround polygon ``face`` with ``rings`` concentric quad bands.

    Boundary edges are split evenly so the segment length is as close as
    possible to ``target_edge_len`` (default: the mesh average edge length);
    splits propagate to quad neighbors to keep the mesh conforming.  The
    central polygon is a scaled copy of the (split) outline.
    """
    if rings < 1:
        raise ValueError("rings must be >= 1")
    pts = mesh.face_points(face)
    info = polygon_kernel(pts)
    if not info.is_star_shaped:
        raise NotStarShaped(f"face {face} has an empty kernel")
    target = target_edge_len if target_edge_len is not None else mesh.average_edge_length()

    splits = {}
    loop = mesh.faces[face]
    n = len(loop)
    for i in range(n):
        a, b = loop[i], loop[(i + 1) % n]
        length = mesh.edge_length(a, b)
        s = max(1, round(length / target))
        if s > 1:
            key = edge_key(a, b)
            splits[key] = {k / s for k in range(1, s)}
    splits = _propagate_splits(mesh, splits)
    return _apply_refinement(mesh, splits, {face: info.chosen_center}, rings)


def ensure_separation(mesh: PolyMesh, max_rounds: int = 4) -> PolyMesh:
    """Polar-refine polygons that touch the boundary or another polygon
    until the separation invariant holds."""
    for _ in range(max_rounds):
        bad = _separation_violators(mesh)
        if not bad:
            return mesh
        mesh = polar_refine(mesh, bad[0], rings=1)
    if _separation_violators(mesh):
        raise NotStarShaped("separation could not be restored")
    return mesh


def _separation_violators(mesh: PolyMesh):
    polys = [f for f in range(mesh.n_faces) if len(mesh.faces[f]) != 4]
    pset = set(polys)
    bad = []
    for f in polys:
        touch = False
        for v in mesh.faces[f]:
            if mesh.vertex_boundary[v]:
                touch = True
            for g in mesh.vertex_faces(v):
                if g != f and g in pset:
                    touch = True
        if touch:
            bad.append(f)
    return bad


def uniform_refine(mesh: PolyMesh) -> PolyMesh:
    """One global refinement step: quads split in four at edge midpoints
    and the centroid; polygons polar refined with midpoint edge splits and
    one quad ring."""
    splits = {key: {0.5} for key in mesh.edges()}
    targets = {}
    for f in range(mesh.n_faces):
        if len(mesh.faces[f]) != 4:
            info = polygon_kernel(mesh.face_points(f))
            if not info.is_star_shaped:
                raise NotStarShaped(f"polygon {f} has an empty kernel")
            targets[f] = info.chosen_center
    return _apply_refinement(mesh, splits, targets, rings=1)
