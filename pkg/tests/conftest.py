import numpy as np
import pytest

from polyspline.mesh import build_adjacency, grid_mesh, merge_faces


@pytest.fixture(scope="session")
def hexagon_hybrid():
    """8x8 unit grid with the two central cells merged into a hexagon."""
    n = 8
    mesh = grid_mesh(n)
    c = (n // 2 - 1) * n + n // 2 - 1
    return merge_faces(mesh, [c, c + 1])


@pytest.fixture(scope="session")
def cross_hybrid():
    """9x9 unit grid with the five central cells merged into a cross."""
    n = 9
    mesh = grid_mesh(n)
    cc = (n // 2) * n + n // 2
    return merge_faces(mesh, [cc, cc - 1, cc + 1, cc - n, cc + n])


@pytest.fixture(scope="session")
def pentagon_hybrid():
    """Quad ring around a central pentagon (all cells hand-built)."""
    outer = [(np.cos(a), np.sin(a)) for a in np.linspace(0, 2 * np.pi, 5, endpoint=False)]
    inner = [(0.45 * x, 0.45 * y) for x, y in outer]
    verts = np.array(outer + inner)
    faces = []
    for i in range(5):
        j = (i + 1) % 5
        faces.append([i, j, 5 + j, 5 + i])
    faces.append([5, 6, 7, 8, 9])
    return build_adjacency(verts, faces)
