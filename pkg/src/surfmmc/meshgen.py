"""Synthetic benchmark surfaces used by the demos and the test suite.

These generators build the fixture geometries (saddle, torus, cylinder,
disk, hemisphere, flat plates); they are not a general meshing tool.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def grid_patch(nx: int, ny: int, height=None, x_range=(-1.0, 1.0),
               y_range=(-1.0, 1.0), mirror_symmetric: bool = False) -> TriMesh:
    """Structured (nx x ny)-cell rectangular patch, optionally lifted by z = height(x, y).

    With mirror_symmetric=True the cell diagonals are mirrored about x = 0 so
    the triangulation maps onto itself under x -> -x (nx must be even).
    """
    xs = np.linspace(*x_range, nx + 1)
    ys = np.linspace(*y_range, ny + 1)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    z = height(xg, yg) if height is not None else np.zeros_like(xg)
    verts = np.column_stack([xg.ravel(), yg.ravel(), z.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if mirror_symmetric:
                if nx % 2 != 0:
                    raise ValueError("mirror_symmetric requires even nx")
                diag = (i >= nx // 2)
            else:
                diag = (i + j) % 2 == 0
            if diag:
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]
    return TriMesh(verts, np.asarray(tris))


def grid_vertex_id(nx: int, ny: int, i: int, j: int) -> int:
    return i * (ny + 1) + j


def saddle(n: int = 40, curvature: float = 0.3) -> TriMesh:
    """Saddle-shaped patch z = curvature (x^2 - y^2) over [-1, 1]^2, mirror-symmetric."""
    return grid_patch(n, n, height=lambda x, y: curvature * (x * x - y * y),
                      mirror_symmetric=True)


def torus(n_minor: int = 40, n_major: int = 50, r_minor: float = 0.4,
          r_major: float = 1.0) -> TriMesh:
    """Closed torus; vertex (i, j) = minor angle i, major angle j."""
    verts = np.empty((n_minor * n_major, 3))
    for i in range(n_minor):
        phi = 2 * np.pi * i / n_minor
        for j in range(n_major):
            u = 2 * np.pi * j / n_major
            rad = r_major + r_minor * np.cos(phi)
            verts[i * n_major + j] = (rad * np.cos(u), rad * np.sin(u),
                                      r_minor * np.sin(phi))

    def vid(i, j):
        return (i % n_minor) * n_major + (j % n_major)

    tris = []
    for i in range(n_minor):
        for j in range(n_major):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris += [[a, b, c], [a, c, d]]
    return TriMesh(verts, np.asarray(tris))


def torus_vertex_id(n_minor: int, n_major: int, i: int, j: int) -> int:
    return (i % n_minor) * n_major + (j % n_major)


def cylinder(n_around: int = 24, n_along: int = 12, radius: float = 1.0,
             length: float = 2.0, hole_cells=None) -> TriMesh:
    """Open cylinder along z; vertex (i, j) = angle index i, axial index j.

    hole_cells: optional (i0, i1, j0, j1) half-open cell range whose triangles
    are removed, punching a rectangular hole in the wall (tee-joint fixture).
    """
    verts = np.empty((n_around * (n_along + 1), 3))
    for i in range(n_around):
        th = 2 * np.pi * i / n_around
        for j in range(n_along + 1):
            verts[i * (n_along + 1) + j] = (radius * np.cos(th),
                                            radius * np.sin(th),
                                            length * j / n_along)

    def vid(i, j):
        return (i % n_around) * (n_along + 1) + j

    tris = []
    for i in range(n_around):
        for j in range(n_along):
            if hole_cells is not None:
                i0, i1, j0, j1 = hole_cells
                if i0 <= i < i1 and j0 <= j < j1:
                    continue
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris += [[a, b, c], [a, c, d]]
    tris = np.asarray(tris)
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(verts[used], remap[tris])


def cylinder_vertex_id(n_around: int, n_along: int, i: int, j: int) -> int:
    return (i % n_around) * (n_along + 1) + j


def disk(n_rings: int = 10, radius: float = 1.0) -> TriMesh:
    """Near-equilateral triangulated disk: ring k carries 6k vertices.

    Vertex 0 is the center; the boundary ring starts at angle 0, so the
    smallest boundary index sits at (radius, 0).
    """
    verts = [(0.0, 0.0, 0.0)]
    ring_start = [0]
    for k in range(1, n_rings + 1):
        ring_start.append(len(verts))
        r = radius * k / n_rings
        for t in range(6 * k):
            ang = 2 * np.pi * t / (6 * k)
            verts.append((r * np.cos(ang), r * np.sin(ang), 0.0))

    tris = []
    # center fan
    for t in range(6):
        tris.append([0, 1 + t, 1 + (t + 1) % 6])
    # annulus strips, merged by angle
    for k in range(1, n_rings):
        inner, outer = ring_start[k], ring_start[k + 1]
        ni, no = 6 * k, 6 * (k + 1)
        ai = 2 * np.pi * np.arange(ni + 1) / ni
        ao = 2 * np.pi * np.arange(no + 1) / no
        i = j = 0
        while i < ni or j < no:
            take_outer = (j < no) and (i == ni or ao[j + 1] <= ai[i + 1])
            if take_outer:
                tris.append([outer + j % no, outer + (j + 1) % no, inner + i % ni])
                j += 1
            else:
                tris.append([inner + i % ni, outer + j % no, inner + (i + 1) % ni])
                i += 1
    return TriMesh(np.asarray(verts), np.asarray(tris))


def hemisphere(n_rings: int = 28) -> TriMesh:
    """Unit upper hemisphere via inverse stereographic projection of a disk mesh.

    The boundary lands exactly on the equator; triangle quality follows the
    source disk mesh.
    """
    flat = disk(n_rings)
    u, v = flat.vertices[:, 0], flat.vertices[:, 1]
    s = u * u + v * v
    verts = np.column_stack([2 * u, 2 * v, 1 - s]) / (1 + s)[:, None]
    return TriMesh(verts, flat.triangles)


def icosahedron() -> TriMesh:
    phi = (1 + np.sqrt(5)) / 2
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=float)
    verts /= np.linalg.norm(verts[0])
    tris = np.array([
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ])
    return TriMesh(verts, tris)


def triangle_fan(n: int = 6) -> TriMesh:
    """Flat fan of n triangles around one interior vertex (vertex 0)."""
    verts = [(0.0, 0.0, 0.0)]
    for t in range(n):
        ang = 2 * np.pi * t / n
        verts.append((np.cos(ang), np.sin(ang), 0.0))
    tris = [[0, 1 + t, 1 + (t + 1) % n] for t in range(n)]
    return TriMesh(np.asarray(verts), np.asarray(tris))
