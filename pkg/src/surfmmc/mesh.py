"""Indexed triangle surfaces: loading, validation, topology, cutting and hole filling.

Meshes are immutable after construction.  All operations return new TriMesh
instances; vertex and triangle order of the inputs is preserved wherever the
operation allows it (duplicated vertices and fill triangles are appended).
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError

DEGENERATE_AREA_FACTOR = 1e-12


@dataclass(frozen=True)
class TriMesh:
    """Oriented edge-manifold triangle mesh embedded in R^3.

    vertices: (V, 3) float64, triangles: (F, 3) int64 with consistent
    orientation.  Adjacency structures are built once at construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_attrs: dict = field(default_factory=dict)
    triangle_attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (F, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = np.where((t < 0) | (t >= len(v)))[0][0]
            raise MeshError(
                f"triangle {bad} vertex index out of range (V={len(v)})")
        same = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 2] == t[:, 0])
        if same.any():
            raise MeshError(f"triangle {np.where(same)[0][0]} has repeated vertices")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        self._validate_geometry()
        self._build_edges()

    # -- construction-time checks -------------------------------------------------

    def _validate_geometry(self):
        if len(self.triangles) == 0:
            return
        a = self.triangle_areas()
        bbox = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        diag2 = float(bbox @ bbox)
        tol = DEGENERATE_AREA_FACTOR * diag2
        bad = np.where(a <= tol)[0]
        if bad.size:
            raise MeshError(f"degenerate triangle {bad[0]} (area {a[bad[0]]:.3e})")

    def _build_edges(self):
        t = self.triangles
        # directed half-edges, one per triangle side
        he = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        keys = he[:, 0] * len(self.vertices) + he[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if (counts > 1).any():
            k = uniq[np.argmax(counts > 1)]
            i, j = divmod(int(k), len(self.vertices))
            raise MeshError(
                f"inconsistent orientation or non-manifold edge ({i}, {j}): "
                "a directed edge appears in more than one triangle")
        # undirected edge table
        lo = np.minimum(he[:, 0], he[:, 1])
        hi = np.maximum(he[:, 0], he[:, 1])
        ukeys = lo * len(self.vertices) + hi
        edges_sorted, inv, ecounts = np.unique(
            ukeys, return_inverse=True, return_counts=True)
        if (ecounts > 2).any():
            k = edges_sorted[np.argmax(ecounts > 2)]
            i, j = divmod(int(k), len(self.vertices))
            raise MeshError(f"non-manifold edge ({i}, {j}) borders more than 2 triangles")
        edges = np.stack(divmod(edges_sorted, len(self.vertices)), axis=1)
        object.__setattr__(self, "_edges", edges)
        object.__setattr__(self, "_edge_counts", ecounts)
        # map directed half-edge -> owning triangle
        n_f = len(t)
        he_tri = np.tile(np.arange(n_f), 3)
        object.__setattr__(
            self, "_half_edge_tri",
            dict(zip(map(tuple, he.tolist()), he_tri.tolist())))

    # -- basic geometry -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) undirected edges, each row sorted ascending."""
        return self._edges

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def triangle_normals(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self._half_edge_tri or (j, i) in self._half_edge_tri

    def is_boundary_edge(self, i: int, j: int) -> bool:
        has_ij = (i, j) in self._half_edge_tri
        has_ji = (j, i) in self._half_edge_tri
        if not (has_ij or has_ji):
            raise MeshError(f"({i}, {j}) is not an edge of the mesh")
        return has_ij != has_ji

    def boundary_half_edges(self) -> list[tuple[int, int]]:
        """Directed boundary edges (i, j): present in one triangle, reverse in none."""
        out = []
        for (i, j) in self._half_edge_tri:
            if (j, i) not in self._half_edge_tri:
                out.append((i, j))
        return sorted(out)

    def boundary_vertices(self) -> np.ndarray:
        he = self.boundary_half_edges()
        if not he:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.asarray(he).ravel())

    def vertex_triangles(self) -> list[list[int]]:
        """Incident triangle lists per vertex (ordered by triangle index)."""
        out = [[] for _ in range(self.n_vertices)]
        for f, tri in enumerate(self.triangles):
            for v in tri:
                out[v].append(f)
        return out

    def with_triangles(self, triangles) -> "TriMesh":
        return TriMesh(self.vertices, triangles)


@dataclass(frozen=True)
class TopologySummary:
    euler_characteristic: int
    boundary_loop_count: int
    genus: int
    boundary_loops: list
    component_count: int = 1


@dataclass(frozen=True)
class SeamMap:
    """Duplicate-vertex bookkeeping produced by one cut.

    pairs: (kept_index, new_index) per duplicated path vertex, in path order.
    source_path: the cut path on the input mesh.  endpoint_case: "closed",
    or "boundary_to_boundary" for an open cut whose ends lay on a
    pre-existing boundary.
    """

    pairs: list
    source_path: list
    endpoint_case: str


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def load_mesh(path, format: str | None = None) -> TriMesh:
    """Load a PLY (ascii or binary little-endian) or OBJ triangle mesh.

    Vertex and face order are preserved.  Unknown PLY properties are skipped
    with a warning; OBJ records other than v/f are ignored.
    """
    path = str(path)
    if format is None:
        format = "ply" if path.lower().endswith(".ply") else "obj"
    if format == "ply":
        vertices, faces = _read_ply(path)
    elif format == "obj":
        vertices, faces = _read_obj(path)
    else:
        raise MeshError(f"unsupported format {format!r}")
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size and faces.max() >= len(vertices):
        raise MeshError(
            f"face index out of range: index {int(faces.max())} with "
            f"{len(vertices)} vertices")
    if faces.size and faces.min() < 0:
        raise MeshError("face index out of range: negative index")
    return TriMesh(np.asarray(vertices, dtype=np.float64), faces)


def _read_ply(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop_name, type, is_list, count_type)])
        while True:
            line = fh.readline()
            if not line:
                raise MeshError(f"{path}: unexpected end of PLY header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
                if fmt not in ("ascii", "binary_little_endian"):
                    raise MeshError(f"{path}: unsupported PLY format {fmt}")
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise MeshError(f"{path}: property before element")
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[4], tokens[3], True, tokens[2]))
                else:
                    elements[-1][2].append((tokens[2], tokens[1], False, None))
            elif tokens[0] == "end_header":
                break
            else:
                raise MeshError(f"{path}: bad PLY header line {line!r}")
        if fmt is None:
            raise MeshError(f"{path}: PLY header has no format line")
        reader = _PlyAscii(fh) if fmt == "ascii" else _PlyBinary(fh)
        vertices, faces = None, None
        for name, count, props in elements:
            if name == "vertex":
                vertices = _read_ply_vertices(reader, count, props, path)
            elif name == "face":
                faces = _read_ply_faces(reader, count, props, path)
            else:
                warnings.warn(f"{path}: ignoring PLY element {name!r}")
                for _ in range(count):
                    reader.skip_row(props)
        if vertices is None:
            raise MeshError(f"{path}: PLY file has no vertex element")
        if faces is None:
            raise MeshError(f"{path}: PLY file has no face element")
        return vertices, faces


_PLY_STRUCT = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


class _PlyAscii:
    def __init__(self, fh):
        self.fh = fh

    def _tokens(self):
        while True:
            line = self.fh.readline()
            if not line:
                raise MeshError("unexpected end of PLY data")
            toks = line.split()
            if toks:
                return toks

    def read_row(self, props):
        toks = self._tokens()
        out, k = [], 0
        for _, typ, is_list, _ in props:
            cast = float if _PLY_STRUCT[typ] in "fd" else int
            if is_list:
                if k >= len(toks):
                    raise MeshError("truncated PLY row")
                n = int(toks[k]); k += 1
                out.append([cast(x) for x in toks[k:k + n]])
                if len(out[-1]) != n:
                    raise MeshError("truncated PLY list property")
                k += n
            else:
                if k >= len(toks):
                    raise MeshError("truncated PLY row")
                out.append(cast(toks[k])); k += 1
        return out

    def skip_row(self, props):
        self.read_row(props)


class _PlyBinary:
    def __init__(self, fh):
        self.fh = fh

    def _unpack(self, code):
        size = struct.calcsize("<" + code)
        raw = self.fh.read(size)
        if len(raw) != size:
            raise MeshError("unexpected end of PLY data")
        return struct.unpack("<" + code, raw)[0]

    def read_row(self, props):
        out = []
        for _, typ, is_list, count_type in props:
            if is_list:
                n = int(self._unpack(_PLY_STRUCT[count_type]))
                out.append([self._unpack(_PLY_STRUCT[typ]) for _ in range(n)])
            else:
                out.append(self._unpack(_PLY_STRUCT[typ]))
        return out

    def skip_row(self, props):
        self.read_row(props)


def _read_ply_vertices(reader, count, props, path):
    names = [p[0] for p in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise MeshError(f"{path}: vertex element lacks property {need!r}")
    extra = [n for n in names if n not in ("x", "y", "z")]
    if extra:
        warnings.warn(f"{path}: ignoring vertex properties {extra}")
    ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
    verts = np.empty((count, 3), dtype=np.float64)
    for r in range(count):
        row = reader.read_row(props)
        verts[r] = (row[ix], row[iy], row[iz])
    return verts


def _read_ply_faces(reader, count, props, path):
    names = [p[0] for p in props]
    idx = None
    for cand in ("vertex_indices", "vertex_index"):
        if cand in names:
            idx = names.index(cand)
    if idx is None:
        raise MeshError(f"{path}: face element lacks vertex_indices")
    extra = [n for k, n in enumerate(names) if k != idx]
    if extra:
        warnings.warn(f"{path}: ignoring face properties {extra}")
    faces = np.empty((count, 3), dtype=np.int64)
    for r in range(count):
        row = reader.read_row(props)
        ids = row[idx]
        if len(ids) != 3:
            raise MeshError(f"{path}: face {r} has {len(ids)} vertices, need 3")
        faces[r] = ids
    return faces


def _read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            toks = line.split()
            if not toks or toks[0].startswith("#"):
                continue
            if toks[0] == "v":
                if len(toks) < 4:
                    raise MeshError(f"{path}:{ln}: bad vertex record")
                verts.append([float(x) for x in toks[1:4]])
            elif toks[0] == "f":
                ids = [int(t.split("/")[0]) for t in toks[1:]]
                if len(ids) != 3:
                    raise MeshError(f"{path}:{ln}: face has {len(ids)} vertices, need 3")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in ids])
    if not verts:
        raise MeshError(f"{path}: OBJ file has no vertices")
    return np.asarray(verts, dtype=np.float64), faces


def save_mesh(mesh: TriMesh, path, format: str | None = None, binary: bool = False):
    """Write PLY (ascii or binary little-endian) or OBJ. Round-trips with load_mesh."""
    path = str(path)
    if format is None:
        format = "ply" if path.lower().endswith(".ply") else "obj"
    if format == "ply":
        _write_ply(mesh, path, binary)
    elif format == "obj":
        _write_obj(mesh, path)
    else:
        raise MeshError(f"unsupported format {format!r}")


def _write_ply(mesh, path, binary):
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(mesh.vertices.astype("<f8").tobytes())
            for tri in mesh.triangles:
                fh.write(struct.pack("<Biii", 3, *map(int, tri)))
        else:
            for v in mesh.vertices:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n".encode())
            for tri in mesh.triangles:
                fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode())


def _write_obj(mesh, path, uv=None):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        if uv is not None:
            for t in uv:
                fh.write(f"vt {t[0]:.17g} {t[1]:.17g}\n")
            for tri in mesh.triangles:
                i, j, k = (int(x) + 1 for x in tri)
                fh.write(f"f {i}/{i} {j}/{j} {k}/{k}\n")
        else:
            for tri in mesh.triangles:
                fh.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

def topology_summary(mesh: TriMesh) -> TopologySummary:
    """Exact Euler characteristic, oriented boundary loops, genus and components."""
    v_used = np.unique(mesh.triangles) if mesh.n_triangles else np.empty(0, np.int64)
    n_v = len(v_used) if len(v_used) < mesh.n_vertices else mesh.n_vertices
    chi = n_v - len(mesh.edges) + mesh.n_triangles
    loops = boundary_loops(mesh)
    comps = _component_count(mesh)
    genus2 = 2 * comps - chi - len(loops)
    if genus2 % 2 != 0 or genus2 < 0:
        raise MeshError(
            f"inconsistent topology: chi={chi}, boundaries={len(loops)}, "
            f"components={comps}")
    return TopologySummary(chi, len(loops), genus2 // 2, loops, comps)


def boundary_loops(mesh: TriMesh) -> list:
    """Boundary cycles as vertex lists, oriented with the mesh half-edges.

    Each loop starts at its smallest vertex index; loops are sorted by that
    starting vertex for determinism.
    """
    succ = {}
    for i, j in mesh.boundary_half_edges():
        if i in succ:
            raise MeshError(
                f"vertex {i} lies on more than one boundary curve "
                "(pinched / vertex-non-manifold boundary)")
        succ[i] = j
    loops = []
    remaining = set(succ)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        cur = succ[start]
        while cur != start:
            loop.append(cur)
            remaining.discard(cur)
            cur = succ[cur]
        loops.append(loop)
    loops.sort(key=lambda lp: lp[0])
    return loops


def _component_count(mesh: TriMesh) -> int:
    if mesh.n_triangles == 0:
        return 0
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    e = mesh.edges
    used = np.unique(mesh.triangles)
    n = mesh.n_vertices
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    n_all, labels = connected_components(g, directed=False)
    return len(np.unique(labels[used]))


# ---------------------------------------------------------------------------
# cutting
# ---------------------------------------------------------------------------

def cut_along_path(mesh: TriMesh, path) -> tuple[TriMesh, SeamMap]:
    """Slice the mesh open along a simple edge path or edge cycle.

    A closed cycle must pass through interior vertices only; an open path must
    run boundary-to-boundary with interior vertices strictly interior.  Every
    path vertex is duplicated; triangles strictly to the left of the directed
    path keep the original indices.  The Euler update is verified exactly.
    """
    path = [int(p) for p in path]
    if len(path) < 2:
        raise MeshError("path too short: need at least one edge")
    closed = path[0] == path[-1]
    if closed:
        cycle = path[:-1]
        if len(cycle) < 3:
            raise MeshError("path too short: a cycle needs at least 3 vertices")
        if len(set(cycle)) != len(cycle):
            raise MeshError("path self-intersecting")
    else:
        if len(set(path)) != len(path):
            raise MeshError("path self-intersecting")

    for a, b in zip(path[:-1], path[1:]):
        if not mesh.has_edge(a, b):
            raise MeshError(f"path not edge-connected: ({a}, {b}) is not an edge")
    if all(mesh.is_boundary_edge(a, b) for a, b in zip(path[:-1], path[1:])):
        raise MeshError("cut along boundary-only edges is a no-op")
    for a, b in zip(path[:-1], path[1:]):
        if mesh.is_boundary_edge(a, b):
            raise MeshError(
                f"path edge ({a}, {b}) lies on the boundary; "
                "cut paths must run through the interior")

    bverts = set(int(x) for x in mesh.boundary_vertices())
    verts = path[:-1] if closed else path
    if closed:
        for p in verts:
            if p in bverts:
                raise MeshError(
                    f"cycle vertex {p} lies on the boundary; closed cuts must "
                    "stay interior (split into boundary-to-boundary cuts)")
    else:
        if path[0] not in bverts or path[-1] not in bverts:
            raise MeshError(
                "open cut endpoints must lie on an existing boundary "
                "(the cut would not increase the boundary count)")
        for p in path[1:-1]:
            if p in bverts:
                raise MeshError(f"interior path vertex {p} lies on the boundary")

    chi_before = topology_summary(mesh).euler_characteristic

    new_tris = mesh.triangles.copy()
    new_verts = [mesh.vertices]
    v2t = mesh.vertex_triangles()
    pairs = []
    next_idx = mesh.n_vertices

    path_edges = set()
    for a, b in zip(path[:-1], path[1:]):
        path_edges.add((min(a, b), max(a, b)))

    for pos, p in enumerate(verts):
        fan = v2t[p]
        # fan graph: triangles adjacent across non-path edges incident to p
        adj = {f: [] for f in fan}
        edge_owner = {}
        for f in fan:
            tri = mesh.triangles[f]
            for q in tri:
                if q == p:
                    continue
                key = (min(p, q), max(p, q))
                if key in path_edges:
                    continue
                edge_owner.setdefault(key, []).append(f)
        for fs in edge_owner.values():
            if len(fs) == 2:
                adj[fs[0]].append(fs[1])
                adj[fs[1]].append(fs[0])
        # the triangle containing the directed half-edge (a -> b) lies to the
        # left of the path; it seeds the side that keeps the original index
        if closed:
            seed_he = (p, verts[(pos + 1) % len(verts)])
        elif pos < len(path) - 1:
            seed_he = (p, path[pos + 1])
        else:
            seed_he = (path[pos - 1], p)
        seed = mesh._half_edge_tri.get(seed_he)
        if seed is None:
            raise MeshError(f"internal error: no triangle on the left of {seed_he}")
        left = set()
        stack = [seed]
        while stack:
            f = stack.pop()
            if f in left:
                continue
            left.add(f)
            stack.extend(g for g in adj[f] if g not in left)
        right = [f for f in fan if f not in left]
        if not right:
            raise MeshError(
                f"cut at vertex {p} does not separate its triangle fan; "
                "is the path a genuine interior cut?")
        dup = next_idx
        next_idx += 1
        pairs.append((p, dup))
        new_verts.append(mesh.vertices[p][None, :])
        for f in right:
            tri = new_tris[f]
            new_tris[f] = np.where(tri == p, dup, tri)

    out = TriMesh(np.concatenate(new_verts, axis=0), new_tris)
    seam = SeamMap(pairs, path, "closed" if closed else "boundary_to_boundary")

    # exact Euler bookkeeping: duplicated vertices and edges only
    chi_after = topology_summary(out).euler_characteristic
    dup_v = len(pairs)
    dup_e = len(path) - 1
    if chi_after - chi_before != dup_v - dup_e:
        raise MeshError(
            f"Euler bookkeeping failed: chi {chi_before} -> {chi_after}, "
            f"expected change {dup_v - dup_e}")
    return out, seam


# ---------------------------------------------------------------------------
# hole filling
# ---------------------------------------------------------------------------

def fill_hole(mesh: TriMesh, loop_id: int) -> tuple[TriMesh, np.ndarray]:
    """Triangulate boundary loop `loop_id` (index into topology_summary loops).

    The loop is projected onto its best-fit plane and triangulated there with
    a constrained Delaunay triangulation (no interior vertices), then lifted
    back.  Returns the new mesh and the indices of the appended triangles so
    they can be excluded from the parameter domain afterwards.
    """
    loops = boundary_loops(mesh)
    if loop_id < 0 or loop_id >= len(loops):
        raise MeshError(f"no boundary loop {loop_id} (mesh has {len(loops)})")
    loop = loops[loop_id]
    pts = mesh.vertices[loop]
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    plane = vt[:2]
    p2 = centered @ plane.T

    if _polygon_self_intersects(p2):
        raise MeshError(
            f"boundary loop {loop_id} self-intersects in its best-fit plane; "
            "split the loop and fill the parts separately")

    tris_local = _triangulate_polygon_delaunay(p2)
    fill = np.asarray([[loop[a], loop[b], loop[c]] for a, b, c in tris_local],
                      dtype=np.int64)
    # fill triangles must traverse each loop edge opposite to the open mesh
    k = len(loop)
    loop_he = {(loop[i], loop[(i + 1) % k]) for i in range(k)}
    flip = False
    for tri in fill:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if (int(a), int(b)) in loop_he:
                flip = True
                break
            if (int(b), int(a)) in loop_he:
                break
        else:
            continue
        break
    if flip:
        fill = fill[:, ::-1]
    out = TriMesh(mesh.vertices, np.concatenate([mesh.triangles, fill]))
    new_ids = np.arange(mesh.n_triangles, mesh.n_triangles + len(fill))
    return out, new_ids


def _polygon_self_intersects(p2) -> bool:
    k = len(p2)

    def seg_intersect(a, b, c, d):
        def orient(p, q, r):
            return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        o1, o2 = orient(a, b, c), orient(a, b, d)
        o3, o4 = orient(c, d, a), orient(c, d, b)
        return (o1 * o2 < 0) and (o3 * o4 < 0)

    for i in range(k):
        a, b = p2[i], p2[(i + 1) % k]
        for j in range(i + 1, k):
            if j == i or (j + 1) % k == i or (i + 1) % k == j:
                continue
            c, d = p2[j], p2[(j + 1) % k]
            if seg_intersect(a, b, c, d):
                return True
    return False


def _triangulate_polygon_delaunay(p2):
    """Ear clipping followed by Delaunay edge flips, all inside the polygon."""
    k = len(p2)
    if k < 3:
        raise MeshError("cannot fill a loop with fewer than 3 vertices")
    # scale-invariant predicates
    span = p2.max(axis=0) - p2.min(axis=0)
    p2 = p2 / max(float(np.max(span)), 1e-300)
    area2 = 0.0
    for i in range(k):
        j = (i + 1) % k
        area2 += p2[i, 0] * p2[j, 1] - p2[j, 0] * p2[i, 1]
    ccw = area2 > 0
    order = list(range(k)) if ccw else list(range(k - 1, -1, -1))

    def cross(o, a, b):
        return ((p2[a, 0] - p2[o, 0]) * (p2[b, 1] - p2[o, 1])
                - (p2[a, 1] - p2[o, 1]) * (p2[b, 0] - p2[o, 0]))

    def point_in_tri(p, a, b, c):
        d1 = (p2[p, 0] - p2[b, 0]) * (p2[a, 1] - p2[b, 1]) - (p2[a, 0] - p2[b, 0]) * (p2[p, 1] - p2[b, 1])
        d2 = (p2[p, 0] - p2[c, 0]) * (p2[b, 1] - p2[c, 1]) - (p2[b, 0] - p2[c, 0]) * (p2[p, 1] - p2[c, 1])
        d3 = (p2[p, 0] - p2[a, 0]) * (p2[c, 1] - p2[a, 1]) - (p2[c, 0] - p2[a, 0]) * (p2[p, 1] - p2[a, 1])
        neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
        pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
        return not (neg and pos)

    poly = order[:]
    tris = []
    guard = 0
    while len(poly) > 3:
        guard += 1
        if guard > 4 * k * k:
            raise MeshError("ear clipping failed; loop may be degenerate")
        n = len(poly)
        clipped = False
        for i in range(n):
            a, b, c = poly[(i - 1) % n], poly[i], poly[(i + 1) % n]
            if cross(a, b, c) <= 0:
                continue
            if any(point_in_tri(p, a, b, c) for p in poly if p not in (a, b, c)):
                continue
            tris.append((a, b, c))
            poly.pop(i)
            clipped = True
            break
        if not clipped:
            raise MeshError("ear clipping failed; loop may be non-simple")
    tris.append(tuple(poly))

    tris = [list(t) for t in tris]
    _delaunay_flip(p2, tris)
    if ccw:
        return [tuple(t) for t in tris]
    return [tuple(reversed(t)) for t in tris]


def _in_circumcircle(p2, a, b, c, d):
    """d strictly inside circumcircle of ccw triangle (a, b, c)."""
    m = np.array([
        [p2[a, 0] - p2[d, 0], p2[a, 1] - p2[d, 1],
         (p2[a, 0] - p2[d, 0]) ** 2 + (p2[a, 1] - p2[d, 1]) ** 2],
        [p2[b, 0] - p2[d, 0], p2[b, 1] - p2[d, 1],
         (p2[b, 0] - p2[d, 0]) ** 2 + (p2[b, 1] - p2[d, 1]) ** 2],
        [p2[c, 0] - p2[d, 0], p2[c, 1] - p2[d, 1],
         (p2[c, 0] - p2[d, 0]) ** 2 + (p2[c, 1] - p2[d, 1]) ** 2],
    ])
    return np.linalg.det(m) > 1e-14


def _delaunay_flip(p2, tris, max_passes=100):
    def sa(t):
        return _signed_area(p2, t)

    def side(pq, pr, ps):
        return ((p2[pr, 0] - p2[pq, 0]) * (p2[ps, 1] - p2[pq, 1])
                - (p2[pr, 1] - p2[pq, 1]) * (p2[ps, 0] - p2[pq, 0]))

    for _ in range(max_passes):
        flipped = False
        edge_map = {}
        for t_i, t in enumerate(tris):
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                edge_map.setdefault((min(e), max(e)), []).append(t_i)
        for (u, v), owners in sorted(edge_map.items()):
            if len(owners) != 2:
                continue
            i1, i2 = owners
            t1, t2 = tris[i1], tris[i2]
            a = next(x for x in t1 if x not in (u, v))
            d = next(x for x in t2 if x not in (u, v))
            ccw1 = t1 if sa(t1) > 0 else list(reversed(t1))
            if not _in_circumcircle(p2, ccw1[0], ccw1[1], ccw1[2], d):
                continue
            # flip only across a strictly convex quad: u, v on opposite sides of a-d
            if side(a, d, u) * side(a, d, v) >= 0:
                continue
            orient = 1.0 if sa(t1) > 0 else -1.0
            na = [a, u, d] if sa([a, u, d]) * orient > 0 else [a, d, u]
            nb = [a, d, v] if sa([a, d, v]) * orient > 0 else [a, v, d]
            tris[i1] = na
            tris[i2] = nb
            flipped = True
            break
        if not flipped:
            return


def _signed_area(p2, t):
    a, b, c = t
    return 0.5 * ((p2[b, 0] - p2[a, 0]) * (p2[c, 1] - p2[a, 1])
                  - (p2[b, 1] - p2[a, 1]) * (p2[c, 0] - p2[a, 0]))


# ---------------------------------------------------------------------------
# submesh extraction (used by the pipeline for patch handling)
# ---------------------------------------------------------------------------

def extract_submesh(mesh: TriMesh, triangle_ids) -> tuple[TriMesh, np.ndarray]:
    """Submesh of the given triangles. Returns (patch, patch_vertex -> source vertex)."""
    triangle_ids = np.asarray(triangle_ids, dtype=np.int64)
    tris = mesh.triangles[triangle_ids]
    used = np.unique(tris)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    patch = TriMesh(mesh.vertices[used], remap[tris])
    return patch, used
