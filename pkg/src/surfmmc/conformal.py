"""Two-stage conformal parameterization of disk-like patches onto rectangles.

The map is the composition of a harmonic map to the unit disk and a
distortion-correcting generalized-harmonic map from the disk to a rectangle,
whose diffusion coefficients are derived from the Beltrami coefficient of the
inverse disk map.  Per-triangle Beltrami coefficients of the composed map are
kept as the distortion diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ChartError, NumericalError
from .mesh import TriMesh, boundary_loops, topology_summary

# direct factorization below this many unknowns, conjugate gradient above
DIRECT_SOLVE_LIMIT = 200_000
CG_TOLERANCE = 1e-10


@dataclass(frozen=True)
class BeltramiField:
    """Per-triangle complex Beltrami coefficient with |mu| < 1 everywhere."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.complex128)
        object.__setattr__(self, "mu", mu)
        bad = ~np.isfinite(mu) | (np.abs(mu) >= 1.0)
        if bad.any():
            n = int(bad.sum())
            first = int(np.argmax(bad))
            raise ChartError(
                f"|mu| >= 1 on {n} triangle(s) (first: {first}); "
                "the map is not an orientation-preserving homeomorphism")

    @property
    def rho(self):
        return self.mu.real

    @property
    def tau(self):
        return self.mu.imag

    def diffusion_coefficients(self):
        """(alpha1, alpha2, alpha3) of the 2x2 diffusion matrix; det = 1."""
        rho, tau = self.rho, self.tau
        den = 1.0 - rho * rho - tau * tau
        a1 = ((rho - 1.0) ** 2 + tau * tau) / den
        a2 = -2.0 * tau / den
        a3 = ((rho + 1.0) ** 2 + tau * tau) / den
        return a1, a2, a3

    def diffusion_matrices(self):
        a1, a2, a3 = self.diffusion_coefficients()
        out = np.empty((len(self.mu), 2, 2))
        out[:, 0, 0] = a1
        out[:, 0, 1] = out[:, 1, 0] = a2
        out[:, 1, 1] = a3
        return out


@dataclass(frozen=True)
class ConformalChart:
    """Planar rectangle parameterization of one patch."""

    patch_id: str
    uv: np.ndarray                # (V, 2)
    rect: tuple                   # (width, height)
    corner_vertices: np.ndarray   # 4 patch vertex indices at the rect corners
    mu_final: np.ndarray          # (F,) complex, composed-map Beltrami coefficient
    triangles: np.ndarray         # (F, 3) patch connectivity the chart was built on

    @property
    def width(self):
        return self.rect[0]

    @property
    def height(self):
        return self.rect[1]

    @property
    def diagonal(self):
        return float(np.hypot(*self.rect))

    def mu_abs(self, triangle_mask=None):
        m = np.abs(self.mu_final)
        return m if triangle_mask is None else m[triangle_mask]


# ---------------------------------------------------------------------------
# FE operators
# ---------------------------------------------------------------------------

def _corner_layouts(vertices, triangles):
    """Per-triangle 2D corner coordinates.

    3D vertices are flattened isometrically (corner 0 at the origin, corner 1
    on +x, corner 2 in the upper half plane); 2D vertices are passed through.
    An (F, 3, 2) array is accepted as-is.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim == 3:
        return v
    p = v[triangles]
    if v.shape[1] == 2:
        return p
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    x2 = np.einsum("ij,ij->i", e1, e2) / l1
    y2 = np.linalg.norm(np.cross(e1, e2), axis=1) / l1
    out = np.zeros((len(p), 3, 2))
    out[:, 1, 0] = l1
    out[:, 2, 0] = x2
    out[:, 2, 1] = y2
    return out


def isometric_flattening(mesh: TriMesh) -> np.ndarray:
    """(F, 3, 2) orientation-preserving per-triangle layout of the surface."""
    return _corner_layouts(mesh.vertices, mesh.triangles)


def _hat_gradients(corners2d):
    """Gradients of the three linear hat functions; (F, 3, 2) and signed areas."""
    p = corners2d
    e = np.stack([p[:, 2] - p[:, 1],        # edge opposite corner 0
                  p[:, 0] - p[:, 2],
                  p[:, 1] - p[:, 0]], axis=1)
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) \
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    grads = np.empty_like(e)
    grads[:, :, 0] = -e[:, :, 1]
    grads[:, :, 1] = e[:, :, 0]
    grads /= area2[:, None, None]
    return grads, 0.5 * area2


def build_laplacian(mesh, coefficients=None, triangles=None):
    """Piecewise-linear FE stiffness operator for div(A grad u).

    `mesh` is a TriMesh or an (V, 2)/(V, 3) vertex array with `triangles`
    given separately.  With coefficients None, A is the identity and the
    operator is the cotangent Laplacian; otherwise coefficients is an
    (F, 2, 2) symmetric positive-definite field over a planar (2D) domain.
    Rows sum to zero; the matrix is symmetric positive semi-definite.
    """
    if isinstance(mesh, TriMesh):
        vertices, triangles = mesh.vertices, mesh.triangles
    else:
        vertices = np.asarray(mesh, dtype=np.float64)
        if triangles is None:
            raise ValueError("triangles required when passing a raw vertex array")
        triangles = np.asarray(triangles, dtype=np.int64)
    n = len(vertices)

    if coefficients is not None and vertices.ndim == 2 and vertices.shape[1] == 3:
        raise ValueError(
            "coefficient fields are only meaningful on a planar (2D) domain")

    layouts = _corner_layouts(vertices, triangles)
    grads, areas = _hat_gradients(layouts)
    if coefficients is None:
        ag = grads
    else:
        a = np.asarray(coefficients, dtype=np.float64)
        if a.shape != (len(triangles), 2, 2):
            raise ValueError(f"coefficients must be (F, 2, 2), got {a.shape}")
        tr = a[:, 0, 0] + a[:, 1, 1]
        det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        bad = (tr <= 0) | (det <= 0)
        if bad.any():
            raise ChartError(
                f"coefficient matrix not positive definite on triangle "
                f"{int(np.argmax(bad))}")
        ag = np.einsum("fab,fib->fia", a, grads)
    k_local = np.einsum("fia,fja,f->fij", grads, ag, areas)

    ii = np.repeat(triangles, 3, axis=1).ravel()
    jj = np.tile(triangles, (1, 3)).ravel()
    lap = sp.coo_matrix((k_local.ravel(), (ii, jj)), shape=(n, n)).tocsr()
    return lap


def _solve_sym(a_csc, b):
    n = a_csc.shape[0]
    if n <= DIRECT_SOLVE_LIMIT:
        try:
            lu = spla.splu(a_csc)
        except RuntimeError as exc:
            raise NumericalError(f"sparse factorization failed: {exc}") from exc
        x = lu.solve(b)
    else:
        cols = b if b.ndim == 2 else b[:, None]
        xs = []
        for c in cols.T:
            sol, info = spla.cg(a_csc, c, rtol=CG_TOLERANCE, atol=0.0,
                                maxiter=20 * n)
            if info != 0:
                raise NumericalError(f"conjugate gradient failed (info={info})")
            xs.append(sol)
        x = np.stack(xs, axis=1)
        if b.ndim == 1:
            x = x[:, 0]
    if not np.all(np.isfinite(x)):
        raise NumericalError("linear solve produced non-finite values")
    return x


def _dirichlet_solve(lap, fixed_idx, fixed_vals, n):
    free = np.setdiff1d(np.arange(n), fixed_idx)
    x = np.empty((n,) + np.shape(fixed_vals)[1:])
    x[fixed_idx] = fixed_vals
    rhs = -(lap[free][:, fixed_idx] @ fixed_vals)
    x[free] = _solve_sym(lap[free][:, free].tocsc(), rhs)
    return x


# ---------------------------------------------------------------------------
# stage one: harmonic map to the unit disk
# ---------------------------------------------------------------------------

def harmonic_disk_map(patch: TriMesh) -> np.ndarray:
    """Map a genus-0, single-boundary patch onto the closed unit disk.

    The boundary loop goes to the unit circle at chord-length proportional
    angles (anchored at its smallest vertex index); interior vertices solve
    the cotangent-Laplacian system.  Raises if any triangle flips.
    """
    topo = topology_summary(patch)
    if topo.genus != 0 or topo.boundary_loop_count != 1 or topo.component_count != 1:
        raise ChartError(
            f"patch is not a simply-connected open surface: genus={topo.genus}, "
            f"boundaries={topo.boundary_loop_count}, "
            f"components={topo.component_count}")
    loop = topo.boundary_loops[0]
    pts = patch.vertices[loop]
    chord = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    s = np.concatenate([[0.0], np.cumsum(chord)[:-1]])
    theta = 2 * np.pi * s / chord.sum()
    bnd_uv = np.column_stack([np.cos(theta), np.sin(theta)])

    lap = build_laplacian(patch)
    uv = _dirichlet_solve(lap, np.asarray(loop), bnd_uv, patch.n_vertices)

    flipped = _flipped_triangles(uv, patch.triangles)
    if flipped.size:
        raise ChartError(
            f"harmonic disk map produced {flipped.size} flipped triangle(s) "
            f"(first: {int(flipped[0])}); improve the input mesh quality")
    return uv


def _flipped_triangles(uv, triangles):
    p = uv[triangles]
    sa = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) \
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    return np.where(sa <= 0)[0]


# ---------------------------------------------------------------------------
# Beltrami coefficients
# ---------------------------------------------------------------------------

def beltrami_coefficient(source_uv, target, triangles) -> BeltramiField:
    """Per-triangle Beltrami coefficient of the piecewise-linear map source -> target.

    source_uv: (V, 2) or (F, 3, 2) planar coordinates.  target: (V, 2) planar,
    (V, 3) embedded, or per-corner (F, 3, *) arrays.  A 3D target is measured
    through its first fundamental form, which equals the coefficient of the
    map onto any orientation-preserving isometric flattening.
    """
    triangles = np.asarray(triangles, dtype=np.int64)
    src = _corner_layouts(source_uv, triangles)
    grads, areas = _hat_gradients(src)
    if (areas <= 0).any():
        raise ChartError(
            f"degenerate or flipped source triangle {int(np.argmax(areas <= 0))}")

    tgt = np.asarray(target, dtype=np.float64)
    per_corner = tgt[triangles] if tgt.ndim == 2 else tgt
    # d(target)/dx, d(target)/dy per triangle, constant on each triangle
    dx = np.einsum("fi,fic->fc", grads[:, :, 0], per_corner)
    dy = np.einsum("fi,fic->fc", grads[:, :, 1], per_corner)

    if per_corner.shape[2] == 2:
        fx = dx[:, 0] + 1j * dx[:, 1]
        fy = dy[:, 0] + 1j * dy[:, 1]
        fz = 0.5 * (fx - 1j * fy)
        fzbar = 0.5 * (fx + 1j * fy)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = fzbar / fz
        mu[~np.isfinite(mu)] = 1.0 + 0j
    else:
        e = np.einsum("fc,fc->f", dx, dx)
        g = np.einsum("fc,fc->f", dy, dy)
        f = np.einsum("fc,fc->f", dx, dy)
        den = e + g + 2 * np.sqrt(np.maximum(e * g - f * f, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = (e - g + 2j * f) / den
        mu[~np.isfinite(mu)] = 1.0 + 0j
    return BeltramiField(mu)


# ---------------------------------------------------------------------------
# stage two: generalized-harmonic map to the rectangle
# ---------------------------------------------------------------------------

ASPECT_SEARCH_RANGE = (0.25, 4.0)
ASPECT_SEARCH_TOL = 1e-3


def rectangle_map(disk_uv, triangles, mu_h_inverse: BeltramiField,
                  corner_vertices, aspect="auto", surface_layout=None):
    """Map the disk onto a rectangle, correcting the distortion encoded in mu.

    Solves the two generalized Laplace problems with mixed boundary
    conditions: u is 0 / w on the boundary arcs corner4->1 / corner2->3 and
    free (zero flux) elsewhere; v is 0 / 1 on arcs corner1->2 / corner3->4.
    Corners land exactly on the rectangle corners (0,0), (w,0), (w,1), (0,1).

    With aspect="auto" the width w minimizing the mean |mu| of the composed
    map is found by golden-section search; surface_layout, the (F, 3, 2)
    flattened surface triangles, is required in that mode.

    Returns (uv, rect) with rect = (w, 1.0).
    """
    disk_uv = np.asarray(disk_uv, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    n = len(disk_uv)
    corners = [int(c) for c in corner_vertices]
    if len(corners) != 4 or len(set(corners)) != 4:
        raise ChartError("need 4 distinct corner vertices")

    shell = TriMesh(np.column_stack([disk_uv, np.zeros(n)]), triangles)
    loops = boundary_loops(shell)
    if len(loops) != 1:
        raise ChartError(f"disk domain has {len(loops)} boundary loops, need 1")
    loop = loops[0]
    pos = {v: k for k, v in enumerate(loop)}
    try:
        cpos = [pos[c] for c in corners]
    except KeyError as exc:
        raise ChartError(f"corner vertex {exc.args[0]} is not on the boundary")
    gaps = [(cpos[(k + 1) % 4] - cpos[k]) % len(loop) for k in range(4)]
    if 0 in gaps or sum(gaps) != len(loop):
        rev = [(cpos[k] - cpos[(k + 1) % 4]) % len(loop) for k in range(4)]
        hint = (" (they follow the boundary in reverse: flip their order)"
                if 0 not in rev and sum(rev) == len(loop) else "")
        raise ChartError("corner vertices are not in cyclic boundary order" + hint)

    def arc(a, b):
        """Boundary vertices from corner a to corner b, inclusive."""
        i, j = cpos[a], cpos[b]
        if i <= j:
            return loop[i:j + 1]
        return loop[i:] + loop[:j + 1]

    a_mats = mu_h_inverse.diffusion_matrices()
    lap = build_laplacian(disk_uv, coefficients=a_mats, triangles=triangles)

    fixed_u = np.asarray(arc(3, 0) + arc(1, 2))
    vals_u = np.concatenate([np.zeros(len(arc(3, 0))), np.ones(len(arc(1, 2)))])
    fixed_v = np.asarray(arc(0, 1) + arc(2, 3))
    vals_v = np.concatenate([np.zeros(len(arc(0, 1))), np.ones(len(arc(2, 3)))])

    u1 = _dirichlet_solve(lap, fixed_u, vals_u, n)
    v1 = _dirichlet_solve(lap, fixed_v, vals_v, n)

    if aspect == "auto":
        if surface_layout is None:
            raise ChartError('aspect="auto" needs the flattened surface layout')

        def mean_distortion(w):
            uv = np.column_stack([w * u1, v1])
            try:
                field = beltrami_coefficient(surface_layout, uv, triangles)
            except ChartError:
                return np.inf
            return float(np.mean(np.abs(field.mu)))

        w = _golden_section(mean_distortion, *ASPECT_SEARCH_RANGE,
                            tol=ASPECT_SEARCH_TOL)
    else:
        w = float(aspect)
        if w <= 0:
            raise ChartError("aspect must be positive")
    uv = np.column_stack([w * u1, v1])
    return uv, (w, 1.0)


def _golden_section(f, a, b, tol):
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# composed chart
# ---------------------------------------------------------------------------

BOUNDARY_SNAP_TOL = 1e-10


def build_chart(patch: TriMesh, corners, aspect="auto",
                patch_id: str = "patch") -> ConformalChart:
    """Full two-stage parameterization of a disk-like patch onto a rectangle."""
    disk_uv = harmonic_disk_map(patch)
    flat = isometric_flattening(patch)
    mu_h_inv = beltrami_coefficient(disk_uv, flat, patch.triangles)
    uv, rect = rectangle_map(disk_uv, patch.triangles, mu_h_inv, corners,
                             aspect=aspect, surface_layout=flat)
    mu_final = beltrami_coefficient(flat, uv, patch.triangles)

    flipped = _flipped_triangles(uv, patch.triangles)
    if flipped.size:
        raise ChartError(
            f"chart {patch_id!r} has {flipped.size} flipped triangle(s) "
            f"(first: {int(flipped[0])})")
    _check_boundary_on_rect(patch, uv, rect, patch_id)
    return ConformalChart(patch_id, uv, rect, np.asarray(corners, dtype=np.int64),
                          mu_final.mu, patch.triangles.copy())


def _check_boundary_on_rect(patch, uv, rect, patch_id):
    w, h = rect
    tol = BOUNDARY_SNAP_TOL * max(w, h)
    bnd = patch.boundary_vertices()
    d = np.minimum.reduce([
        np.abs(uv[bnd, 0]), np.abs(uv[bnd, 0] - w),
        np.abs(uv[bnd, 1]), np.abs(uv[bnd, 1] - h)])
    if (d > tol).any():
        worst = bnd[int(np.argmax(d))]
        raise ChartError(
            f"chart {patch_id!r}: boundary vertex {int(worst)} is "
            f"{float(d.max()):.3e} away from the rectangle boundary")


# ---------------------------------------------------------------------------
# chart export
# ---------------------------------------------------------------------------

def save_chart_csv(chart: ConformalChart, path):
    """Rectangle metadata, per-vertex (u, v) rows, then per-triangle |mu| rows."""
    with open(path, "w") as fh:
        fh.write("record,patch_id,index,a,b\n")
        fh.write(f"rect,{chart.patch_id},0,{chart.width:.17g},"
                 f"{chart.height:.17g}\n")
        for i, (u, v) in enumerate(chart.uv):
            fh.write(f"vertex,{chart.patch_id},{i},{u:.17g},{v:.17g}\n")
        for t, m in enumerate(np.abs(chart.mu_final)):
            fh.write(f"triangle,{chart.patch_id},{t},{m:.17g},\n")


def load_chart_csv(path):
    """Rebuild (patch_id, rect, uv, mu_abs) from a CSV written by save_chart_csv."""
    uv_rows, mu_rows, patch_id, rect = [], [], None, None
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("record,"):
            raise ChartError(f"{path}: not a chart CSV")
        for line in fh:
            rec, pid, idx, a, b = line.rstrip("\n").split(",")
            patch_id = pid
            if rec == "rect":
                rect = (float(a), float(b))
            elif rec == "vertex":
                uv_rows.append((float(a), float(b)))
            else:
                mu_rows.append(float(a))
    if rect is None:
        raise ChartError(f"{path}: chart CSV lacks a rect record")
    return patch_id, rect, np.asarray(uv_rows), np.asarray(mu_rows)


def save_chart_obj(chart: ConformalChart, patch: TriMesh, path):
    """OBJ copy of the patch with the chart as texture coordinates."""
    from .mesh import _write_obj
    w, h = chart.rect
    tex = chart.uv / max(w, h)
    _write_obj(patch, path, uv=tex)
