"""Facet-shell compliance analysis with an ersatz material model.

Each triangle is a flat shell element: constant-strain membrane plus
discrete-Kirchhoff bending in its own plane, 6 degrees of freedom per node,
with a small artificial drilling stiffness so the assembled operator is
non-singular on flat regions.  Element stiffness scales linearly with the
element density produced from nodal field values through a regularized
Heaviside.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError
from .mesh import TriMesh

DRILLING_SCALE = 1e-4


@dataclass(frozen=True)
class HeavisideParams:
    """Regularization half-width and void stiffness floor."""

    epsilon: float = 0.1
    alpha: float = 1e-3

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")


@dataclass(frozen=True)
class ShellMaterial:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    thickness: float = 1.0

    def __post_init__(self):
        if self.youngs_modulus <= 0 or self.thickness <= 0:
            raise ConfigError("modulus and thickness must be positive")
        if not -1 < self.poisson_ratio < 0.5:
            raise ConfigError("poisson ratio must be in (-1, 0.5)")


@dataclass
class LoadCase:
    """Point loads and per-DOF supports on mesh vertices (6 DOFs per node)."""

    forces: list = field(default_factory=list)    # (vertex, force3, moment3 | None)
    supports: list = field(default_factory=list)  # (vertex array, mask of 6 bools)

    def force_vector(self, n_vertices: int) -> np.ndarray:
        f = np.zeros(6 * n_vertices)
        for entry in self.forces:
            vertex, force = entry[0], np.asarray(entry[1], dtype=np.float64)
            moment = entry[2] if len(entry) > 2 and entry[2] is not None else None
            f[6 * vertex:6 * vertex + 3] += force
            if moment is not None:
                f[6 * vertex + 3:6 * vertex + 6] += np.asarray(moment, np.float64)
        return f

    def fixed_dofs(self, n_vertices: int) -> np.ndarray:
        if not self.supports:
            raise ConfigError("load case has no supports")
        out = []
        for vertices, mask in self.supports:
            vertices = np.asarray(vertices, dtype=np.int64)
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (6,):
                raise ConfigError("support mask must have 6 entries")
            for d in np.where(mask)[0]:
                out.append(6 * vertices + d)
        dofs = np.unique(np.concatenate(out))
        if dofs.size == 0:
            raise ConfigError("load case constrains no degrees of freedom")
        return dofs


@dataclass(frozen=True)
class FieldSnapshot:
    """State of one analysis: densities, displacements, compliance, volume."""

    rho: np.ndarray
    displacements: np.ndarray
    compliance: float
    volume_fraction: float


# ---------------------------------------------------------------------------
# regularized Heaviside and element densities
# ---------------------------------------------------------------------------

def heaviside(x, p: HeavisideParams = HeavisideParams()):
    """Smoothed step: alpha below -eps, 1 above +eps, cubic blend between.

    The mid-branch constant is (1 + alpha) / 2, the unique choice continuous
    at both band edges; the derivative vanishes at x = +-eps.
    """
    x = np.asarray(x, dtype=np.float64)
    eps, alpha = p.epsilon, p.alpha
    band = (3.0 * (1.0 - alpha) / 4.0) * (x / eps - x ** 3 / (3.0 * eps ** 3)) \
        + (1.0 + alpha) / 2.0
    value = np.where(x > eps, 1.0, np.where(x < -eps, alpha, band))
    dband = (3.0 * (1.0 - alpha) / 4.0) * (1.0 / eps - x ** 2 / eps ** 3)
    deriv = np.where(np.abs(x) <= eps, dband, 0.0)
    if np.ndim(x) == 0:
        return float(value), float(deriv)
    return value, deriv


def element_density(phi_nodes, p: HeavisideParams = HeavisideParams()):
    """Nodal-average density of one element or an (F, 3) batch.

    Returns (rho, d_rho/d_phi_node); densities live in [alpha, 1].
    """
    phi_nodes = np.asarray(phi_nodes, dtype=np.float64)
    h, dh = heaviside(phi_nodes, p)
    rho = np.mean(h, axis=-1)
    return rho, dh / 3.0


# ---------------------------------------------------------------------------
# facet shell element
# ---------------------------------------------------------------------------

_GAUSS_MIDEDGE = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])


def _local_frames(points):
    """(F, 3, 3) rotation matrices; rows are the element axes e1, e2, normal."""
    e1 = points[:, 1] - points[:, 0]
    e1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
    n = np.cross(points[:, 1] - points[:, 0], points[:, 2] - points[:, 0])
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return np.stack([e1, e2, n], axis=1)


def _planar_coords(points, frames):
    rel = points - points[:, :1]
    x = np.einsum("fic,fc->fi", rel, frames[:, 0])
    y = np.einsum("fic,fc->fi", rel, frames[:, 1])
    return np.stack([x, y], axis=-1)


def _membrane_stiffness(xy, mat: ShellMaterial):
    """(F, 6, 6) constant-strain-triangle membrane, local dofs (u1 v1 u2 v2 u3 v3)."""
    x, y = xy[..., 0], xy[..., 1]
    area2 = ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
             - (y[:, 1] - y[:, 0]) * (x[:, 2] - x[:, 0]))
    area = 0.5 * area2
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    bmat = np.zeros((len(xy), 3, 6))
    bmat[:, 0, 0::2] = b
    bmat[:, 1, 1::2] = c
    bmat[:, 2, 0::2] = c
    bmat[:, 2, 1::2] = b
    bmat /= area2[:, None, None]
    e, nu, t = mat.youngs_modulus, mat.poisson_ratio, mat.thickness
    cmat = (e / (1.0 - nu * nu)) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])
    return t * area[:, None, None] * np.einsum("fki,kl,flj->fij", bmat, cmat, bmat)


def _dkt_h_derivatives(geom, xi, eta):
    """Shape-derivative rows of the discrete-Kirchhoff triangle at (xi, eta)."""
    p4, p5, p6 = geom["P"]
    q4, q5, q6 = geom["q"]
    t4, t5, t6 = geom["t"]
    r4, r5, r6 = geom["r"]
    hx_xi = np.stack([
        p6 * (1 - 2 * xi) + (p5 - p6) * eta,
        q6 * (1 - 2 * xi) - (q5 + q6) * eta,
        -4 + 6 * (xi + eta) + r6 * (1 - 2 * xi) - eta * (r5 + r6),
        -p6 * (1 - 2 * xi) + eta * (p4 + p6),
        q6 * (1 - 2 * xi) - eta * (q6 - q4),
        -2 + 6 * xi + r6 * (1 - 2 * xi) + eta * (r4 - r6),
        -eta * (p5 + p4),
        eta * (q4 - q5),
        -eta * (r5 - r4),
    ], axis=1)
    hy_xi = np.stack([
        t6 * (1 - 2 * xi) + eta * (t5 - t6),
        1 + r6 * (1 - 2 * xi) - eta * (r5 + r6),
        -q6 * (1 - 2 * xi) + eta * (q5 + q6),
        -t6 * (1 - 2 * xi) + eta * (t4 + t6),
        -1 + r6 * (1 - 2 * xi) + eta * (r4 - r6),
        -q6 * (1 - 2 * xi) - eta * (q4 - q6),
        -eta * (t4 + t5),
        eta * (r4 - r5),
        -eta * (q4 - q5),
    ], axis=1)
    hx_eta = np.stack([
        -p5 * (1 - 2 * eta) - xi * (p6 - p5),
        q5 * (1 - 2 * eta) - xi * (q5 + q6),
        -4 + 6 * (xi + eta) + r5 * (1 - 2 * eta) - xi * (r5 + r6),
        xi * (p4 + p6),
        xi * (q4 - q6),
        -xi * (r6 - r4),
        p5 * (1 - 2 * eta) - xi * (p4 + p5),
        q5 * (1 - 2 * eta) + xi * (q4 - q5),
        -2 + 6 * eta + r5 * (1 - 2 * eta) + xi * (r4 - r5),
    ], axis=1)
    hy_eta = np.stack([
        -t5 * (1 - 2 * eta) - xi * (t6 - t5),
        1 + r5 * (1 - 2 * eta) - xi * (r5 + r6),
        -q5 * (1 - 2 * eta) + xi * (q5 + q6),
        xi * (t4 + t6),
        xi * (r4 - r6),
        -xi * (q4 - q6),
        t5 * (1 - 2 * eta) - xi * (t4 + t5),
        -1 + r5 * (1 - 2 * eta) + xi * (r4 - r5),
        -q5 * (1 - 2 * eta) - xi * (q4 - q5),
    ], axis=1)
    return hx_xi, hy_xi, hx_eta, hy_eta


def _dkt_geometry(xy):
    x, y = xy[..., 0], xy[..., 1]
    # side k=4: (2,3); k=5: (3,1); k=6: (1,2), one-based corners
    pairs = ((1, 2), (2, 0), (0, 1))
    p, q, t, r = [], [], [], []
    for i, j in pairs:
        xij = x[:, i] - x[:, j]
        yij = y[:, i] - y[:, j]
        l2 = xij * xij + yij * yij
        p.append(-6.0 * xij / l2)
        q.append(3.0 * xij * yij / l2)
        t.append(-6.0 * yij / l2)
        r.append(3.0 * yij * yij / l2)
    area2 = ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
             - (y[:, 1] - y[:, 0]) * (x[:, 2] - x[:, 0]))
    return {
        "P": p, "q": q, "t": t, "r": r, "area2": area2,
        "x31": x[:, 2] - x[:, 0], "x12": x[:, 0] - x[:, 1],
        "y31": y[:, 2] - y[:, 0], "y12": y[:, 0] - y[:, 1],
    }


def _dkt_bending_stiffness(xy, mat: ShellMaterial):
    """(F, 9, 9) discrete-Kirchhoff plate bending, local dofs (w, thx, thy) per node.

    thx / thy are rotations about the local x / y axes (thx = w,y; thy = -w,x
    for a Kirchhoff field).  The 3-point mid-edge rule integrates the
    quadratic integrand exactly.
    """
    geom = _dkt_geometry(xy)
    area2 = geom["area2"]
    e, nu, t = mat.youngs_modulus, mat.poisson_ratio, mat.thickness
    d0 = e * t ** 3 / (12.0 * (1.0 - nu * nu))
    dmat = d0 * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0],
                          [0.0, 0.0, (1.0 - nu) / 2.0]])
    k = np.zeros((len(xy), 9, 9))
    for xi, eta in _GAUSS_MIDEDGE:
        bmat = _dkt_b_matrix(geom, xi, eta)
        k += np.einsum("fki,kl,flj->fij", bmat, dmat, bmat)
    # weights 1/6 each over the unit triangle, jacobian 2A
    return k * (area2 / 6.0)[:, None, None]


def _dkt_b_matrix(geom, xi, eta):
    hx_xi, hy_xi, hx_eta, hy_eta = _dkt_h_derivatives(geom, xi, eta)
    area2 = geom["area2"]
    y31, y12 = geom["y31"], geom["y12"]
    x31, x12 = geom["x31"], geom["x12"]
    b = np.empty((len(area2), 3, 9))
    b[:, 0] = y31[:, None] * hx_xi + y12[:, None] * hx_eta
    b[:, 1] = -x31[:, None] * hy_xi - x12[:, None] * hy_eta
    b[:, 2] = (-x31[:, None] * hx_xi - x12[:, None] * hx_eta
               + y31[:, None] * hy_xi + y12[:, None] * hy_eta)
    return b / area2[:, None, None]


_MEMBRANE_SLOTS = np.array([0, 1, 6, 7, 12, 13])
_BENDING_SLOTS = np.array([2, 3, 4, 8, 9, 10, 14, 15, 16])
_DRILL_SLOTS = np.array([5, 11, 17])


def _local_stiffness(points, mat, drilling_scale=DRILLING_SCALE):
    """(F, 18, 18) unit-density local stiffness and the (F, 3, 3) frames."""
    frames = _local_frames(points)
    xy = _planar_coords(points, frames)
    km = _membrane_stiffness(xy, mat)
    kb = _dkt_bending_stiffness(xy, mat)
    k = np.zeros((len(points), 18, 18))
    k[np.ix_(np.arange(len(points)), _MEMBRANE_SLOTS, _MEMBRANE_SLOTS)] \
        += km[:, :, :]
    k[np.ix_(np.arange(len(points)), _BENDING_SLOTS, _BENDING_SLOTS)] += kb
    if drilling_scale > 0:
        kd = drilling_scale * np.min(np.diagonal(km, axis1=1, axis2=2), axis=1)
        # penalize drilling rotations relative to their element mean, which
        # keeps rigid rotations exactly energy-free
        pattern = np.eye(3) - np.full((3, 3), 1.0 / 3.0)
        k[np.ix_(np.arange(len(points)), _DRILL_SLOTS, _DRILL_SLOTS)] \
            += kd[:, None, None] * pattern
    return k, frames


def _to_global(k_local, frames):
    f = len(k_local)
    t = np.zeros((f, 18, 18))
    for blk in range(6):
        t[:, 3 * blk:3 * blk + 3, 3 * blk:3 * blk + 3] = frames
    return np.einsum("fki,fkl,flj->fij", t, k_local, t)


def element_stiffness(tri_points, mat: ShellMaterial, rho: float = 1.0,
                      drilling_scale: float = DRILLING_SCALE) -> np.ndarray:
    """18x18 facet-shell stiffness of one triangle in global coordinates.

    DOF order: (ux, uy, uz, rx, ry, rz) for each of the three nodes.  The
    whole matrix (membrane, bending and drilling) scales linearly with rho.
    """
    points = np.asarray(tri_points, dtype=np.float64)[None]
    a2 = np.linalg.norm(np.cross(points[0, 1] - points[0, 0],
                                 points[0, 2] - points[0, 0]))
    if a2 <= 0 or not np.isfinite(a2):
        raise ConfigError("degenerate triangle")
    k_local, frames = _local_stiffness(points, mat, drilling_scale)
    return float(rho) * _to_global(k_local, frames)[0]


# ---------------------------------------------------------------------------
# model: cached element matrices, assembly, solve
# ---------------------------------------------------------------------------

class ShellModel:
    """Reusable analysis context: unit element matrices are built once."""

    def __init__(self, mesh: TriMesh, material: ShellMaterial,
                 drilling_scale: float = DRILLING_SCALE):
        self.mesh = mesh
        self.material = material
        points = mesh.vertices[mesh.triangles]
        k_local, frames = _local_stiffness(points, material, drilling_scale)
        self.unit_matrices = _to_global(k_local, frames)
        tri = mesh.triangles
        dofs = (6 * tri[:, :, None] + np.arange(6)[None, None, :])
        self.dof_indices = dofs.reshape(len(tri), 18)
        self.areas = mesh.triangle_areas()
        self._rows = np.repeat(self.dof_indices, 18, axis=1).ravel()
        self._cols = np.tile(self.dof_indices, (1, 18)).ravel()

    @property
    def n_dofs(self):
        return 6 * self.mesh.n_vertices

    def assemble(self, rho) -> sp.csr_matrix:
        rho = np.asarray(rho, dtype=np.float64)
        vals = (rho[:, None, None] * self.unit_matrices).ravel()
        k = sp.coo_matrix((vals, (self._rows, self._cols)),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        return k

    def solve(self, rho, loads: LoadCase) -> FieldSnapshot:
        rho = np.asarray(rho, dtype=np.float64)
        if rho.shape != (self.mesh.n_triangles,):
            raise ConfigError(
                f"rho has shape {rho.shape}, expected ({self.mesh.n_triangles},)")
        k = self.assemble(rho)
        f = loads.force_vector(self.mesh.n_vertices)
        fixed = loads.fixed_dofs(self.mesh.n_vertices)
        free = np.setdiff1d(np.arange(self.n_dofs), fixed)
        kff = k[free][:, free].tocsc()
        u = np.zeros(self.n_dofs)
        if np.any(f[free]):
            try:
                lu = spla.splu(kff)
                u[free] = lu.solve(f[free])
            except RuntimeError as exc:
                raise NumericalError(
                    f"stiffness factorization failed ({exc}); "
                    "are all rigid-body modes constrained?") from exc
            if not np.all(np.isfinite(u)):
                raise NumericalError("singular system: non-finite displacements")
            residual = np.linalg.norm(kff @ u[free] - f[free])
            scale = np.linalg.norm(f[free])
            if residual > 1e-6 * scale:
                raise NumericalError(
                    f"solver residual {residual / scale:.2e}; "
                    "the constrained system looks singular")
        compliance = float(f @ u)
        vol = float(rho @ self.areas / self.areas.sum())
        return FieldSnapshot(rho.copy(), u, compliance, vol)

    def element_energies(self, u) -> np.ndarray:
        """Per-element energy against the unit-density matrices: ue^T Ke ue."""
        ue = u[self.dof_indices]
        return np.einsum("fi,fij,fj->f", ue, self.unit_matrices, ue)


def solve(mesh: TriMesh, rho, mat: ShellMaterial, loads: LoadCase) -> FieldSnapshot:
    """Assemble, constrain and solve one compliance analysis."""
    return ShellModel(mesh, mat).solve(rho, loads)
