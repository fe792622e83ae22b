"""Moving morphable components and the global topology description function.

Each component is a 7-parameter superelliptic bar living in one chart's
rectangle.  The per-vertex field on the surface aggregates all component
values seen by a vertex -- through every chart that covers it and through
both duplicates of every cut seam -- with a single smooth-maximum, which
makes the field single-valued on the original surface by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .mesh import TriMesh, SeamMap

F_CLAMP = 1e-9

PARAM_NAMES = ("x0", "y0", "theta", "L", "t1", "t2", "t3")


@dataclass
class Component:
    """Superelliptic bar: center, rotation, half-length, end/mid thicknesses."""

    x0: float
    y0: float
    theta: float
    L: float
    t1: float
    t2: float
    t3: float
    chart_id: str = "patch"

    def to_array(self):
        return np.array([self.x0, self.y0, self.theta, self.L,
                         self.t1, self.t2, self.t3])

    @classmethod
    def from_array(cls, arr, chart_id="patch"):
        return cls(*map(float, arr), chart_id=chart_id)


@dataclass(frozen=True)
class KSParams:
    """Smooth-maximum sharpness; larger is closer to a hard max."""

    zeta: float = 100.0

    def __post_init__(self):
        if self.zeta <= 0:
            raise ConfigError("zeta must be positive")


@dataclass
class DesignState:
    """Ordered component list with its flat design vector and box bounds."""

    components: list
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_components(self):
        return len(self.components)

    @property
    def n_variables(self):
        return 7 * len(self.components)

    def flatten(self) -> np.ndarray:
        return np.concatenate([c.to_array() for c in self.components])

    def unflatten(self, vec) -> "DesignState":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_variables,):
            raise ConfigError(
                f"design vector has length {vec.shape}, expected {self.n_variables}")
        comps = [Component.from_array(vec[7 * i:7 * i + 7], c.chart_id)
                 for i, c in enumerate(self.components)]
        return DesignState(comps, self.lower, self.upper)

    def clipped_to_bounds(self) -> "DesignState":
        return self.unflatten(np.clip(self.flatten(), self.lower, self.upper))


# ---------------------------------------------------------------------------
# single-component field
# ---------------------------------------------------------------------------

def _local_frame(comp, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    c, s = np.cos(comp.theta), np.sin(comp.theta)
    dx = pts[:, 0] - comp.x0
    dy = pts[:, 1] - comp.y0
    xp = c * dx + s * dy
    yp = -s * dx + c * dy
    return xp, yp


def _thickness(comp, xp):
    c2 = (comp.t1 + comp.t2 - 2.0 * comp.t3) / (2.0 * comp.L ** 2)
    c1 = (comp.t2 - comp.t1) / (2.0 * comp.L)
    f = c2 * xp * xp + c1 * xp + comp.t3
    clamped = f < F_CLAMP
    return np.where(clamped, F_CLAMP, f), clamped


def tdf_component(comp: Component, p) -> np.ndarray | float:
    """Component field value: 1 at the center, 0 on the superellipse boundary."""
    xp, yp = _local_frame(comp, p)
    f, _ = _thickness(comp, xp)
    a = (xp / comp.L) ** 6 + (yp / f) ** 6
    phi = 1.0 - a ** (1.0 / 6.0)
    return phi if np.ndim(p) > 1 else float(phi[0])


def tdf_component_grad(comp: Component, p) -> np.ndarray:
    """d(phi)/d(x0, y0, theta, L, t1, t2, t3), analytic.

    At the exact center the field has a kink; the zero vector is returned
    there by convention.  Inside the thickness-clamp region the clamped
    branch contributes no derivative.
    """
    single = np.ndim(p) <= 1
    xp, yp = _local_frame(comp, p)
    f, clamped = _thickness(comp, xp)
    L = comp.L
    u = xp / L
    w = yp / f
    a = u ** 6 + w ** 6
    center = a == 0.0

    # d(xp, yp)/d(x0, y0, theta); xp, yp do not depend on L, t1..t3
    dxp = np.empty((len(xp), 7))
    dyp = np.empty((len(xp), 7))
    c, s = np.cos(comp.theta), np.sin(comp.theta)
    dxp[:, 0], dyp[:, 0] = -c, s
    dxp[:, 1], dyp[:, 1] = -s, -c
    dxp[:, 2], dyp[:, 2] = yp, -xp
    dxp[:, 3:] = 0.0
    dyp[:, 3:] = 0.0

    # thickness partials (explicit, holding xp fixed)
    df = np.zeros((len(xp), 7))
    x2 = xp * xp
    df[:, 3] = (-(comp.t1 + comp.t2 - 2.0 * comp.t3) * x2 / L ** 3
                - (comp.t2 - comp.t1) * xp / (2.0 * L * L))
    df[:, 4] = x2 / (2.0 * L * L) - xp / (2.0 * L)
    df[:, 5] = x2 / (2.0 * L * L) + xp / (2.0 * L)
    df[:, 6] = 1.0 - x2 / (L * L)
    dfdxp = ((comp.t1 + comp.t2 - 2.0 * comp.t3) / (L * L)) * xp \
        + (comp.t2 - comp.t1) / (2.0 * L)
    df += dfdxp[:, None] * dxp
    df[clamped] = 0.0

    # d(u)/d = (dxp L - xp dL)/L^2 ; dL/dd = delta(d == L)
    du = dxp / L
    du[:, 3] -= xp / (L * L)
    dw = (dyp - w[:, None] * df) / f[:, None]

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        scale = a ** (-5.0 / 6.0)
        g = -(scale[:, None]) * (u[:, None] ** 5 * du + w[:, None] ** 5 * dw)
    g[center] = 0.0
    g[~np.isfinite(g).all(axis=1)] = 0.0
    return g if not single else g[0]


# ---------------------------------------------------------------------------
# smooth maximum
# ---------------------------------------------------------------------------

def ks_aggregate(values, ks: KSParams = KSParams()):
    """Smooth maximum of the values and its softmax weights (sum to 1)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot aggregate an empty value list")
    z = ks.zeta
    m = values.max()
    e = np.exp(z * (values - m))
    total = e.sum()
    return float(m + np.log(total) / z), e / total


# ---------------------------------------------------------------------------
# atlas: charts covering the analysis mesh
# ---------------------------------------------------------------------------

@dataclass
class ChartCoverage:
    """One chart's footprint on the analysis mesh.

    vertex_map sends each patch vertex (a row of chart.uv) to the original
    mesh vertex it samples; seam duplicates map to the same original vertex.
    """

    chart: object
    vertex_map: np.ndarray
    patch: TriMesh | None = None
    seams: list = field(default_factory=list)
    surface_triangles: np.ndarray | None = None  # mask: False on hole-fill triangles


@dataclass
class Atlas:
    """All chart coverages for one analysis mesh."""

    coverages: list
    mesh: TriMesh

    @property
    def charts(self):
        return [c.chart for c in self.coverages]

    def components_per_chart(self, design: DesignState):
        by_chart = {c.chart.patch_id: [] for c in self.coverages}
        for gi, comp in enumerate(design.components):
            if comp.chart_id not in by_chart:
                raise ConfigError(
                    f"component {gi} references unknown chart {comp.chart_id!r}")
            by_chart[comp.chart_id].append(gi)
        return by_chart

    def seam_vertex_pairs(self):
        """Seam duplicate pairs expressed as original-mesh vertex plus uv rows."""
        out = []
        for cov in self.coverages:
            for seam in cov.seams:
                for a, b in seam.pairs:
                    out.append((cov.chart.patch_id, int(a), int(b),
                                int(cov.vertex_map[a])))
        return out


def single_chart_atlas(mesh: TriMesh, chart) -> Atlas:
    """Atlas for a mesh parameterized by one chart covering every vertex."""
    cov = ChartCoverage(chart, np.arange(mesh.n_vertices), patch=mesh)
    return Atlas([cov], mesh)


# ---------------------------------------------------------------------------
# global field
# ---------------------------------------------------------------------------

def global_tdf(atlas: Atlas, design: DesignState, ks: KSParams = KSParams(),
               with_jacobian: bool = True):
    """Per-vertex field on the analysis mesh, plus the sparse d(phi)/d(design).

    Every (chart, duplicate) appearance of a vertex contributes the values of
    that chart's components at the duplicate's uv; one smooth maximum over
    all contributions covers the in-chart union, the seam rule and the
    patch-overlap rule at once (the aggregation is exactly associative).
    """
    n_vert = atlas.mesh.n_vertices
    by_chart = atlas.components_per_chart(design)
    z = ks.zeta

    rows = []        # (orig_vertex, comp_global_index, value, grad7) blocks
    for cov in atlas.coverages:
        comp_ids = by_chart[cov.chart.patch_id]
        if not comp_ids:
            continue
        uv = cov.chart.uv
        vmap = cov.vertex_map
        for gi in comp_ids:
            comp = design.components[gi]
            vals = tdf_component(comp, uv)
            rows.append((vmap, gi, vals, comp, uv))

    if not rows:
        raise ConfigError("no components defined")

    m = np.full(n_vert, -np.inf)
    counts = np.zeros(n_vert, dtype=np.int64)
    for vmap, _, vals, _, _ in rows:
        np.maximum.at(m, vmap, vals)
        np.add.at(counts, vmap, 1)
    if (counts == 0).any():
        missing = int(np.argmax(counts == 0))
        raise ConfigError(
            f"vertex {missing} is not covered by any chart "
            "(patches must cover the whole mesh)")

    total = np.zeros(n_vert)
    exps = []
    for vmap, gi, vals, comp, uv in rows:
        e = np.exp(z * (vals - m[vmap]))
        exps.append(e)
        np.add.at(total, vmap, e)
    phi = m + np.log(total) / z

    if not with_jacobian:
        return phi, None

    data, ri, ci = [], [], []
    for (vmap, gi, vals, comp, uv), e in zip(rows, exps):
        wgt = e / total[vmap]
        live = wgt > 0.0
        if not live.any():
            continue
        grads = tdf_component_grad(comp, uv[live])
        contrib = wgt[live, None] * grads              # (nz, 7), point-major
        data.append(contrib.ravel())
        ri.append(np.repeat(vmap[live], 7))
        ci.append(np.tile(7 * gi + np.arange(7), len(contrib)))
    jac = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
        shape=(n_vert, design.n_variables)).tocsr()
    jac.eliminate_zeros()
    return phi, jac


def overlap_mismatch(atlas: Atlas, design: DesignState,
                     ks: KSParams = KSParams()) -> dict:
    """Largest disagreement of the single-chart fields where patches overlap.

    Returns {(patch_a, patch_b): max |phi_a - phi_b|} over vertices both
    patches cover.  Purely diagnostic: the aggregated field blends the values
    smoothly regardless of the mismatch.
    """
    by_chart = atlas.components_per_chart(design)
    per_chart = {}
    for cov in atlas.coverages:
        comp_ids = by_chart[cov.chart.patch_id]
        if not comp_ids:
            continue
        vals = np.stack([tdf_component(design.components[g], cov.chart.uv)
                         for g in comp_ids])
        z = ks.zeta
        m = vals.max(axis=0)
        chart_phi = m + np.log(np.exp(z * (vals - m)).sum(axis=0)) / z
        field = {}
        for row, orig in enumerate(cov.vertex_map):
            key = int(orig)
            if key in field:
                field[key] = max(field[key], chart_phi[row])
            else:
                field[key] = chart_phi[row]
        per_chart[cov.chart.patch_id] = field
    names = sorted(per_chart)
    out = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = per_chart[a].keys() & per_chart[b].keys()
            if shared:
                out[(a, b)] = max(abs(per_chart[a][v] - per_chart[b][v])
                                  for v in shared)
    return out
