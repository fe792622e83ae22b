"""End-to-end driver: preprocess, parameterize, seed components, optimize, export.

A single JSON-friendly configuration describes the whole problem.  Charts are
built once, cached as sidecar files and reused; the optimization loop then
alternates field evaluation, shell analysis, gradients and the MMA update,
writing history, checkpoints and VTK snapshots as it goes.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .conformal import build_chart, save_chart_csv, save_chart_obj
from .errors import ChartError, ConfigError, MeshError
from .fea import (HeavisideParams, LoadCase, ShellMaterial, ShellModel,
                  element_density)
from .mesh import (TriMesh, boundary_loops, cut_along_path, extract_submesh,
                   fill_hole, load_mesh, topology_summary)
from .mmc import (Atlas, ChartCoverage, Component, DesignState, KSParams,
                  global_tdf)
from .optimizer import StopRule, run as mma_run
from .sensitivity import compliance_gradient, volume_gradient, check_gradients

log = logging.getLogger("surfmmc")

GRID_LENGTH_FACTOR = 0.45       # component half-length vs cell diagonal
GRID_THICKNESS_FACTOR = 0.03    # initial thickness vs chart diagonal
MIN_SIZE_FACTOR = 1e-4          # lower bound for L, t vs chart diagonal
MAX_LENGTH_FACTOR = 0.75
MAX_THICKNESS_FACTOR = 0.25
THETA_BOUND = 2.0 * np.pi


@dataclass
class PatchConfig:
    name: str
    triangles: object = "all"
    cuts: list = field(default_factory=list)
    fill_loops: list = field(default_factory=list)
    corners: object = "auto"
    aspect: object = "auto"
    components: dict = field(default_factory=lambda: {"grid": [2, 2]})


@dataclass
class ProblemConfig:
    mesh_path: str
    mesh_format: str = "ply"
    patches: list = field(default_factory=list)
    material: ShellMaterial = field(default_factory=ShellMaterial)
    heaviside: HeavisideParams = field(default_factory=HeavisideParams)
    ks_zeta: float = 100.0
    load_points: list = field(default_factory=list)
    load_supports: list = field(default_factory=list)
    volume_fraction: float = 0.4
    stop: StopRule = field(default_factory=StopRule)
    move_limit: float = 0.1
    output_dir: str = "out"
    checkpoint_every: int = 10
    vtk_every: int = 0
    min_size_factor: float = MIN_SIZE_FACTOR
    max_length_factor: float = MAX_LENGTH_FACTOR
    max_thickness_factor: float = MAX_THICKNESS_FACTOR

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "ProblemConfig":
        try:
            return cls._parse(raw, base_dir)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad configuration: {exc}") from exc

    @classmethod
    def _parse(cls, raw, base_dir):
        mesh = raw["mesh"]
        path = mesh["path"]
        if not os.path.isabs(path):
            path = os.path.normpath(os.path.join(base_dir, path))
        patches = []
        for p in raw.get("patches", []):
            patches.append(PatchConfig(
                name=str(p["name"]),
                triangles=p.get("triangles", "all"),
                cuts=[list(map(int, c)) for c in p.get("cuts", [])],
                fill_loops=[dict(f) for f in p.get("fill_loops", [])],
                corners=p.get("corners", "auto"),
                aspect=p.get("aspect", "auto"),
                components=dict(p.get("components", {"grid": [2, 2]})),
            ))
        if not patches:
            raise ConfigError("at least one patch is required")
        m = raw.get("material", {})
        hs = raw.get("heaviside", {})
        loads = raw.get("loads", {})
        stop = raw.get("stop", {})
        cfg = cls(
            mesh_path=path,
            mesh_format=mesh.get("format", "ply"),
            patches=patches,
            material=ShellMaterial(
                youngs_modulus=float(m.get("youngs_modulus", 1.0)),
                poisson_ratio=float(m.get("poisson_ratio", 0.3)),
                thickness=float(m.get("thickness", 1.0))),
            heaviside=HeavisideParams(
                epsilon=float(hs.get("epsilon", 0.1)),
                alpha=float(hs.get("alpha", 1e-3))),
            ks_zeta=float(raw.get("ks_zeta", 100.0)),
            load_points=[dict(x) for x in loads.get("points", [])],
            load_supports=[dict(x) for x in loads.get("supports", [])],
            volume_fraction=float(raw["volume_fraction"]),
            stop=StopRule(tol=float(stop.get("tol", 0.001)),
                          max_iters=int(stop.get("max_iters", 500))),
            move_limit=float(raw.get("move_limit", 0.1)),
            output_dir=(raw.get("output_dir", "out")
                        if os.path.isabs(raw.get("output_dir", "out"))
                        else os.path.normpath(os.path.join(
                            base_dir, raw.get("output_dir", "out")))),
            checkpoint_every=int(raw.get("checkpoint_every", 10)),
            vtk_every=int(raw.get("vtk_every", 0)),
            min_size_factor=float(raw.get("min_size_factor", MIN_SIZE_FACTOR)),
            max_length_factor=float(raw.get("max_length_factor",
                                            MAX_LENGTH_FACTOR)),
            max_thickness_factor=float(raw.get("max_thickness_factor",
                                               MAX_THICKNESS_FACTOR)),
        )
        if not 0.0 < cfg.volume_fraction <= 1.0:
            raise ConfigError(
                f"volume_fraction must be in (0, 1], got {cfg.volume_fraction}")
        return cfg

    @classmethod
    def from_json(cls, path) -> "ProblemConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        """Fully-resolved configuration: every default made explicit."""
        return {
            "mesh": {"path": self.mesh_path, "format": self.mesh_format},
            "patches": [asdict(p) for p in self.patches],
            "material": asdict(self.material),
            "heaviside": asdict(self.heaviside),
            "ks_zeta": self.ks_zeta,
            "loads": {"points": self.load_points,
                      "supports": self.load_supports},
            "volume_fraction": self.volume_fraction,
            "stop": {"tol": self.stop.tol, "max_iters": self.stop.max_iters},
            "move_limit": self.move_limit,
            "output_dir": self.output_dir,
            "checkpoint_every": self.checkpoint_every,
            "vtk_every": self.vtk_every,
            "min_size_factor": self.min_size_factor,
            "max_length_factor": self.max_length_factor,
            "max_thickness_factor": self.max_thickness_factor,
        }


# ---------------------------------------------------------------------------
# validation and load resolution
# ---------------------------------------------------------------------------

def validate_config(config: ProblemConfig) -> TriMesh:
    """Cheap structural checks; returns the loaded mesh."""
    mesh = load_mesh(config.mesh_path, config.mesh_format)
    n_tri = mesh.n_triangles
    covered = np.zeros(n_tri, dtype=bool)
    names = set()
    for p in config.patches:
        if p.name in names:
            raise ConfigError(f"duplicate patch name {p.name!r}")
        names.add(p.name)
        if p.triangles == "all":
            covered[:] = True
        else:
            ids = np.asarray(p.triangles, dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= n_tri):
                raise ConfigError(f"patch {p.name!r}: triangle index out of range")
            covered[ids] = True
        for cut in p.cuts:
            for v in cut:
                if not 0 <= v < mesh.n_vertices:
                    raise ConfigError(
                        f"patch {p.name!r}: cut vertex {v} out of range")
        if p.corners != "auto":
            if len(p.corners) != 4:
                raise ConfigError(f"patch {p.name!r}: need 4 corners or 'auto'")
            for v in p.corners:
                if not 0 <= int(v) < mesh.n_vertices:
                    raise ConfigError(
                        f"patch {p.name!r}: corner vertex {v} out of range")
        if p.aspect != "auto" and float(p.aspect) <= 0:
            raise ConfigError(f"patch {p.name!r}: aspect must be positive")
    if not covered.all():
        raise ConfigError(
            f"patches do not cover the mesh: {int((~covered).sum())} "
            "uncovered triangles")
    resolve_loads(config, mesh)
    return mesh


def resolve_loads(config: ProblemConfig, mesh: TriMesh) -> LoadCase:
    """Turn index / geometric load selectors into an explicit LoadCase."""
    forces = []
    for p in config.load_points:
        if "vertex" in p:
            v = int(p["vertex"])
            if not 0 <= v < mesh.n_vertices:
                raise ConfigError(f"load vertex {v} out of range")
        elif "near" in p:
            target = np.asarray(p["near"], dtype=np.float64)
            v = int(np.argmin(np.linalg.norm(mesh.vertices - target, axis=1)))
        else:
            raise ConfigError("load point needs 'vertex' or 'near'")
        force = np.asarray(p["force"], dtype=np.float64)
        moment = (np.asarray(p["moment"], dtype=np.float64)
                  if p.get("moment") is not None else None)
        forces.append((v, force, moment))
        log.info("load: vertex %d force %s moment %s", v, force.tolist(),
                 None if moment is None else moment.tolist())
    supports = []
    for s in config.load_supports:
        if "vertices" in s:
            ids = np.asarray(s["vertices"], dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_vertices):
                raise ConfigError("support vertex out of range")
        elif "sphere" in s:
            c = np.asarray(s["sphere"]["center"], dtype=np.float64)
            r = float(s["sphere"]["radius"])
            ids = np.where(np.linalg.norm(mesh.vertices - c, axis=1) <= r)[0]
            if ids.size == 0:
                raise ConfigError(
                    f"support sphere at {c.tolist()} r={r} selects no vertices")
        else:
            raise ConfigError("support needs 'vertices' or 'sphere'")
        dofs = s.get("dofs", [1, 1, 1, 1, 1, 1])
        supports.append((ids, np.asarray(dofs, dtype=bool)))
        log.info("support: %d vertices, dof mask %s", len(ids), list(dofs))
    if not supports:
        raise ConfigError("no supports defined")
    return LoadCase(forces=forces, supports=supports)


# ---------------------------------------------------------------------------
# preprocessing: cuts, fills, topology checks
# ---------------------------------------------------------------------------

@dataclass
class PreparedPatch:
    name: str
    patch: TriMesh               # cut and hole-filled patch mesh
    vertex_map: np.ndarray       # patch vertex -> original mesh vertex
    seams: list
    fill_triangles: np.ndarray   # indices (into patch) of hole-fill triangles
    corners: np.ndarray          # 4 patch vertex indices
    aspect: object


def _resolve_cut_path(patch: TriMesh, path, duplicates: dict):
    """Map an original-index cut path onto the current patch.

    duplicates: original vertex -> list of patch copies.  The path is walked
    greedily; at each step the unique edge-connected copy of the next vertex
    is chosen, so paths stated on the uncut surface stay valid after earlier
    cuts have split some of their vertices.
    """
    def copies(v):
        return duplicates.get(v, [v])

    closed = path[0] == path[-1]
    body = path[:-1] if closed else path
    for start in copies(path[0]):
        out = [start]
        ok = True
        for orig in body[1:]:
            options = [c for c in copies(orig) if patch.has_edge(out[-1], c)]
            if len(options) != 1:
                ok = False
                break
            out.append(options[0])
        if not ok:
            continue
        if closed:
            closers = [c for c in copies(path[-1])
                       if patch.has_edge(out[-1], c)]
            closers = [c for c in closers if c != out[-2]]
            if len(closers) != 1:
                continue
            out.append(closers[0])
        return out
    raise ConfigError(
        f"cut path starting at vertex {path[0]} cannot be traced on the "
        "current patch (check connectivity and cut order)")


def prepare_patch(mesh: TriMesh, pcfg: PatchConfig) -> PreparedPatch:
    if pcfg.triangles == "all":
        patch, vmap = mesh, np.arange(mesh.n_vertices)
    else:
        patch, vmap = extract_submesh(mesh, pcfg.triangles)
    inv = {int(o): i for i, o in enumerate(vmap)}

    duplicates: dict = {}
    seams = []
    for cut in pcfg.cuts:
        try:
            local = [inv[v] for v in cut]
        except KeyError as exc:
            raise ConfigError(
                f"patch {pcfg.name!r}: cut vertex {exc.args[0]} is not in "
                "the patch")
        local = _resolve_cut_path(patch, local, duplicates)
        patch, seam = cut_along_path(patch, local)
        seams.append(seam)
        new_map = np.concatenate(
            [vmap, [vmap[a] for a, _ in seam.pairs]])
        for a, b in seam.pairs:
            orig = int(vmap[a])
            duplicates.setdefault(orig, [a]).append(b)
        vmap = new_map

    fill_ids = []
    for loop_spec in pcfg.fill_loops:
        if "vertex" not in loop_spec:
            raise ConfigError(f"patch {pcfg.name!r}: fill_loops entries need "
                              "a 'vertex' key")
        target = int(loop_spec["vertex"])
        loops = boundary_loops(patch)
        loop_id = None
        for li, lp in enumerate(loops):
            if any(int(vmap[v]) == target for v in lp):
                loop_id = li
                break
        if loop_id is None:
            raise ConfigError(
                f"patch {pcfg.name!r}: no boundary loop contains vertex "
                f"{target}")
        patch, new_tris = fill_hole(patch, loop_id)
        fill_ids.extend(int(t) for t in new_tris)

    topo = topology_summary(patch)
    if (topo.genus != 0 or topo.boundary_loop_count != 1
            or topo.component_count != 1):
        raise ConfigError(
            f"patch {pcfg.name!r} is not simply connected after cuts/fills: "
            f"genus={topo.genus}, boundaries={topo.boundary_loop_count}, "
            f"components={topo.component_count}")

    corners = _resolve_corners(patch, vmap, pcfg)
    return PreparedPatch(pcfg.name, patch, vmap, seams,
                         np.asarray(fill_ids, dtype=np.int64), corners,
                         pcfg.aspect)


def _resolve_corners(patch, vmap, pcfg):
    loop = boundary_loops(patch)[0]
    if pcfg.corners == "auto":
        pts = patch.vertices[loop]
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        total = s[-1]
        idx = [int(np.argmin(np.abs(s[:-1] - k * total / 4))) for k in range(4)]
        if len(set(idx)) != 4:
            raise ConfigError(
                f"patch {pcfg.name!r}: boundary too short for automatic corners")
        return np.asarray([loop[i] for i in idx], dtype=np.int64)

    wanted = [int(c) for c in pcfg.corners]
    k = len(loop)
    occurrences = {w: [i for i, v in enumerate(loop) if int(vmap[v]) == w]
                   for w in set(wanted)}
    for w, occ in occurrences.items():
        if not occ:
            raise ConfigError(
                f"patch {pcfg.name!r}: corner vertex {w} is not on the patch "
                "boundary")
    for anchor in occurrences[wanted[0]]:
        pos = [anchor]
        used = {(wanted[0], anchor)}
        ok = True
        for w in wanted[1:]:
            cands = [o for o in occurrences[w]
                     if (w, o) not in used
                     and (o - pos[-1]) % k > 0]
            cands = [o for o in cands
                     if (o - anchor) % k > (pos[-1] - anchor) % k]
            if not cands:
                ok = False
                break
            nxt = min(cands, key=lambda o: (o - anchor) % k)
            pos.append(nxt)
            used.add((w, nxt))
        if ok:
            return np.asarray([loop[i] for i in pos], dtype=np.int64)
    raise ConfigError(
        f"patch {pcfg.name!r}: corners {wanted} do not appear on the boundary "
        "in cyclic order (try reversing or rotating the list)")


def preprocess(config: ProblemConfig, mesh: TriMesh | None = None):
    """Cut, fill and verify every patch.  Returns (mesh, [PreparedPatch])."""
    if mesh is None:
        mesh = validate_config(config)
    prepared = [prepare_patch(mesh, p) for p in config.patches]
    return mesh, prepared


# ---------------------------------------------------------------------------
# charts and the atlas
# ---------------------------------------------------------------------------

def build_atlas(config: ProblemConfig, mesh: TriMesh, prepared) -> Atlas:
    coverages = []
    for prep in prepared:
        chart = build_chart(prep.patch, prep.corners, aspect=prep.aspect,
                            patch_id=prep.name)
        mask = np.ones(prep.patch.n_triangles, dtype=bool)
        if prep.fill_triangles.size:
            mask[prep.fill_triangles] = False
        coverages.append(ChartCoverage(
            chart, prep.vertex_map, patch=prep.patch, seams=prep.seams,
            surface_triangles=mask))
        log.info("chart %s: rect %.4f x %.4f, mean |mu| = %.4g",
                 prep.name, chart.width, chart.height,
                 float(np.mean(chart.mu_abs(mask))))
    return Atlas(coverages, mesh)


# ---------------------------------------------------------------------------
# component seeding
# ---------------------------------------------------------------------------

def initialize_components(config: ProblemConfig, atlas: Atlas) -> DesignState:
    """Crossed-grid default layout, or explicit components from the config."""
    comps = []
    for pcfg, cov in zip(config.patches, atlas.coverages):
        chart = cov.chart
        w, h = chart.rect
        diag = chart.diagonal
        comp_spec = pcfg.components
        if "explicit" in comp_spec:
            for row in comp_spec["explicit"]:
                if len(row) != 7:
                    raise ConfigError("explicit components need 7 parameters")
                comps.append(Component(*map(float, row), chart_id=pcfg.name))
        elif "grid" in comp_spec:
            nx, ny = (int(x) for x in comp_spec["grid"])
            if nx <= 0 or ny <= 0:
                raise ConfigError(f"patch {pcfg.name!r}: grid counts must be "
                                  "positive")
            cw, ch = w / nx, h / ny
            cell_diag = float(np.hypot(cw, ch))
            t0 = float(comp_spec.get("thickness_factor",
                                     GRID_THICKNESS_FACTOR)) * diag
            l0 = float(comp_spec.get("length_factor",
                                     GRID_LENGTH_FACTOR)) * cell_diag
            for i in range(nx):
                for j in range(ny):
                    cx, cy = (i + 0.5) * cw, (j + 0.5) * ch
                    ang = np.arctan2(ch, cw)
                    for theta in (ang, -ang):
                        comps.append(Component(
                            cx, cy, float(theta), l0, t0, t0, t0,
                            chart_id=pcfg.name))
        else:
            raise ConfigError(f"patch {pcfg.name!r}: components need 'grid' "
                              "or 'explicit'")
    lower, upper = _component_bounds(config, atlas, comps)
    state = DesignState(comps, lower, upper)
    clipped = state.clipped_to_bounds()
    moved = int(np.count_nonzero(clipped.flatten() != state.flatten()))
    if moved:
        log.info("initial design: %d parameter(s) clipped to the box bounds",
                 moved)
    return clipped


def _component_bounds(config, atlas, comps):
    by_id = {cov.chart.patch_id: cov.chart for cov in atlas.coverages}
    lower = np.empty(7 * len(comps))
    upper = np.empty(7 * len(comps))
    for i, c in enumerate(comps):
        chart = by_id[c.chart_id]
        w, h = chart.rect
        diag = chart.diagonal
        lmax = config.max_length_factor * diag
        floor = config.min_size_factor * diag
        tmax = config.max_thickness_factor * diag
        lower[7 * i:7 * i + 7] = (-lmax, -lmax, -THETA_BOUND, floor,
                                  floor, floor, floor)
        upper[7 * i:7 * i + 7] = (w + lmax, h + lmax, THETA_BOUND, lmax,
                                  tmax, tmax, tmax)
    return lower, upper


# ---------------------------------------------------------------------------
# VTK export
# ---------------------------------------------------------------------------

def export_vtk(mesh: TriMesh, snapshot, phi, path, strain_energy_density=None):
    """Legacy ASCII VTK POLYDATA with phi (points), rho and energy (cells)."""
    phi = np.asarray(phi, dtype=np.float64)
    rho = np.asarray(snapshot.rho, dtype=np.float64)
    if len(phi) != mesh.n_vertices or len(rho) != mesh.n_triangles:
        raise ConfigError("array sizes do not match the mesh")
    sed = (np.zeros(mesh.n_triangles) if strain_energy_density is None
           else np.asarray(strain_energy_density, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("surfmmc design snapshot\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.12g} {v[1]:.12g} {v[2]:.12g}\n")
        fh.write(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"POINT_DATA {mesh.n_vertices}\n")
        fh.write("SCALARS phi double 1\nLOOKUP_TABLE default\n")
        for x in phi:
            fh.write(f"{x:.12g}\n")
        fh.write(f"CELL_DATA {mesh.n_triangles}\n")
        fh.write("SCALARS rho double 1\nLOOKUP_TABLE default\n")
        for x in rho:
            fh.write(f"{x:.12g}\n")
        fh.write("SCALARS strain_energy_density double 1\nLOOKUP_TABLE default\n")
        for x in sed:
            fh.write(f"{x:.12g}\n")


def load_vtk(path):
    """Parse a legacy ASCII VTK POLYDATA file written by export_vtk."""
    with open(path) as fh:
        tokens = fh.read().split()
    i = 0

    def expect(word):
        nonlocal i
        while tokens[i].upper() != word:
            i += 1
        i += 1

    expect("POINTS")
    n = int(tokens[i]); i += 2
    pts = np.asarray(tokens[i:i + 3 * n], dtype=np.float64).reshape(n, 3)
    i += 3 * n
    expect("POLYGONS")
    f = int(tokens[i]); i += 2
    raw = np.asarray(tokens[i:i + 4 * f], dtype=np.int64).reshape(f, 4)
    tris = raw[:, 1:]
    i += 4 * f
    point_data, cell_data = {}, {}
    while i < len(tokens):
        word = tokens[i].upper()
        if word == "POINT_DATA":
            count, store = int(tokens[i + 1]), point_data
            i += 2
        elif word == "CELL_DATA":
            count, store = int(tokens[i + 1]), cell_data
            i += 2
        elif word == "SCALARS":
            name = tokens[i + 1]
            i += 4  # SCALARS name type 1
            if tokens[i].upper() == "LOOKUP_TABLE":
                i += 2
            store[name] = np.asarray(tokens[i:i + count], dtype=np.float64)
            i += count
        else:
            i += 1
    return pts, tris, point_data, cell_data


# ---------------------------------------------------------------------------
# the optimization problem and the full pipeline
# ---------------------------------------------------------------------------

class ComplianceProblem:
    """Scaled objective/constraint evaluator shared by optimize and the tests.

    Variables entering MMA are the design parameters divided by per-entry
    scales (chart diagonal for positions and sizes, pi for angles); the
    objective is compliance divided by its value at the initial design.
    """

    def __init__(self, config: ProblemConfig, mesh, atlas, design0: DesignState,
                 loads: LoadCase):
        self.config = config
        self.mesh = mesh
        self.atlas = atlas
        self.base = design0
        self.loads = loads
        self.ks = KSParams(config.ks_zeta)
        self.hp = config.heaviside
        self.model = ShellModel(mesh, config.material)
        by_id = {cov.chart.patch_id: cov.chart for cov in atlas.coverages}
        scales = []
        for c in design0.components:
            diag = by_id[c.chart_id].diagonal
            scales.append([diag, diag, np.pi, diag, diag, diag, diag])
        self.scale = np.asarray(scales).ravel()
        self.c0 = None
        self.last = None

    @property
    def x0(self):
        return self.base.flatten() / self.scale

    @property
    def lower(self):
        return self.base.lower / self.scale

    @property
    def upper(self):
        return self.base.upper / self.scale

    def design_of(self, x):
        return self.base.unflatten(np.asarray(x) * self.scale)

    def evaluate_raw(self, x):
        """Unscaled (compliance, volume_fraction) and state for one design."""
        design = self.design_of(x)
        phi, jac = global_tdf(self.atlas, design, ks=self.ks)
        rho, _ = element_density(phi[self.mesh.triangles], self.hp)
        snapshot = self.model.solve(rho, self.loads)
        return design, phi, jac, snapshot

    def compliance_and_volume(self, x):
        _, _, _, snapshot = self.evaluate_raw(x)
        return snapshot.compliance, snapshot.volume_fraction

    def __call__(self, x):
        design, phi, jac, snapshot = self.evaluate_raw(x)
        dc = compliance_gradient(self.mesh, self.atlas, design, snapshot, jac,
                                 self.hp, self.config.material, phi=phi,
                                 ks=self.ks, model=self.model)
        dv = volume_gradient(self.mesh, design, jac, self.hp, phi=phi)
        if self.c0 is None:
            self.c0 = snapshot.compliance if snapshot.compliance > 0 else 1.0
        vbar = self.config.volume_fraction
        f0 = snapshot.compliance / self.c0
        df0 = dc * self.scale / self.c0
        fval = np.array([snapshot.volume_fraction / vbar - 1.0])
        dfdx = (dv * self.scale / vbar)[None, :]
        self.last = (design, phi, snapshot)
        return f0, df0, fval, dfdx, {
            "compliance": snapshot.compliance,
            "volume_fraction": snapshot.volume_fraction,
        }


@dataclass
class PipelineResult:
    design: DesignState
    history: list
    atlas: Atlas
    mesh: TriMesh
    snapshot: object
    phi: np.ndarray
    artifacts: dict


def run_pipeline(config: ProblemConfig, iteration_hook=None,
                 check_gradients_flag: bool = False,
                 initial_design: np.ndarray | None = None) -> PipelineResult:
    """Execute the full flow and leave artifacts in config.output_dir."""
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    lock = os.path.join(out, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.close(fd)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out!r} is locked by another run "
            "(delete .lock if stale)")
    try:
        return _run_pipeline_locked(config, iteration_hook,
                                    check_gradients_flag, initial_design)
    finally:
        os.unlink(lock)


def _run_pipeline_locked(config, iteration_hook, check_gradients_flag,
                         initial_design):
    out = config.output_dir
    stage = "validate"
    try:
        mesh = validate_config(config)
        loads = resolve_loads(config, mesh)
        with open(os.path.join(out, "resolved_config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)

        stage = "preprocess"
        _, prepared = preprocess(config, mesh)

        stage = "parameterize"
        atlas = _atlas_with_cache(config, mesh, prepared)
        for cov, prep in zip(atlas.coverages, prepared):
            save_chart_obj(cov.chart, prep.patch,
                           os.path.join(out, f"chart_{prep.name}.obj"))

        stage = "initialize"
        design0 = initialize_components(config, atlas)
        if initial_design is not None:
            design0 = design0.unflatten(np.asarray(initial_design))
        problem = ComplianceProblem(config, mesh, atlas, design0, loads)

        if check_gradients_flag:
            _gradient_audit(problem, os.path.join(out, "gradient_check.csv"))

        stage = "optimize"
        history_path = os.path.join(out, "history.csv")
        timing_path = os.path.join(out, "timings.csv")
        hist_fh = open(history_path, "w")
        time_fh = open(timing_path, "w")
        hist_fh.write("iter,compliance,volume_fraction,max_rel_change\n")
        time_fh.write("iter,wall_time_s\n")
        t0 = time.perf_counter()

        def on_record(rec, x):
            c = rec.report.get("compliance", rec.objective)
            v = rec.report.get("volume_fraction", rec.constraint)
            hist_fh.write(f"{rec.iteration},{c:.17g},{v:.17g},"
                          f"{rec.max_rel_change:.17g}\n")
            hist_fh.flush()
            time_fh.write(f"{rec.iteration},{time.perf_counter() - t0:.3f}\n")
            time_fh.flush()
            if (config.checkpoint_every > 0
                    and rec.iteration % config.checkpoint_every == 0):
                _write_checkpoint(config, problem, x, rec.iteration,
                                  os.path.join(out, "checkpoint.json"))
            if (config.vtk_every > 0 and rec.iteration > 0
                    and rec.iteration % config.vtk_every == 0):
                _export_state(problem, x,
                              os.path.join(out, f"design_{rec.iteration:05d}.vtk"))
            if iteration_hook is not None:
                design, phi, snapshot = problem.last
                iteration_hook(rec, design, phi, snapshot)

        try:
            x_final, history = mma_run(
                problem, problem.x0, config.stop,
                lower=problem.lower, upper=problem.upper,
                move_limit=config.move_limit, on_record=on_record)
        finally:
            hist_fh.close()
            time_fh.close()

        stage = "export"
        design, phi, snapshot = problem.last
        _write_checkpoint(config, problem, x_final,
                          history[-1].iteration,
                          os.path.join(out, "checkpoint.json"))
        _export_state(problem, x_final, os.path.join(out, "design_final.vtk"))
        artifacts = {
            "history": os.path.join(out, "history.csv"),
            "timings": os.path.join(out, "timings.csv"),
            "checkpoint": os.path.join(out, "checkpoint.json"),
            "vtk_final": os.path.join(out, "design_final.vtk"),
            "resolved_config": os.path.join(out, "resolved_config.json"),
        }
        return PipelineResult(design, history, atlas, mesh, snapshot, phi,
                              artifacts)
    except Exception as exc:
        if isinstance(exc, (ConfigError, MeshError, ChartError)):
            raise type(exc)(f"[stage: {stage}] {exc}") from exc
        raise


def _atlas_with_cache(config, mesh, prepared) -> Atlas:
    """Build charts, or reload them from sidecar CSVs when already present."""
    out = config.output_dir
    coverages = []
    missing = False
    for prep in prepared:
        csv_path = os.path.join(out, f"chart_{prep.name}.csv")
        if not os.path.exists(csv_path):
            missing = True
            break
    if missing:
        atlas = build_atlas(config, mesh, prepared)
        for cov, prep in zip(atlas.coverages, prepared):
            save_chart_csv(cov.chart,
                           os.path.join(out, f"chart_{prep.name}.csv"))
        return atlas
    from .conformal import ConformalChart, load_chart_csv
    for prep in prepared:
        csv_path = os.path.join(out, f"chart_{prep.name}.csv")
        pid, rect, uv, mu_abs = load_chart_csv(csv_path)
        if len(uv) != prep.patch.n_vertices:
            raise ConfigError(
                f"stale chart cache {csv_path!r}: vertex count mismatch "
                "(delete the chart CSVs to rebuild)")
        chart = ConformalChart(prep.name, uv, rect,
                               prep.corners, mu_abs.astype(np.complex128),
                               prep.patch.triangles.copy())
        mask = np.ones(prep.patch.n_triangles, dtype=bool)
        if prep.fill_triangles.size:
            mask[prep.fill_triangles] = False
        coverages.append(ChartCoverage(chart, prep.vertex_map,
                                       patch=prep.patch, seams=prep.seams,
                                       surface_triangles=mask))
        log.info("chart %s: loaded from cache", prep.name)
    return Atlas(coverages, mesh)


def _write_checkpoint(config, problem, x, iteration, path):
    design = problem.design_of(x)
    payload = {
        "iteration": int(iteration),
        "design_vector": design.flatten().tolist(),
        "chart_ids": [c.chart_id for c in design.components],
        "config": config.to_dict(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def _export_state(problem, x, path):
    design, phi, jac, snapshot = problem.evaluate_raw(x)
    energies = problem.model.element_energies(snapshot.displacements)
    areas = problem.mesh.triangle_areas()
    sed = 0.5 * snapshot.rho * energies / areas
    export_vtk(problem.mesh, snapshot, phi, path, strain_energy_density=sed)


def _gradient_audit(problem, csv_path, n_checked=16):
    x = problem.x0.copy()
    f0, df0, fval, dfdx, _ = problem(x)
    dc = df0
    dv = dfdx[0]
    idx = np.linspace(0, len(x) - 1, min(n_checked, len(x))).astype(int)

    def raw(xq):
        c, v = problem.compliance_and_volume(xq)
        return c / problem.c0, v / problem.config.volume_fraction

    rows = check_gradients(raw, x, dc, dv, indices=idx, csv_path=csv_path)
    # entries far below the gradient scale carry only differencing noise;
    # judge agreement above the floor and count the rest separately
    floors = {"compliance": 1e-8 * np.abs(dc).max(),
              "volume": 1e-8 * np.abs(dv).max()}
    live = [r for r in rows if abs(r[3]) > floors[r[0]]]
    tiny = len(rows) - len(live)
    worst = max((r[4] for r in live), default=0.0)
    log.info("gradient audit: %d entries above the noise floor, worst rel "
             "err %.3e (%d below floor) -> %s", len(live), worst, tiny,
             csv_path)
    return rows


def export_checkpoint(checkpoint_path, output_path, fmt: str = "vtk"):
    """Rebuild the design state recorded in a checkpoint and export it."""
    if fmt != "vtk":
        raise ConfigError(f"unsupported export format {fmt!r}")
    with open(checkpoint_path) as fh:
        payload = json.load(fh)
    config = ProblemConfig.from_dict(
        payload["config"],
        base_dir=os.path.dirname(os.path.abspath(checkpoint_path)))
    mesh = validate_config(config)
    loads = resolve_loads(config, mesh)
    _, prepared = preprocess(config, mesh)
    atlas = _atlas_with_cache(config, mesh, prepared)
    design0 = initialize_components(config, atlas)
    vec = np.asarray(payload["design_vector"], dtype=np.float64)
    if vec.shape != (design0.n_variables,):
        raise ConfigError("checkpoint design vector does not match the config")
    problem = ComplianceProblem(config, mesh, atlas, design0, loads)
    _export_state(problem, vec / problem.scale, output_path)
    return output_path
