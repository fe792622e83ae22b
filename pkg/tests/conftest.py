import json
import os

import numpy as np
import pytest

from surfmmc import meshgen, pipeline
from surfmmc.mesh import boundary_loops, save_mesh
from surfmmc.meshgen import grid_vertex_id as gv
from surfmmc.meshgen import torus_vertex_id as tv


def hemisphere_corners(mesh):
    loop = boundary_loops(mesh)[0]
    k = len(loop)
    return [loop[0], loop[k // 4], loop[k // 2], loop[3 * k // 4]]


def saddle_config_dict(tmp_path, n=40, move_limit=0.02, max_iters=300,
                       out_name="out", thickness_factor=0.02):
    """The end-to-end saddle fixture: clamped edges, tangential center load."""
    sad = meshgen.saddle(n)
    mesh_path = os.path.join(tmp_path, f"saddle_{n}.ply")
    if not os.path.exists(mesh_path):
        save_mesh(sad, mesh_path, binary=True)
    center = gv(n, n, n // 2, n // 2)
    clamp = ([gv(n, n, i, 0) for i in range(n + 1)]
             + [gv(n, n, i, n) for i in range(n + 1)])
    return {
        "mesh": {"path": mesh_path, "format": "ply"},
        "patches": [{
            "name": "shell", "triangles": "all",
            "corners": [gv(n, n, 0, 0), gv(n, n, n, 0),
                        gv(n, n, n, n), gv(n, n, 0, n)],
            "aspect": "auto",
            "components": {"grid": [4, 2], "thickness_factor": thickness_factor},
        }],
        "material": {"youngs_modulus": 1.0, "poisson_ratio": 0.3,
                     "thickness": 1.0},
        "heaviside": {"epsilon": 0.1, "alpha": 1e-3},
        "ks_zeta": 100.0,
        "loads": {
            "points": [{"vertex": center, "force": [0.0, 1.0, 0.0]}],
            "supports": [{"vertices": clamp, "dofs": [1, 1, 1, 1, 1, 1]}],
        },
        "volume_fraction": 0.4,
        "stop": {"tol": 0.001, "max_iters": max_iters},
        "move_limit": move_limit,
        "output_dir": os.path.join(tmp_path, out_name),
    }


def torus_config_dict(tmp_path, n_minor=40, n_major=50, max_iters=50,
                      out_name="torus_out"):
    """Torus fixture: inner ring fixed, four tangential outer-ring loads."""
    tor = meshgen.torus(n_minor, n_major)
    mesh_path = os.path.join(tmp_path, f"torus_{n_minor}x{n_major}.ply")
    if not os.path.exists(mesh_path):
        save_mesh(tor, mesh_path, binary=True)
    meridian = [tv(n_minor, n_major, i, 0) for i in range(n_minor)] \
        + [tv(n_minor, n_major, 0, 0)]
    longitude = [tv(n_minor, n_major, 0, j) for j in range(n_major)] \
        + [tv(n_minor, n_major, 0, 0)]
    inner = [tv(n_minor, n_major, n_minor // 2, j) for j in range(n_major)]
    points = []
    for j in (0, n_major // 4, n_major // 2, (3 * n_major) // 4):
        u = 2 * np.pi * j / n_major
        points.append({"vertex": tv(n_minor, n_major, 0, j),
                       "force": [-np.sin(u), np.cos(u), 0.0]})
    return {
        "mesh": {"path": mesh_path, "format": "ply"},
        "patches": [{
            "name": "torus", "triangles": "all",
            "cuts": [meridian, longitude],
            "corners": [tv(n_minor, n_major, 0, 0)] * 4,
            "aspect": "auto",
            "components": {"grid": [4, 2], "thickness_factor": 0.02},
        }],
        "loads": {"points": points,
                  "supports": [{"vertices": inner,
                                "dofs": [1, 1, 1, 1, 1, 1]}]},
        "volume_fraction": 0.4,
        "stop": {"tol": 0.001, "max_iters": max_iters},
        "move_limit": 0.02,
        "output_dir": os.path.join(tmp_path, out_name),
    }


def write_config(cfg_dict, tmp_path, name="config.json"):
    path = os.path.join(tmp_path, name)
    with open(path, "w") as fh:
        json.dump(cfg_dict, fh, indent=2)
    return path


def flat_chart_problem(tmp_path, n=10, components=None, move_limit=0.02,
                       max_iters=10, out_name="flat_out"):
    """Small flat-plate problem (2 n^2 elements) used by the gradient tests."""
    plate = meshgen.grid_patch(n, n, x_range=(0.0, 1.0), y_range=(0.0, 1.0))
    mesh_path = os.path.join(tmp_path, f"plate_{n}.ply")
    if not os.path.exists(mesh_path):
        save_mesh(plate, mesh_path, binary=True)
    if components is None:
        # a connected clamp-to-tip chain keeps the live gradient spectrum
        # compact, so finite differences resolve every entry above the floor
        components = [
            [0.17, 0.50, 0.03, 0.23, 0.11, 0.10, 0.105],
            [0.50, 0.50, -0.04, 0.24, 0.10, 0.11, 0.10],
            [0.83, 0.50, 0.05, 0.23, 0.105, 0.10, 0.11],
            [0.50, 0.63, 0.55, 0.28, 0.10, 0.105, 0.10],
        ]
    clamp = [gv(n, n, 0, j) for j in range(n + 1)]
    tip = gv(n, n, n, n // 2)
    raw = {
        "mesh": {"path": mesh_path, "format": "ply"},
        "patches": [{
            "name": "plate", "triangles": "all",
            "corners": [gv(n, n, 0, 0), gv(n, n, n, 0),
                        gv(n, n, n, n), gv(n, n, 0, n)],
            "aspect": 1.0,
            "components": {"explicit": components},
        }],
        "loads": {
            "points": [{"vertex": tip, "force": [0.0, 0.5, 1.0]}],
            "supports": [{"vertices": clamp, "dofs": [1, 1, 1, 1, 1, 1]}],
        },
        "volume_fraction": 0.4,
        "stop": {"tol": 0.001, "max_iters": max_iters},
        "move_limit": move_limit,
        "output_dir": os.path.join(tmp_path, out_name),
    }
    cfg = pipeline.ProblemConfig.from_dict(raw, str(tmp_path))
    mesh = pipeline.validate_config(cfg)
    loads = pipeline.resolve_loads(cfg, mesh)
    _, prepared = pipeline.preprocess(cfg, mesh)
    atlas = pipeline.build_atlas(cfg, mesh, prepared)
    design = pipeline.initialize_components(cfg, atlas)
    problem = pipeline.ComplianceProblem(cfg, mesh, atlas, design, loads)
    return problem


@pytest.fixture(scope="session")
def shared_tmp(tmp_path_factory):
    return str(tmp_path_factory.mktemp("fixtures"))
