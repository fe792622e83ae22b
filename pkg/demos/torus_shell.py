"""Topology optimization on a closed torus via cut-and-parameterize.

A genus-1 surface has no rectangle chart, so the torus is first sliced open
along a meridian and a longitude through one shared vertex; the cut-open
surface maps onto a rectangle whose four corners are the four copies of that
vertex.  The component field is aggregated across both copies of every seam
vertex, which keeps it single-valued on the original closed surface -- the
demo verifies that to the last bit at every iteration.
"""
import os

import numpy as np

from surfmmc import meshgen, pipeline
from surfmmc.mesh import save_mesh
from surfmmc.meshgen import torus_vertex_id as tv

out_dir = os.path.join(os.path.dirname(__file__), "output", "torus")
os.makedirs(out_dir, exist_ok=True)

n_minor, n_major = 24, 30
torus = meshgen.torus(n_minor, n_major)
mesh_path = os.path.join(out_dir, "torus.ply")
save_mesh(torus, mesh_path, binary=True)
print(f"torus: {torus.n_vertices} vertices, {torus.n_triangles} triangles, "
      "genus 1")

meridian = [tv(n_minor, n_major, i, 0) for i in range(n_minor)] \
    + [tv(n_minor, n_major, 0, 0)]
longitude = [tv(n_minor, n_major, 0, j) for j in range(n_major)] \
    + [tv(n_minor, n_major, 0, 0)]
inner_ring = [tv(n_minor, n_major, n_minor // 2, j) for j in range(n_major)]
load_points = []
for j in (0, n_major // 4, n_major // 2, (3 * n_major) // 4):
    u = 2 * np.pi * j / n_major
    load_points.append({"vertex": tv(n_minor, n_major, 0, j),
                        "force": [-np.sin(u), np.cos(u), 0.0]})

config = pipeline.ProblemConfig.from_dict({
    "mesh": {"path": mesh_path, "format": "ply"},
    "patches": [{
        "name": "torus",
        "triangles": "all",
        "cuts": [meridian, longitude],
        "corners": [tv(n_minor, n_major, 0, 0)] * 4,
        "aspect": "auto",
        "components": {"grid": [4, 2], "thickness_factor": 0.02},
    }],
    "loads": {"points": load_points,
              "supports": [{"vertices": inner_ring,
                            "dofs": [1, 1, 1, 1, 1, 1]}]},
    "volume_fraction": 0.4,
    "stop": {"tol": 0.001, "max_iters": 60},
    "move_limit": 0.02,
    "output_dir": out_dir,
}, out_dir)

mesh, prepared = pipeline.preprocess(config)
prep = prepared[0]
print(f"after both cuts: {prep.patch.n_vertices} vertices "
      f"({prep.patch.n_vertices - torus.n_vertices} seam duplicates), "
      "disk topology")

seam_worst = []


def seam_check(rec, design, phi, snapshot):
    worst = 0.0
    for seam in prep.seams:
        for a, b in seam.pairs:
            worst = max(worst, abs(phi[prep.vertex_map[a]]
                                   - phi[prep.vertex_map[b]]))
    seam_worst.append(worst)


print("optimizing (inner ring fixed, four tangential outer loads) ...")
result = pipeline.run_pipeline(config, iteration_hook=seam_check)

chart = result.atlas.coverages[0].chart
print(f"\nchart rectangle: {chart.width:.3f} x {chart.height:.3f} "
      f"(major/minor circumference ratio is {1.0 / 0.4:.2f})")
hist = result.history
print(f"compliance {hist[0].report['compliance']:.3f} -> "
      f"{hist[-1].report['compliance']:.3f} over {hist[-1].iteration} steps")
print(f"max field mismatch across the seams, all iterations: "
      f"{max(seam_worst):.1e}  (exactly zero by construction)")
print(f"artifacts in {out_dir}")
