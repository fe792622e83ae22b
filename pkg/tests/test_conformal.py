import numpy as np
import pytest

from surfmmc import meshgen
from surfmmc.conformal import (BeltramiField, beltrami_coefficient, build_chart,
                               build_laplacian, harmonic_disk_map,
                               isometric_flattening, rectangle_map,
                               save_chart_csv, load_chart_csv, save_chart_obj)
from surfmmc.errors import ChartError
from surfmmc.mesh import TriMesh, boundary_loops, load_mesh
from surfmmc.meshgen import grid_vertex_id as gv

from conftest import hemisphere_corners


def triangle_angles(corners):
    """(F, 3) interior angles from per-triangle corner coordinates."""
    a = corners[:, 1] - corners[:, 0]
    b = corners[:, 2] - corners[:, 1]
    c = corners[:, 0] - corners[:, 2]

    def ang(u, v):
        cosv = -np.einsum("ij,ij->i", u, v) \
            / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        return np.arccos(np.clip(cosv, -1.0, 1.0))

    return np.stack([ang(c, a), ang(a, b), ang(b, c)], axis=1)


# ---------------------------------------------------------------------------
# Laplacian
# ---------------------------------------------------------------------------

def test_cot_weight_equilateral_pair():
    s3 = np.sqrt(3.0) / 2
    mesh = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0.5, s3, 0],
                             [0.5, -s3, 0.0]]),
                   np.array([[0, 1, 2], [0, 3, 1]]))
    lap = build_laplacian(mesh)
    assert -lap[0, 1] == pytest.approx(1 / np.sqrt(3), abs=1e-12)


def test_cot_weight_right_angle_boundary_edge():
    mesh = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]),
                   np.array([[0, 1, 2]]))
    lap = build_laplacian(mesh)
    # the hypotenuse (1, 2) sits opposite the 90 degree corner
    assert lap[1, 2] == pytest.approx(0.0, abs=1e-14)


def test_laplacian_rowsum_symmetry_psd():
    mesh = meshgen.hemisphere(8)
    lap = build_laplacian(mesh)
    ones = np.ones(mesh.n_vertices)
    assert np.abs(lap @ ones).max() < 1e-12
    assert abs(lap - lap.T).max() < 1e-14
    w = np.linalg.eigvalsh(lap.toarray())
    assert w[0] >= -1e-10 * w[-1]


def test_laplacian_rejects_indefinite_coefficients():
    mesh = meshgen.disk(2)
    coeff = np.tile(np.diag([1.0, -1.0]), (mesh.n_triangles, 1, 1))
    with pytest.raises(ChartError, match="positive definite"):
        build_laplacian(mesh.vertices[:, :2], coefficients=coeff,
                        triangles=mesh.triangles)


# ---------------------------------------------------------------------------
# harmonic disk map
# ---------------------------------------------------------------------------

def test_disk_map_identity_on_uniform_disk():
    disk = meshgen.disk(8)
    uv = harmonic_disk_map(disk)
    assert np.abs(uv - disk.vertices[:, :2]).max() < 1e-8


def test_disk_map_boundary_norm():
    hemi = meshgen.hemisphere(8)
    uv = harmonic_disk_map(hemi)
    norms = np.linalg.norm(uv, axis=1)
    bnd = set(int(v) for v in hemi.boundary_vertices())
    assert norms.max() <= 1.0 + 1e-12
    assert int(np.argmax(norms)) in bnd
    assert abs(norms.max() - 1.0) < 1e-12


def test_disk_map_vs_stereographic_oracle():
    hemi = meshgen.hemisphere(28)   # about 5k triangles
    uv = harmonic_disk_map(hemi)
    x, y, z = hemi.vertices.T
    stereo = np.column_stack([x / (1 + z), y / (1 + z)])
    mu = beltrami_coefficient(stereo, uv, hemi.triangles)
    assert np.mean(np.abs(mu.mu)) < 0.05


def test_disk_map_requires_disk_topology():
    with pytest.raises(ChartError, match="simply-connected|simply connected"):
        harmonic_disk_map(meshgen.torus(8, 10))


def test_iterative_solver_fallback(monkeypatch):
    import surfmmc.conformal as C
    monkeypatch.setattr(C, "DIRECT_SOLVE_LIMIT", 10)
    disk = meshgen.disk(8)
    uv = harmonic_disk_map(disk)
    assert np.abs(uv - disk.vertices[:, :2]).max() < 1e-7


# ---------------------------------------------------------------------------
# Beltrami coefficients
# ---------------------------------------------------------------------------

def test_beltrami_identity():
    disk = meshgen.disk(4)
    src = disk.vertices[:, :2]
    field = beltrami_coefficient(src, src, disk.triangles)
    assert np.abs(field.mu).max() < 1e-12


def test_beltrami_two_x():
    disk = meshgen.disk(4)
    src = disk.vertices[:, :2]
    field = beltrami_coefficient(src, src * [2.0, 1.0], disk.triangles)
    assert np.allclose(field.mu, 1.0 / 3.0, atol=1e-12)


def test_beltrami_orientation_reversal_rejected():
    disk = meshgen.disk(3)
    src = disk.vertices[:, :2]
    with pytest.raises(ChartError, match="mu"):
        beltrami_coefficient(src, src[:, ::-1], disk.triangles)


def test_beltrami_field_validates():
    with pytest.raises(ChartError):
        BeltramiField(np.array([0.2 + 0.1j, 1.0 + 0.0j]))


def test_beltrami_diffusion_identity_for_conformal():
    field = BeltramiField(np.zeros(5, dtype=complex))
    a1, a2, a3 = field.diffusion_coefficients()
    assert np.allclose(a1, 1.0) and np.allclose(a2, 0.0) and np.allclose(a3, 1.0)


def test_beltrami_diffusion_unit_determinant():
    rng = np.random.default_rng(5)
    mu = (rng.uniform(-0.6, 0.6, 30) + 1j * rng.uniform(-0.6, 0.6, 30))
    field = BeltramiField(mu)
    a1, a2, a3 = field.diffusion_coefficients()
    assert np.allclose(a1 * a3 - a2 * a2, 1.0, atol=1e-10)
    assert (a1 > 0).all() and (a3 > 0).all()


# ---------------------------------------------------------------------------
# rectangle map and full chart
# ---------------------------------------------------------------------------

def flat_rect_mesh(nx=20, ny=10, w=2.0):
    return meshgen.grid_patch(nx, ny, x_range=(0.0, w), y_range=(0.0, 1.0))


def flat_rect_corners(nx=20, ny=10):
    return [gv(nx, ny, 0, 0), gv(nx, ny, nx, 0), gv(nx, ny, nx, ny),
            gv(nx, ny, 0, ny)]


def test_flat_rectangle_similarity():
    mesh = flat_rect_mesh()
    chart = build_chart(mesh, flat_rect_corners(), aspect=2.0)
    src_ang = triangle_angles(mesh.vertices[mesh.triangles][:, :, :2])
    uv_ang = triangle_angles(chart.uv[chart.triangles])
    assert np.abs(src_ang - uv_ang).max() < 1e-6
    assert np.mean(np.abs(chart.mu_final)) < 1e-6


def test_corner_pinning_exact():
    mesh = flat_rect_mesh()
    corners = flat_rect_corners()
    chart = build_chart(mesh, corners, aspect=2.0)
    assert chart.uv[corners[0], 0] == 0.0
    assert chart.uv[corners[0], 1] == 0.0
    assert chart.uv[corners[1], 0] == chart.width
    assert chart.uv[corners[2], 1] == chart.height


def test_rectangle_map_corner_order_error():
    mesh = flat_rect_mesh(8, 4)
    corners = flat_rect_corners(8, 4)
    bad = [corners[0], corners[3], corners[2], corners[1]]
    with pytest.raises(ChartError, match="cyclic"):
        build_chart(mesh, bad, aspect=2.0)


def test_hemisphere_chart_valid():
    hemi = meshgen.hemisphere(16)
    chart = build_chart(hemi, hemisphere_corners(hemi), aspect="auto")
    mu = np.abs(chart.mu_final)
    assert mu.max() < 1.0
    assert np.mean(mu) < 0.05
    # no flipped triangles
    p = chart.uv[chart.triangles]
    signed = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    assert (signed > 0).all()


def test_hemisphere_auto_aspect_near_sweep_optimum():
    hemi = meshgen.hemisphere(10)
    corners = hemisphere_corners(hemi)
    chart = build_chart(hemi, corners, aspect="auto")
    disk_uv = harmonic_disk_map(hemi)
    flat = isometric_flattening(hemi)
    mu_inv = beltrami_coefficient(disk_uv, flat, hemi.triangles)

    def mean_mu(w):
        uv, _ = rectangle_map(disk_uv, hemi.triangles, mu_inv, corners,
                              aspect=w)
        return np.mean(np.abs(beltrami_coefficient(flat, uv,
                                                   hemi.triangles).mu))

    sweep = np.linspace(0.25, 4.0, 76)
    best = sweep[int(np.argmin([mean_mu(w) for w in sweep]))]
    assert abs(chart.width - best) <= 0.05 * best


def test_boundary_on_rectangle():
    hemi = meshgen.hemisphere(10)
    chart = build_chart(hemi, hemisphere_corners(hemi), aspect="auto")
    bnd = hemi.boundary_vertices()
    w, h = chart.rect
    d = np.minimum.reduce([
        np.abs(chart.uv[bnd, 0]), np.abs(chart.uv[bnd, 0] - w),
        np.abs(chart.uv[bnd, 1]), np.abs(chart.uv[bnd, 1] - h)])
    assert d.max() <= 1e-10 * max(w, h)


def test_rigid_motion_invariance():
    hemi = meshgen.hemisphere(8)
    corners = hemisphere_corners(hemi)
    chart1 = build_chart(hemi, corners, aspect=1.0)
    # rotate + translate the patch
    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th), 0],
                    [np.sin(th), np.cos(th), 0],
                    [0, 0, 1.0]])
    tilt = np.array([[1, 0, 0],
                     [0, np.cos(0.4), -np.sin(0.4)],
                     [0, np.sin(0.4), np.cos(0.4)]])
    moved = TriMesh(hemi.vertices @ (tilt @ rot).T + [0.3, -1.2, 2.0],
                    hemi.triangles)
    chart2 = build_chart(moved, corners, aspect=1.0)
    assert np.abs(chart1.uv - chart2.uv).max() < 1e-8


def test_refinement_distortion_monotone():
    means = []
    for n in (12, 20, 28):
        hemi = meshgen.hemisphere(n)
        chart = build_chart(hemi, hemisphere_corners(hemi), aspect="auto")
        means.append(float(np.mean(np.abs(chart.mu_final))))
    assert means[0] > means[1] > means[2]


def test_chart_csv_roundtrip(tmp_path):
    mesh = flat_rect_mesh(6, 3)
    chart = build_chart(mesh, flat_rect_corners(6, 3), aspect=2.0,
                        patch_id="rt")
    path = tmp_path / "chart.csv"
    save_chart_csv(chart, path)
    pid, rect, uv, mu_abs = load_chart_csv(path)
    assert pid == "rt"
    assert rect == (chart.width, chart.height)
    assert np.array_equal(uv, chart.uv)
    assert np.array_equal(mu_abs, np.abs(chart.mu_final))


def test_chart_obj_export(tmp_path):
    mesh = flat_rect_mesh(4, 2)
    chart = build_chart(mesh, flat_rect_corners(4, 2), aspect=2.0)
    path = tmp_path / "chart.obj"
    save_chart_obj(chart, mesh, path)
    text = path.read_text()
    assert text.count("vt ") == mesh.n_vertices
    back = load_mesh(path, "obj")
    assert back.n_triangles == mesh.n_triangles
