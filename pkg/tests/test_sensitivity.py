import numpy as np
import pytest

from surfmmc.fea import HeavisideParams, element_density
from surfmmc.mmc import Component, DesignState, global_tdf
from surfmmc.sensitivity import (check_gradients, compliance_gradient,
                                 volume_gradient)

from conftest import flat_chart_problem


@pytest.fixture(scope="module")
def problem(tmp_path_factory):
    return flat_chart_problem(str(tmp_path_factory.mktemp("sens")))


def test_out_of_band_component_has_zero_gradient(problem):
    # a component far outside the plate: every nodal phi sits below -eps
    comps = [c.to_array().tolist() for c in problem.base.components]
    far = [5.0, 5.0, 0.0, 0.2, 0.05, 0.05, 0.05]
    design = DesignState(
        problem.base.components
        + [Component(*far, chart_id="plate")],
        np.concatenate([problem.base.lower,
                        [-10, -10, -7, 1e-4, 1e-4, 1e-4, 1e-4]]),
        np.concatenate([problem.base.upper, [10, 10, 7, 2, 1, 1, 1]]))
    phi, jac = global_tdf(problem.atlas, design, ks=problem.ks)
    rho, _ = element_density(phi[problem.mesh.triangles], problem.hp)
    snap = problem.model.solve(rho, problem.loads)
    dc = compliance_gradient(problem.mesh, problem.atlas, design, snap, jac,
                             problem.hp, problem.config.material, phi=phi,
                             model=problem.model)
    dv = volume_gradient(problem.mesh, design, jac, problem.hp, phi=phi)
    assert np.array_equal(dc[-7:], np.zeros(7))
    assert np.array_equal(dv[-7:], np.zeros(7))


def test_compliance_gradient_matches_fd(problem):
    x = problem.x0.copy()
    f0, df0, fval, dfdx, _ = problem(x)
    dc = df0 * problem.c0 / problem.scale          # unscaled d(C)/d(D)
    dv = dfdx[0] * problem.config.volume_fraction / problem.scale
    h = 1e-6                                       # step in scaled variables
    floor = 1e-8 * np.abs(dc).max()
    worst_c = worst_v = 0.0
    for k in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cp, vp = problem.compliance_and_volume(xp)
        cm, vm = problem.compliance_and_volume(xm)
        fd_c = (cp - cm) / (2 * h) / problem.scale[k]
        fd_v = (vp - vm) / (2 * h) / problem.scale[k]
        if abs(fd_c) > floor:
            worst_c = max(worst_c, abs(dc[k] - fd_c) / abs(fd_c))
        if abs(fd_v) > 1e-8 * np.abs(dv).max():
            worst_v = max(worst_v, abs(dv[k] - fd_v) / abs(fd_v))
    assert worst_c < 1e-4
    assert worst_v < 1e-5


def test_load_scaling_quadruples_gradient(problem):
    design, phi, jac, snap = problem.evaluate_raw(problem.x0)
    dc1 = compliance_gradient(problem.mesh, problem.atlas, design, snap, jac,
                              problem.hp, problem.config.material, phi=phi,
                              model=problem.model)
    doubled = type(problem.loads)(
        forces=[(v, 2 * np.asarray(f), None) for v, f, *_ in
                problem.loads.forces],
        supports=problem.loads.supports)
    snap2 = problem.model.solve(snap.rho, doubled)
    dc2 = compliance_gradient(problem.mesh, problem.atlas, design, snap2, jac,
                              problem.hp, problem.config.material, phi=phi,
                              model=problem.model)
    assert np.allclose(dc2, 4 * dc1, rtol=1e-12, atol=1e-14)


def test_all_void_volume_gradient_zero(problem):
    comps = [Component(5.0 + i, 7.0, 0.0, 0.2, 0.05, 0.05, 0.05, "plate")
             for i in range(2)]
    lower = np.tile([-20, -20, -7, 1e-4, 1e-4, 1e-4, 1e-4], 2)
    upper = np.tile([20, 20, 7, 2, 1, 1, 1.0], 2)
    design = DesignState(comps, lower, upper)
    phi, jac = global_tdf(problem.atlas, design, ks=problem.ks)
    assert (phi < -problem.hp.epsilon).all()
    dv = volume_gradient(problem.mesh, design, jac, problem.hp, phi=phi)
    assert np.array_equal(dv, np.zeros(14))


def test_thickness_growth_increases_volume(problem):
    # spot-check on a centered uniform component fully inside the chart:
    # growing any thickness parameter can only add material
    comp = Component(0.5, 0.5, 0.2, 0.25, 0.08, 0.08, 0.08, "plate")
    design = DesignState([comp],
                         np.array([-10, -10, -7, 1e-4, 1e-4, 1e-4, 1e-4]),
                         np.array([10, 10, 7, 2, 1, 1, 1.0]))
    phi, jac = global_tdf(problem.atlas, design, ks=problem.ks)
    dv = volume_gradient(problem.mesh, design, jac, problem.hp, phi=phi)
    for t_idx in (4, 5, 6):
        assert dv[t_idx] >= 0.0
    assert dv[4:].max() > 0.0


def test_adjoint_mode_matches_direct(problem):
    design, phi, jac, snap = problem.evaluate_raw(problem.x0)
    direct = compliance_gradient(problem.mesh, problem.atlas, design, snap,
                                 jac, problem.hp, problem.config.material,
                                 phi=phi, model=problem.model)
    adjoint = compliance_gradient(problem.mesh, problem.atlas, design, snap,
                                  jac, problem.hp, problem.config.material,
                                  phi=phi, model=problem.model,
                                  adjoint_mode=True, loads=problem.loads)
    denom = np.abs(direct).max()
    assert np.abs(adjoint - direct).max() <= 1e-12 * denom


def test_kink_safety_at_band_edges(problem):
    # place nodal phi exactly at +-eps: gradients stay finite
    eps = problem.hp.epsilon
    design, phi, jac, snap = problem.evaluate_raw(problem.x0)
    phi_forced = phi.copy()
    phi_forced[::2] = eps
    phi_forced[1::2] = -eps
    dc = compliance_gradient(problem.mesh, problem.atlas, design, snap, jac,
                             problem.hp, problem.config.material,
                             phi=phi_forced, model=problem.model)
    dv = volume_gradient(problem.mesh, design, jac, problem.hp,
                         phi=phi_forced)
    assert np.isfinite(dc).all()
    assert np.isfinite(dv).all()
    # H' vanishes at the band edges, so the whole chain is exactly zero there
    assert np.array_equal(dc, np.zeros_like(dc))
    assert np.array_equal(dv, np.zeros_like(dv))


def test_sensitivity_report_bundle(problem):
    from surfmmc.sensitivity import sensitivity_report, SensitivityReport
    design, phi, jac, snap = problem.evaluate_raw(problem.x0)
    rep = sensitivity_report(problem.mesh, problem.atlas, design, snap, jac,
                             problem.hp, problem.config.material, phi=phi,
                             model=problem.model)
    assert rep.dC_dD.shape == (design.n_variables,)
    assert rep.dV_dD.shape == (design.n_variables,)
    with pytest.raises(Exception):
        SensitivityReport(np.zeros(3), np.array([np.nan, 0, 0]))


def test_check_gradients_report(problem, tmp_path):
    x = problem.x0.copy()
    f0, df0, fval, dfdx, _ = problem(x)

    def raw(xq):
        c, v = problem.compliance_and_volume(xq)
        return c / problem.c0, v / problem.config.volume_fraction

    csv = tmp_path / "grad.csv"
    rows = check_gradients(raw, x, df0, dfdx[0], indices=[0, 5, 11],
                           csv_path=csv)
    assert len(rows) == 6
    text = csv.read_text().splitlines()
    assert text[0] == "quantity,variable,analytic,numeric,rel_error"
    assert len(text) == 7
    for kind, i, an, fd, rel in rows:
        if abs(fd) > 1e-8:
            assert rel < 1e-4
