"""Design-variable gradients of compliance and volume fraction.

Compliance is self-adjoint: with the displacement solve in hand, the
gradient reduces to per-element energies against the unit-density matrices
chained through the Heaviside band and the field Jacobian, with no global
stiffness-derivative assembly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fea import HeavisideParams, ShellMaterial, ShellModel, heaviside
from .mmc import KSParams, global_tdf


@dataclass
class SensitivityReport:
    """Both design gradients plus any finite-difference audit residuals."""

    dC_dD: np.ndarray
    dV_dD: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dC_dD = np.asarray(self.dC_dD, dtype=np.float64)
        self.dV_dD = np.asarray(self.dV_dD, dtype=np.float64)
        if self.dC_dD.shape != self.dV_dD.shape:
            raise ConfigError("gradient lengths disagree")
        if not (np.all(np.isfinite(self.dC_dD))
                and np.all(np.isfinite(self.dV_dD))):
            raise ConfigError("non-finite sensitivity entries")


def sensitivity_report(mesh, atlas, design, snapshot, tdf_jacobian,
                       hp: HeavisideParams, mat: ShellMaterial,
                       phi=None, ks: KSParams = KSParams(),
                       model: ShellModel | None = None) -> SensitivityReport:
    """Bundle both gradients for one analyzed design."""
    if model is None:
        model = ShellModel(mesh, mat)
    if phi is None:
        phi, _ = global_tdf(atlas, design, ks=ks, with_jacobian=False)
    dc = compliance_gradient(mesh, atlas, design, snapshot, tdf_jacobian,
                             hp, mat, phi=phi, ks=ks, model=model)
    dv = volume_gradient(mesh, design, tdf_jacobian, hp, phi=phi)
    if dc.shape != (design.n_variables,):
        raise ConfigError("gradient length does not match the design state")
    return SensitivityReport(dc, dv)


def _vertex_chain_weights(mesh, phi, hp, element_scale):
    """Per-vertex factor: H'(phi_v)/3 times the element quantities around v."""
    _, dh = heaviside(phi, hp)
    acc = np.zeros(mesh.n_vertices)
    for corner in range(3):
        np.add.at(acc, mesh.triangles[:, corner], element_scale)
    return (dh / 3.0) * acc


def compliance_gradient(mesh, atlas, design, snapshot, tdf_jacobian,
                        hp: HeavisideParams, mat: ShellMaterial,
                        phi=None, ks: KSParams = KSParams(),
                        model: ShellModel | None = None,
                        adjoint_mode: bool = False, loads=None) -> np.ndarray:
    """d(compliance)/d(design), length 7n.

    phi and model are recomputed when not supplied.  With adjoint_mode=True
    the adjoint displacement is obtained from an explicit extra solve with
    load -F instead of the self-adjoint identity; both paths must agree.
    """
    if model is None:
        model = ShellModel(mesh, mat)
    if phi is None:
        phi, _ = global_tdf(atlas, design, ks=ks, with_jacobian=False)
    u = snapshot.displacements
    if adjoint_mode:
        if loads is None:
            raise ConfigError("adjoint_mode needs the load case")
        neg_forces = []
        for entry in loads.forces:
            moment = entry[2] if len(entry) > 2 and entry[2] is not None else None
            neg_forces.append((entry[0], -np.asarray(entry[1], dtype=np.float64),
                               None if moment is None
                               else -np.asarray(moment, dtype=np.float64)))
        neg = type(loads)(forces=neg_forces, supports=loads.supports)
        w = model.solve(snapshot.rho, neg).displacements
        ue = u[model.dof_indices]
        we = w[model.dof_indices]
        energies = -np.einsum("fi,fij,fj->f", we, model.unit_matrices, ue)
    else:
        energies = model.element_energies(u)
    if tdf_jacobian.shape[0] != mesh.n_vertices:
        raise ConfigError("field Jacobian does not match the mesh")
    weights = _vertex_chain_weights(mesh, phi, hp, energies)
    return -np.asarray(weights @ tdf_jacobian).ravel()


def volume_gradient(mesh, design, tdf_jacobian, hp: HeavisideParams,
                    phi=None, atlas=None, ks: KSParams = KSParams()) -> np.ndarray:
    """d(volume_fraction)/d(design), length 7n."""
    if phi is None:
        if atlas is None:
            raise ConfigError("need phi or an atlas to evaluate it")
        phi, _ = global_tdf(atlas, design, ks=ks, with_jacobian=False)
    areas = mesh.triangle_areas()
    weights = _vertex_chain_weights(mesh, phi, hp, areas / areas.sum())
    return np.asarray(weights @ tdf_jacobian).ravel()


def check_gradients(evaluate, x, analytic_dC, analytic_dV, indices=None,
                    step: float = 1e-6, csv_path=None):
    """Central-difference audit of both gradients.

    evaluate(x) must return (compliance, volume_fraction).  Returns a list of
    rows (index, analytic, numeric, rel_error) for compliance then volume,
    optionally written as CSV.
    """
    x = np.asarray(x, dtype=np.float64)
    if indices is None:
        indices = range(len(x))
    rows = []
    for kind, grad in (("compliance", analytic_dC), ("volume", analytic_dV)):
        pick = 0 if kind == "compliance" else 1
        for i in indices:
            xp = x.copy()
            xp[i] += step
            xm = x.copy()
            xm[i] -= step
            fd = (evaluate(xp)[pick] - evaluate(xm)[pick]) / (2.0 * step)
            an = grad[i]
            denom = max(abs(fd), abs(an), 1e-300)
            rows.append((kind, int(i), float(an), float(fd),
                         float(abs(an - fd) / denom)))
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write("quantity,variable,analytic,numeric,rel_error\n")
            for kind, i, an, fd, rel in rows:
                fh.write(f"{kind},{i},{an:.17g},{fd:.17g},{rel:.3e}\n")
    return rows
